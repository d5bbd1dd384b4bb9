//! Airfoil geometry: CST surfaces, Hicks-Henne bump modification, CST-refit
//! smoothing and maximum-thickness enforcement.

mod bump;
mod cst;
pub mod io;

pub use bump::{
    bump_width, bump_y, peak_exponent, solve_t2, width_points, BumpShape, SUPPORT_MARGIN, T2_MAX,
    T2_MIN, WIDTH_LEVEL,
};
pub use cst::{
    cosine_stations, cst_basis, cst_evaluate, cst_fit, standard_grid, CstCoeffs, StandardGrid,
    CST_ORDER, GRID_STATIONS,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("modification error: {0}")]
    Modification(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Bracket for the lower-surface scale factor.
pub const SCALE_BRACKET: (f64, f64) = (0.25, 4.0);
const SCALE_TOLERANCE: f64 = 1e-8;
/// Thickness mismatch below which no rescale is attempted.
const THICKNESS_SLACK: f64 = 1e-12;

/// Action bounds for the bump parameters.
pub const WIDTH_RANGE: (f64, f64) = (0.2, 0.4);
pub const HEIGHT_RANGE: (f64, f64) = (-0.1, 0.1);

/// A sampled surface: strictly increasing stations from 0 to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCurve {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SurfaceCurve {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, GeometryError> {
        if x.len() != y.len() {
            return Err(GeometryError::Domain(format!(
                "{} stations but {} ordinates",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 || x[0] != 0.0 || x[x.len() - 1] != 1.0 {
            return Err(GeometryError::Domain("stations must run from 0 to 1".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GeometryError::Domain("stations must be strictly increasing".into()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Signed curvature `y'' / (1 + y'^2)^{3/2}` by second-order finite
/// differences on non-uniform stations; the end values use one-sided
/// three-point stencils.
pub fn curvature(x: &[f64], y: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(GeometryError::Domain("curvature needs at least 3 matching stations".into()));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(GeometryError::Domain("duplicate or unordered stations".into()));
    }
    let stencil = |i: usize, at: usize| {
        // Quadratic through points i-1, i, i+1, differentiated at `at`.
        let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
        let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
        let h1 = x1 - x0;
        let h2 = x2 - x1;
        let d2 = 2.0 * (y0 / (h1 * (h1 + h2)) - y1 / (h1 * h2) + y2 / (h2 * (h1 + h2)));
        let d1 = match at {
            0 => -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * y0 + (h1 + h2) / (h1 * h2) * y1
                - h1 / (h2 * (h1 + h2)) * y2,
            1 => -h2 / (h1 * (h1 + h2)) * y0 + (h2 - h1) / (h1 * h2) * y1
                + h1 / (h2 * (h1 + h2)) * y2,
            _ => h2 / (h1 * (h1 + h2)) * y0 - (h1 + h2) / (h1 * h2) * y1
                + (h1 + 2.0 * h2) / (h2 * (h1 + h2)) * y2,
        };
        d2 / (1.0 + d1 * d1).powf(1.5)
    };
    Ok((0..n)
        .map(|i| match i {
            0 => stencil(1, 0),
            i if i == n - 1 => stencil(n - 2, 2),
            i => stencil(i, 1),
        })
        .collect())
}

/// Curvature of a [`SurfaceCurve`].
pub fn curve_curvature(curve: &SurfaceCurve) -> Result<Vec<f64>, GeometryError> {
    curvature(curve.x(), curve.y())
}

/// A bump modification in physical units: peak location, width and height
/// as chord fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpAction {
    pub t1: f64,
    pub s_b: f64,
    pub h_b: f64,
}

impl BumpAction {
    pub fn new(t1: f64, s_b: f64, h_b: f64) -> Result<Self, GeometryError> {
        if !(t1 > 0.0 && t1 < 1.0) {
            return Err(GeometryError::Domain(format!("t1 = {t1} outside (0, 1)")));
        }
        if !(WIDTH_RANGE.0..=WIDTH_RANGE.1).contains(&s_b) {
            return Err(GeometryError::Domain(format!("s_b = {s_b} outside [0.2, 0.4]")));
        }
        if !(HEIGHT_RANGE.0..=HEIGHT_RANGE.1).contains(&h_b) {
            return Err(GeometryError::Domain(format!("h_b = {h_b} outside [-0.1, 0.1]")));
        }
        Ok(Self { t1, s_b, h_b })
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.t1, self.s_b, self.h_b]
    }

    /// Bump ordinates on the given stations.
    pub fn ordinates(&self, x: &[f64]) -> Result<(Vec<f64>, BumpShape), GeometryError> {
        let shape = solve_t2(self.t1, self.s_b)?;
        let e = peak_exponent(self.t1);
        let y = x
            .iter()
            .map(|&xi| {
                if !(0.0..=1.0).contains(&xi) {
                    return Err(GeometryError::Domain(format!("station {xi} outside [0, 1]")));
                }
                Ok(self.h_b * bump::bump_shape(e, shape.t2, xi))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((y, shape))
    }
}

/// An airfoil described by upper and lower CST coefficients, held at a
/// fixed maximum relative thickness.
#[derive(Debug, Clone, PartialEq)]
pub struct AirfoilGeom {
    pub cst_upper: CstCoeffs,
    pub cst_lower: CstCoeffs,
    pub t_max: f64,
}

/// Upper and lower ordinates of an airfoil on the standard grid.
#[derive(Debug, Clone)]
pub struct SampledAirfoil {
    pub x: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl AirfoilGeom {
    /// Build an airfoil, rescaling the lower surface so that the maximum
    /// thickness equals `t_max`.
    pub fn new(cst_upper: CstCoeffs, cst_lower: CstCoeffs, t_max: f64) -> Result<Self, GeometryError> {
        if !(t_max > 0.0) {
            return Err(GeometryError::Domain(format!("t_max = {t_max} must be positive")));
        }
        let lower = enforce_thickness(&cst_upper, &cst_lower, t_max)?;
        Ok(Self { cst_upper, cst_lower: lower, t_max })
    }

    /// From a 14-vector (upper 7 then lower 7).
    pub fn from_cst14(cst14: &[f64], t_max: f64) -> Result<Self, GeometryError> {
        let (upper, lower) = split_cst14(cst14)?;
        Self::new(upper, lower, t_max)
    }

    pub fn cst14(&self) -> [f64; 2 * CST_ORDER] {
        let mut out = [0.0; 2 * CST_ORDER];
        out[..CST_ORDER].copy_from_slice(&self.cst_upper);
        out[CST_ORDER..].copy_from_slice(&self.cst_lower);
        out
    }

    pub fn sample(&self) -> SampledAirfoil {
        let grid = standard_grid();
        SampledAirfoil {
            x: grid.x.clone(),
            upper: grid.evaluate(&self.cst_upper),
            lower: grid.evaluate(&self.cst_lower),
        }
    }

    /// Maximum of `y_upper - y_lower` over the 201-station cosine grid.
    pub fn max_thickness(&self) -> f64 {
        let grid = standard_grid();
        thickness_with_scale(&grid.evaluate(&self.cst_upper), &grid.evaluate(&self.cst_lower), 1.0)
    }

    /// Add a bump to the upper surface, smooth it by refitting the CST
    /// coefficients, and rescale the lower surface to restore `t_max`.
    pub fn apply_action(&self, action: &BumpAction) -> Result<AirfoilGeom, GeometryError> {
        self.apply_action_with_shape(action).map(|(a, _)| a)
    }

    /// [`AirfoilGeom::apply_action`] that also reports the solved bump shape.
    pub fn apply_action_with_shape(&self, action: &BumpAction) -> Result<(AirfoilGeom, BumpShape), GeometryError> {
        let (modified, shape) = self.bumped_upper_with_shape(action)?;
        let upper = standard_grid().fit(&modified);
        let lower = enforce_thickness(&upper, &self.cst_lower, self.t_max)?;
        Ok((AirfoilGeom { cst_upper: upper, cst_lower: lower, t_max: self.t_max }, shape))
    }

    /// Upper surface with the bump added but before refitting, on the
    /// standard grid.
    pub fn bumped_upper(&self, action: &BumpAction) -> Result<Vec<f64>, GeometryError> {
        self.bumped_upper_with_shape(action).map(|(y, _)| y)
    }

    fn bumped_upper_with_shape(&self, action: &BumpAction) -> Result<(Vec<f64>, BumpShape), GeometryError> {
        let grid = standard_grid();
        let (bump, shape) = action.ordinates(&grid.x)?;
        let y = grid
            .evaluate(&self.cst_upper)
            .into_iter()
            .zip(bump)
            .map(|(y, b)| y + b)
            .collect();
        Ok((y, shape))
    }
}

pub fn split_cst14(cst14: &[f64]) -> Result<(CstCoeffs, CstCoeffs), GeometryError> {
    if cst14.len() != 2 * CST_ORDER {
        return Err(GeometryError::Domain(format!(
            "expected {} CST coefficients, got {}",
            2 * CST_ORDER,
            cst14.len()
        )));
    }
    let mut upper = [0.0; CST_ORDER];
    let mut lower = [0.0; CST_ORDER];
    upper.copy_from_slice(&cst14[..CST_ORDER]);
    lower.copy_from_slice(&cst14[CST_ORDER..]);
    Ok((upper, lower))
}

fn thickness_with_scale(upper: &[f64], lower: &[f64], k: f64) -> f64 {
    upper
        .iter()
        .zip(lower)
        .map(|(u, l)| u - k * l)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Scale the lower-surface coefficients so that the maximum thickness is
/// `t_max`, keeping the upper surface above the lower one.
fn enforce_thickness(upper: &CstCoeffs, lower: &CstCoeffs, t_max: f64) -> Result<CstCoeffs, GeometryError> {
    let grid = standard_grid();
    let yu = grid.evaluate(upper);
    let yl = grid.evaluate(lower);
    let thickness = |k: f64| thickness_with_scale(&yu, &yl, k);

    let k = if (thickness(1.0) - t_max).abs() <= THICKNESS_SLACK {
        1.0
    } else {
        let (mut lo, mut hi) = SCALE_BRACKET;
        let (f_lo, f_hi) = (thickness(lo) - t_max, thickness(hi) - t_max);
        if f_lo > 0.0 || f_hi < 0.0 {
            return Err(GeometryError::Modification(format!(
                "lower-surface scale factor not bracketed in [{lo}, {hi}] \
                 (thickness {:.6}..{:.6}, target {t_max})",
                f_lo + t_max,
                f_hi + t_max
            )));
        }
        while hi - lo > SCALE_TOLERANCE * 1e-4 {
            let mid = 0.5 * (lo + hi);
            if thickness(mid) < t_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    if yu.iter().zip(&yl).any(|(u, l)| u - k * l < -1e-12) {
        return Err(GeometryError::Modification(
            "upper surface crosses below the lower surface".into(),
        ));
    }
    let mut out = *lower;
    out.iter_mut().for_each(|c| *c *= k);
    Ok(out)
}
