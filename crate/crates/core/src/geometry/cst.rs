//! Class-shape transformation (CST) surfaces with a sixth-order Bernstein
//! shape function and the round-nose / sharp-tail class function
//! `x^0.5 (1 - x)^1.0`. Trailing-edge thickness is zero.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::{GeometryError, SurfaceCurve};

/// Number of CST coefficients per surface.
pub const CST_ORDER: usize = 7;

/// Number of stations on the shared cosine grid.
pub const GRID_STATIONS: usize = 201;

const N1: f64 = 0.5;
const N2: f64 = 1.0;
const BINOMIAL_6: [f64; CST_ORDER] = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];

/// Relative singular-value floor below which a fit is rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

pub type CstCoeffs = [f64; CST_ORDER];

/// `n` cosine-spaced stations on [0, 1], clustered at both ends.
pub fn cosine_stations(n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least two stations");
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == 0 {
                0.0
            } else if i == n - 1 {
                1.0
            } else {
                0.5 * (1.0 - (std::f64::consts::PI * i as f64 / last).cos())
            }
        })
        .collect()
}

/// Class function times each Bernstein term at a single station.
pub fn cst_basis(x: f64) -> CstCoeffs {
    let class = x.powf(N1) * (1.0 - x).powf(N2);
    let mut out = [0.0; CST_ORDER];
    let one_minus = 1.0 - x;
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = class * BINOMIAL_6[i] * x.powi(i as i32) * one_minus.powi((CST_ORDER - 1 - i) as i32);
    }
    out
}

fn check_station(x: f64) -> Result<(), GeometryError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(GeometryError::Domain(format!("station {x} outside [0, 1]")));
    }
    Ok(())
}

/// Ordinates of a CST surface at the given stations.
pub fn cst_evaluate(coeffs: &CstCoeffs, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
    x.iter()
        .map(|&xi| {
            check_station(xi)?;
            Ok(dot(&cst_basis(xi), coeffs))
        })
        .collect()
}

pub(crate) fn dot(a: &CstCoeffs, b: &CstCoeffs) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Least-squares CST coefficients for a sampled surface.
pub fn cst_fit(curve: &SurfaceCurve) -> Result<CstCoeffs, GeometryError> {
    let n = curve.len();
    if n < CST_ORDER {
        return Err(GeometryError::Fit(format!(
            "{n} stations cannot determine {CST_ORDER} coefficients"
        )));
    }
    let mut design = DMatrix::<f64>::zeros(n, CST_ORDER);
    for (row, &xi) in curve.x().iter().enumerate() {
        let basis = cst_basis(xi);
        for (col, b) in basis.iter().enumerate() {
            design[(row, col)] = *b;
        }
    }
    let rhs = DVector::from_column_slice(curve.y());
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min / s_max < RANK_TOLERANCE {
        return Err(GeometryError::Fit(format!(
            "rank-deficient design matrix (singular values {s_min:e}..{s_max:e})"
        )));
    }
    let solution = svd
        .solve(&rhs, 0.0)
        .map_err(|e| GeometryError::Fit(e.to_string()))?;
    let mut out = [0.0; CST_ORDER];
    out.copy_from_slice(solution.as_slice());
    Ok(out)
}

/// The 201-station cosine grid together with its CST basis and the
/// least-squares projection that maps sampled ordinates to coefficients.
pub struct StandardGrid {
    pub x: Vec<f64>,
    pub basis: Vec<CstCoeffs>,
    projection: Vec<[f64; GRID_STATIONS]>,
}

impl StandardGrid {
    fn build() -> Self {
        let x = cosine_stations(GRID_STATIONS);
        let basis: Vec<CstCoeffs> = x.iter().map(|&xi| cst_basis(xi)).collect();
        let mut design = DMatrix::<f64>::zeros(GRID_STATIONS, CST_ORDER);
        for (row, b) in basis.iter().enumerate() {
            for (col, v) in b.iter().enumerate() {
                design[(row, col)] = *v;
            }
        }
        let pinv = design
            .pseudo_inverse(RANK_TOLERANCE)
            .expect("standard grid basis has full rank");
        let projection = (0..CST_ORDER)
            .map(|r| {
                let mut row = [0.0; GRID_STATIONS];
                for (c, slot) in row.iter_mut().enumerate() {
                    *slot = pinv[(r, c)];
                }
                row
            })
            .collect();
        Self { x, basis, projection }
    }

    /// Surface ordinates on the grid.
    pub fn evaluate(&self, coeffs: &CstCoeffs) -> Vec<f64> {
        self.basis.iter().map(|b| dot(b, coeffs)).collect()
    }

    /// Least-squares refit of grid-sampled ordinates.
    pub fn fit(&self, y: &[f64]) -> CstCoeffs {
        debug_assert_eq!(y.len(), GRID_STATIONS);
        let mut out = [0.0; CST_ORDER];
        for (slot, row) in out.iter_mut().zip(&self.projection) {
            *slot = row.iter().zip(y).map(|(p, v)| p * v).sum();
        }
        out
    }
}

/// Shared standard grid, built once.
pub fn standard_grid() -> &'static StandardGrid {
    static GRID: OnceLock<StandardGrid> = OnceLock::new();
    GRID.get_or_init(StandardGrid::build)
}
