//! Hicks-Henne bump functions and the width-to-exponent inversion.

use std::f64::consts::PI;

use super::GeometryError;

/// Relative height that defines the bump width.
pub const WIDTH_LEVEL: f64 = 0.01;

/// Search bracket for the shape exponent.
pub const T2_MIN: f64 = 0.2;
pub const T2_MAX: f64 = 200.0;

/// Both width points must stay at least one cell of a 2001-point uniform
/// grid away from the ends of the support.
pub const SUPPORT_MARGIN: f64 = 1.0 / 2000.0;

/// Exponent mapping the peak location `t1` onto 0.5.
pub fn peak_exponent(t1: f64) -> f64 {
    0.5f64.ln() / t1.ln()
}

/// Hicks-Henne bump `h_b [sin(pi x^e)]^t2` with `e = ln 0.5 / ln t1`.
pub fn bump_y(t1: f64, t2: f64, h_b: f64, x: f64) -> Result<f64, GeometryError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(GeometryError::Domain(format!("station {x} outside [0, 1]")));
    }
    if !(t1 > 0.0 && t1 < 1.0) {
        return Err(GeometryError::Domain(format!("peak location {t1} outside (0, 1)")));
    }
    if !(t2 > 0.0) {
        return Err(GeometryError::Domain(format!("shape exponent {t2} must be positive")));
    }
    Ok(h_b * bump_shape(peak_exponent(t1), t2, x))
}

/// Unit-height bump with the exponent precomputed; `x` must be in [0, 1].
pub(crate) fn bump_shape(exponent: f64, t2: f64, x: f64) -> f64 {
    let z = x.powf(exponent);
    // sin(pi z) == sin(pi (1 - z)); folding keeps x = 1 exactly zero.
    let folded = z.min(1.0 - z).max(0.0);
    (PI * folded).sin().powf(t2)
}

/// Stations left and right of the peak where the bump reaches 1% of its height.
pub fn width_points(t1: f64, t2: f64) -> (f64, f64) {
    let inv_e = 1.0 / peak_exponent(t1);
    let theta = WIDTH_LEVEL.powf(1.0 / t2).asin() / PI;
    (theta.powf(inv_e), (1.0 - theta).powf(inv_e))
}

/// Chordwise distance between the two 1%-height points.
pub fn bump_width(t1: f64, t2: f64) -> f64 {
    let (l, r) = width_points(t1, t2);
    r - l
}

/// Shape exponent for a requested width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpShape {
    pub t2: f64,
    /// True when the requested width was unattainable and the closest
    /// feasible width was used instead.
    pub clamped: bool,
}

fn within_support(t1: f64, t2: f64) -> bool {
    let (l, r) = width_points(t1, t2);
    l >= SUPPORT_MARGIN && r <= 1.0 - SUPPORT_MARGIN
}

/// Solve for the exponent `t2` that produces a bump of width `s_b`.
///
/// Width falls monotonically as `t2` grows, so both the support limit and
/// the width itself are located by bisection.
pub fn solve_t2(t1: f64, s_b: f64) -> Result<BumpShape, GeometryError> {
    if !(t1 > 0.0 && t1 < 1.0) {
        return Err(GeometryError::Domain(format!("peak location {t1} outside (0, 1)")));
    }
    if !(s_b > 0.0) {
        return Err(GeometryError::Domain(format!("bump width {s_b} must be positive")));
    }

    // Smallest exponent whose flanks stay inside the support.
    let t2_floor = if within_support(t1, T2_MIN) {
        T2_MIN
    } else if !within_support(t1, T2_MAX) {
        return Ok(BumpShape { t2: T2_MAX, clamped: true });
    } else {
        let (mut lo, mut hi) = (T2_MIN, T2_MAX);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if within_support(t1, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-13 * hi {
                break;
            }
        }
        hi
    };

    let widest = bump_width(t1, t2_floor);
    let narrowest = bump_width(t1, T2_MAX);
    if s_b > widest {
        return Ok(BumpShape { t2: t2_floor, clamped: true });
    }
    if s_b < narrowest {
        return Ok(BumpShape { t2: T2_MAX, clamped: true });
    }

    let (mut lo, mut hi) = (t2_floor, T2_MAX);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if bump_width(t1, mid) > s_b {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(BumpShape { t2: 0.5 * (lo + hi), clamped: false })
}
