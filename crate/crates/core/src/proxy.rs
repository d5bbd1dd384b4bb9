//! Deterministic pseudo-aerodynamics standing in for a flow solver.
//!
//! The upper-surface wall Mach number is built from local height and aft
//! slope of the surface, smoothed, filled into a supersonic plateau and
//! recompressed through a shock-like ramp. Drag is a base value plus a
//! fourth-power wave term in the pre-shock Mach number and a plateau
//! roughness term. None of this claims aerodynamic fidelity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{extract_features, FeatureSet, WallMachDistribution};
use crate::geometry::{standard_grid, AirfoilGeom, CstCoeffs, GeometryError, CST_ORDER};
use crate::surrogate::{FeatureBounds, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyConfig {
    pub m_inf: f64,
    pub gain_thickness: f64,
    pub gain_slope: f64,
    pub gain_lower: f64,
    pub smoothing_half_width: usize,
    /// Fraction of the gap to the running supersonic peak that the plateau
    /// fills ahead of the shock.
    pub plateau_fill: f64,
    /// Wall Mach number the flow recompresses to behind the shock.
    pub post_shock_mach: f64,
    pub recompression_stations: usize,
    pub cd_base: f64,
    pub k_wave: f64,
    pub k_err: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            m_inf: 0.76,
            gain_thickness: 6.0,
            gain_slope: 0.12,
            gain_lower: 2.0,
            smoothing_half_width: 2,
            plateau_fill: 0.8,
            post_shock_mach: 0.95,
            recompression_stations: 5,
            cd_base: 0.0095,
            k_wave: 1.2,
            k_err: 0.004,
        }
    }
}

/// Drag and features of one proxy evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyResult {
    pub cd: f64,
    pub features: FeatureSet,
}

fn moving_average(v: &[f64], half_width: usize) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width).min(n - 1);
            v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn central_slope(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (y[b] - y[a]) / (x[b] - x[a])
        })
        .collect()
}

/// Synthetic wall Mach distribution for 14 CST coefficients.
pub fn proxy_distribution(cst14: &[f64], config: &ProxyConfig) -> Result<WallMachDistribution, GeometryError> {
    let (upper, lower) = crate::geometry::split_cst14(cst14)?;
    Ok(distribution_from_surfaces(&upper, &lower, config))
}

fn distribution_from_surfaces(upper: &CstCoeffs, lower: &CstCoeffs, config: &ProxyConfig) -> WallMachDistribution {
    let grid = standard_grid();
    let x = &grid.x;
    let yu = grid.evaluate(upper);
    let yl = grid.evaluate(lower);
    let slope = central_slope(x, &yu);

    let raw: Vec<f64> = yu
        .iter()
        .zip(&slope)
        .map(|(y, s)| config.m_inf + config.gain_thickness * y + config.gain_slope * (-s).max(0.0))
        .collect();
    let smooth = moving_average(&raw, config.smoothing_half_width);
    let mw_upper = shape_shock(&smooth, config);

    let lower_raw: Vec<f64> = yl.iter().map(|y| config.m_inf + config.gain_lower * (-y)).collect();
    let mw_lower = moving_average(&lower_raw, config.smoothing_half_width)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();

    WallMachDistribution {
        x_upper: x.clone(),
        mw_upper,
        x_lower: x.clone(),
        mw_lower,
        m_inf: config.m_inf,
    }
}

/// Plateau fill ahead of the last sonic crossing and recompression ramp
/// behind it.
fn shape_shock(s: &[f64], config: &ProxyConfig) -> Vec<f64> {
    let n = s.len();
    let mut out = s.to_vec();
    // Last supersonic-to-subsonic crossing.
    let Some(k) = (1..n).rev().find(|&i| s[i - 1] >= 1.0 && s[i] < 1.0) else {
        return out;
    };
    let mut running_peak = f64::NEG_INFINITY;
    let start = (0..k).rev().take_while(|&i| s[i] >= 1.0).last().unwrap_or(k - 1);
    for i in start..k {
        running_peak = running_peak.max(s[i]);
        out[i] = s[i] + config.plateau_fill * (running_peak - s[i]);
    }
    let top = out[k - 1];
    let ramp = config.recompression_stations.max(1) as f64;
    for i in k..n {
        let w = (((i - k + 1) as f64) / ramp).min(1.0);
        let target = config.post_shock_mach + (s[i] - s[k]);
        out[i] = (1.0 - w) * top + w * target;
    }
    out
}

/// Drag coefficient and features.
pub fn proxy_evaluate(cst14: &[f64], config: &ProxyConfig) -> Result<ProxyResult, GeometryError> {
    let dist = proxy_distribution(cst14, config)?;
    let features = extract_features(&dist)
        .map_err(|e| GeometryError::Domain(format!("feature extraction failed: {e}")))?;
    Ok(ProxyResult { cd: proxy_drag(&features, config), features })
}

/// `cd_base + k_wave max(Mw1 - 1, 0)^4 + k_err Err`, with the wave term
/// dropped when no shock was found.
pub fn proxy_drag(features: &FeatureSet, config: &ProxyConfig) -> f64 {
    let wave = if features.no_shock { 0.0 } else { (features.mw1 - 1.0).max(0.0).powi(4) };
    config.cd_base + config.k_wave * wave + config.k_err * features.err
}

/// Base coefficients of the bundled seed family.
pub const SEED_BASE_UPPER: CstCoeffs = [0.17, 0.2, 0.18, 0.14, 0.12, 0.1, 0.12];
pub const SEED_BASE_LOWER: CstCoeffs = [-0.13, -0.12, -0.15, -0.05, -0.06, 0.04, 0.08];

/// Random airfoil around the seed base: each coefficient perturbed by up to
/// `spread` relative, thickness enforced at `t_max`.
pub fn random_airfoil<R: Rng + ?Sized>(rng: &mut R, spread: f64, t_max: f64) -> Result<AirfoilGeom, GeometryError> {
    let mut upper = SEED_BASE_UPPER;
    let mut lower = SEED_BASE_LOWER;
    for c in upper.iter_mut().chain(lower.iter_mut()) {
        *c *= 1.0 + spread * rng.random_range(-1.0..1.0);
    }
    debug_assert_eq!(upper.len(), CST_ORDER);
    AirfoilGeom::new(upper, lower, t_max)
}

/// Default relative spread of the seed family.
pub const SEED_SPREAD: f64 = 0.2;

/// Whether a proxy result lies inside the feature box.
pub fn within_bounds(result: &ProxyResult, bounds: &FeatureBounds) -> bool {
    !result.features.no_shock && bounds.contains(&result.outputs())
}

impl ProxyResult {
    /// `[cd, x1, mw1, mwl, mwa]`, the surrogate output order.
    pub fn outputs(&self) -> [f64; 5] {
        let f = &self.features;
        [self.cd, f.x1, f.mw1, f.mwl, f.mwa]
    }
}

/// `n` seed airfoils drawn around the base family and rejection-sampled
/// against the feature box.
pub fn seed_airfoils(n: usize, seed: u64, config: &ProxyConfig, t_max: f64) -> Result<Vec<AirfoilGeom>, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = FeatureBounds::default();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(GeometryError::Domain(format!(
                "seed generator accepted {} of {n} after {attempts} draws",
                out.len()
            )));
        }
        let Ok(a) = random_airfoil(&mut rng, SEED_SPREAD, t_max) else { continue };
        match proxy_evaluate(&a.cst14(), config) {
            Ok(r) if within_bounds(&r, &bounds) => out.push(a),
            _ => {}
        }
    }
    Ok(out)
}

/// `n` proxy-evaluated random airfoils, unfiltered. Draws that fail
/// thickness enforcement are skipped and redrawn.
pub fn generate_pool(n: usize, seed: u64, spread: f64, config: &ProxyConfig, t_max: f64) -> Result<Vec<SampleRecord>, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut failures = 0usize;
    while out.len() < n {
        let rec = random_airfoil(&mut rng, spread, t_max).and_then(|a| {
            let r = proxy_evaluate(&a.cst14(), config)?;
            SampleRecord::new(a.cst14(), r.outputs()).map_err(|e| GeometryError::Domain(e.to_string()))
        });
        match rec {
            Ok(r) => out.push(r),
            Err(e) => {
                failures += 1;
                if failures > 100 * (n + 1) {
                    return Err(e);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BumpAction;

    fn base() -> [f64; 14] {
        let mut c = [0.0; 14];
        c[..7].copy_from_slice(&SEED_BASE_UPPER);
        c[7..].copy_from_slice(&SEED_BASE_LOWER);
        c
    }

    #[test]
    fn zero_geometry_gives_flat_distribution() {
        let cfg = ProxyConfig::default();
        let d = proxy_distribution(&[0.0; 14], &cfg).unwrap();
        assert!(d.mw_upper.iter().chain(&d.mw_lower).all(|&m| (m - cfg.m_inf).abs() < 1e-14));
    }

    #[test]
    fn doubling_upper_raises_peak_mach() {
        let cfg = ProxyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a = random_airfoil(&mut rng, SEED_SPREAD, 0.095).unwrap();
            let c = a.cst14();
            let mut d = c;
            for v in &mut d[..7] {
                *v *= 2.0;
            }
            let max = |c: &[f64]| {
                proxy_distribution(c, &cfg).unwrap().mw_upper.iter().cloned().fold(f64::MIN, f64::max)
            };
            assert!(max(&d) > max(&c));
        }
    }

    #[test]
    fn evaluation_is_bitwise_deterministic() {
        let cfg = ProxyConfig::default();
        let a = proxy_distribution(&base(), &cfg).unwrap();
        let b = proxy_distribution(&base(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsonic_drag_has_no_wave_term() {
        let cfg = ProxyConfig::default();
        let mut c = base();
        for v in &mut c {
            *v *= 0.3;
        }
        let r = proxy_evaluate(&c, &cfg).unwrap();
        assert!(r.features.mw1 < 1.0);
        assert_eq!(r.cd, cfg.cd_base + cfg.k_err * r.features.err);
    }

    #[test]
    fn wave_drag_difference_follows_fourth_power() {
        let cfg = ProxyConfig::default();
        let r = proxy_evaluate(&base(), &cfg).unwrap();
        let mut f1 = r.features;
        let mut f2 = r.features;
        f1.mw1 = 1.16;
        f2.mw1 = 1.12;
        let oracle = 1.2 * (0.16f64.powi(4) - 0.12f64.powi(4));
        let diff = proxy_drag(&f1, &cfg) - proxy_drag(&f2, &cfg);
        assert!((diff - oracle).abs() < 1e-15);
        assert!((diff - 5.38e-4).abs() < 5e-7);
    }

    #[test]
    fn drag_is_continuous_almost_everywhere() {
        let cfg = ProxyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut smooth = 0;
        for _ in 0..100 {
            let a = random_airfoil(&mut rng, SEED_SPREAD, 0.095).unwrap().cst14();
            let mut b = a;
            for v in &mut b {
                *v += 1e-6 * rng.random_range(-1.0..1.0);
            }
            let (ra, rb) = (proxy_evaluate(&a, &cfg).unwrap(), proxy_evaluate(&b, &cfg).unwrap());
            if (ra.cd - rb.cd).abs() < 1e-6 {
                smooth += 1;
            }
        }
        assert!(smooth >= 95, "{smooth}");
    }

    #[test]
    fn seeds_are_in_the_box_and_improvable() {
        let cfg = ProxyConfig::default();
        let seeds = seed_airfoils(10, 0, &cfg, 0.095).unwrap();
        let bounds = FeatureBounds::default();
        for s in &seeds {
            let r0 = proxy_evaluate(&s.cst14(), &cfg).unwrap();
            assert!(within_bounds(&r0, &bounds));
            let mut improved = false;
            'grid: for i in 1..20 {
                for sb in [0.2, 0.3, 0.4] {
                    for k in -5..=5 {
                        let act = BumpAction::new(i as f64 * 0.05, sb, k as f64 * 0.004).unwrap();
                        if let Ok(b) = s.apply_action(&act) {
                            if proxy_evaluate(&b.cst14(), &cfg).unwrap().cd < r0.cd {
                                improved = true;
                                break 'grid;
                            }
                        }
                    }
                }
            }
            assert!(improved);
        }
    }

    #[test]
    fn lower_bump_at_same_mach_reduces_drag() {
        // A bump that lowers Mw1 without raising roughness lowers drag.
        let cfg = ProxyConfig::default();
        let a = AirfoilGeom::from_cst14(&base(), 0.095).unwrap();
        let r0 = proxy_evaluate(&a.cst14(), &cfg).unwrap();
        let b = a.apply_action(&BumpAction::new(0.3, 0.4, -0.02).unwrap()).unwrap();
        let r1 = proxy_evaluate(&b.cst14(), &cfg).unwrap();
        assert!(r1.features.mw1 < r0.features.mw1);
        assert!(r1.cd < r0.cd);
    }
}
