//! Wall Mach number distributions and the shock/plateau features that form
//! the design state.

use std::fmt::Write as _;

use thiserror::Error;

/// Ratio of specific heats for air.
pub const GAMMA: f64 = 1.4;

/// Suction-peak search window (chord fraction).
pub const SUCTION_PEAK_WINDOW: (f64, f64) = (0.0, 0.2);
/// Shock search window (chord fraction).
pub const SHOCK_WINDOW: (f64, f64) = (0.2, 0.9);
/// Minimum Mach drop across a detected shock.
pub const MIN_SHOCK_DROP: f64 = 0.05;
/// Neighbouring intervals belong to the shock while their gradient is at
/// least this fraction of the steepest one.
pub const SHOCK_GRADIENT_FRACTION: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("nonphysical pressure: {0}")]
    NonPhysicalPressure(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Isentropic wall Mach number from a pressure coefficient.
pub fn cp_to_wall_mach(cp: f64, m_inf: f64) -> Result<f64, FeatureError> {
    let half_gm1 = 0.5 * (GAMMA - 1.0);
    let expo = GAMMA / (GAMMA - 1.0);
    let p_ratio = 1.0 + 0.5 * GAMMA * m_inf * m_inf * cp;
    if !(p_ratio > 0.0) {
        return Err(FeatureError::NonPhysicalPressure(format!(
            "p/p_inf = {p_ratio} for cp = {cp}"
        )));
    }
    let p0_ratio = (1.0 + half_gm1 * m_inf * m_inf).powf(expo);
    let inner = (p0_ratio / p_ratio).powf(1.0 / expo) - 1.0;
    if inner < -1e-12 {
        return Err(FeatureError::NonPhysicalPressure(format!(
            "static pressure exceeds total pressure for cp = {cp}"
        )));
    }
    Ok((inner.max(0.0) / half_gm1).sqrt())
}

/// Pressure coefficient for a wall Mach number; inverse of [`cp_to_wall_mach`].
pub fn wall_mach_to_cp(mw: f64, m_inf: f64) -> f64 {
    let half_gm1 = 0.5 * (GAMMA - 1.0);
    let expo = GAMMA / (GAMMA - 1.0);
    let p0_ratio = (1.0 + half_gm1 * m_inf * m_inf).powf(expo);
    let p_ratio = p0_ratio / (1.0 + half_gm1 * mw * mw).powf(expo);
    (p_ratio - 1.0) / (0.5 * GAMMA * m_inf * m_inf)
}

/// Wall Mach number along both surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct WallMachDistribution {
    pub x_upper: Vec<f64>,
    pub mw_upper: Vec<f64>,
    pub x_lower: Vec<f64>,
    pub mw_lower: Vec<f64>,
    pub m_inf: f64,
}

impl WallMachDistribution {
    pub fn new(
        x_upper: Vec<f64>,
        mw_upper: Vec<f64>,
        x_lower: Vec<f64>,
        mw_lower: Vec<f64>,
        m_inf: f64,
    ) -> Result<Self, FeatureError> {
        for (name, x, mw) in [("upper", &x_upper, &mw_upper), ("lower", &x_lower, &mw_lower)] {
            if x.len() != mw.len() {
                return Err(FeatureError::InvalidDistribution(format!(
                    "{name} surface has {} stations but {} values",
                    x.len(),
                    mw.len()
                )));
            }
            if x.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(FeatureError::InvalidDistribution(format!(
                    "{name} stations not strictly increasing"
                )));
            }
            if mw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(FeatureError::InvalidDistribution(format!(
                    "{name} surface has a negative or non-finite Mach number"
                )));
            }
        }
        Ok(Self { x_upper, mw_upper, x_lower, mw_lower, m_inf })
    }
}

/// Features of a wall Mach number distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSet {
    /// Shock location.
    pub x1: f64,
    /// Wall Mach number ahead of the shock.
    pub mw1: f64,
    /// Suction-peak wall Mach number.
    pub mwl: f64,
    /// Highest wall Mach number behind the shock.
    pub mwa: f64,
    /// Highest wall Mach number on the lower surface.
    pub mw_lower: f64,
    /// RMS deviation of the suction plateau from a straight line.
    pub err: f64,
    /// Set when no shock could be identified on the upper surface.
    pub no_shock: bool,
}

impl FeatureSet {
    pub fn state(&self) -> DesignState {
        DesignState([self.x1, self.mw1, self.mwl, self.mwa])
    }
}

/// The four-element state `[X1, Mw1, MwL, MwA]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignState(pub [f64; 4]);

impl DesignState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn x1(&self) -> f64 {
        self.0[0]
    }

    pub fn mw1(&self) -> f64 {
        self.0[1]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

fn argmax_in(values: &[f64], range: std::ops::Range<usize>) -> Option<usize> {
    range.fold(None, |best: Option<usize>, i| match best {
        Some(b) if values[b] >= values[i] => Some(b),
        _ => Some(i),
    })
}

/// Extract shock and plateau features.
///
/// The shock is the run of steeply descending intervals around the steepest
/// finite-difference gradient inside [`SHOCK_WINDOW`]. `X1` is the centre of
/// that run, `Mw1` the value at its upstream end and `MwA` the highest value
/// from its downstream end to the trailing edge.
pub fn extract_features(dist: &WallMachDistribution) -> Result<FeatureSet, FeatureError> {
    let x = &dist.x_upper;
    let mw = &dist.mw_upper;
    let n = x.len();
    if n < 20 {
        return Err(FeatureError::InvalidDistribution(format!(
            "upper surface needs at least 20 stations, got {n}"
        )));
    }

    let peak_end = x.iter().take_while(|&&v| v <= SUCTION_PEAK_WINDOW.1).count().max(1);
    let i_peak = argmax_in(mw, 0..peak_end).expect("nonempty window");
    let mwl = mw[i_peak];
    let mw_lower = dist.mw_lower.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mw_lower = if mw_lower.is_finite() { mw_lower } else { 0.0 };

    let gradient = |i: usize| (mw[i + 1] - mw[i]) / (x[i + 1] - x[i]);
    let steepest = (0..n - 1)
        .filter(|&i| x[i] >= SHOCK_WINDOW.0 && x[i + 1] <= SHOCK_WINDOW.1)
        .fold(None, |best: Option<(usize, f64)>, i| {
            let g = gradient(i);
            match best {
                Some((_, bg)) if bg <= g => best,
                _ => Some((i, g)),
            }
        });

    let any_supersonic = mw.iter().any(|&v| v >= 1.0);
    let shock = steepest.and_then(|(i_s, g_s)| {
        if !(g_s < 0.0) {
            return None;
        }
        let limit = SHOCK_GRADIENT_FRACTION * g_s;
        let mut top = i_s;
        while top > 0 && gradient(top - 1) <= limit {
            top -= 1;
        }
        let mut foot = i_s + 1;
        while foot < n - 1 && gradient(foot) <= limit {
            foot += 1;
        }
        (mw[top] - mw[foot] >= MIN_SHOCK_DROP).then_some((top, foot))
    });

    let (x1, mw1, mwa, i_front, no_shock) = match shock {
        Some((top, foot)) if any_supersonic => {
            let mwa = mw[foot..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (0.5 * (x[top] + x[foot]), mw[top], mwa, top, false)
        }
        _ => {
            let i_max = argmax_in(mw, 0..n).expect("nonempty");
            let mwa = if i_max + 1 < n {
                mw[i_max + 1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            } else {
                mw[i_max]
            };
            (x[i_max], mw[i_max], mwa, i_max, true)
        }
    };

    let err = plateau_roughness(x, mw, i_peak, i_front);
    Ok(FeatureSet { x1, mw1, mwl, mwa, mw_lower, err, no_shock })
}

/// RMS deviation from the chord joining the suction peak and the pre-shock
/// point, over the stations strictly between them.
fn plateau_roughness(x: &[f64], mw: &[f64], i_from: usize, i_to: usize) -> f64 {
    if i_to <= i_from + 1 {
        return 0.0;
    }
    let (xa, ya) = (x[i_from], mw[i_from]);
    let slope = (mw[i_to] - ya) / (x[i_to] - xa);
    let count = (i_to - i_from - 1) as f64;
    let ss: f64 = (i_from + 1..i_to)
        .map(|i| {
            let d = mw[i] - (ya + slope * (x[i] - xa));
            d * d
        })
        .sum();
    (ss / count).sqrt()
}

/// Single-shock test used to terminate episodes.
pub fn is_single_shock(features: &FeatureSet) -> bool {
    features.mw1 >= 1.0 && !features.no_shock
}

/// Which quantity a distribution file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionQuantity {
    PressureCoefficient,
    WallMach,
}

/// Parse a distribution file. The header line reads
/// `quantity=<cp|mw> m_inf=<value>`; data rows are `x value surface_id`
/// with 0 for the upper surface and 1 for the lower; `#` starts a comment.
pub fn read_distribution(text: &str) -> Result<WallMachDistribution, FeatureError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| FeatureError::Parse("empty distribution file".into()))?;
    let mut quantity = None;
    let mut m_inf = None;
    for token in header.split_whitespace() {
        match token.split_once('=') {
            Some(("quantity", "cp")) => quantity = Some(DistributionQuantity::PressureCoefficient),
            Some(("quantity", "mw")) => quantity = Some(DistributionQuantity::WallMach),
            Some(("m_inf", v)) => {
                m_inf = Some(v.parse::<f64>().map_err(|e| FeatureError::Parse(format!("m_inf: {e}")))?)
            }
            _ => return Err(FeatureError::Parse(format!("unrecognised header token `{token}`"))),
        }
    }
    let quantity = quantity.ok_or_else(|| FeatureError::Parse("header lacks quantity=".into()))?;
    let m_inf = m_inf.ok_or_else(|| FeatureError::Parse("header lacks m_inf=".into()))?;

    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(FeatureError::Parse(format!("line {n}: expected 3 columns")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| FeatureError::Parse(format!("line {n}: {e}")));
        let (xv, v) = (num(f[0])?, num(f[1])?);
        let mw = match quantity {
            DistributionQuantity::PressureCoefficient => cp_to_wall_mach(v, m_inf)?,
            DistributionQuantity::WallMach => v,
        };
        match f[2] {
            "0" => upper.push((xv, mw)),
            "1" => lower.push((xv, mw)),
            other => return Err(FeatureError::Parse(format!("line {n}: surface id `{other}`"))),
        }
    }
    upper.sort_by(|a, b| a.0.total_cmp(&b.0));
    lower.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (xu, mu) = upper.into_iter().unzip();
    let (xl, ml) = lower.into_iter().unzip();
    WallMachDistribution::new(xu, mu, xl, ml, m_inf)
}

/// Write a distribution as wall Mach numbers in the format of
/// [`read_distribution`].
pub fn write_distribution(dist: &WallMachDistribution) -> String {
    let mut out = format!("quantity=mw m_inf={}\n", dist.m_inf);
    for (x, m) in dist.x_upper.iter().zip(&dist.mw_upper) {
        let _ = writeln!(out, "{x} {m} 0");
    }
    for (x, m) in dist.x_lower.iter().zip(&dist.mw_lower) {
        let _ = writeln!(out, "{x} {m} 1");
    }
    out
}
