//! Bump-modification environment: scaled actions in, drag-count rewards out.

use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::features::DesignState;
use crate::geometry::{AirfoilGeom, BumpAction, GeometryError, HEIGHT_RANGE, WIDTH_RANGE};
use crate::nnet::MlpModel;
use crate::proxy::{proxy_evaluate, ProxyConfig};
use crate::surrogate::predict;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called before reset")]
    NotReset,
    #[error("step called after the episode ended")]
    EpisodeDone,
    #[error("evaluator failed: {0}")]
    Evaluator(String),
}

/// Physical range of the peak location; the ends are excluded because the
/// bump exponent is singular there.
pub const PEAK_RANGE: (f64, f64) = (0.01, 0.99);

/// Drag coefficient to drag counts.
pub const COUNTS: f64 = 10_000.0;

/// Clamp a scaled action to the unit box and map it onto physical ranges.
/// The flag reports whether any component was clamped.
pub fn scaled_to_physical(scaled: [f64; 3]) -> (BumpAction, bool) {
    let c = scaled.map(|v| if v.is_nan() { 0.5 } else { v.clamp(0.0, 1.0) });
    let clamped = c != scaled;
    let lerp = |r: (f64, f64), t: f64| r.0 + (r.1 - r.0) * t;
    let action = BumpAction {
        t1: lerp(PEAK_RANGE, c[0]),
        s_b: lerp(WIDTH_RANGE, c[1]),
        h_b: lerp(HEIGHT_RANGE, c[2]),
    };
    (action, clamped)
}

pub fn physical_to_scaled(action: &BumpAction) -> [f64; 3] {
    let inv = |r: (f64, f64), v: f64| (v - r.0) / (r.1 - r.0);
    [inv(PEAK_RANGE, action.t1), inv(WIDTH_RANGE, action.s_b), inv(HEIGHT_RANGE, action.h_b)]
}

/// Drag and state of one airfoil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cd: f64,
    pub state: DesignState,
    /// `[cd, x1, mw1, mwl, mwa]`.
    pub outputs: [f64; 5],
    /// A supersonic plateau ending in a shock is present.
    pub shock: bool,
}

#[derive(Debug, Clone)]
pub enum Evaluator {
    Proxy(ProxyConfig),
    Surrogate(Arc<MlpModel>),
}

impl Evaluator {
    pub fn evaluate(&self, airfoil: &AirfoilGeom) -> Result<Evaluation, EnvError> {
        let cst = airfoil.cst14();
        match self {
            Evaluator::Proxy(cfg) => {
                let r = proxy_evaluate(&cst, cfg).map_err(|e| EnvError::Evaluator(e.to_string()))?;
                Ok(Evaluation {
                    cd: r.cd,
                    state: r.features.state(),
                    outputs: r.outputs(),
                    shock: !r.features.no_shock && r.features.mw1 >= 1.0,
                })
            }
            Evaluator::Surrogate(model) => {
                let o = predict(model, &cst).map_err(|e| EnvError::Evaluator(e.to_string()))?;
                if !o.iter().all(|v| v.is_finite()) {
                    return Err(EnvError::Evaluator("surrogate produced a non-finite output".into()));
                }
                Ok(Evaluation { cd: o[0], state: DesignState([o[1], o[2], o[3], o[4]]), outputs: o, shock: o[2] >= 1.0 })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub max_steps: usize,
    pub t_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { max_steps: 5, t_max: 0.095 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub cd_before: f64,
    pub cd_after: f64,
    /// A scaled component was clamped or the bump width was unattainable.
    pub clamped: bool,
    pub shock_lost: bool,
    /// The modification could not keep the airfoil valid.
    pub infeasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: DesignState,
    /// Drag counts.
    pub reward: f64,
    pub done: bool,
    pub action: BumpAction,
    pub info: StepInfo,
}

/// Episodic interface shared by the airfoil environment and test problems.
pub trait Environment: Send {
    type Baseline: Sync;

    fn reset(&mut self, baseline: &Self::Baseline) -> Result<DesignState, EnvError>;

    fn step(&mut self, action_scaled: [f64; 3]) -> Result<StepResult, EnvError>;

    fn max_steps(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct AirfoilEnv {
    pub config: EnvConfig,
    pub evaluator: Evaluator,
    airfoil: Option<AirfoilGeom>,
    current: Option<Evaluation>,
    steps: usize,
    done: bool,
}

impl AirfoilEnv {
    pub fn new(config: EnvConfig, evaluator: Evaluator) -> Self {
        Self { config, evaluator, airfoil: None, current: None, steps: 0, done: false }
    }

    pub fn airfoil(&self) -> Option<&AirfoilGeom> {
        self.airfoil.as_ref()
    }

    pub fn current(&self) -> Option<&Evaluation> {
        self.current.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

impl Environment for AirfoilEnv {
    type Baseline = AirfoilGeom;

    fn reset(&mut self, baseline: &AirfoilGeom) -> Result<DesignState, EnvError> {
        let eval = self.evaluator.evaluate(baseline)?;
        self.airfoil = Some(baseline.clone());
        self.current = Some(eval);
        self.steps = 0;
        self.done = false;
        Ok(eval.state)
    }

    fn step(&mut self, action_scaled: [f64; 3]) -> Result<StepResult, EnvError> {
        let (Some(airfoil), Some(before)) = (&self.airfoil, self.current) else {
            return Err(EnvError::NotReset);
        };
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let (action, mut clamped) = scaled_to_physical(action_scaled);
        self.steps += 1;
        let budget_spent = self.steps >= self.config.max_steps;
        let mut info = StepInfo { cd_before: before.cd, cd_after: before.cd, clamped, ..StepInfo::default() };

        let next = match airfoil.apply_action_with_shape(&action) {
            Ok((a, shape)) => {
                clamped |= shape.clamped;
                a
            }
            Err(GeometryError::Modification(_)) => {
                info.infeasible = true;
                info.clamped = clamped;
                self.done = true;
                return Ok(StepResult { next_state: before.state, reward: 0.0, done: true, action, info });
            }
            Err(e) => return Err(EnvError::Evaluator(e.to_string())),
        };
        info.clamped = clamped;
        let after = self.evaluator.evaluate(&next)?;
        info.cd_after = after.cd;
        let mut reward = COUNTS * (before.cd - after.cd);
        let mut done = budget_spent;
        if !after.shock {
            info.shock_lost = true;
            reward = 0.0;
            done = true;
        }
        self.airfoil = Some(next);
        self.current = Some(after);
        self.done = done;
        Ok(StepResult { next_state: after.state, reward, done, action, info })
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }
}

/// One row of a rollout log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutRow {
    pub episode: usize,
    pub step: usize,
    pub result: StepResult,
}

pub fn write_rollout_log<W: Write>(out: W, rows: &[RolloutRow], comments: &[String]) -> Result<(), csv::Error> {
    let mut out = out;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "episode", "step", "t1", "sb", "hb", "cd_before", "cd_after", "reward", "x1", "mw1", "mwl", "mwa", "clamped",
        "shock_lost", "infeasible",
    ])?;
    for r in rows {
        let s = &r.result;
        let mut rec = vec![r.episode.to_string(), r.step.to_string()];
        rec.extend(s.action.to_array().iter().map(|v| v.to_string()));
        rec.extend([s.info.cd_before, s.info.cd_after, s.reward].iter().map(|v| v.to_string()));
        rec.extend(s.next_state.0.iter().map(|v| v.to_string()));
        rec.extend([s.info.clamped, s.info.shock_lost, s.info.infeasible].iter().map(|b| u8::from(*b).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
