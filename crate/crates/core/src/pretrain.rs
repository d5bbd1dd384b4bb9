//! Imitation data from greedy search, dedup and smoothing, actor regression
//! and critic-only fitting.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::env::{physical_to_scaled, Environment, Evaluator, COUNTS, PEAK_RANGE};
use crate::features::DesignState;
use crate::geometry::{AirfoilGeom, BumpAction, HEIGHT_RANGE, WIDTH_RANGE};
use crate::nnet::{train_minibatch, LossKind, NnetError, TrainConfig};
use crate::rl::{ppo_train, HistoryRow, PolicyAgent, PpoConfig, RlError, ACTION_DIM};
use crate::surrogate::FeatureBounds;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("evaluator failed: {0}")]
    Evaluator(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(transparent)]
    Network(#[from] NnetError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("samples: {0}")]
    Csv(#[from] csv::Error),
    #[error("samples: {0}")]
    Invalid(String),
}

/// A state, the physical action taken there and its reward in counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateActionSample {
    pub state: DesignState,
    pub action: BumpAction,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyConfig {
    pub searches: usize,
    pub steps: usize,
    pub candidates: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self { searches: 4, steps: 5, candidates: 200 }
    }
}

/// Uniform action over the physical action box.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> BumpAction {
    BumpAction {
        t1: rng.random_range(PEAK_RANGE.0..=PEAK_RANGE.1),
        s_b: rng.random_range(WIDTH_RANGE.0..=WIDTH_RANGE.1),
        h_b: rng.random_range(HEIGHT_RANGE.0..=HEIGHT_RANGE.1),
    }
}

/// Independent greedy searches from one baseline. At every step the
/// candidate with the smallest drag whose outputs stay inside `bounds` is
/// taken; a search stops early when no candidate qualifies.
pub fn greedy_search<R: Rng + ?Sized>(
    baseline: &AirfoilGeom,
    evaluator: &Evaluator,
    config: &GreedyConfig,
    bounds: &FeatureBounds,
    rng: &mut R,
) -> Result<Vec<StateActionSample>, PretrainError> {
    let start = evaluator.evaluate(baseline).map_err(|e| PretrainError::Evaluator(e.to_string()))?;
    let mut out = Vec::new();
    for _ in 0..config.searches {
        let mut airfoil = baseline.clone();
        let mut current = start;
        for _ in 0..config.steps {
            let candidates: Vec<BumpAction> = (0..config.candidates).map(|_| random_action(rng)).collect();
            let scored: Vec<Option<(f64, AirfoilGeom, crate::env::Evaluation)>> = candidates
                .par_iter()
                .map(|a| {
                    let next = airfoil.apply_action(a).ok()?;
                    let e = evaluator.evaluate(&next).ok()?;
                    (e.shock && bounds.contains(&e.outputs)).then_some((e.cd, next, e))
                })
                .collect();
            let best = scored
                .into_iter()
                .enumerate()
                .filter_map(|(i, s)| s.map(|s| (i, s)))
                .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)));
            let Some((i, (_, next, eval))) = best else { break };
            out.push(StateActionSample { state: current.state, action: candidates[i], reward: COUNTS * (current.cd - eval.cd) });
            airfoil = next;
            current = eval;
        }
    }
    Ok(out)
}

fn state_distance(a: &DesignState, b: &DesignState) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// States closer than this are treated as equal.
pub const STATE_TOLERANCE: f64 = 1e-9;

/// Keep only the highest-reward sample among equal states; survivors keep
/// their original order and ties go to the earlier sample.
pub fn dedup_states(samples: &[StateActionSample]) -> Vec<StateActionSample> {
    (0..samples.len())
        .filter(|&i| {
            !(0..samples.len()).any(|j| {
                j != i
                    && state_distance(&samples[i].state, &samples[j].state) <= STATE_TOLERANCE
                    && (samples[j].reward > samples[i].reward || (samples[j].reward == samples[i].reward && j < i))
            })
        })
        .map(|i| samples[i])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    pub passes: usize,
    pub neighbors: usize,
    pub factor: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { passes: 10, neighbors: 10, factor: 0.2 }
    }
}

/// Inverse-distance-weighted smoothing of actions over state-space
/// neighbours. Neighbours and distances come from the original states; a
/// zero distance takes the largest finite weight of the pass. Returns the
/// smoothed samples and the number of passes run.
pub fn smooth_samples(samples: &[StateActionSample], config: &SmoothingConfig) -> Result<(Vec<StateActionSample>, usize), PretrainError> {
    let n = samples.len();
    if n < config.neighbors + 1 {
        return Err(PretrainError::TooFewSamples { needed: config.neighbors + 1, got: n });
    }
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let mut d: Vec<(usize, f64)> =
                (0..n).filter(|&j| j != i).map(|j| (j, state_distance(&samples[i].state, &samples[j].state))).collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(config.neighbors);
            d
        })
        .collect();
    let max_weight = neighbors
        .iter()
        .flatten()
        .filter(|(_, d)| *d > 0.0)
        .map(|(_, d)| 1.0 / d)
        .fold(f64::NAN, f64::max);
    let max_weight = if max_weight.is_finite() { max_weight } else { 1.0 };
    let weight = |d: f64| if d > 0.0 { 1.0 / d } else { max_weight };

    let mut actions: Vec<[f64; ACTION_DIM]> = samples.iter().map(|s| s.action.to_array()).collect();
    let mut passes = 0;
    for _ in 0..config.passes {
        let prev = actions.clone();
        for i in 0..n {
            let mut num = [0.0; ACTION_DIM];
            let mut den = 0.0;
            for &(j, d) in &neighbors[i] {
                let w = weight(d);
                den += w;
                for k in 0..ACTION_DIM {
                    num[k] += w * prev[j][k];
                }
            }
            for k in 0..ACTION_DIM {
                actions[i][k] = prev[i][k] + (num[k] / den - prev[i][k]) * config.factor;
            }
        }
        passes += 1;
    }
    let out = samples
        .iter()
        .zip(&actions)
        .map(|(s, a)| StateActionSample { action: BumpAction { t1: a[0], s_b: a[1], h_b: a[2] }, ..*s })
        .collect();
    Ok((out, passes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImitationConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        Self { epochs: 1000, lr: 1e-3, batch_size: 64, seed: 0 }
    }
}

impl ImitationConfig {
    /// Learning rate divided by ten at 25%, 50% and 75% of the epochs.
    pub fn schedule(&self) -> Vec<(usize, f64)> {
        let q = self.epochs / 4;
        vec![(q, self.lr), (q, self.lr * 0.1), (q, self.lr * 0.01), (self.epochs - 3 * q, self.lr * 0.001)]
    }
}

/// Regress the actor mean onto the samples' scaled actions. The loss is the
/// squared action error averaged over samples; log-stds are not touched.
pub fn imitate_policy(agent: &mut PolicyAgent, samples: &[StateActionSample], config: &ImitationConfig) -> Result<Vec<f64>, PretrainError> {
    if samples.is_empty() {
        return Err(PretrainError::TooFewSamples { needed: 1, got: 0 });
    }
    let x = Array2::from_shape_fn((samples.len(), 4), |(i, j)| samples[i].state.0[j]);
    let y = Array2::from_shape_fn((samples.len(), ACTION_DIM), |(i, j)| physical_to_scaled(&samples[i].action)[j]);
    let tc = TrainConfig {
        batch_size: config.batch_size,
        schedule: config.schedule(),
        loss: LossKind::SquaredNorm,
        seed: config.seed,
        checkpoint_every: 0,
    };
    Ok(train_minibatch(&mut agent.actor, &x, &y, &tc, |_, _| {})?)
}

/// Mean squared-norm imitation loss of the current actor.
pub fn imitation_loss(agent: &PolicyAgent, samples: &[StateActionSample]) -> Result<f64, PretrainError> {
    let states: Vec<[f64; 4]> = samples.iter().map(|s| s.state.0).collect();
    let means = agent.means(&states)?;
    let total: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let a = physical_to_scaled(&s.action);
            (0..ACTION_DIM).map(|k| (means[[i, k]] - a[k]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// PPO iterations with the actor frozen, so only the critic learns.
pub fn pretrain_critic<E, F>(
    agent: &mut PolicyAgent,
    baselines: &[E::Baseline],
    config: &PpoConfig,
    make_env: &F,
) -> Result<Vec<HistoryRow>, PretrainError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    let cfg = PpoConfig { update_actor: false, ..config.clone() };
    Ok(ppo_train(agent, baselines, &cfg, make_env, |_, _| {})?)
}

/// Sample CSV: state, physical action, reward and the pipeline stage.
pub fn write_samples<W: Write>(out: W, samples: &[StateActionSample], stage: &str, comments: &[String]) -> Result<(), PretrainError> {
    let mut out = out;
    for c in comments {
        writeln!(out, "# {c}").map_err(csv::Error::from)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x1", "mw1", "mwl", "mwa", "t1", "sb", "hb", "reward", "stage"])?;
    for s in samples {
        let mut rec: Vec<String> = s.state.0.iter().chain(&s.action.to_array()).map(|v| v.to_string()).collect();
        rec.push(s.reward.to_string());
        rec.push(stage.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_samples<R: Read>(input: R) -> Result<Vec<StateActionSample>, PretrainError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() < 8 {
            return Err(PretrainError::Invalid(format!("row {}: expected 8 numeric columns", n + 1)));
        }
        let v: Vec<f64> = (0..8)
            .map(|k| row[k].trim().parse::<f64>().map_err(|e| PretrainError::Invalid(format!("row {}: {e}", n + 1))))
            .collect::<Result<_, _>>()?;
        let action = BumpAction::new(v[4], v[5], v[6]).map_err(|e| PretrainError::Invalid(format!("row {}: {e}", n + 1)))?;
        if !v[7].is_finite() {
            return Err(PretrainError::Invalid(format!("row {}: non-finite reward", n + 1)));
        }
        out.push(StateActionSample { state: DesignState([v[0], v[1], v[2], v[3]]), action, reward: v[7] });
    }
    Ok(out)
}
