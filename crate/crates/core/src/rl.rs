//! PPO-clip with GAE over diagonal Gaussian policies.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::env::{EnvError, Environment};
use crate::features::DesignState;
use crate::nnet::{flatten_params, set_params, AdamState, MlpModel, NnetError, Scaler};

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] NnetError),
    #[error("non-finite policy ratio at step {0}")]
    NonFiniteRatio(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("agent file: {0}")]
    Parse(String),
    #[error("history: {0}")]
    Csv(#[from] csv::Error),
}

pub const ACTION_DIM: usize = 3;
pub const STATE_DIM: usize = 4;

/// Standard deviations never fall below this.
pub const MIN_STD: f64 = 1e-3;

/// Actor, learned log standard deviations and critic.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAgent {
    /// State to mean scaled action.
    pub actor: MlpModel,
    pub log_std: [f64; ACTION_DIM],
    /// State to value.
    pub critic: MlpModel,
}

impl PolicyAgent {
    /// Fresh agent. The actor's output layer starts small with a bias of
    /// 0.5, so initial means sit near the centre of the action box.
    pub fn new(hidden: &[usize], state_bounds: &[(f64, f64); STATE_DIM], std: f64, seed: u64) -> Result<Self, RlError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scaler = Scaler::from_bounds(state_bounds)?;
        let sizes = |out: usize| {
            let mut s = vec![STATE_DIM];
            s.extend(hidden);
            s.push(out);
            s
        };
        let mut actor = MlpModel::new(&sizes(ACTION_DIM), &mut rng)?.with_scalers(Some(scaler.clone()), None)?;
        let last = actor.layers.last_mut().expect("actor has layers");
        last.weights.mapv_inplace(|w| 0.01 * w);
        last.bias.fill(0.5);
        let critic = MlpModel::new(&sizes(1), &mut rng)?.with_scalers(Some(scaler), None)?;
        if !(std > 0.0) {
            return Err(RlError::Invalid(format!("std {std} must be positive")));
        }
        Ok(Self { actor, log_std: [std.ln(); ACTION_DIM], critic })
    }

    pub fn std(&self) -> [f64; ACTION_DIM] {
        self.log_std.map(f64::exp)
    }

    /// Mean scaled actions for a batch of states.
    pub fn means(&self, states: &[[f64; STATE_DIM]]) -> Result<Array2<f64>, RlError> {
        Ok(self.actor.forward(&state_rows(states), true)?)
    }

    pub fn mean_action(&self, state: &DesignState) -> Result<[f64; ACTION_DIM], RlError> {
        let v = self.actor.predict(&state.0, true)?;
        Ok([v[0], v[1], v[2]])
    }

    pub fn values(&self, states: &[[f64; STATE_DIM]]) -> Result<Vec<f64>, RlError> {
        Ok(self.critic.forward(&state_rows(states), true)?.column(0).to_vec())
    }

    pub fn to_text(&self) -> String {
        let ls: Vec<String> = self.log_std.iter().map(|v| v.to_string()).collect();
        format!("agent 1\nlog_std {}\nactor\n{}critic\n{}", ls.join(" "), self.actor.to_text(), self.critic.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self, RlError> {
        let mut lines = text.lines();
        if lines.next() != Some("agent 1") {
            return Err(RlError::Parse("expected `agent 1`".into()));
        }
        let ls: Vec<f64> = lines
            .next()
            .and_then(|l| l.strip_prefix("log_std "))
            .ok_or_else(|| RlError::Parse("missing log_std".into()))?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| RlError::Parse(e.to_string())))
            .collect::<Result<_, _>>()?;
        if ls.len() != ACTION_DIM {
            return Err(RlError::Parse("log_std needs three values".into()));
        }
        if lines.next() != Some("actor") {
            return Err(RlError::Parse("missing actor section".into()));
        }
        let rest: Vec<&str> = lines.collect();
        let split = rest.iter().position(|l| *l == "critic").ok_or_else(|| RlError::Parse("missing critic section".into()))?;
        let actor = MlpModel::from_text(&rest[..split].join("\n"))?;
        let critic = MlpModel::from_text(&rest[split + 1..].join("\n"))?;
        Ok(Self { actor, log_std: [ls[0], ls[1], ls[2]], critic })
    }
}

fn state_rows(states: &[[f64; STATE_DIM]]) -> Array2<f64> {
    Array2::from_shape_fn((states.len(), STATE_DIM), |(i, j)| states[i][j])
}

/// Diagonal Gaussian log density.
pub fn gaussian_log_prob(action: &[f64; ACTION_DIM], mean: &[f64], log_std: &[f64; ACTION_DIM]) -> f64 {
    (0..ACTION_DIM)
        .map(|i| {
            let z = (action[i] - mean[i]) / log_std[i].exp();
            -0.5 * z * z - log_std[i] - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Draw a scaled action from the policy; the log density is taken before
/// any clamping by the environment.
pub fn sample_action<R: Rng + ?Sized>(
    agent: &PolicyAgent,
    state: &DesignState,
    rng: &mut R,
) -> Result<([f64; ACTION_DIM], f64), RlError> {
    if !state.is_finite() {
        return Err(RlError::Invalid("non-finite state".into()));
    }
    let mean = agent.mean_action(state)?;
    let std = agent.std();
    let mut a = [0.0; ACTION_DIM];
    for i in 0..ACTION_DIM {
        let z: f64 = rng.sample(StandardNormal);
        a[i] = mean[i] + std[i] * z;
    }
    Ok((a, gaussian_log_prob(&a, &mean, &agent.log_std)))
}

/// Discounted reward-to-go of one trajectory.
pub fn reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalized advantage estimates of one trajectory. `values` carries one
/// entry per state plus the bootstrap value after the last step.
pub fn gae_advantages(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, RlError> {
    if values.len() != rewards.len() + 1 {
        return Err(RlError::Invalid(format!("{} values for {} rewards", values.len(), rewards.len())));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Clip target: `(1 + eps) A` for non-negative advantages, `(1 - eps) A`
/// otherwise.
pub fn clip_target(eps: f64, advantage: f64) -> f64 {
    if advantage >= 0.0 {
        (1.0 + eps) * advantage
    } else {
        (1.0 - eps) * advantage
    }
}

/// Entropy term `0.5 + 0.5 ln(2 pi) + ln(prod std)`.
pub fn entropy_term(log_std: &[f64; ACTION_DIM]) -> f64 {
    0.5 + 0.5 * (2.0 * PI).ln() + log_std.iter().sum::<f64>()
}

/// Step records of a set of rollouts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub states: Vec<[f64; STATE_DIM]>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards_to_go: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Half-open step ranges, one per trajectory.
    pub boundaries: Vec<(usize, usize)>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Mean over trajectories of the summed reward.
    pub fn mean_return(&self) -> f64 {
        if self.boundaries.is_empty() {
            return 0.0;
        }
        let total: f64 = self.boundaries.iter().map(|&(a, b)| self.rewards[a..b].iter().sum::<f64>()).sum();
        total / self.boundaries.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoLosses {
    /// `-mean(min(rho A, g(eps, A)))`.
    pub actor: f64,
    pub entropy: f64,
    /// Actor loss minus the weighted entropy.
    pub objective: f64,
    pub critic: f64,
}

/// Losses of `agent` on a batch collected under an older policy whose log
/// densities are stored in the batch.
pub fn ppo_losses(batch: &TrajectoryBatch, agent: &PolicyAgent, config: &PpoConfig) -> Result<PpoLosses, RlError> {
    Ok(actor_pass(batch, agent, config, false)?.0)
}

/// Actor loss, entropy, critic loss and optionally gradients of the actor
/// objective (actor parameters followed by the three log-stds).
fn actor_pass(
    batch: &TrajectoryBatch,
    agent: &PolicyAgent,
    config: &PpoConfig,
    with_grad: bool,
) -> Result<(PpoLosses, Option<Vec<f64>>), RlError> {
    let n = batch.len();
    if n == 0 {
        return Err(RlError::Invalid("empty batch".into()));
    }
    let x = agent.actor.scale_inputs(&state_rows(&batch.states));
    let cache = agent.actor.forward_cached(&x)?;
    let means = cache.output();
    let std = agent.std();
    let mut out_grad = Array2::zeros((n, ACTION_DIM));
    let mut ls_grad = [0.0; ACTION_DIM];
    let mut loss = 0.0;
    for t in 0..n {
        let mean = means.row(t);
        let lp = gaussian_log_prob(&batch.actions[t], mean.as_slice().expect("row is contiguous"), &agent.log_std);
        let rho = (lp - batch.log_probs[t]).exp();
        if !rho.is_finite() {
            return Err(RlError::NonFiniteRatio(t));
        }
        let a = batch.advantages[t];
        let unclipped = rho * a;
        let clipped = clip_target(config.clip, a);
        loss -= unclipped.min(clipped);
        if with_grad && unclipped < clipped {
            // d(-rho A)/d theta = -A rho d(log pi)/d theta
            let w = -a * rho / n as f64;
            for i in 0..ACTION_DIM {
                let d = batch.actions[t][i] - mean[i];
                let var = std[i] * std[i];
                out_grad[[t, i]] = w * d / var;
                ls_grad[i] += w * (d * d / var - 1.0);
            }
        }
    }
    let actor = loss / n as f64;
    let entropy = entropy_term(&agent.log_std);
    let v = agent.values(&batch.states)?;
    let critic = v.iter().zip(&batch.rewards_to_go).map(|(v, r)| (v - r) * (v - r)).sum::<f64>() / n as f64;
    let losses = PpoLosses { actor, entropy, objective: actor - config.entropy_coef * entropy, critic };
    if !with_grad {
        return Ok((losses, None));
    }
    let mut g = agent.actor.backward(&cache, &out_grad)?.flatten();
    g.extend(ls_grad.iter().map(|v| v - config.entropy_coef));
    Ok((losses, Some(g)))
}

fn critic_gradient(batch: &TrajectoryBatch, agent: &PolicyAgent) -> Result<(f64, Vec<f64>), RlError> {
    let n = batch.len();
    let x = agent.critic.scale_inputs(&state_rows(&batch.states));
    let cache = agent.critic.forward_cached(&x)?;
    let mut g = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for t in 0..n {
        let r = cache.output()[[t, 0]] - batch.rewards_to_go[t];
        loss += r * r;
        g[[t, 0]] = 2.0 * r / n as f64;
    }
    Ok((loss / n as f64, agent.critic.backward(&cache, &g)?.flatten()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    /// Full-batch gradient steps per iteration.
    pub epochs: usize,
    pub trajectories_per_baseline: usize,
    pub steps: usize,
    pub iterations: usize,
    /// Actor learning rate as `(iterations, lr)` segments; the last one
    /// extends to the end.
    pub actor_lr: Vec<(usize, f64)>,
    /// Critic rate relative to the actor's.
    pub critic_lr_factor: f64,
    pub normalize_advantages: bool,
    pub update_actor: bool,
    pub seed: u64,
    /// Rollout threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.1,
            gamma: 0.99,
            lambda: 0.8,
            entropy_coef: 0.001,
            epochs: 200,
            trajectories_per_baseline: 20,
            steps: 5,
            iterations: 50,
            actor_lr: vec![(usize::MAX, 1e-4)],
            critic_lr_factor: 10.0,
            normalize_advantages: true,
            update_actor: true,
            seed: 0,
            workers: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(RlError::Invalid(format!("clip {} outside (0, 1)", self.clip)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(RlError::Invalid("gamma and lambda must lie in (0, 1]".into()));
        }
        if self.steps == 0 || self.trajectories_per_baseline == 0 || self.actor_lr.is_empty() {
            return Err(RlError::Invalid("steps, trajectories and schedule must be nonempty".into()));
        }
        Ok(())
    }

    pub fn actor_lr_at(&self, iteration: usize) -> f64 {
        let mut start = 0usize;
        for &(len, lr) in &self.actor_lr {
            start = start.saturating_add(len);
            if iteration < start {
                return lr;
            }
        }
        self.actor_lr.last().map(|s| s.1).unwrap_or(0.0)
    }
}

/// Per-trajectory generator stream derived from the run seed.
fn stream_rng(seed: u64, iteration: usize, baseline: usize, trajectory: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((iteration as u64) << 40) ^ ((baseline as u64) << 20) ^ trajectory as u64);
    r
}

struct Rollout {
    states: Vec<[f64; STATE_DIM]>,
    actions: Vec<[f64; ACTION_DIM]>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
}

fn rollout<E: Environment>(
    agent: &PolicyAgent,
    env: &mut E,
    baseline: &E::Baseline,
    steps: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Rollout, RlError> {
    let mut state = env.reset(baseline)?;
    let mut r = Rollout { states: vec![], actions: vec![], log_probs: vec![], rewards: vec![] };
    let mut rng = rng;
    for _ in 0..steps.min(env.max_steps()) {
        let (a, lp) = match rng.as_deref_mut() {
            Some(g) => sample_action(agent, &state, g)?,
            None => (agent.mean_action(&state)?, 0.0),
        };
        let s = env.step(a)?;
        r.states.push(state.0);
        r.actions.push(a);
        r.log_probs.push(lp);
        r.rewards.push(s.reward);
        state = s.next_state;
        if s.done {
            break;
        }
    }
    Ok(r)
}

fn run_parallel<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Roll out `trajectories` stochastic episodes from every baseline and fill
/// values, rewards-to-go and advantages.
pub fn collect_batch<E, F>(
    agent: &PolicyAgent,
    baselines: &[E::Baseline],
    make_env: &F,
    config: &PpoConfig,
    iteration: usize,
) -> Result<TrajectoryBatch, RlError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..baselines.len())
        .flat_map(|b| (0..config.trajectories_per_baseline).map(move |k| (b, k)))
        .collect();
    let rollouts: Vec<Result<Rollout, RlError>> = run_parallel(config.workers, || {
        jobs.par_iter()
            .map(|&(b, k)| {
                let mut env = make_env();
                let mut rng = stream_rng(config.seed, iteration, b, k);
                rollout(agent, &mut env, &baselines[b], config.steps, Some(&mut rng))
            })
            .collect()
    });
    let mut batch = TrajectoryBatch::default();
    for r in rollouts {
        let r = r?;
        let start = batch.len();
        batch.states.extend(r.states);
        batch.actions.extend(r.actions);
        batch.log_probs.extend(r.log_probs);
        batch.rewards.extend(r.rewards);
        batch.boundaries.push((start, batch.len()));
    }
    fill_targets(&mut batch, agent, config)?;
    Ok(batch)
}

/// Values, discounted rewards-to-go and GAE advantages (bootstrap 0 at the
/// end of every trajectory), normalized when configured.
pub fn fill_targets(batch: &mut TrajectoryBatch, agent: &PolicyAgent, config: &PpoConfig) -> Result<(), RlError> {
    batch.values = if batch.is_empty() { vec![] } else { agent.values(&batch.states)? };
    batch.rewards_to_go.clear();
    batch.advantages.clear();
    for &(a, b) in &batch.boundaries {
        let rw = &batch.rewards[a..b];
        batch.rewards_to_go.extend(reward_to_go(rw, config.gamma));
        let mut v = batch.values[a..b].to_vec();
        v.push(0.0);
        batch.advantages.extend(gae_advantages(rw, &v, config.gamma, config.lambda)?);
    }
    if config.normalize_advantages && batch.len() > 1 {
        let n = batch.len() as f64;
        let mean = batch.advantages.iter().sum::<f64>() / n;
        let var = batch.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        for a in &mut batch.advantages {
            *a = (*a - mean) / sd;
        }
    }
    if batch.advantages.iter().any(|a| !a.is_finite()) {
        return Err(RlError::Invalid("non-finite advantage".into()));
    }
    Ok(())
}

/// Optimizer state carried across iterations.
#[derive(Debug, Clone)]
pub struct PpoOptimizer {
    actor: AdamState,
    critic: AdamState,
}

impl PpoOptimizer {
    pub fn new(agent: &PolicyAgent) -> Self {
        Self { actor: AdamState::new(agent.actor.parameter_count() + ACTION_DIM), critic: AdamState::for_model(&agent.critic) }
    }
}

/// Full-batch updates of actor (with log-std) and critic. Returns the
/// losses measured before the first update.
pub fn ppo_update(
    agent: &mut PolicyAgent,
    batch: &TrajectoryBatch,
    config: &PpoConfig,
    opt: &mut PpoOptimizer,
    actor_lr: f64,
) -> Result<PpoLosses, RlError> {
    let critic_lr = actor_lr * config.critic_lr_factor;
    let mut first = None;
    for _ in 0..config.epochs {
        let (losses, grad) = actor_pass(batch, agent, config, config.update_actor)?;
        first.get_or_insert(losses);
        if let Some(g) = grad {
            let mut p = flatten_params(&agent.actor);
            p.extend(agent.log_std);
            opt.actor.update(&mut p, &g, actor_lr)?;
            let k = p.len() - ACTION_DIM;
            for i in 0..ACTION_DIM {
                agent.log_std[i] = p[k + i].max(MIN_STD.ln());
            }
            p.truncate(k);
            set_params(&mut agent.actor, &p)?;
        }
        let (_, cg) = critic_gradient(batch, agent)?;
        let mut p = flatten_params(&agent.critic);
        opt.critic.update(&mut p, &cg, critic_lr)?;
        set_params(&mut agent.critic, &p)?;
    }
    match first {
        Some(l) => Ok(l),
        None => ppo_losses(batch, agent, config),
    }
}

/// Deterministic mean-action rollouts: cumulative reward per baseline and
/// their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_baseline: Vec<f64>,
    pub mean: f64,
}

pub fn evaluate_policy<E, F>(agent: &PolicyAgent, baselines: &[E::Baseline], make_env: &F, steps: usize, workers: usize) -> Result<EvalReport, RlError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    if baselines.is_empty() {
        return Err(RlError::Invalid("no baselines".into()));
    }
    let per: Vec<Result<f64, RlError>> = run_parallel(workers, || {
        baselines
            .par_iter()
            .map(|b| {
                let mut env = make_env();
                Ok(rollout(agent, &mut env, b, steps, None)?.rewards.iter().sum())
            })
            .collect()
    });
    let per_baseline: Vec<f64> = per.into_iter().collect::<Result<_, _>>()?;
    let mean = per_baseline.iter().sum::<f64>() / per_baseline.len() as f64;
    Ok(EvalReport { per_baseline, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub std: [f64; ACTION_DIM],
}

/// PPO training loop. Row 0 of the history is the evaluation before any
/// update; row `k` follows iteration `k`. `on_iteration` sees every row and
/// the agent after it.
pub fn ppo_train<E, F>(
    agent: &mut PolicyAgent,
    baselines: &[E::Baseline],
    config: &PpoConfig,
    make_env: &F,
    mut on_iteration: impl FnMut(&HistoryRow, &PolicyAgent),
) -> Result<Vec<HistoryRow>, RlError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    config.validate()?;
    if baselines.is_empty() {
        return Err(RlError::Invalid("no baselines".into()));
    }
    let mut opt = PpoOptimizer::new(agent);
    let eval = evaluate_policy(agent, baselines, make_env, config.steps, config.workers)?;
    let row = HistoryRow { iteration: 0, mean_reward: eval.mean, actor_loss: f64::NAN, critic_loss: f64::NAN, std: agent.std() };
    on_iteration(&row, agent);
    let mut history = vec![row];
    for it in 1..=config.iterations {
        let batch = collect_batch(agent, baselines, make_env, config, it)?;
        let losses = ppo_update(agent, &batch, config, &mut opt, config.actor_lr_at(it - 1))?;
        let eval = evaluate_policy(agent, baselines, make_env, config.steps, config.workers)?;
        let row = HistoryRow { iteration: it, mean_reward: eval.mean, actor_loss: losses.objective, critic_loss: losses.critic, std: agent.std() };
        on_iteration(&row, agent);
        history.push(row);
    }
    Ok(history)
}

pub fn write_history<W: Write>(out: W, rows: &[HistoryRow], comments: &[String]) -> Result<(), RlError> {
    let mut out = out;
    for c in comments {
        writeln!(out, "# {c}").map_err(csv::Error::from)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "mean_reward", "actor_loss", "critic_loss", "std_t1", "std_sb", "std_hb"])?;
    for r in rows {
        let mut rec = vec![r.iteration.to_string()];
        rec.extend([r.mean_reward, r.actor_loss, r.critic_loss].iter().map(|v| v.to_string()));
        rec.extend(r.std.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One-state environment with reward `-|a - target|^2` on the clamped action.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub target: [f64; ACTION_DIM],
    pub state: DesignState,
    done: bool,
}

impl BanditEnv {
    pub fn new(target: [f64; ACTION_DIM]) -> Self {
        Self { target, state: DesignState([0.5, 1.1, 1.15, 1.0]), done: true }
    }
}

impl Environment for BanditEnv {
    type Baseline = ();

    fn reset(&mut self, _: &()) -> Result<DesignState, EnvError> {
        self.done = false;
        Ok(self.state)
    }

    fn step(&mut self, action_scaled: [f64; 3]) -> Result<crate::env::StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        self.done = true;
        let (action, clamped) = crate::env::scaled_to_physical(action_scaled);
        let reward = -(0..ACTION_DIM).map(|i| (action_scaled[i].clamp(0.0, 1.0) - self.target[i]).powi(2)).sum::<f64>();
        Ok(crate::env::StepResult {
            next_state: self.state,
            reward,
            done: true,
            action,
            info: crate::env::StepInfo { clamped, ..Default::default() },
        })
    }

    fn max_steps(&self) -> usize {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    const BOUNDS: [(f64, f64); 4] = [(0.2, 0.8), (1.0, 1.2), (1.0, 1.3), (0.9, 1.1)];

    fn agent(seed: u64) -> PolicyAgent {
        PolicyAgent::new(&[16, 16], &BOUNDS, 0.1, seed).unwrap()
    }

    #[test]
    fn reward_to_go_hand_cases() {
        assert_eq!(reward_to_go(&[1.0, 1.0, 1.0], 1.0), vec![3.0, 2.0, 1.0]);
        assert_eq!(reward_to_go(&[2.0, 0.0, 0.0], 0.99), vec![2.0, 0.0, 0.0]);
        assert_eq!(reward_to_go(&[1.0, 2.0, 3.0], 0.5), vec![2.75, 3.5, 3.0]);
    }

    /// Direct double sum over TD residuals.
    fn brute_gae(r: &[f64], v: &[f64], g: f64, l: f64) -> Vec<f64> {
        (0..r.len())
            .map(|t| (t..r.len()).map(|k| (g * l).powi((k - t) as i32) * (r[k] + g * v[k + 1] - v[k])).sum())
            .collect()
    }

    #[test]
    fn gae_special_cases() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2, 0.0];
        let a0 = gae_advantages(&r, &v, 0.9, 0.0).unwrap();
        for t in 0..3 {
            assert_eq!(a0[t], r[t] + 0.9 * v[t + 1] - v[t]);
        }
        let a1 = gae_advantages(&r, &v, 1.0, 1.0).unwrap();
        let rtg = reward_to_go(&r, 1.0);
        for t in 0..3 {
            assert_relative_eq!(a1[t], rtg[t] - v[t], epsilon = 1e-12);
        }
        assert!(gae_advantages(&r, &v[..3], 0.9, 0.8).is_err());
    }

    #[test]
    fn clip_target_values() {
        assert!((clip_target(0.1, 2.0) - 2.2).abs() < 1e-15);
        assert!((clip_target(0.1, -1.0) + 0.9).abs() < 1e-15);
    }

    #[test]
    fn log_prob_of_mean() {
        let a = agent(1);
        let s = DesignState([0.5, 1.1, 1.1, 1.0]);
        let m = a.mean_action(&s).unwrap();
        let lp = gaussian_log_prob(&m, &m, &a.log_std);
        let oracle = -3.0 * (0.1 * (2.0 * PI).sqrt()).ln();
        assert_relative_eq!(lp, oracle, epsilon = 1e-12);
        assert!((lp - 4.151).abs() < 1e-3);
    }

    #[test]
    fn tiny_std_samples_the_mean() {
        let mut a = agent(2);
        a.log_std = [1e-9f64.ln(); 3];
        let s = DesignState([0.4, 1.05, 1.2, 0.95]);
        let (x, _) = sample_action(&a, &s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let m = a.mean_action(&s).unwrap();
        for i in 0..3 {
            assert!((x[i] - m[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = agent(3);
        let s = DesignState([0.4, 1.05, 1.2, 0.95]);
        let draw = || {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| sample_action(&a, &s, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    fn handcrafted() -> (TrajectoryBatch, PolicyAgent) {
        let a = agent(4);
        let states = vec![[0.5, 1.1, 1.1, 1.0], [0.6, 1.05, 1.15, 1.0]];
        let actions = vec![[0.5; 3], [0.4; 3]];
        let lp_new: Vec<f64> = states
            .iter()
            .zip(&actions)
            .map(|(s, act)| gaussian_log_prob(act, &a.mean_action(&DesignState(*s)).unwrap(), &a.log_std))
            .collect();
        let batch = TrajectoryBatch {
            log_probs: vec![lp_new[0] - 1.5f64.ln(), lp_new[1] - 0.5f64.ln()],
            states,
            actions,
            rewards: vec![0.0, 0.0],
            values: vec![0.0, 0.0],
            rewards_to_go: vec![0.0, 0.0],
            advantages: vec![1.0, -1.0],
            boundaries: vec![(0, 2)],
        };
        (batch, a)
    }

    #[test]
    fn handcrafted_clip_batch() {
        let (batch, a) = handcrafted();
        let l = ppo_losses(&batch, &a, &PpoConfig::default()).unwrap();
        assert!((l.actor + 0.1).abs() < 1e-10, "{}", l.actor);
        assert_eq!(l.entropy, entropy_term(&a.log_std));
        assert!((l.objective - (l.actor - 0.001 * l.entropy)).abs() < 1e-15);
    }

    #[test]
    fn unit_ratio_gives_mean_advantage() {
        let (mut batch, a) = handcrafted();
        for t in 0..2 {
            batch.log_probs[t] = gaussian_log_prob(&batch.actions[t], &a.mean_action(&DesignState(batch.states[t])).unwrap(), &a.log_std);
        }
        batch.advantages = vec![0.7, -0.3];
        let l = ppo_losses(&batch, &a, &PpoConfig::default()).unwrap();
        assert_relative_eq!(l.actor, -0.2, epsilon = 1e-12);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let (mut batch, a) = handcrafted();
        // Ratios inside the clip window so the objective is smooth.
        batch.log_probs = batch
            .states
            .iter()
            .zip(&batch.actions)
            .map(|(s, act)| gaussian_log_prob(act, &a.mean_action(&DesignState(*s)).unwrap(), &a.log_std) + 0.02)
            .collect();
        let cfg = PpoConfig::default();
        let (_, g) = actor_pass(&batch, &a, &cfg, true).unwrap();
        let g = g.unwrap();
        let mut p = flatten_params(&a.actor);
        p.extend(a.log_std);
        let objective = |p: &[f64]| {
            let mut b = a.clone();
            let k = p.len() - 3;
            set_params(&mut b.actor, &p[..k]).unwrap();
            b.log_std = [p[k], p[k + 1], p[k + 2]];
            ppo_losses(&batch, &b, &cfg).unwrap().objective
        };
        let h = 1e-6;
        for i in (0..p.len()).step_by(7).chain(p.len() - 3..p.len()) {
            let mut q = p.clone();
            q[i] += h;
            let up = objective(&q);
            q[i] -= 2.0 * h;
            let down = objective(&q);
            let num = (up - down) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-6 * num.abs().max(1.0), "param {i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_actor_unchanged() {
        let mut a = agent(5);
        let before = a.clone();
        let cfg = PpoConfig { iterations: 2, epochs: 3, trajectories_per_baseline: 4, steps: 1, actor_lr: vec![(usize::MAX, 0.0)], ..Default::default() };
        ppo_train(&mut a, &[()], &cfg, &|| BanditEnv::new([0.2, 0.5, 0.8]), |_, _| {}).unwrap();
        assert_eq!(a, before);
    }

    #[test]
    fn batch_size_is_baselines_times_trajectories_times_steps() {
        let a = agent(6);
        let cfg = PpoConfig { trajectories_per_baseline: 20, steps: 5, ..Default::default() };
        let baselines = vec![(); 50];
        let b = collect_batch(&a, &baselines, &|| FixedLengthEnv(0), &cfg, 1).unwrap();
        assert_eq!(b.len(), 5000);
        assert_eq!(b.boundaries.len(), 1000);
    }

    struct FixedLengthEnv(usize);

    impl Environment for FixedLengthEnv {
        type Baseline = ();
        fn reset(&mut self, _: &()) -> Result<DesignState, EnvError> {
            self.0 = 0;
            Ok(DesignState([0.5, 1.1, 1.1, 1.0]))
        }
        fn step(&mut self, a: [f64; 3]) -> Result<crate::env::StepResult, EnvError> {
            self.0 += 1;
            Ok(crate::env::StepResult {
                next_state: DesignState([0.5, 1.1, 1.1, 1.0]),
                reward: a[0],
                done: self.0 >= 5,
                action: crate::env::scaled_to_physical(a).0,
                info: Default::default(),
            })
        }
        fn max_steps(&self) -> usize {
            5
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = PpoConfig { iterations: 3, epochs: 5, trajectories_per_baseline: 8, steps: 1, actor_lr: vec![(usize::MAX, 1e-3)], ..Default::default() };
        let run = || {
            let mut a = agent(7);
            let h = ppo_train(&mut a, &[()], &cfg, &|| BanditEnv::new([0.2, 0.5, 0.8]), |_, _| {}).unwrap();
            (h.iter().map(|r| (r.mean_reward.to_bits(), r.std)).collect::<Vec<_>>(), a)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn agent_text_round_trip() {
        let mut a = agent(8);
        a.log_std = [-2.0, -2.5, -3.0];
        assert_eq!(PolicyAgent::from_text(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn lr_schedule_segments() {
        let cfg = PpoConfig { actor_lr: vec![(2, 1e-3), (3, 1e-4)], ..Default::default() };
        let lrs: Vec<f64> = (0..7).map(|i| cfg.actor_lr_at(i)).collect();
        assert_eq!(lrs, vec![1e-3, 1e-3, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4]);
    }

    proptest! {
        #[test]
        fn gae_matches_double_sum(seed in 0u64..1000, len in 1usize..=5) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let rw: Vec<f64> = (0..len).map(|_| r.random_range(-3.0..3.0)).collect();
            let mut v: Vec<f64> = (0..len).map(|_| r.random_range(-3.0..3.0)).collect();
            v.push(0.0);
            let got = gae_advantages(&rw, &v, 0.99, 0.8).unwrap();
            let want = brute_gae(&rw, &v, 0.99, 0.8);
            for t in 0..len {
                prop_assert!((got[t] - want[t]).abs() < 1e-10);
            }
        }

        #[test]
        fn clipped_terms_are_bounded(rho in 0.01f64..5.0, a in -5.0f64..5.0, eps in 0.01f64..0.5) {
            let term = (rho * a).min(clip_target(eps, a));
            prop_assert!(term <= rho * a && term <= clip_target(eps, a));
        }
    }
}
