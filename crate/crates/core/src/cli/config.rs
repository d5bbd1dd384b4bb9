//! Experiment configuration: profile presets, TOML overlay, hashing.
//!
//! A config file is TOML. Any subset of the keys written by
//! `ExperimentConfig::to_toml` may appear; missing keys keep the values of
//! the selected profile. Schedules are arrays of `[count, rate]` pairs and
//! the last pair extends to the end of training.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pretrain::{GreedyConfig, ImitationConfig, SmoothingConfig};
use crate::proxy::{ProxyConfig, SEED_SPREAD};
use crate::rl::PpoConfig;
use crate::surrogate::SurrogateConfig;

pub const ENV_OUT_DIR: &str = "FOILRL_OUT_DIR";
pub const ENV_SURROGATE_MODEL: &str = "FOILRL_SURROGATE_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorKind {
    Proxy,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSection {
    pub size: usize,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    /// Set sizes to keep; the largest feeds the surrogate.
    pub keep: Vec<usize>,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub schedule: Vec<(usize, f64)>,
    pub report_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub count: usize,
    /// Seed of the baseline set; independent of the run seed so runs with
    /// different seeds start from the same airfoils.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedySection {
    pub searches: usize,
    pub steps: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSection {
    pub passes: usize,
    pub neighbors: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImitationSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticSection {
    pub iterations: usize,
    /// Actor-rate schedule; the critic runs at `critic_lr_factor` times it.
    pub actor_lr: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoSection {
    pub hidden: Vec<usize>,
    pub std: f64,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub trajectories_per_baseline: usize,
    pub steps: usize,
    pub iterations: usize,
    pub actor_lr: Vec<(usize, f64)>,
    pub critic_lr_factor: f64,
    pub normalize_advantages: bool,
    /// Save the agent every this many iterations; 0 disables.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate_model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub t_max: f64,
    pub evaluator: EvaluatorKind,
    pub proxy: ProxyConfig,
    pub pool: PoolSection,
    pub selection: SelectionSection,
    pub surrogate: SurrogateSection,
    pub baselines: BaselineSection,
    pub greedy: GreedySection,
    pub smoothing: SmoothingSection,
    pub imitation: ImitationSection,
    pub critic: CriticSection,
    pub ppo: PpoSection,
    pub paths: PathSection,
}

impl ExperimentConfig {
    pub fn paper() -> Self {
        let s = SurrogateConfig::paper();
        Self {
            profile: Profile::Paper,
            seed: 0,
            t_max: 0.095,
            evaluator: EvaluatorKind::Surrogate,
            proxy: ProxyConfig::default(),
            pool: PoolSection { size: 20_000, spread: SEED_SPREAD },
            selection: SelectionSection { keep: vec![5000, 200, 50], test_fraction: 0.1 },
            surrogate: SurrogateSection {
                hidden: s.hidden,
                batch_size: s.batch_size,
                schedule: s.schedule,
                report_every: s.report_every,
            },
            baselines: BaselineSection { count: 50, seed: 100 },
            greedy: GreedySection { searches: 4, steps: 5, candidates: 200 },
            smoothing: SmoothingSection { passes: 10, neighbors: 10, factor: 0.2 },
            imitation: ImitationSection { epochs: 1000, lr: 1e-3, batch_size: 64 },
            critic: CriticSection { iterations: 20_000, actor_lr: vec![(10_000, 1e-3), (10_000, 1e-4)] },
            ppo: PpoSection {
                hidden: vec![512, 512],
                std: 0.1,
                clip: 0.1,
                gamma: 0.99,
                lambda: 0.8,
                entropy_coef: 0.001,
                epochs: 2000,
                trajectories_per_baseline: 20,
                steps: 5,
                iterations: 400,
                actor_lr: vec![(200, 1e-6), (100, 1e-7), (100, 1e-8)],
                critic_lr_factor: 10.0,
                normalize_advantages: true,
                checkpoint_every: 50,
            },
            paths: PathSection { out_dir: PathBuf::from("out"), surrogate_model: None },
        }
    }

    pub fn desk() -> Self {
        let s = SurrogateConfig::desk();
        let paper = Self::paper();
        Self {
            profile: Profile::Desk,
            evaluator: EvaluatorKind::Proxy,
            pool: PoolSection { size: 3000, spread: SEED_SPREAD },
            selection: SelectionSection { keep: vec![2000, 50, 10], test_fraction: 0.1 },
            surrogate: SurrogateSection {
                hidden: s.hidden,
                batch_size: s.batch_size,
                schedule: s.schedule,
                report_every: s.report_every,
            },
            baselines: BaselineSection { count: 10, seed: 100 },
            greedy: GreedySection { searches: 4, steps: 5, candidates: 50 },
            critic: CriticSection { iterations: 10, actor_lr: vec![(5, 1e-3), (5, 1e-4)] },
            ppo: PpoSection {
                hidden: vec![64, 64],
                epochs: 100,
                trajectories_per_baseline: 4,
                iterations: 50,
                actor_lr: vec![(50, 1e-4)],
                checkpoint_every: 10,
                ..paper.ppo
            },
            ..paper
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Profile preset overlaid with `text`. The profile comes from
    /// `profile` if given, else from the file's `profile` key, else desk.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).context("parsing config")?;
        let from_file = match overlay.get("profile") {
            Some(v) => Some(Profile::deserialize(v.clone()).context("config key `profile`")?),
            None => None,
        };
        let profile = profile.or(from_file).unwrap_or(Profile::Desk);
        let mut base = toml::Table::try_from(Self::for_profile(profile))?;
        merge(&mut base, overlay);
        base.insert("profile".into(), toml::Value::String(profile.name().into()));
        let cfg: Self = toml::Value::Table(base).try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml(&text, profile)?
            }
            None => Self::for_profile(profile.unwrap_or(Profile::Desk)),
        };
        if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
            cfg.paths.out_dir = PathBuf::from(dir);
        }
        if let Ok(model) = std::env::var(ENV_SURROGATE_MODEL) {
            cfg.paths.surrogate_model = Some(PathBuf::from(model));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max < 0.5) {
            bail!("t_max {} outside (0, 0.5)", self.t_max);
        }
        if self.selection.keep.is_empty() || self.selection.keep.contains(&0) {
            bail!("selection.keep needs positive sizes");
        }
        if !(self.selection.test_fraction > 0.0 && self.selection.test_fraction < 1.0) {
            bail!("selection.test_fraction must lie in (0, 1)");
        }
        if self.baselines.count == 0 || self.pool.size == 0 {
            bail!("pool.size and baselines.count must be positive");
        }
        for (name, s) in [
            ("surrogate.schedule", &self.surrogate.schedule),
            ("critic.actor_lr", &self.critic.actor_lr),
            ("ppo.actor_lr", &self.ppo.actor_lr),
        ] {
            if s.is_empty() || s.iter().any(|&(_, lr)| !(lr >= 0.0 && lr.is_finite())) {
                bail!("{name} must be a nonempty list of [count, rate] with finite rates");
            }
        }
        if !(self.ppo.std > 0.0) {
            bail!("ppo.std must be positive");
        }
        self.ppo_config(self.ppo.iterations, &self.ppo.actor_lr, 0).validate()?;
        Ok(())
    }

    /// Canonical TOML form.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical form with the path section removed, so
    /// moving the output directory keeps the hash.
    pub fn hash(&self) -> Result<String> {
        let mut table = toml::Table::try_from(self)?;
        table.remove("paths");
        let text = toml::to_string(&table)?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn surrogate_config(&self) -> SurrogateConfig {
        SurrogateConfig {
            hidden: self.surrogate.hidden.clone(),
            batch_size: self.surrogate.batch_size,
            schedule: self.surrogate.schedule.clone(),
            seed: self.seed,
            report_every: self.surrogate.report_every,
        }
    }

    pub fn greedy_config(&self) -> GreedyConfig {
        GreedyConfig { searches: self.greedy.searches, steps: self.greedy.steps, candidates: self.greedy.candidates }
    }

    pub fn smoothing_config(&self) -> SmoothingConfig {
        SmoothingConfig { passes: self.smoothing.passes, neighbors: self.smoothing.neighbors, factor: self.smoothing.factor }
    }

    pub fn imitation_config(&self) -> ImitationConfig {
        ImitationConfig {
            epochs: self.imitation.epochs,
            lr: self.imitation.lr,
            batch_size: self.imitation.batch_size,
            seed: self.seed,
        }
    }

    pub fn ppo_config(&self, iterations: usize, actor_lr: &[(usize, f64)], workers: usize) -> PpoConfig {
        let p = &self.ppo;
        PpoConfig {
            clip: p.clip,
            gamma: p.gamma,
            lambda: p.lambda,
            entropy_coef: p.entropy_coef,
            epochs: p.epochs,
            trajectories_per_baseline: p.trajectories_per_baseline,
            steps: p.steps,
            iterations,
            actor_lr: actor_lr.to_vec(),
            critic_lr_factor: p.critic_lr_factor,
            normalize_advantages: p.normalize_advantages,
            update_actor: true,
            seed: self.seed,
            workers,
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_sizes() {
        let c = ExperimentConfig::paper();
        assert_eq!(c.surrogate.hidden, vec![1024; 3]);
        assert_eq!(c.surrogate.batch_size, 128);
        assert_eq!(c.ppo.hidden, vec![512, 512]);
        assert_eq!((c.ppo.clip, c.ppo.gamma, c.ppo.lambda, c.ppo.entropy_coef, c.ppo.std), (0.1, 0.99, 0.8, 0.001, 0.1));
        assert_eq!(c.ppo.steps, 5);
    }

    #[test]
    fn canonical_form_round_trips() {
        for c in [ExperimentConfig::paper(), ExperimentConfig::desk()] {
            let text = c.to_toml().unwrap();
            let back = ExperimentConfig::from_toml(&text, None).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        }
    }

    #[test]
    fn overlay_changes_only_named_keys() {
        let c = ExperimentConfig::from_toml("seed = 7\n[ppo]\nepochs = 3\n", Some(Profile::Desk)).unwrap();
        let mut want = ExperimentConfig::desk();
        want.seed = 7;
        want.ppo.epochs = 3;
        assert_eq!(c, want);
        assert_ne!(c.hash().unwrap(), ExperimentConfig::desk().hash().unwrap());
    }

    #[test]
    fn profile_key_in_file_applies_unless_flag_given() {
        assert_eq!(ExperimentConfig::from_toml("profile = \"paper\"", None).unwrap().profile, Profile::Paper);
        assert_eq!(ExperimentConfig::from_toml("profile = \"paper\"", Some(Profile::Desk)).unwrap().profile, Profile::Desk);
    }

    #[test]
    fn paths_do_not_enter_the_hash() {
        let mut c = ExperimentConfig::desk();
        let h = c.hash().unwrap();
        c.paths.out_dir = PathBuf::from("elsewhere");
        assert_eq!(c.hash().unwrap(), h);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml("[ppo]\nepochz = 3\n", None).is_err());
        assert!(ExperimentConfig::from_toml("t_max = -1.0\n", None).is_err());
        assert!(ExperimentConfig::from_toml("[ppo]\nclip = 2.0\n", None).is_err());
        assert!(ExperimentConfig::from_toml("seed = \"x\"\n", None).is_err());
    }
}
