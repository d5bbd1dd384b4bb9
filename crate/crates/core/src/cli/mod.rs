//! Command-line front end. Every command reads the experiment config,
//! writes its artifacts under the output directory and records a
//! `manifest_<command>.toml` naming the config hash, seed and artifacts.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::{write_rollout_log, AirfoilEnv, EnvConfig, Environment, Evaluator, RolloutRow};
use crate::features::{extract_features, read_distribution};
use crate::geometry::io::{read_coordinates, read_cst, write_coordinates, write_cst};
use crate::geometry::{cst_fit, AirfoilGeom, BumpAction};
use crate::nnet::MlpModel;
use crate::pretrain::{
    dedup_states, greedy_search, imitate_policy, pretrain_critic, smooth_samples, write_samples, StateActionSample,
};
use crate::proxy::{generate_pool, seed_airfoils};
use crate::rl::{ppo_train, write_history, HistoryRow, PolicyAgent};
use crate::surrogate::{read_dataset, select_samples, split_records, train_surrogate, write_dataset, FeatureBounds, SampleRecord, OUTPUT_NAMES};

use config::{EvaluatorKind, ExperimentConfig, Profile};

#[derive(Debug, Parser)]
#[command(name = "foilrl", version, about = "Bump-modification policy learning for transonic airfoils")]
struct Cli {
    /// Run seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// TOML file overlaid on the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Thread cap; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample random airfoils and evaluate them with the proxy solver.
    GeneratePool {
        #[arg(long)]
        size: Option<usize>,
    },
    /// Thin the pool to evenly spread sets of the configured sizes.
    SelectSamples {
        /// Defaults to `pool.csv` in the output directory.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Fit the surrogate network on a selected set.
    TrainSurrogate {
        /// Defaults to the largest selected set.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Greedy search, dedup, smoothing, imitation and critic fitting.
    Pretrain,
    /// PPO training of the agent.
    TrainPpo {
        /// Starting agent; a fresh random agent when absent.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Deterministic mean-action rollouts from every baseline.
    Evaluate {
        /// Agent to evaluate; a fresh random agent when absent.
        #[arg(long)]
        agent: Option<PathBuf>,
    },
    /// Apply one bump action to one airfoil.
    Modify {
        /// CST (`.cst`) or Selig coordinate file; a bundled baseline when absent.
        #[arg(long)]
        airfoil: Option<PathBuf>,
        /// Index into the bundled baselines.
        #[arg(long, default_value_t = 0)]
        baseline: usize,
        /// Physical action `t1,sb,hb`.
        #[arg(long, value_delimiter = ',', num_args = 1, allow_negative_numbers = true, required = true)]
        action: Vec<f64>,
    },
    /// Wall-Mach features of a pressure or wall-Mach distribution file.
    ExtractFeatures { input: PathBuf },
    /// SVG line chart of a CSV history.
    Plot {
        input: PathBuf,
        /// Defaults to the input name with an `.svg` extension in the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        y: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GeneratePool { .. } => "generate-pool",
            Command::SelectSamples { .. } => "select-samples",
            Command::TrainSurrogate { .. } => "train-surrogate",
            Command::Pretrain => "pretrain",
            Command::TrainPpo { .. } => "train-ppo",
            Command::Evaluate { .. } => "evaluate",
            Command::Modify { .. } => "modify",
            Command::ExtractFeatures { .. } => "extract-features",
            Command::Plot { .. } => "plot",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    profile: &'a str,
    seed: u64,
    config_hash: &'a str,
    artifacts: Vec<String>,
    config: &'a ExperimentConfig,
}

/// Per-invocation context: config, hash and the artifacts written so far.
struct Run {
    command: &'static str,
    cfg: ExperimentConfig,
    hash: String,
    workers: usize,
    artifacts: Vec<String>,
}

impl Run {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(name)
    }

    fn comments(&self) -> Vec<String> {
        vec![
            format!("foilrl {}", self.command),
            format!("profile={}", self.cfg.profile.name()),
            format!("config_hash={}", self.hash),
            format!("seed={}", self.cfg.seed),
        ]
    }

    fn header(&self) -> String {
        self.comments().iter().map(|c| format!("# {c}\n")).collect()
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.out(name);
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    /// Text artifact with `#` header lines ahead of `body`.
    fn write_text(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.out(name);
        fs::write(&path, format!("{}{body}", self.header())).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(name.to_string());
        Ok(path)
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>], extra: &[String]) -> Result<()> {
        let comments: Vec<String> = self.comments().into_iter().chain(extra.iter().cloned()).collect();
        let mut out = self.create(name)?;
        for c in &comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let manifest = Manifest {
            command: self.command,
            profile: self.cfg.profile.name(),
            seed: self.cfg.seed,
            config_hash: &self.hash,
            artifacts: self.artifacts.clone(),
            config: &self.cfg,
        };
        let path = self.out(&format!("manifest_{}.toml", self.command));
        fs::write(&path, toml::to_string(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn baselines(&self) -> Result<Vec<AirfoilGeom>> {
        let b = &self.cfg.baselines;
        Ok(seed_airfoils(b.count, b.seed, &self.cfg.proxy, self.cfg.t_max)?)
    }

    fn evaluator(&self) -> Result<Evaluator> {
        Ok(match self.cfg.evaluator {
            EvaluatorKind::Proxy => Evaluator::Proxy(self.cfg.proxy.clone()),
            EvaluatorKind::Surrogate => {
                let path = self.cfg.paths.surrogate_model.clone().unwrap_or_else(|| self.out("surrogate.model"));
                let model = MlpModel::from_text(&read_artifact(&path)?).with_context(|| format!("loading {}", path.display()))?;
                if model.input_dim() != 14 || model.output_dim() != 5 {
                    bail!("{} is not a 14-input, 5-output surrogate", path.display());
                }
                Evaluator::Surrogate(Arc::new(model))
            }
        })
    }

    fn env_config(&self) -> EnvConfig {
        EnvConfig { max_steps: self.cfg.ppo.steps, t_max: self.cfg.t_max }
    }

    fn fresh_agent(&self) -> Result<PolicyAgent> {
        let p = &self.cfg.ppo;
        Ok(PolicyAgent::new(&p.hidden, &FeatureBounds::default().state_bounds(), p.std, self.cfg.seed)?)
    }

    fn load_agent(&self, path: Option<&Path>) -> Result<PolicyAgent> {
        match path {
            Some(p) => Ok(PolicyAgent::from_text(&read_artifact(p)?).with_context(|| format!("loading {}", p.display()))?),
            None => self.fresh_agent(),
        }
    }
}

/// File contents with leading `#` comment lines removed.
fn read_artifact(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect())
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

/// Parse `argv` (program name first) and run the command.
pub fn run_command<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), cli.profile)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.paths.out_dir).with_context(|| format!("creating {}", cfg.paths.out_dir.display()))?;
    let run = Run { command: cli.command.name(), hash: cfg.hash()?, cfg, workers: cli.workers, artifacts: Vec::new() };
    if cli.workers == 0 {
        return dispatch(run, cli.command);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build()?;
    pool.install(|| dispatch(run, cli.command))
}

fn dispatch(mut run: Run, command: Command) -> Result<()> {
    match command {
        Command::GeneratePool { size } => generate(&mut run, size)?,
        Command::SelectSamples { pool } => select(&mut run, pool)?,
        Command::TrainSurrogate { data } => surrogate(&mut run, data)?,
        Command::Pretrain => pretrain(&mut run)?,
        Command::TrainPpo { init } => train_ppo(&mut run, init)?,
        Command::Evaluate { agent } => evaluate(&mut run, agent)?,
        Command::Modify { airfoil, baseline, action } => modify(&mut run, airfoil, baseline, &action)?,
        Command::ExtractFeatures { input } => features(&mut run, &input)?,
        Command::Plot { input, output, x, y } => plot_cmd(&mut run, &input, output, x, y)?,
    }
    run.finish()
}

fn generate(run: &mut Run, size: Option<usize>) -> Result<()> {
    let c = &run.cfg;
    let n = size.unwrap_or(c.pool.size);
    let pool = generate_pool(n, c.seed, c.pool.spread, &c.proxy, c.t_max)?;
    let comments = run.comments();
    write_dataset(run.create("pool.csv")?, &pool, &comments)?;
    println!("pool: {} airfoils", pool.len());
    Ok(())
}

fn in_bounds(path: &Path) -> Result<Vec<SampleRecord>> {
    let rows = read_dataset(open(path)?, &FeatureBounds::default()).with_context(|| format!("reading {}", path.display()))?;
    Ok(rows.into_iter().filter(|r| r.in_bounds).map(|r| r.record).collect())
}

fn select(run: &mut Run, pool: Option<PathBuf>) -> Result<()> {
    let path = pool.unwrap_or_else(|| run.out("pool.csv"));
    let rows = read_dataset(open(&path)?, &FeatureBounds::default()).with_context(|| format!("reading {}", path.display()))?;
    let records: Vec<SampleRecord> = rows.into_iter().map(|r| r.record).collect();
    let keep = run.cfg.selection.keep.clone();
    let sets = select_samples(&records, &keep, &FeatureBounds::default())?;
    let comments = run.comments();
    for (k, set) in keep.iter().zip(&sets) {
        let chosen: Vec<SampleRecord> = set.iter().map(|&i| records[i]).collect();
        write_dataset(run.create(&format!("selected_{k}.csv"))?, &chosen, &comments)?;
        println!("selected {k} of {}", records.len());
    }
    Ok(())
}

fn surrogate(run: &mut Run, data: Option<PathBuf>) -> Result<()> {
    let largest = run.cfg.selection.keep.iter().copied().max().unwrap_or(0);
    let path = data.unwrap_or_else(|| run.out(&format!("selected_{largest}.csv")));
    let records = in_bounds(&path)?;
    let (train, test) = split_records(&records, run.cfg.selection.test_fraction, run.cfg.seed);
    let (model, history) = train_surrogate(&train, &test, &run.cfg.surrogate_config(), &FeatureBounds::default())?;
    run.write_text("surrogate.model", &model.to_text())?;

    let mut header = vec!["minibatches".to_string()];
    header.extend(OUTPUT_NAMES.iter().map(|n| format!("train_{n}")));
    header.extend(OUTPUT_NAMES.iter().map(|n| format!("test_{n}")));
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|r| std::iter::once(r.minibatches.to_string()).chain(r.train.iter().chain(&r.test).map(|v| v.to_string())).collect())
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.write_csv("surrogate_errors.csv", &header, &rows, &[])?;
    if let Some(last) = history.last() {
        println!("surrogate: {} train, {} test, test RSME(CD) {:.4}", train.len(), test.len(), last.test[0]);
    }
    Ok(())
}

fn write_sample_set(run: &mut Run, name: &str, samples: &[StateActionSample], stage: &str) -> Result<()> {
    let comments = run.comments();
    write_samples(run.create(name)?, samples, stage, &comments)?;
    Ok(())
}

fn write_ppo_history(run: &mut Run, name: &str, rows: &[HistoryRow]) -> Result<()> {
    let comments = run.comments();
    write_history(run.create(name)?, rows, &comments)?;
    Ok(())
}

fn pretrain(run: &mut Run) -> Result<()> {
    let baselines = run.baselines()?;
    let evaluator = run.evaluator()?;
    let bounds = FeatureBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(run.cfg.seed);
    let mut raw = Vec::new();
    for b in &baselines {
        raw.extend(greedy_search(b, &evaluator, &run.cfg.greedy_config(), &bounds, &mut rng)?);
    }
    let unique = dedup_states(&raw);
    let (smooth, passes) = smooth_samples(&unique, &run.cfg.smoothing_config())?;
    write_sample_set(run, "samples_greedy.csv", &raw, "greedy")?;
    write_sample_set(run, "samples_dedup.csv", &unique, "dedup")?;
    write_sample_set(run, "samples_smoothed.csv", &smooth, "smoothed")?;

    let mut agent = run.fresh_agent()?;
    let losses = imitate_policy(&mut agent, &smooth, &run.cfg.imitation_config())?;
    let rows: Vec<Vec<String>> = losses.iter().enumerate().map(|(e, l)| vec![(e + 1).to_string(), l.to_string()]).collect();
    run.write_csv("imitation_loss.csv", &["epoch", "loss"], &rows, &[])?;

    let env_cfg = run.env_config();
    let make = || AirfoilEnv::new(env_cfg, evaluator.clone());
    let pcfg = run.cfg.ppo_config(run.cfg.critic.iterations, &run.cfg.critic.actor_lr.clone(), run.workers);
    let critic = pretrain_critic(&mut agent, &baselines, &pcfg, &make)?;
    write_ppo_history(run, "critic_history.csv", &critic)?;
    run.write_text("agent_pretrained.agent", &agent.to_text())?;
    println!(
        "pretrain: {} greedy samples, {} unique, {passes} smoothing passes, imitation loss {:.5}, mean reward {:.4}",
        raw.len(),
        unique.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        critic.last().map(|r| r.mean_reward).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train_ppo(run: &mut Run, init: Option<PathBuf>) -> Result<()> {
    let mut agent = run.load_agent(init.as_deref())?;
    let baselines = run.baselines()?;
    let evaluator = run.evaluator()?;
    let env_cfg = run.env_config();
    let make = || AirfoilEnv::new(env_cfg, evaluator.clone());
    let pcfg = run.cfg.ppo_config(run.cfg.ppo.iterations, &run.cfg.ppo.actor_lr.clone(), run.workers);
    let every = run.cfg.ppo.checkpoint_every;
    let mut checkpoints = Vec::new();
    let history = ppo_train(&mut agent, &baselines, &pcfg, &make, |row, a| {
        println!("iteration {:>4}  mean reward {:.4}", row.iteration, row.mean_reward);
        if every > 0 && row.iteration > 0 && row.iteration.is_multiple_of(every) {
            checkpoints.push((row.iteration, a.to_text()));
        }
    })?;
    for (it, text) in checkpoints {
        run.write_text(&format!("agent_iter_{it:05}.agent"), &text)?;
    }
    write_ppo_history(run, "ppo_history.csv", &history)?;
    run.write_text("agent_final.agent", &agent.to_text())?;
    Ok(())
}

fn evaluate(run: &mut Run, agent: Option<PathBuf>) -> Result<()> {
    let agent = run.load_agent(agent.as_deref())?;
    let baselines = run.baselines()?;
    let mut env = AirfoilEnv::new(run.env_config(), run.evaluator()?);
    let mut log = Vec::new();
    let mut summary = Vec::new();
    for (i, b) in baselines.iter().enumerate() {
        let mut state = env.reset(b)?;
        let cd0 = env.current().map(|e| e.cd).unwrap_or(f64::NAN);
        let mut total = 0.0;
        for step in 0..run.cfg.ppo.steps {
            let r = env.step(agent.mean_action(&state)?)?;
            total += r.reward;
            state = r.next_state;
            log.push(RolloutRow { episode: i, step, result: r });
            if r.done {
                break;
            }
        }
        let cd1 = env.current().map(|e| e.cd).unwrap_or(f64::NAN);
        summary.push((i, cd0, cd1, total));
    }
    let mean = summary.iter().map(|s| s.3).sum::<f64>() / summary.len() as f64;
    let rows: Vec<Vec<String>> =
        summary.iter().map(|(i, a, b, t)| vec![i.to_string(), a.to_string(), b.to_string(), t.to_string()]).collect();
    let extra = [format!("mean_cumulative_reward={mean}")];
    run.write_csv("evaluation.csv", &["baseline", "cd_initial", "cd_final", "cumulative_reward"], &rows, &extra)?;
    let comments = run.comments();
    write_rollout_log(run.create("evaluation_rollouts.csv")?, &log, &comments)?;
    println!("mean cumulative reward {mean:.4} counts over {} baselines", summary.len());
    Ok(())
}

fn load_airfoil(path: &Path, t_max: f64) -> Result<AirfoilGeom> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "cst") {
        return Ok(read_cst(&text)?);
    }
    let (upper, lower) = read_coordinates(&text)?;
    Ok(AirfoilGeom::new(cst_fit(&upper)?, cst_fit(&lower)?, t_max)?)
}

fn modify(run: &mut Run, airfoil: Option<PathBuf>, baseline: usize, action: &[f64]) -> Result<()> {
    if action.len() != 3 {
        bail!("--action needs three values t1,sb,hb; got {}", action.len());
    }
    let base = match &airfoil {
        Some(p) => load_airfoil(p, run.cfg.t_max)?,
        None => {
            let all = run.baselines()?;
            all.get(baseline)
                .cloned()
                .with_context(|| format!("baseline {baseline} out of range (0..{})", all.len()))?
        }
    };
    let a = BumpAction::new(action[0], action[1], action[2])?;
    let (modified, shape) = base.apply_action_with_shape(&a)?;
    let thickness = modified.max_thickness();
    if (thickness - base.t_max).abs() > 1e-6 {
        bail!("thickness {thickness} drifted from {}", base.t_max);
    }
    let evaluator = Evaluator::Proxy(run.cfg.proxy.clone());
    let (before, after) = (evaluator.evaluate(&base)?, evaluator.evaluate(&modified)?);
    let header = run.comments().join("\n");
    run.write_text("baseline.dat", &write_coordinates(&base, &header))?;
    run.write_text("modified.dat", &write_coordinates(&modified, &header))?;
    run.write_text("modified.cst", &write_cst(&modified))?;

    let rec: Vec<String> = [a.t1, a.s_b, a.h_b, shape.t2, thickness, before.cd, after.cd, (before.cd - after.cd) * 1e4]
        .iter()
        .map(|v| v.to_string())
        .collect();
    run.write_csv("modify.csv", &["t1", "sb", "hb", "t2", "t_max", "cd_before", "cd_after", "reward"], &[rec], &[])?;
    println!(
        "t2 {:.4}, thickness {thickness:.6}, proxy CD {:.6} -> {:.6}",
        shape.t2, before.cd, after.cd
    );
    Ok(())
}

fn features(run: &mut Run, input: &Path) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let f = extract_features(&read_distribution(&text)?)?;
    let mut rec: Vec<String> = [f.x1, f.mw1, f.mwl, f.mwa, f.mw_lower, f.err].iter().map(|v| v.to_string()).collect();
    rec.push(u8::from(f.no_shock).to_string());
    run.write_csv("features.csv", &["x1", "mw1", "mwl", "mwa", "mw_lower", "err", "no_shock"], &[rec], &[])?;
    println!("X1 {:.4}  Mw1 {:.4}  MwL {:.4}  MwA {:.4}{}", f.x1, f.mw1, f.mwl, f.mwa, if f.no_shock { "  (no shock)" } else { "" });
    Ok(())
}

fn plot_cmd(run: &mut Run, input: &Path, output: Option<PathBuf>, x: Option<String>, y: Option<String>) -> Result<()> {
    let series = plot::read_series(open(input)?, x.as_deref(), y.as_deref()).with_context(|| format!("reading {}", input.display()))?;
    let title = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let svg = plot::render_svg(&series, &title, &[format!("config_hash={}", run.hash)]);
    let path = output.unwrap_or_else(|| run.out(&format!("{title}.svg")));
    fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
    run.artifacts.push(path.display().to_string());
    Ok(())
}
