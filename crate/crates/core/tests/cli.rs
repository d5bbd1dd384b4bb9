use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use foilrl::geometry::io::{read_coordinates, read_cst};

fn foilrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foilrl"))
        .args(args)
        .env("FOILRL_OUT_DIR", dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = foilrl(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn comment_value(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|l| l.strip_prefix(&format!("# {key}=")).map(str::to_string))
}

#[test]
fn modify_demonstration_action() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["modify", "--action", "0.3,0.4,0.02"]);
    let cst = read_cst(&fs::read_to_string(tmp.path().join("modified.cst")).unwrap()).unwrap();
    assert!((cst.max_thickness() - 0.095).abs() < 1e-6);
    let (upper, lower) = read_coordinates(&fs::read_to_string(tmp.path().join("modified.dat")).unwrap()).unwrap();
    assert_eq!(upper.len(), 201);
    assert_eq!(lower.len(), 201);
    let (base_upper, _) = read_coordinates(&fs::read_to_string(tmp.path().join("baseline.dat")).unwrap()).unwrap();
    // A positive bump raises the upper surface near its peak.
    let i = upper.x().iter().position(|&x| x >= 0.3).unwrap();
    assert!(upper.y()[i] > base_upper.y()[i]);
    let manifest = fs::read_to_string(tmp.path().join("manifest_modify.toml")).unwrap();
    assert!(manifest.contains("config_hash = \""));
    assert!(manifest.contains("seed = 0"));
}

#[test]
fn untrained_policy_scores_near_zero() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["evaluate"]);
    let text = fs::read_to_string(tmp.path().join("evaluation.csv")).unwrap();
    let mean: f64 = comment_value(&text, "mean_cumulative_reward").unwrap().parse().unwrap();
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!(comment_value(&text, "config_hash").is_some());
}

#[test]
fn plot_edge_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("empty.csv"), "iteration,mean_reward\n").unwrap();
    fs::write(d.join("two.csv"), "# c\niteration,mean_reward\n0,1.5\n1,2.5\n").unwrap();
    ok(d, &["plot", d.join("empty.csv").to_str().unwrap()]);
    ok(d, &["plot", d.join("two.csv").to_str().unwrap()]);
    let empty = fs::read_to_string(d.join("empty.svg")).unwrap();
    assert!(empty.contains("class=\"axes\"") && !empty.contains("class=\"series\""));
    let two = fs::read_to_string(d.join("two.svg")).unwrap();
    let path = two.lines().find(|l| l.contains("class=\"series\"")).unwrap();
    assert_eq!(path.matches(" L").count(), 1);
    ok(d, &["plot", d.join("two.csv").to_str().unwrap(), "--output", d.join("again.svg").to_str().unwrap()]);
    assert_eq!(fs::read(d.join("two.svg")).unwrap(), fs::read(d.join("again.svg")).unwrap());

    fs::write(d.join("bad.csv"), "iteration,mean_reward\n0,abc\n").unwrap();
    assert!(!foilrl(d, &["plot", d.join("bad.csv").to_str().unwrap()]).status.success());
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = foilrl(d, &["no-such-command"]);
    assert!(!out.status.success());
    fs::write(d.join("bad.toml"), "[ppo]\nclip = 3.0\n").unwrap();
    let out = foilrl(d, &["--config", d.join("bad.toml").to_str().unwrap(), "evaluate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("clip"));
    let out = foilrl(d, &["--config", d.join("missing.toml").to_str().unwrap(), "evaluate"]);
    assert!(!out.status.success());
    let out = foilrl(d, &["train-ppo", "--init", d.join("missing.agent").to_str().unwrap()]);
    assert!(!out.status.success());
    let out = foilrl(d, &["modify", "--action", "0.3,0.4"]);
    assert!(!out.status.success());
}

#[test]
fn seed_and_config_change_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let hash = |args: &[&str]| {
        ok(d, args);
        comment_value(&fs::read_to_string(d.join("pool.csv")).unwrap(), "config_hash").unwrap()
    };
    let a = hash(&["generate-pool", "--size", "20"]);
    let b = hash(&["generate-pool", "--size", "20"]);
    let c = hash(&["--seed", "5", "generate-pool", "--size", "20"]);
    fs::write(d.join("o.toml"), "[proxy]\nk_wave = 1.0\n").unwrap();
    let e = hash(&["--config", d.join("o.toml").to_str().unwrap(), "generate-pool", "--size", "20"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, e);
    assert_eq!(comment_value(&fs::read_to_string(d.join("pool.csv")).unwrap(), "seed").unwrap(), "0");
}

#[test]
fn surrogate_environment_pipeline() {
    // Small settings so the surrogate-driven environment runs end to end.
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("small.toml");
    fs::write(
        &cfg,
        "evaluator = \"surrogate\"\n[pool]\nsize = 300\n[selection]\nkeep = [200]\n\
         [surrogate]\nhidden = [32, 32]\nschedule = [[30, 0.001]]\n\
         [greedy]\ncandidates = 20\n[imitation]\nepochs = 40\n[critic]\niterations = 2\n\
         [ppo]\niterations = 2\nepochs = 5\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    for args in [
        vec!["--config", c, "generate-pool"],
        vec!["--config", c, "select-samples"],
        vec!["--config", c, "train-surrogate"],
        vec!["--config", c, "pretrain"],
    ] {
        ok(d, &args);
    }
    let init = d.join("agent_pretrained.agent");
    ok(d, &["--config", c, "train-ppo", "--init", init.to_str().unwrap()]);
    let hist = fs::read_to_string(d.join("ppo_history.csv")).unwrap();
    assert_eq!(hist.lines().filter(|l| !l.starts_with('#')).count(), 4);

    fs::remove_file(d.join("surrogate.model")).unwrap();
    assert!(!foilrl(d, &["--config", c, "evaluate"]).status.success());
}
