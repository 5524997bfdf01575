use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bpd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn bandit() -> String {
    configs().join("bandit.json").display().to_string()
}

#[test]
fn maxent_writes_policy_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpd(&["maxent", "--config", &bandit()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let policy: serde_json::Value = serde_json::from_str(&read(dir.path(), "policy.json")).unwrap();
    let p0 = policy["probs"][0].as_f64().unwrap();
    // two-armed bandit, rewards (1, 0), γ = 0.5, β = 2: Q differs by 1, so π(0) = σ(2)
    let expected = 1.0 / (1.0 + (-2.0f64).exp());
    assert!((p0 - expected).abs() < 1e-9, "{p0} vs {expected}");
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "maxent");
    assert_eq!(manifest["config"]["train"]["beta"], 2.0);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(outputs, ["policy.json", "soft_values.csv", "residuals.csv"]);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["maxent", "--set", "train.no_such_key=1"],
        &["maxent", "--set", "train.beta=-1"],
        &["maxent", "--set", "base.alpha=0"],
        &["oracle", "--set", "env.kind=file", "--set", "env.path=/nonexistent/mdp.json"],
        &["simulate-humans", "--config", "/nonexistent/config.json"],
    ];
    for args in cases {
        let out = bpd(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
    }
}

#[test]
fn gridworld_commands_reject_other_envs() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpd(&["simulate-humans", "--config", &bandit()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_collab_without_robots_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpd(&["eval-collab"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-collab"));
}

#[test]
fn oracle_reads_mdp_files() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = bpd_core::mdp::bandit(&[1.0, 0.0], 0.5).unwrap();
    let path = dir.path().join("mdp.json");
    std::fs::write(&path, mdp.to_json().unwrap()).unwrap();
    let env = format!(r#"env={{"kind":"file","path":"{}"}}"#, path.display());
    let a = bpd(&["oracle", "--config", &bandit(), "--set", &env], &dir.path().join("a"));
    let b = bpd(&["oracle", "--config", &bandit()], &dir.path().join("b"));
    assert!(a.status.success() && b.status.success());
    assert_eq!(read(&dir.path().join("a"), "oracle.json"), read(&dir.path().join("b"), "oracle.json"));
}

#[test]
fn training_is_byte_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let short = ["train-bpd", "--config", &bandit(), "--set", "train.iterations=30", "--threads", "2"];
    let run = |name: &str, seed: &str| {
        let d = dir.path().join(name);
        let mut args = short.to_vec();
        args.extend(["--seed", seed]);
        let out = bpd(&args, &d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        d
    };
    let (a, b, c) = (run("a", "5"), run("b", "5"), run("c", "6"));
    for f in ["model.json", "discriminator.json", "train_log.csv", "marginals.csv"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, "model.json"), read(&c, "model.json"));
    let m: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["threads"], 2);
}

#[test]
fn simulate_humans_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let ring = configs().join("compact_ring.json").display().to_string();
    let out = bpd(
        &[
            "simulate-humans",
            "--config",
            &ring,
            "--set",
            "humans.count=3",
            "--set",
            "humans.episodes=2",
            "--set",
            "humans.horizon=12",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file = std::fs::File::open(dir.path().join("trajectories.jsonl")).unwrap();
    let trajs = bpd_core::mdp::read_trajectories_jsonl(std::io::BufReader::new(file)).unwrap();
    assert_eq!(trajs.len(), 6);
    assert!(trajs.iter().all(|t| t.len() == 12));
    let humans: serde_json::Value = serde_json::from_str(&read(dir.path(), "humans.json")).unwrap();
    assert_eq!(humans.as_array().unwrap().len(), 3);
}

#[test]
fn collab_train_then_eval_round_trips_robots() {
    let dir = tempfile::tempdir().unwrap();
    let ring = configs().join("compact_ring.json").display().to_string();
    let small = [
        "--config",
        &ring,
        "--set",
        "collab.bpd_iterations=20",
        "--set",
        "collab.robot.iterations=20",
        "--set",
        "collab.robot.episodes_per_iter=8",
        "--set",
        "collab.with_memory=false",
        "--set",
        "collab.num_humans=4",
        "--set",
        "collab.eval_episodes=40",
    ];
    let mut train = vec!["train-collab"];
    train.extend(small);
    assert!(bpd(&train, dir.path()).status.success());
    let mut eval = vec!["eval-collab"];
    eval.extend(small);
    let out = bpd(&eval, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "collab.csv");
    let robots: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(robots, ["bpd", "maxent"]);
}
