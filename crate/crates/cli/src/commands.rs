//! One function per subcommand. Each writes its metric files into the output
//! directory and returns their names for the manifest. Metric files carry no
//! timestamps, so reruns with the same config and seed are byte-identical.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bpd_core::bpd::train::write_train_log_csv;
use bpd_core::bpd::{model_marginals, train_bpd, TrainConfig};
use bpd_core::experiments::{
    eval_collab_robots, run_mi_experiment, run_prediction_experiment, simulate_humans, train_collab_robots,
    write_collab_csv, write_prediction_csv, RobotPolicy, SimulatedHuman,
};
use bpd_core::gridworld::AppleGridworld;
use bpd_core::maxent::soft_value_iteration;
use bpd_core::mdp::write_trajectories_jsonl;
use bpd_core::oracle::oracle_marginals;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Where a command writes, plus the list of files it wrote.
pub struct Outputs {
    dir: PathBuf,
    pub files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.files.push(name.to_string());
        std::fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.text(name, &serde_json::to_string_pretty(value)?)
    }
}

fn csv_table(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub fn maxent(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let mdp = cfg.env.build()?;
    let sol = soft_value_iteration(&mdp, cfg.train.beta, cfg.maxent.tol, cfg.maxent.max_iters)?;
    let na = mdp.num_actions();
    out.json("policy.json", &sol.policy)?;
    out.text(
        "soft_values.csv",
        &csv_table(
            "state,action,q_soft,v_soft,prob",
            (0..mdp.num_states()).flat_map(|s| {
                let sol = &sol;
                (0..na).map(move |a| {
                    format!("{s},{a},{},{},{}", sol.q(s, a), sol.v_soft[s], sol.policy.prob(s, a))
                })
            }),
        ),
    )?;
    out.text(
        "residuals.csv",
        &csv_table(
            "iter,residual",
            sol.residuals.iter().enumerate().map(|(i, r)| format!("{},{r}", i + 1)),
        ),
    )?;
    log::info!("soft value iteration converged, residual {:.3e}", sol.residual);
    Ok(())
}

pub fn oracle(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let mdp = cfg.env.build()?;
    let res = oracle_marginals(&mdp, cfg.train.beta, cfg.base.alpha, &cfg.oracle)?;
    for w in &res.warnings {
        log::warn!("{w}");
    }
    out.text("oracle.json", &res.to_json()?)
}

pub fn train(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let mdp = cfg.env.build()?;
    let train = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let res = train_bpd(&mdp, &cfg.base, &train)?;
    out.text("model.json", &res.model.to_json()?)?;
    out.text("discriminator.json", &res.disc.to_json()?)?;
    write_train_log_csv(out.create("train_log.csv")?, &res.log)?;
    let marg = model_marginals(&res.model, 10_000, cfg.seed);
    out.text(
        "marginals.csv",
        &csv_table(
            "state,action,prob",
            marg.iter()
                .enumerate()
                .flat_map(|(s, row)| row.iter().enumerate().map(move |(a, p)| format!("{s},{a},{p}"))),
        ),
    )
}

#[derive(Serialize)]
struct HumanRecord {
    human: SimulatedHuman,
    trajectories: usize,
}

pub fn simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let world = AppleGridworld::new(cfg.env.gridworld()?.clone())?;
    let h = &cfg.humans;
    let humans = SimulatedHuman::population(h.consistency, h.count, cfg.seed);
    let mut all = Vec::new();
    let mut records = Vec::new();
    for human in &humans {
        let trajs = simulate_humans(&world, human, h.episodes, h.horizon, cfg.seed)?;
        records.push(HumanRecord {
            human: *human,
            trajectories: trajs.len(),
        });
        all.extend(trajs);
    }
    out.json("humans.json", &records)?;
    write_trajectories_jsonl(out.create("trajectories.jsonl")?, &all)?;
    Ok(())
}

pub fn eval_prediction(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let report = run_prediction_experiment(&cfg.prediction_experiment()?)?;
    write_prediction_csv(out.create("prediction.csv")?, &report.rows)?;
    write_train_log_csv(out.create("train_log.csv")?, &report.train_log)?;
    out.text(
        "seq_training.csv",
        &csv_table(
            "epoch,train_ce",
            report.seq_epoch_ce.iter().enumerate().map(|(i, c)| format!("{},{c}", i + 1)),
        ),
    )?;
    for r in &report.rows {
        log::info!("c={} {}: {:.4} ± {:.4}", r.consistency, r.predictor, r.mean_ce, r.std);
    }
    Ok(())
}

#[derive(Serialize)]
struct MiSummary {
    source: String,
    mean_off_diagonal: Option<f64>,
    max_off_diagonal: Option<f64>,
    missing_groups: usize,
}

pub fn mutual_info(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let report = run_mi_experiment(&cfg.mi_experiment()?)?;
    let mut summary = Vec::new();
    let mut sources = vec![("maxent".to_string(), &report.maxent)];
    sources.extend(report.bpd.iter().map(|(a, m)| (format!("bpd-alpha{a}"), m)));
    for (name, m) in sources {
        m.write_csv(out.create(&format!("mi_{name}.csv"))?)?;
        summary.push(MiSummary {
            source: name,
            mean_off_diagonal: m.mean_off_diagonal(),
            max_off_diagonal: m.max_off_diagonal(),
            missing_groups: m.missing_groups,
        });
    }
    out.json("mi_summary.json", &summary)
}

const ROBOT_PREFIX: &str = "robot_";

pub fn train_collab(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let robots = train_collab_robots(&cfg.collab_experiment()?)?;
    for (label, br) in &robots {
        out.text(&format!("{ROBOT_PREFIX}{label}.json"), &br.robot.to_json()?)?;
    }
    out.text(
        "collab_training.csv",
        &csv_table(
            "robot,iter,mean_return",
            robots.iter().flat_map(|(label, br)| {
                br.curve.iter().enumerate().map(move |(i, r)| format!("{label},{},{r}", i + 1))
            }),
        ),
    )
}

pub fn eval_collab(cfg: &RunConfig, out_dir: &Path, out: &mut Outputs) -> Result<(), CliError> {
    let dir = cfg.collab.robots_dir.as_deref().map_or_else(|| out_dir.to_path_buf(), PathBuf::from);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::Config(format!("collab.robots_dir {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(ROBOT_PREFIX) && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "collab.robots_dir {}: no {ROBOT_PREFIX}*.json files; run train-collab first",
            dir.display()
        )));
    }
    let mut robots = Vec::new();
    for p in &paths {
        let name = p.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
        let label = name.trim_start_matches(ROBOT_PREFIX).to_string();
        robots.push((label, RobotPolicy::from_json(&std::fs::read_to_string(p)?)?));
    }
    let rows = eval_collab_robots(&cfg.collab_experiment()?, &robots)?;
    for r in &rows {
        log::info!("{} with {}: {:.4} [{:.4}, {:.4}]", r.robot, r.human, r.mean_return, r.ci_low, r.ci_high);
    }
    write_collab_csv(out.create("collab.csv")?, &rows)?;
    Ok(())
}
