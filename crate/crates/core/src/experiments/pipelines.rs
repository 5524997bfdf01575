//! End-to-end gridworld experiments: prediction benchmark, mutual-information
//! ablation and collaboration ordering.
//!
//! Each experiment has one serializable config and one `run_*` function. The
//! config's `seed` is the only seed that matters: it is fanned out to every
//! component (BPD training, sequence data, humans, evaluation) so a run is
//! reproducible from `(config, seed)` alone.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bpd::{mutual_information, train_bpd, BaseMeasureConfig, MiConfig, MiMatrix, MiSource, TrainConfig, TrainLogRow};
use crate::coop::compose_two_player;
use crate::error::{BpdError, Result};
use crate::experiments::collab::{
    eval_team_population, train_best_response, BestResponse, CollabConfig, CollabRow, HumanModelSpec, RobotPolicy,
};
use crate::experiments::humans::{simulate_humans, SimulatedHuman};
use crate::gridworld::{AppleGridworld, GridworldConfig};
use crate::inference::{train_sequence_predictor, MfviConfig, MfviPredictor, ParticlePredictor, SeqTrainConfig};
use crate::maxent::soft_value_iteration;
use crate::mdp::Trajectory;
use crate::predict::{cross_entropy, OnlinePredictor};
use crate::rng::derive_seed;

/// Soft value iteration settings used by every experiment.
pub const SVI_TOL: f64 = 1e-10;
pub const SVI_MAX_ITERS: usize = 100_000;

/// BPD training settings tuned for the compact-ring gridworld.
pub fn gridworld_train_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        latent_dim: 8,
        iterations: 3000,
        policy_lr: 0.01,
        horizon: 64,
        policies_per_batch: 32,
        disc_batch: 128,
        ..TrainConfig::default()
    };
    cfg.disc.lr = 2e-3;
    cfg
}

/// BPD settings for the collaboration experiment: a two-dimensional latent,
/// so the robot's bucketed posterior memory stays a small table.
pub fn collab_train_config() -> TrainConfig {
    TrainConfig {
        latent_dim: 2,
        iterations: 2000,
        ..gridworld_train_config()
    }
}

/// The standard consistency levels.
pub fn consistency_levels() -> Vec<f64> {
    vec![0.5, 0.625, 0.75, 0.875, 1.0]
}

/// One row of the prediction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub consistency: f64,
    pub predictor: String,
    pub mean_ce: f64,
    pub std: f64,
}

pub fn write_prediction_csv<W: Write>(w: W, rows: &[PredictionRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| BpdError::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}

/// Score every named predictor on every `(consistency, dataset)` group.
pub fn eval_prediction(
    datasets: &[(f64, Vec<Trajectory>)],
    predictors: &[(&str, &dyn OnlinePredictor)],
    seed: u64,
) -> Result<Vec<PredictionRow>> {
    if datasets.is_empty() {
        return Err(BpdError::Empty("prediction datasets".into()));
    }
    let mut rows = Vec::new();
    for (c, data) in datasets {
        for (name, p) in predictors {
            let rep = cross_entropy(*p, data, seed)?;
            rows.push(PredictionRow {
                consistency: *c,
                predictor: name.to_string(),
                mean_ce: rep.mean_ce,
                std: rep.std,
            });
        }
    }
    Ok(rows)
}

/// Simulated-human datasets, one per consistency level.
pub fn human_datasets(
    world: &AppleGridworld,
    levels: &[f64],
    humans_per_level: usize,
    episodes_per_human: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<(f64, Vec<Trajectory>)>> {
    levels
        .iter()
        .map(|&c| {
            let pop = SimulatedHuman::population(c, humans_per_level, derive_seed(seed, "population"));
            let mut data = Vec::new();
            for h in &pop {
                data.extend(simulate_humans(world, h, episodes_per_human, horizon, seed)?);
            }
            Ok((c, data))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionExperiment {
    pub gridworld: GridworldConfig,
    pub base: BaseMeasureConfig,
    pub train: TrainConfig,
    pub seq: SeqTrainConfig,
    pub consistency_levels: Vec<f64>,
    pub humans_per_level: usize,
    pub episodes_per_human: usize,
    pub horizon: usize,
    /// Particle count for the particle-filter predictor; 0 disables it.
    pub particles: usize,
    /// Also score the (slow) online MFVI predictor.
    pub include_mfvi: bool,
    pub mfvi: MfviConfig,
    pub seed: u64,
}

impl Default for PredictionExperiment {
    fn default() -> Self {
        PredictionExperiment {
            gridworld: GridworldConfig::compact_ring(),
            base: BaseMeasureConfig { alpha: 0.2 },
            train: gridworld_train_config(),
            seq: SeqTrainConfig {
                num_policies: 5000,
                horizon: 100,
                epochs: 8,
                lr: 3e-3,
                ..SeqTrainConfig::default()
            },
            consistency_levels: consistency_levels(),
            humans_per_level: 20,
            episodes_per_human: 5,
            horizon: 100,
            particles: 1024,
            include_mfvi: false,
            mfvi: MfviConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionReport {
    pub rows: Vec<PredictionRow>,
    pub train_log: Vec<TrainLogRow>,
    pub seq_heldout_ce: f64,
    pub seq_epoch_ce: Vec<f64>,
}

impl PredictionReport {
    pub fn ce(&self, predictor: &str, consistency: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.predictor == predictor && r.consistency == consistency)
            .map(|r| r.mean_ce)
    }
}

/// Train the BPD and its sequence predictor, then score BPD and MaxEnt
/// predictors on simulated humans at every consistency level.
pub fn run_prediction_experiment(cfg: &PredictionExperiment) -> Result<PredictionReport> {
    if cfg.consistency_levels.is_empty() || cfg.humans_per_level == 0 || cfg.episodes_per_human == 0 {
        return Err(BpdError::config("prediction", "need at least one level, human and episode"));
    }
    let world = AppleGridworld::new(cfg.gridworld.clone())?;
    let mdp = world.mdp();
    let maxent = soft_value_iteration(mdp, cfg.train.beta, SVI_TOL, SVI_MAX_ITERS)?;
    let train = TrainConfig {
        seed: derive_seed(cfg.seed, "bpd"),
        ..cfg.train.clone()
    };
    let bpd = train_bpd(mdp, &cfg.base, &train)?;
    let seq_cfg = SeqTrainConfig {
        seed: derive_seed(cfg.seed, "seq"),
        ..cfg.seq.clone()
    };
    let seq = train_sequence_predictor(&bpd.model, mdp, &seq_cfg)?;
    let datasets = human_datasets(
        &world,
        &cfg.consistency_levels,
        cfg.humans_per_level,
        cfg.episodes_per_human,
        cfg.horizon,
        derive_seed(cfg.seed, "humans"),
    )?;
    let particles = ParticlePredictor {
        model: &bpd.model,
        count: cfg.particles,
    };
    let mfvi = MfviPredictor {
        model: &bpd.model,
        cfg: cfg.mfvi,
        predict_samples: 32,
    };
    let mut predictors: Vec<(&str, &dyn OnlinePredictor)> = vec![("bpd-seq", &seq.predictor), ("maxent", &maxent)];
    if cfg.particles > 0 {
        predictors.push(("bpd-particles", &particles));
    }
    if cfg.include_mfvi {
        predictors.push(("bpd-mfvi", &mfvi));
    }
    let rows = eval_prediction(&datasets, &predictors, derive_seed(cfg.seed, "eval"))?;
    Ok(PredictionReport {
        rows,
        train_log: bpd.log,
        seq_heldout_ce: seq.heldout_ce,
        seq_epoch_ce: seq.epoch_ce,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiExperiment {
    pub gridworld: GridworldConfig,
    pub alphas: Vec<f64>,
    pub train: TrainConfig,
    pub mi: MiConfig,
    pub seed: u64,
}

impl Default for MiExperiment {
    fn default() -> Self {
        MiExperiment {
            gridworld: GridworldConfig::compact_ring(),
            alphas: vec![0.2, 1.0],
            train: gridworld_train_config(),
            mi: MiConfig {
                horizon: 10,
                num_policies: 200_000,
                ..MiConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MiReport {
    pub maxent: MiMatrix,
    /// `(α, matrix)` per BPD source.
    pub bpd: Vec<(f64, MiMatrix)>,
}

/// MI matrices for the MaxEnt policy and for a BPD trained at each α.
pub fn run_mi_experiment(cfg: &MiExperiment) -> Result<MiReport> {
    let world = AppleGridworld::new(cfg.gridworld.clone())?;
    let mdp = world.mdp();
    let mi_cfg = MiConfig {
        seed: derive_seed(cfg.seed, "mi"),
        ..cfg.mi
    };
    let maxent = soft_value_iteration(mdp, cfg.train.beta, SVI_TOL, SVI_MAX_ITERS)?;
    let me = mutual_information(MiSource::Soft(&maxent), mdp, &mi_cfg)?;
    let mut bpd = Vec::new();
    for &alpha in &cfg.alphas {
        let train = TrainConfig {
            seed: derive_seed(cfg.seed, "bpd"),
            ..cfg.train.clone()
        };
        let r = train_bpd(mdp, &BaseMeasureConfig { alpha }, &train)?;
        bpd.push((alpha, mutual_information(MiSource::Latent(&r.model), mdp, &mi_cfg)?));
    }
    Ok(MiReport { maxent: me, bpd })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollabExperiment {
    pub gridworld: GridworldConfig,
    pub base: BaseMeasureConfig,
    pub train: TrainConfig,
    pub collab: CollabConfig,
    /// Also train robots with the posterior-summary memory.
    pub with_memory: bool,
    pub consistency: f64,
    pub num_humans: usize,
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    pub seed: u64,
}

impl Default for CollabExperiment {
    fn default() -> Self {
        CollabExperiment {
            gridworld: GridworldConfig::compact_ring(),
            base: BaseMeasureConfig { alpha: 0.2 },
            train: collab_train_config(),
            collab: CollabConfig::default(),
            with_memory: true,
            consistency: 0.9,
            num_humans: 50,
            eval_episodes: 2000,
            eval_horizon: 60,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CollabReport {
    pub rows: Vec<CollabRow>,
    /// Training curve per robot label.
    pub curves: Vec<(String, Vec<f64>)>,
}

impl CollabReport {
    pub fn row(&self, robot: &str) -> Option<&CollabRow> {
        self.rows.iter().find(|r| r.robot == robot)
    }
}

/// Train best-response robots against the MaxEnt and BPD human models, with
/// and (optionally) without memory. Returns `(label, result)` pairs.
pub fn train_collab_robots(cfg: &CollabExperiment) -> Result<Vec<(String, BestResponse)>> {
    let game = compose_two_player(cfg.gridworld.clone())?;
    let mdp = game.world().mdp();
    let maxent = soft_value_iteration(mdp, cfg.train.beta, SVI_TOL, SVI_MAX_ITERS)?;
    let train = TrainConfig {
        seed: derive_seed(cfg.seed, "bpd"),
        ..cfg.train.clone()
    };
    let bpd = train_bpd(mdp, &cfg.base, &train)?;
    let collab = CollabConfig {
        seed: derive_seed(cfg.seed, "robot"),
        ..cfg.collab
    };
    let specs = [
        ("maxent", HumanModelSpec::MaxEnt(&maxent.policy)),
        ("bpd", HumanModelSpec::BpdSamplePerEpisode(&bpd.model)),
    ];
    let memories: &[bool] = if cfg.with_memory { &[false, true] } else { &[false] };
    let mut out = Vec::new();
    for (name, spec) in specs {
        for &mem in memories {
            let label = if mem { format!("{name}+memory") } else { name.to_string() };
            log::info!("training best response against {label}");
            out.push((label, train_best_response(&game, &spec, mem.then_some(&bpd.model), &collab)?));
        }
    }
    Ok(out)
}

/// Evaluate labelled robots against the experiment's simulated humans.
pub fn eval_collab_robots(cfg: &CollabExperiment, robots: &[(String, RobotPolicy)]) -> Result<Vec<CollabRow>> {
    let game = compose_two_player(cfg.gridworld.clone())?;
    let humans = SimulatedHuman::population(cfg.consistency, cfg.num_humans.max(1), derive_seed(cfg.seed, "humans"));
    let human_label = format!("simulated-c{}", cfg.consistency);
    robots
        .iter()
        .map(|(label, robot)| {
            let ev = eval_team_population(
                &game,
                robot,
                &humans,
                cfg.eval_episodes,
                cfg.eval_horizon,
                derive_seed(cfg.seed, "eval"),
            )?;
            Ok(CollabRow {
                robot: label.clone(),
                human: human_label.clone(),
                mean_return: ev.mean_return,
                ci_low: ev.ci_low,
                ci_high: ev.ci_high,
            })
        })
        .collect()
}

/// [`train_collab_robots`] followed by [`eval_collab_robots`].
pub fn run_collab_experiment(cfg: &CollabExperiment) -> Result<CollabReport> {
    let trained = train_collab_robots(cfg)?;
    let robots: Vec<(String, RobotPolicy)> = trained.iter().map(|(l, b)| (l.clone(), b.robot.clone())).collect();
    let rows = eval_collab_robots(cfg, &robots)?;
    let curves = trained.into_iter().map(|(l, b)| (l, b.curve)).collect();
    Ok(CollabReport { rows, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::UniformPredictor;

    #[test]
    fn eval_prediction_groups_rows() {
        let world = AppleGridworld::new(GridworldConfig::compact_ring()).unwrap();
        let data = human_datasets(&world, &[0.5, 1.0], 2, 2, 10, 3).unwrap();
        let u = UniformPredictor { num_actions: 4 };
        let rows = eval_prediction(&data, &[("uniform", &u)], 0).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!((r.mean_ce - 4f64.ln()).abs() < 1e-12);
            assert!(r.std.abs() < 1e-12);
        }
        let mut buf = Vec::new();
        write_prediction_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("consistency,predictor,mean_ce,std"));
    }

    #[test]
    fn configs_round_trip() {
        let p = PredictionExperiment::default();
        let back: PredictionExperiment = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
        let c = CollabExperiment::default();
        let back: CollabExperiment = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
