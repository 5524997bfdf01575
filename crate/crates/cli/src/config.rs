//! The run configuration: one JSON document, defaults for every field, and
//! flat `key.path=value` overrides from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use bpd_core::bpd::{BaseMeasureConfig, MiConfig, TrainConfig};
use bpd_core::experiments::{
    consistency_levels, gridworld_train_config, CollabConfig, CollabExperiment, MiExperiment, PredictionExperiment,
    MAX_ROBOT_CONTEXTS,
};
use bpd_core::gridworld::{AppleGridworld, GridworldConfig};
use bpd_core::inference::{MfviConfig, SeqTrainConfig};
use bpd_core::mdp::{bandit, TabularMdp};
use bpd_core::oracle::OracleConfig;

use crate::error::CliError;

/// Environment the single-MDP commands run on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvConfig {
    Gridworld(GridworldConfig),
    Bandit { rewards: Vec<f64>, discount: f64 },
    /// A tabular MDP stored as JSON.
    File { path: String },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Gridworld(GridworldConfig::default())
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<TabularMdp, CliError> {
        Ok(match self {
            EnvConfig::Gridworld(g) => AppleGridworld::new(g.clone())?.mdp().clone(),
            EnvConfig::Bandit { rewards, discount } => bandit(rewards, *discount)?,
            EnvConfig::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("env.path: {e}")))?;
                TabularMdp::from_json(&text)?
            }
        })
    }

    pub fn gridworld(&self) -> Result<&GridworldConfig, CliError> {
        match self {
            EnvConfig::Gridworld(g) => Ok(g),
            _ => Err(CliError::Config("env.kind: this command needs a gridworld environment".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaxEntSection {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for MaxEntSection {
    fn default() -> Self {
        MaxEntSection {
            tol: 1e-10,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumansSection {
    pub consistency: f64,
    pub count: usize,
    pub episodes: usize,
    pub horizon: usize,
}

impl Default for HumansSection {
    fn default() -> Self {
        HumansSection {
            consistency: 0.9,
            count: 20,
            episodes: 5,
            horizon: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionSection {
    pub consistency_levels: Vec<f64>,
    pub humans_per_level: usize,
    pub episodes_per_human: usize,
    pub horizon: usize,
    pub particles: usize,
    pub include_mfvi: bool,
    pub mfvi: MfviConfig,
}

impl Default for PredictionSection {
    fn default() -> Self {
        let p = PredictionExperiment::default();
        PredictionSection {
            consistency_levels: consistency_levels(),
            humans_per_level: p.humans_per_level,
            episodes_per_human: p.episodes_per_human,
            horizon: p.horizon,
            particles: p.particles,
            include_mfvi: false,
            mfvi: MfviConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiSection {
    /// α values of the BPD sources; MaxEnt is always included.
    pub alphas: Vec<f64>,
    pub estimator: MiConfig,
}

impl Default for MiSection {
    fn default() -> Self {
        let m = MiExperiment::default();
        MiSection {
            alphas: m.alphas,
            estimator: m.mi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollabSection {
    pub robot: CollabConfig,
    /// Latent size and iterations of the BPD trained for the collaboration
    /// run; the rest of the training settings come from `train`. Kept apart
    /// because the robot's memory table grows as `buckets^latent_dim`.
    pub bpd_latent_dim: usize,
    pub bpd_iterations: usize,
    pub with_memory: bool,
    pub consistency: f64,
    pub num_humans: usize,
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    /// Directory `eval-collab` reads `robot_*.json` from; defaults to `--out`.
    pub robots_dir: Option<String>,
}

impl Default for CollabSection {
    fn default() -> Self {
        let c = CollabExperiment::default();
        CollabSection {
            robot: c.collab,
            bpd_latent_dim: c.train.latent_dim,
            bpd_iterations: c.train.iterations,
            with_memory: c.with_memory,
            consistency: c.consistency,
            num_humans: c.num_humans,
            eval_episodes: c.eval_episodes,
            eval_horizon: c.eval_horizon,
            robots_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub base: BaseMeasureConfig,
    pub train: TrainConfig,
    pub maxent: MaxEntSection,
    pub oracle: OracleConfig,
    pub seq: SeqTrainConfig,
    pub humans: HumansSection,
    pub prediction: PredictionSection,
    pub mi: MiSection,
    pub collab: CollabSection,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            base: BaseMeasureConfig::default(),
            train: gridworld_train_config(),
            maxent: MaxEntSection::default(),
            oracle: OracleConfig::default(),
            seq: PredictionExperiment::default().seq,
            humans: HumansSection::default(),
            prediction: PredictionSection::default(),
            mi: MiSection::default(),
            collab: CollabSection::default(),
            seed: 0,
        }
    }
}

/// Every key of `value` must also exist in `reference` (recursively).
/// `reference` is the parsed config serialized back, so it holds exactly the
/// keys the config types understand.
fn check_known_keys(value: &Value, reference: &Value, path: &str) -> Result<(), CliError> {
    if let (Value::Object(v), Value::Object(r)) = (value, reference) {
        for (k, child) in v {
            let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match r.get(k) {
                Some(rc) => check_known_keys(child, rc, &p)?,
                None => return Err(CliError::Config(format!("{p}: unknown configuration key"))),
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k.as_str()) {
                    // switching the env kind replaces the whole section
                    Some(slot) if v.get("kind").is_some() && slot.get("kind") != v.get("kind") => *slot = v,
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Apply one `key.path=value` override. The value is parsed as JSON when
/// possible, otherwise taken as a string.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {spec}: expected key.path=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("{path}: `{}` is not a section", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            // unknown leaves are caught by the round-trip key check in `load`
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        cur = obj
            .get_mut(*k)
            .ok_or_else(|| CliError::Config(format!("{path}: unknown configuration key")))?;
    }
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file (if any), then overrides, then `seed`.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            merge(&mut doc, file);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        let known = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
        check_known_keys(&doc, &known, "")?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    /// Check every section a command may touch before any compute starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let mdp = self.env.build().map_err(|e| match e {
            CliError::Run(b) => CliError::Config(format!("env: {b}")),
            other => other,
        })?;
        let g = mdp.discount();
        if !(0.0..1.0).contains(&g) {
            return Err(CliError::Config(format!("env.discount: {g} is outside [0, 1)")));
        }
        if !(self.train.beta > 0.0) {
            return Err(CliError::Config("train.beta: must be positive".into()));
        }
        self.base.validate()?;
        self.train.validate()?;
        self.oracle.validate()?;
        self.seq.validate()?;
        self.mi.estimator.validate()?;
        self.collab.robot.validate()?;
        self.prediction.mfvi.validate()?;
        if !(self.maxent.tol > 0.0) || self.maxent.max_iters == 0 {
            return Err(CliError::Config("maxent: tol and max_iters must be positive".into()));
        }
        if self.collab.bpd_latent_dim == 0 || self.collab.bpd_iterations == 0 {
            return Err(CliError::Config("collab.bpd_latent_dim / bpd_iterations: must be positive".into()));
        }
        if self.collab.with_memory {
            if let EnvConfig::Gridworld(g) = &self.env {
                let cells = AppleGridworld::new(g.clone())?.num_cells() as f64;
                let contexts = (self.collab.robot.memory.buckets as f64).powi(self.collab.bpd_latent_dim as i32)
                    * cells
                    * cells
                    * 4.0;
                if contexts > MAX_ROBOT_CONTEXTS as f64 {
                    return Err(CliError::Config(format!(
                        "collab.robot.memory.buckets: {contexts:.0} robot contexts exceed {MAX_ROBOT_CONTEXTS}; \
                         lower buckets or collab.bpd_latent_dim, or set collab.with_memory=false"
                    )));
                }
            }
        }
        if self.mi.alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(CliError::Config("mi.alphas: every α must be positive".into()));
        }
        for (name, c) in std::iter::once(("humans.consistency", self.humans.consistency))
            .chain(std::iter::once(("collab.consistency", self.collab.consistency)))
            .chain(self.prediction.consistency_levels.iter().map(|c| ("prediction.consistency_levels", *c)))
        {
            if !(0.5..=1.0).contains(&c) {
                return Err(CliError::Config(format!("{name}: {c} is outside [0.5, 1]")));
            }
        }
        Ok(())
    }

    pub fn prediction_experiment(&self) -> Result<PredictionExperiment, CliError> {
        Ok(PredictionExperiment {
            gridworld: self.env.gridworld()?.clone(),
            base: self.base,
            train: self.train.clone(),
            seq: self.seq.clone(),
            consistency_levels: self.prediction.consistency_levels.clone(),
            humans_per_level: self.prediction.humans_per_level,
            episodes_per_human: self.prediction.episodes_per_human,
            horizon: self.prediction.horizon,
            particles: self.prediction.particles,
            include_mfvi: self.prediction.include_mfvi,
            mfvi: self.prediction.mfvi,
            seed: self.seed,
        })
    }

    pub fn mi_experiment(&self) -> Result<MiExperiment, CliError> {
        Ok(MiExperiment {
            gridworld: self.env.gridworld()?.clone(),
            alphas: self.mi.alphas.clone(),
            train: self.train.clone(),
            mi: self.mi.estimator,
            seed: self.seed,
        })
    }

    pub fn collab_experiment(&self) -> Result<CollabExperiment, CliError> {
        Ok(CollabExperiment {
            gridworld: self.env.gridworld()?.clone(),
            base: self.base,
            train: TrainConfig {
                latent_dim: self.collab.bpd_latent_dim,
                iterations: self.collab.bpd_iterations,
                ..self.train.clone()
            },
            collab: self.collab.robot,
            with_memory: self.collab.with_memory,
            consistency: self.collab.consistency,
            num_humans: self.collab.num_humans,
            eval_episodes: self.collab.eval_episodes,
            eval_horizon: self.collab.eval_horizon,
            seed: self.seed,
        })
    }
}
