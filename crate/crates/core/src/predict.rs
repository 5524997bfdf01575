//! Online next-action predictors and cross-entropy scoring.

use std::io::Write;

use serde::Serialize;

use crate::error::{BpdError, Result};
use crate::math;
use crate::mdp::{TabularPolicy, Trajectory};
use crate::par;

/// Predictions are floored at this value and renormalized before scoring.
pub const PROB_FLOOR: f64 = 1e-8;

/// State carried through one episode by an online predictor.
pub trait PredictionSession {
    /// Distribution over the action about to be taken at `state`, given
    /// everything observed so far in this episode.
    fn predict(&mut self, state: usize) -> Vec<f64>;

    /// Record the realized `(state, action)` pair.
    fn observe(&mut self, state: usize, action: usize);
}

/// Something that predicts `p(a_t | s_1, a_1, …, s_t)` online.
pub trait OnlinePredictor: Sync {
    /// Start a fresh episode. `seed` drives any Monte Carlo inside the session.
    fn session(&self, seed: u64) -> Box<dyn PredictionSession + '_>;
}

/// Uniform over `num_actions`.
#[derive(Debug, Clone, Copy)]
pub struct UniformPredictor {
    pub num_actions: usize,
}

impl OnlinePredictor for UniformPredictor {
    fn session(&self, _seed: u64) -> Box<dyn PredictionSession + '_> {
        Box::new(*self)
    }
}

impl PredictionSession for UniformPredictor {
    fn predict(&mut self, _state: usize) -> Vec<f64> {
        vec![1.0 / self.num_actions as f64; self.num_actions]
    }

    fn observe(&mut self, _state: usize, _action: usize) {}
}

/// History-independent predictor backed by a fixed tabular policy.
#[derive(Debug, Clone, Copy)]
pub struct PolicyPredictor<'a> {
    pub policy: &'a TabularPolicy,
}

impl OnlinePredictor for PolicyPredictor<'_> {
    fn session(&self, _seed: u64) -> Box<dyn PredictionSession + '_> {
        Box::new(*self)
    }
}

impl PredictionSession for PolicyPredictor<'_> {
    fn predict(&mut self, state: usize) -> Vec<f64> {
        self.policy.row(state).to_vec()
    }

    fn observe(&mut self, _state: usize, _action: usize) {}
}

/// Cross-entropy summary for one predictor on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct CeReport {
    /// Mean over all timesteps of `−ln p(a_t | history)`, in nats.
    pub mean_ce: f64,
    /// Per-trajectory mean cross-entropy.
    pub per_trajectory: Vec<f64>,
    /// Standard deviation of the per-trajectory means.
    pub std: f64,
    pub n_steps: usize,
}

impl CeReport {
    /// Standard error of the mean over trajectories.
    pub fn std_err(&self) -> f64 {
        self.std / (self.per_trajectory.len() as f64).sqrt()
    }
}

/// Negative log-likelihood of each action in `traj`; one entry per step.
pub fn trajectory_nll(predictor: &dyn OnlinePredictor, traj: &Trajectory, seed: u64) -> Vec<f64> {
    trace(predictor, traj, seed).into_iter().map(|r| r.nll).collect()
}

/// One line of a per-timestep prediction trace.
#[derive(Debug, Clone, Serialize)]
pub struct PredictionRecord {
    pub t: usize,
    pub state: usize,
    pub predicted_dist: Vec<f64>,
    pub realized_action: usize,
    pub nll: f64,
}

/// Run a predictor over a trajectory and record every prediction.
pub fn trace(predictor: &dyn OnlinePredictor, traj: &Trajectory, seed: u64) -> Vec<PredictionRecord> {
    let mut session = predictor.session(seed);
    traj.steps
        .iter()
        .enumerate()
        .map(|(i, st)| {
            let raw = session.predict(st.state);
            let dist = math::floor_and_normalize(&raw, PROB_FLOOR);
            let nll = -dist[st.action].ln();
            session.observe(st.state, st.action);
            PredictionRecord {
                t: i + 1,
                state: st.state,
                predicted_dist: dist,
                realized_action: st.action,
                nll,
            }
        })
        .collect()
}

/// Write a trace as JSON lines `{t, state, predicted_dist, realized_action, nll}`.
pub fn write_trace_jsonl<W: Write>(mut w: W, records: &[PredictionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Mean cross-entropy of `predictor` on `dataset`. Trajectory `i` uses
/// session seed `seed + i`.
pub fn cross_entropy(predictor: &dyn OnlinePredictor, dataset: &[Trajectory], seed: u64) -> Result<CeReport> {
    if dataset.is_empty() || dataset.iter().all(|t| t.is_empty()) {
        return Err(BpdError::Empty("cross-entropy dataset".into()));
    }
    let nlls: Vec<Vec<f64>> = par::map_range(dataset.len(), |i| {
        trajectory_nll(predictor, &dataset[i], seed.wrapping_add(i as u64))
    });
    let n_steps: usize = nlls.iter().map(|v| v.len()).sum();
    let total: f64 = nlls.iter().flatten().sum();
    let per_trajectory: Vec<f64> = nlls.iter().filter(|v| !v.is_empty()).map(|v| math::mean(v)).collect();
    Ok(CeReport {
        mean_ce: total / n_steps as f64,
        std: math::std_dev(&per_trajectory),
        per_trajectory,
        n_steps,
    })
}

/// One row of a cross-entropy CSV report.
#[derive(Debug, Clone, Serialize)]
pub struct CeRow {
    pub predictor: String,
    pub dataset: String,
    pub mean_ce: f64,
    pub std: f64,
    pub n_steps: usize,
}

pub fn write_ce_csv<W: Write>(w: W, rows: &[CeRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| BpdError::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}
