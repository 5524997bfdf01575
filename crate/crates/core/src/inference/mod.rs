//! Online posterior inference over the latent and next-action prediction.

pub mod mfvi;
pub mod particle;
pub mod seq;

pub use mfvi::{mfvi_predict, mfvi_update, MfviConfig, MfviPredictor, MfviState};
pub use particle::{ParticlePosterior, ParticlePredictor, DEFAULT_PARTICLES};
pub use seq::{
    seq_predict, train_on_trajectories, train_sequence_predictor, SeqOutput, SeqPredictor, SeqTrainConfig,
    SeqTrainResult,
};

use crate::bpd::model::LatentPolicyModel;
use crate::error::{BpdError, Result};
use crate::rng::Rng;

/// Either posterior representation over the latent.
#[derive(Debug, Clone)]
pub enum Posterior<'a> {
    Mfvi(&'a MfviState),
    Particles(&'a ParticlePosterior),
}

/// Posterior predictive `E[f_θ(·|s, z)]`. `mc_samples` applies to MFVI only.
pub fn posterior_predict(
    model: &LatentPolicyModel,
    posterior: Posterior<'_>,
    query_state: usize,
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if query_state >= model.num_states() {
        return Err(BpdError::OutOfRange(format!("query state {query_state}")));
    }
    Ok(match posterior {
        Posterior::Mfvi(st) => mfvi_predict(model, st, query_state, mc_samples, rng),
        Posterior::Particles(p) => p.predict(model, query_state),
    })
}

/// Unconditioned predictor `E_z[f_θ(·|s, z)]`, averaged over a fixed set of
/// prior draws and ignoring the history.
#[derive(Debug, Clone)]
pub struct MarginalPredictor {
    table: Vec<f64>,
    num_actions: usize,
}

impl MarginalPredictor {
    pub fn new(model: &LatentPolicyModel, num_samples: usize, seed: u64) -> Self {
        let marg = crate::bpd::train::model_marginals(model, num_samples.max(1), seed);
        MarginalPredictor {
            table: marg.concat(),
            num_actions: model.num_actions(),
        }
    }
}

struct MarginalSession<'a>(&'a MarginalPredictor);

impl crate::predict::PredictionSession for MarginalSession<'_> {
    fn predict(&mut self, state: usize) -> Vec<f64> {
        let na = self.0.num_actions;
        self.0.table[state * na..(state + 1) * na].to_vec()
    }

    fn observe(&mut self, _state: usize, _action: usize) {}
}

impl crate::predict::OnlinePredictor for MarginalPredictor {
    fn session(&self, _seed: u64) -> Box<dyn crate::predict::PredictionSession + '_> {
        Box::new(MarginalSession(self))
    }
}
