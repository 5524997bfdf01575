//! Weighted-particle posterior over a static latent.
//!
//! The latent is fixed for a whole episode, so there is no transition model
//! and no resampling: each observation multiplies every particle's weight by
//! its likelihood, and the effective sample size only shrinks.

use serde::{Deserialize, Serialize};

use crate::bpd::model::LatentPolicyModel;
use crate::error::{BpdError, Result};
use crate::math::logsumexp;
use crate::predict::{OnlinePredictor, PredictionSession};
use crate::rng::{self, Rng};

pub const DEFAULT_PARTICLES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticlePosterior {
    pub particles: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
}

impl ParticlePosterior {
    /// `count` draws from the prior `N(0, I)` with equal weights.
    pub fn from_prior(latent_dim: usize, count: usize, rng: &mut Rng) -> Result<Self> {
        if count == 0 {
            return Err(BpdError::config("particles", "need at least one particle"));
        }
        let particles = (0..count).map(|_| rng::standard_normal_vec(rng, latent_dim)).collect();
        Ok(ParticlePosterior {
            particles,
            log_weights: vec![0.0; count],
        })
    }

    pub fn from_particles(particles: Vec<Vec<f64>>) -> Result<Self> {
        if particles.is_empty() {
            return Err(BpdError::Empty("particle set".into()));
        }
        let n = particles.len();
        Ok(ParticlePosterior {
            particles,
            log_weights: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Normalized weights (sum to 1).
    pub fn weights(&self) -> Vec<f64> {
        let lse = logsumexp(&self.log_weights);
        self.log_weights.iter().map(|l| (l - lse).exp()).collect()
    }

    /// `(Σ w)² / Σ w²` of the normalized weights.
    pub fn ess(&self) -> f64 {
        let w = self.weights();
        1.0 / w.iter().map(|x| x * x).sum::<f64>()
    }

    /// Condition on one observed `(s, a)`.
    pub fn update(&mut self, model: &LatentPolicyModel, s: usize, a: usize) -> Result<()> {
        if s >= model.num_states() || a >= model.num_actions() {
            return Err(BpdError::OutOfRange(format!("observation ({s}, {a})")));
        }
        for (lw, z) in self.log_weights.iter_mut().zip(&self.particles) {
            *lw += model.log_prob(s, a, z);
        }
        if self.log_weights.iter().all(|l| *l == f64::NEG_INFINITY || l.is_nan()) {
            return Err(BpdError::Numerical("every particle weight vanished".into()));
        }
        // keep the largest log-weight at 0 so weights never underflow en masse
        let m = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.log_weights.iter_mut().for_each(|l| *l -= m);
        Ok(())
    }

    /// Weight-averaged `f_θ(·|s, z_i)`.
    pub fn predict(&self, model: &LatentPolicyModel, s: usize) -> Vec<f64> {
        let w = self.weights();
        let mut acc = vec![0.0; model.num_actions()];
        for (wi, z) in w.iter().zip(&self.particles) {
            if *wi == 0.0 {
                continue;
            }
            for (a, p) in model.action_probs(s, z).into_iter().enumerate() {
                acc[a] += wi * p;
            }
        }
        acc
    }

    /// Posterior mean of the latent.
    pub fn mean(&self) -> Vec<f64> {
        let w = self.weights();
        let n = self.particles.first().map_or(0, Vec::len);
        let mut m = vec![0.0; n];
        for (wi, z) in w.iter().zip(&self.particles) {
            for (mk, zk) in m.iter_mut().zip(z) {
                *mk += wi * zk;
            }
        }
        m
    }
}

/// Online particle-filter predictor over a latent policy model.
#[derive(Debug, Clone, Copy)]
pub struct ParticlePredictor<'a> {
    pub model: &'a LatentPolicyModel,
    pub count: usize,
}

struct ParticleSession<'a> {
    model: &'a LatentPolicyModel,
    posterior: ParticlePosterior,
}

impl PredictionSession for ParticleSession<'_> {
    fn predict(&mut self, state: usize) -> Vec<f64> {
        self.posterior.predict(self.model, state)
    }

    fn observe(&mut self, state: usize, action: usize) {
        // softmax likelihoods are strictly positive, so this cannot fail for
        // in-range observations
        let _ = self.posterior.update(self.model, state, action);
    }
}

impl OnlinePredictor for ParticlePredictor<'_> {
    fn session(&self, seed: u64) -> Box<dyn PredictionSession + '_> {
        let mut rng = rng::stream(seed, "particles", 0);
        let posterior = ParticlePosterior::from_prior(self.model.latent_dim(), self.count.max(1), &mut rng)
            .expect("count is at least one");
        Box::new(ParticleSession {
            model: self.model,
            posterior,
        })
    }
}
