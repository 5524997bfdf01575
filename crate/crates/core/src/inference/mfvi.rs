//! Mean-field variational inference over the latent of a policy model.

use serde::{Deserialize, Serialize};

use crate::bpd::model::LatentPolicyModel;
use crate::error::{BpdError, Result};
use crate::math;
use crate::mdp::{Step, Trajectory};
use crate::predict::{OnlinePredictor, PredictionSession};
use crate::rng::{self, Rng};

/// Lower bound on every `σ_i`.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Diagonal Gaussian `q(z) = Π_i N(μ_i, σ_i²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfviState {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub steps: u64,
}

impl MfviState {
    /// The prior `N(0, I)`.
    pub fn prior(latent_dim: usize) -> Self {
        MfviState {
            mu: vec![0.0; latent_dim],
            sigma: vec![1.0; latent_dim],
            steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() {
            return Err(BpdError::ShapeMismatch("mu and sigma lengths differ".into()));
        }
        if self.mu.iter().any(|x| !x.is_finite()) || self.sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(BpdError::Numerical(format!("invalid variational state: {self:?}")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let eps = rng::standard_normal_vec(rng, self.mu.len());
        self.reparameterize(&eps)
    }

    fn reparameterize(&self, eps: &[f64]) -> Vec<f64> {
        self.mu.iter().zip(&self.sigma).zip(eps).map(|((m, s), e)| m + s * e).collect()
    }

    /// `Σ_i KL(N(μ_i, σ_i²) ‖ N(0, 1))` in closed form.
    pub fn kl_to_prior(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.sigma)
            .map(|(m, s)| 0.5 * (m * m + s * s - 1.0) - s.ln())
            .sum()
    }
}

/// ELBO with the Monte Carlo noise fixed to `eps` (one row per sample).
pub fn elbo_with_noise(model: &LatentPolicyModel, state: &MfviState, prefix: &[Step], eps: &[Vec<f64>]) -> f64 {
    let ll: f64 = eps
        .iter()
        .map(|e| {
            let z = state.reparameterize(e);
            prefix.iter().map(|st| model.log_prob(st.state, st.action, &z)).sum::<f64>()
        })
        .sum::<f64>();
    let ll = if eps.is_empty() { 0.0 } else { ll / eps.len() as f64 };
    ll - state.kl_to_prior()
}

/// Gradient of [`elbo_with_noise`] w.r.t. `(μ, σ)`, concatenated.
pub fn elbo_grad_with_noise(
    model: &LatentPolicyModel,
    state: &MfviState,
    prefix: &[Step],
    eps: &[Vec<f64>],
) -> Vec<f64> {
    let n = state.mu.len();
    let mut g = vec![0.0; 2 * n];
    if !prefix.is_empty() && !eps.is_empty() {
        let inv = 1.0 / eps.len() as f64;
        for e in eps {
            let z = state.reparameterize(e);
            for st in prefix {
                let gz = model.grad_log_prob_z(st.state, st.action, &z);
                for k in 0..n {
                    g[k] += inv * gz[k];
                    g[n + k] += inv * gz[k] * e[k];
                }
            }
        }
    }
    for k in 0..n {
        g[k] -= state.mu[k];
        g[n + k] -= state.sigma[k] - 1.0 / state.sigma[k];
    }
    g
}

/// Step-size and sampling settings for [`mfvi_update`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfviConfig {
    pub sgd_steps: usize,
    pub lr: f64,
    pub mc_samples: usize,
    /// Gradient-norm cap per step; long prefixes otherwise overshoot.
    pub max_grad_norm: f64,
}

impl Default for MfviConfig {
    fn default() -> Self {
        MfviConfig {
            sgd_steps: 1,
            lr: 0.05,
            mc_samples: 8,
            max_grad_norm: 10.0,
        }
    }
}

impl MfviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sgd_steps == 0 {
            return Err(BpdError::config("mfvi.sgd_steps", "must be at least 1"));
        }
        if self.mc_samples == 0 {
            return Err(BpdError::config("mfvi.mc_samples", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.max_grad_norm > 0.0) {
            return Err(BpdError::config("mfvi.lr", "learning rate and gradient cap must be positive"));
        }
        Ok(())
    }
}

/// Reparameterized gradient ascent on the ELBO, starting from `state`.
pub fn mfvi_update(
    model: &LatentPolicyModel,
    state: &MfviState,
    prefix: &Trajectory,
    cfg: &MfviConfig,
    rng: &mut Rng,
) -> Result<MfviState> {
    cfg.validate()?;
    state.validate()?;
    if state.mu.len() != model.latent_dim() {
        return Err(BpdError::ShapeMismatch(format!(
            "variational dimension {} vs latent dimension {}",
            state.mu.len(),
            model.latent_dim()
        )));
    }
    let n = state.mu.len();
    let mut next = state.clone();
    for _ in 0..cfg.sgd_steps {
        let eps: Vec<Vec<f64>> = (0..cfg.mc_samples).map(|_| rng::standard_normal_vec(rng, n)).collect();
        let mut g = elbo_grad_with_noise(model, &next, &prefix.steps, &eps);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(BpdError::Numerical(format!("non-finite ELBO gradient at step {}", next.steps)));
        }
        math::clip_norm(&mut g, cfg.max_grad_norm);
        for k in 0..n {
            next.mu[k] += cfg.lr * g[k];
            next.sigma[k] = (next.sigma[k] + cfg.lr * g[n + k]).max(SIGMA_FLOOR);
        }
        next.steps += 1;
    }
    Ok(next)
}

/// `E_{z~q}[f_θ(·|s, z)]` by Monte Carlo.
pub fn mfvi_predict(model: &LatentPolicyModel, state: &MfviState, s: usize, mc_samples: usize, rng: &mut Rng) -> Vec<f64> {
    let mut acc = vec![0.0; model.num_actions()];
    for _ in 0..mc_samples.max(1) {
        let z = state.sample(rng);
        for (a, p) in model.action_probs(s, &z).into_iter().enumerate() {
            acc[a] += p;
        }
    }
    let total: f64 = acc.iter().sum();
    acc.iter_mut().for_each(|x| *x /= total);
    acc
}

/// Online MFVI predictor: one warm-started update per observed step.
#[derive(Debug, Clone)]
pub struct MfviPredictor<'a> {
    pub model: &'a LatentPolicyModel,
    pub cfg: MfviConfig,
    /// Monte Carlo samples for the predictive average.
    pub predict_samples: usize,
}

struct MfviSession<'a> {
    pred: &'a MfviPredictor<'a>,
    state: MfviState,
    prefix: Trajectory,
    rng: Rng,
}

impl PredictionSession for MfviSession<'_> {
    fn predict(&mut self, state: usize) -> Vec<f64> {
        mfvi_predict(self.pred.model, &self.state, state, self.pred.predict_samples, &mut self.rng)
    }

    fn observe(&mut self, state: usize, action: usize) {
        self.prefix.steps.push(Step { state, action });
        // a failed update keeps the previous posterior
        if let Ok(next) = mfvi_update(self.pred.model, &self.state, &self.prefix, &self.pred.cfg, &mut self.rng) {
            self.state = next;
        }
    }
}

impl OnlinePredictor for MfviPredictor<'_> {
    fn session(&self, seed: u64) -> Box<dyn PredictionSession + '_> {
        Box::new(MfviSession {
            pred: self,
            state: MfviState::prior(self.model.latent_dim()),
            prefix: Trajectory::default(),
            rng: rng::stream(seed, "mfvi", 0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(seed: u64) -> LatentPolicyModel {
        let mut rng = rng::stream(seed, "m", 0);
        let mut m = LatentPolicyModel::init(3, 3, 2, &mut rng);
        let noise = rng::standard_normal_vec(&mut rng, m.num_params());
        m.params_mut().iter_mut().zip(noise).for_each(|(p, e)| *p = e);
        m
    }

    #[test]
    fn empty_prefix_keeps_prior() {
        let m = model(1);
        let mut rng = rng::stream(0, "t", 0);
        let s0 = MfviState::prior(2);
        let s1 = mfvi_update(&m, &s0, &Trajectory::default(), &MfviConfig::default(), &mut rng).unwrap();
        for k in 0..2 {
            assert!((s1.mu[k] - s0.mu[k]).abs() < 1e-12);
            assert!((s1.sigma[k] - s0.sigma[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_closed_form_matches_monte_carlo() {
        let st = MfviState {
            mu: vec![0.3, -1.2],
            sigma: vec![0.5, 1.7],
            steps: 0,
        };
        let mut rng = rng::stream(0, "t", 0);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z = st.sample(&mut rng);
            let mut lq = 0.0;
            let mut lp = 0.0;
            for k in 0..2 {
                let e = (z[k] - st.mu[k]) / st.sigma[k];
                lq += -0.5 * e * e - st.sigma[k].ln();
                lp += -0.5 * z[k] * z[k];
            }
            acc += lq - lp;
        }
        let mc = acc / n as f64;
        assert!((mc - st.kl_to_prior()).abs() / st.kl_to_prior() < 0.01);
    }

    #[test]
    fn sigma_floor_holds() {
        let m = model(2);
        let mut rng = rng::stream(0, "t", 0);
        let mut st = MfviState::prior(2);
        st.sigma = vec![2e-4, 2e-4];
        let prefix = Trajectory::from_pairs(&[(0, 1); 50]);
        let cfg = MfviConfig {
            lr: 1.0,
            ..Default::default()
        };
        let next = mfvi_update(&m, &st, &prefix, &cfg, &mut rng).unwrap();
        assert!(next.sigma.iter().all(|s| *s >= SIGMA_FLOOR));
    }
}
