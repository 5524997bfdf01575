//! Latent-conditioned policy model `f_θ(s, z) = softmax(W[s] z + b[s])`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BpdError, Result};
use crate::math::softmax_in_place;
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::rng::{self, Rng};

/// Distribution over policies induced by a standard-normal latent `z ∈ ℝⁿ`.
///
/// Parameters are stored flat: all weights `W[s][a][k]` first, then biases
/// `b[s][a]`. Gradient buffers use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPolicyModel {
    num_states: usize,
    num_actions: usize,
    latent_dim: usize,
    params: Vec<f64>,
}

impl LatentPolicyModel {
    /// All-zero parameters: every latent maps to the uniform policy.
    pub fn zeros(num_states: usize, num_actions: usize, latent_dim: usize) -> Self {
        LatentPolicyModel {
            num_states,
            num_actions,
            latent_dim,
            params: vec![0.0; num_states * num_actions * (latent_dim + 1)],
        }
    }

    /// Weights drawn from `N(0, 0.1²/√n)`, zero biases.
    pub fn init(num_states: usize, num_actions: usize, latent_dim: usize, rng: &mut Rng) -> Self {
        let mut m = Self::zeros(num_states, num_actions, latent_dim);
        let std = 0.1 / (latent_dim.max(1) as f64).powf(0.25);
        let normal = Normal::new(0.0, std).expect("finite std");
        let nw = m.num_weights();
        for w in &mut m.params[..nw] {
            *w = normal.sample(rng);
        }
        m
    }

    pub fn from_parts(
        num_states: usize,
        num_actions: usize,
        latent_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != num_states * num_actions * latent_dim || biases.len() != num_states * num_actions {
            return Err(BpdError::ShapeMismatch("latent model parameter lengths".into()));
        }
        let mut params = weights;
        params.extend(biases);
        Ok(LatentPolicyModel {
            num_states,
            num_actions,
            latent_dim,
            params,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn num_weights(&self) -> usize {
        self.num_states * self.num_actions * self.latent_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.num_weights()]
    }

    pub fn biases(&self) -> &[f64] {
        &self.params[self.num_weights()..]
    }

    /// `W[s][a][k]`.
    pub fn weight(&self, s: usize, a: usize, k: usize) -> f64 {
        self.params[(s * self.num_actions + a) * self.latent_dim + k]
    }

    pub fn bias(&self, s: usize, a: usize) -> f64 {
        self.params[self.num_weights() + s * self.num_actions + a]
    }

    fn weight_index(&self, s: usize, a: usize, k: usize) -> usize {
        (s * self.num_actions + a) * self.latent_dim + k
    }

    fn bias_index(&self, s: usize, a: usize) -> usize {
        self.num_weights() + s * self.num_actions + a
    }

    /// Logits `W[s] z + b[s]` into `out`.
    pub fn logits_into(&self, s: usize, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.latent_dim);
        let n = self.latent_dim;
        let na = self.num_actions;
        let w = &self.params[s * na * n..(s + 1) * na * n];
        let b = &self.params[self.num_weights() + s * na..self.num_weights() + (s + 1) * na];
        for a in 0..na {
            let row = &w[a * n..(a + 1) * n];
            out[a] = b[a] + row.iter().zip(z).map(|(x, y)| x * y).sum::<f64>();
        }
    }

    /// `f_θ(·|s, z)`.
    pub fn action_probs(&self, s: usize, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        self.logits_into(s, z, &mut out);
        softmax_in_place(&mut out);
        out
    }

    /// Full probability table `f_θ(·|s, z)` for every state, row-major.
    pub fn prob_table(&self, z: &[f64]) -> Vec<f64> {
        let na = self.num_actions;
        let mut out = vec![0.0; self.num_states * na];
        for s in 0..self.num_states {
            let row = &mut out[s * na..(s + 1) * na];
            self.logits_into(s, z, row);
            softmax_in_place(row);
        }
        out
    }

    /// Log-probability table, computed from logits for accuracy.
    pub fn log_prob_table(&self, z: &[f64]) -> Vec<f64> {
        let na = self.num_actions;
        let mut out = vec![0.0; self.num_states * na];
        for s in 0..self.num_states {
            let row = &mut out[s * na..(s + 1) * na];
            self.logits_into(s, z, row);
            let lse = crate::math::logsumexp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        out
    }

    /// The policy selected by latent `z`.
    pub fn policy(&self, z: &[f64]) -> TabularPolicy {
        TabularPolicy::from_rows_unchecked(self.num_states, self.num_actions, self.prob_table(z))
    }

    pub fn sample_latent(&self, rng: &mut Rng) -> Vec<f64> {
        rng::standard_normal_vec(rng, self.latent_dim)
    }

    /// `log f_θ(a | s, z)`.
    pub fn log_prob(&self, s: usize, a: usize, z: &[f64]) -> f64 {
        let mut l = vec![0.0; self.num_actions];
        self.logits_into(s, z, &mut l);
        l[a] - crate::math::logsumexp(&l)
    }

    /// `grad += scale · ∂/∂θ log f_θ(a | s, z)`.
    pub fn accumulate_grad_log_prob(&self, s: usize, a: usize, z: &[f64], scale: f64, grad: &mut [f64]) {
        let probs = self.action_probs(s, z);
        for (b, p) in probs.iter().enumerate() {
            let coeff = scale * (f64::from(u8::from(a == b)) - p);
            self.accumulate_logit_grad(s, b, z, coeff, grad);
        }
    }

    /// `grad += coeff · ∂ logit[s][a] / ∂θ`.
    pub fn accumulate_logit_grad(&self, s: usize, a: usize, z: &[f64], coeff: f64, grad: &mut [f64]) {
        if coeff == 0.0 {
            return;
        }
        let base = self.weight_index(s, a, 0);
        for (k, zk) in z.iter().enumerate() {
            grad[base + k] += coeff * zk;
        }
        grad[self.bias_index(s, a)] += coeff;
    }

    /// Exact `∂J(f_θ(·|·, z))/∂θ` for a fixed latent, by the policy-gradient
    /// theorem chained through the logits.
    pub fn return_grad(&self, mdp: &TabularMdp, z: &[f64]) -> Result<Vec<f64>> {
        let dlogits = crate::mdp::policy_return_grad_logits(mdp, &self.policy(z))?;
        let mut grad = vec![0.0; self.num_params()];
        let na = self.num_actions;
        for (i, c) in dlogits.iter().enumerate() {
            self.accumulate_logit_grad(i / na, i % na, z, *c, &mut grad);
        }
        Ok(grad)
    }

    /// `∂/∂z log f_θ(a | s, z) = W[s]ᵀ (e_a − p)`.
    pub fn grad_log_prob_z(&self, s: usize, a: usize, z: &[f64]) -> Vec<f64> {
        let probs = self.action_probs(s, z);
        let mut g = vec![0.0; self.latent_dim];
        for (b, p) in probs.iter().enumerate() {
            let coeff = f64::from(u8::from(a == b)) - p;
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += coeff * self.weight(s, b, k);
            }
        }
        g
    }

    /// Monte Carlo marginal `E_z[f_θ(·|s, z)]` over the given latents.
    pub fn marginal(&self, s: usize, latents: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = vec![0.0; self.num_actions];
        for z in latents {
            for (a, p) in self.action_probs(s, z).into_iter().enumerate() {
                acc[a] += p;
            }
        }
        acc.iter_mut().for_each(|x| *x /= latents.len() as f64);
        acc
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelCheckpoint::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: ModelCheckpoint = serde_json::from_str(text)?;
        Self::from_parts(ck.num_states, ck.num_actions, ck.latent_dim, ck.weights, ck.biases)
    }
}

/// On-disk layout: dimensions plus flat parameter arrays.
#[derive(Debug, Serialize, Deserialize)]
struct ModelCheckpoint {
    num_states: usize,
    num_actions: usize,
    latent_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl From<&LatentPolicyModel> for ModelCheckpoint {
    fn from(m: &LatentPolicyModel) -> Self {
        ModelCheckpoint {
            num_states: m.num_states,
            num_actions: m.num_actions,
            latent_dim: m.latent_dim,
            weights: m.weights().to_vec(),
            biases: m.biases().to_vec(),
        }
    }
}

/// Draw `z ~ N(0, I)` and return it with its policy.
pub fn sample_policy(model: &LatentPolicyModel, seed: u64) -> (Vec<f64>, TabularPolicy) {
    let mut rng = rng::stream(seed, "sample_policy", 0);
    let z = model.sample_latent(&mut rng);
    let p = model.policy(&z);
    (z, p)
}
