//! Discriminator between the policy model and the base measure.
//!
//! Trained with the logistic objective
//! `E_q[log(1 + e^{−d})] + E_base[log(1 + e^{d})]`, its optimum is the log
//! density ratio `log q/p_base`, so `E_q[d]` estimates `KL(q ‖ p_base)`.
//!
//! The scorer is a one-hidden-layer tanh network with a linear skip path:
//! `d(x) = vᵀ tanh(U x + c) + wᵀ x + e`. In full-table mode `x` holds the
//! (floored, scaled) log-probabilities of every state's action distribution,
//! so log-ratios between product-Dirichlet densities are linear in `x`. In
//! window mode `x` is the normalized count of `(s, a)` pairs in the first
//! `k` steps of a rollout.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BpdError, Result};
use crate::math::{self, sigmoid, softplus};
use crate::mdp::Step;
use crate::optim::Adam;
use crate::par;
use crate::rng::{self, Rng};

use super::model::LatentPolicyModel;

/// Log-probabilities below this are clamped before entering the network.
pub const LOG_FLOOR: f64 = -18.420_680_743_952_367; // ln 1e-8
/// Divisor applied to clamped log-probabilities.
pub const FEATURE_SCALE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    FullTable,
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub representation: Representation,
    pub window: usize,
    pub hidden: usize,
    pub lr: f64,
    /// Adam first-moment coefficient.
    pub momentum: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            representation: Representation::FullTable,
            window: 10,
            hidden: 32,
            lr: 1e-3,
            momentum: 0.5,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(BpdError::config("disc.hidden", "must be positive"));
        }
        if self.representation == Representation::Window && self.window == 0 {
            return Err(BpdError::config("disc.window", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(BpdError::config("disc.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(BpdError::config("disc.momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorModel {
    pub representation: Representation,
    pub window: usize,
    input_dim: usize,
    hidden: usize,
    /// `U` (hidden × input), `c`, `v`, `w`, `e`.
    params: Vec<f64>,
}

impl DiscriminatorModel {
    /// Zero output layer (so `d ≡ 0`) with random hidden weights.
    pub fn new(num_states: usize, num_actions: usize, cfg: &DiscriminatorConfig, rng: &mut Rng) -> Self {
        let input_dim = num_states * num_actions;
        let hidden = cfg.hidden;
        let mut params = vec![0.0; hidden * input_dim + 2 * hidden + input_dim + 1];
        let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("finite");
        for p in &mut params[..hidden * input_dim] {
            *p = normal.sample(rng);
        }
        DiscriminatorModel {
            representation: cfg.representation,
            window: cfg.window,
            input_dim,
            hidden,
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let u = self.hidden * self.input_dim;
        let c = u;
        let v = c + self.hidden;
        let w = v + self.hidden;
        let e = w + self.input_dim;
        (c, v, w, e)
    }

    fn hidden_act(&self, x: &[f64]) -> Vec<f64> {
        let (c_off, ..) = self.offsets();
        (0..self.hidden)
            .map(|j| {
                let row = &self.params[j * self.input_dim..(j + 1) * self.input_dim];
                let pre = self.params[c_off + j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                pre.tanh()
            })
            .collect()
    }

    fn output(&self, x: &[f64], h: &[f64]) -> f64 {
        let (_, v_off, w_off, e_off) = self.offsets();
        let hv: f64 = h.iter().zip(&self.params[v_off..v_off + self.hidden]).map(|(a, b)| a * b).sum();
        let xw: f64 = x.iter().zip(&self.params[w_off..w_off + self.input_dim]).map(|(a, b)| a * b).sum();
        hv + xw + self.params[e_off]
    }

    /// Score `d(x)`.
    pub fn score(&self, x: &[f64]) -> f64 {
        let h = self.hidden_act(x);
        self.output(x, &h)
    }

    /// `grad += scale · ∂d(x)/∂params`.
    pub fn accumulate_param_grad(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        let h = self.hidden_act(x);
        let (c_off, v_off, w_off, e_off) = self.offsets();
        for j in 0..self.hidden {
            grad[v_off + j] += scale * h[j];
            let back = scale * self.params[v_off + j] * (1.0 - h[j] * h[j]);
            if back != 0.0 {
                grad[c_off + j] += back;
                let row = &mut grad[j * self.input_dim..(j + 1) * self.input_dim];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += back * xi;
                }
            }
        }
        for (i, xi) in x.iter().enumerate() {
            grad[w_off + i] += scale * xi;
        }
        grad[e_off] += scale;
    }

    /// `∂d/∂x`.
    pub fn input_grad(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden_act(x);
        let (_, v_off, w_off, _) = self.offsets();
        let mut g = self.params[w_off..w_off + self.input_dim].to_vec();
        for j in 0..self.hidden {
            let back = self.params[v_off + j] * (1.0 - h[j] * h[j]);
            if back != 0.0 {
                let row = &self.params[j * self.input_dim..(j + 1) * self.input_dim];
                for (gi, u) in g.iter_mut().zip(row) {
                    *gi += back * u;
                }
            }
        }
        g
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Full-table features from a row-major log-probability table.
pub fn table_features(log_table: &[f64]) -> Vec<f64> {
    log_table.iter().map(|lp| lp.max(LOG_FLOOR) / FEATURE_SCALE).collect()
}

/// `∂x_i/∂ log π_i` for [`table_features`].
pub fn table_feature_jacobian(log_table: &[f64]) -> Vec<f64> {
    log_table
        .iter()
        .map(|lp| if *lp > LOG_FLOOR { 1.0 / FEATURE_SCALE } else { 0.0 })
        .collect()
}

/// Window features: normalized `(s, a)` counts over the first `k` steps.
pub fn window_features(steps: &[Step], k: usize, num_states: usize, num_actions: usize) -> Vec<f64> {
    let mut x = vec![0.0; num_states * num_actions];
    let used = &steps[..steps.len().min(k)];
    for st in used {
        x[st.state * num_actions + st.action] += 1.0 / k as f64;
    }
    x
}

/// Discriminator loss on the two sample sets (means of each term, summed).
pub fn discriminator_loss(disc: &DiscriminatorModel, q_features: &[Vec<f64>], base_features: &[Vec<f64>]) -> f64 {
    let lq: Vec<f64> = par::map_slice(q_features, |x| softplus(-disc.score(x)));
    let lb: Vec<f64> = par::map_slice(base_features, |x| softplus(disc.score(x)));
    math::mean(&lq) + math::mean(&lb)
}

/// One Adam step on the logistic objective. Returns the loss before the step.
pub fn discriminator_update(
    disc: &mut DiscriminatorModel,
    q_features: &[Vec<f64>],
    base_features: &[Vec<f64>],
    opt: &mut Adam,
) -> Result<f64> {
    if q_features.is_empty() || base_features.is_empty() {
        return Err(BpdError::Empty("discriminator batch".into()));
    }
    let np = disc.num_params();
    let d_ref = &*disc;
    let nq = q_features.len() as f64;
    let nb = base_features.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = par::map_range(q_features.len() + base_features.len(), |i| {
        let mut g = vec![0.0; np];
        let (x, from_q) = if i < q_features.len() {
            (&q_features[i], true)
        } else {
            (&base_features[i - q_features.len()], false)
        };
        let d = d_ref.score(x);
        let (loss, dl_dd) = if from_q {
            (softplus(-d) / nq, -sigmoid(-d) / nq)
        } else {
            (softplus(d) / nb, sigmoid(d) / nb)
        };
        d_ref.accumulate_param_grad(x, dl_dd, &mut g);
        (loss, g)
    });
    let loss: f64 = parts.iter().map(|p| p.0).sum();
    let mut grad = vec![0.0; np];
    for (_, g) in &parts {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        let bad = grad.iter().filter(|g| !g.is_finite()).count();
        return Err(BpdError::Numerical(format!(
            "discriminator gradient not finite: loss {loss}, {bad} bad entries of {np}, \
             param norm {:.3e}",
            math::l2_norm(disc.params())
        )));
    }
    opt.step(disc.params_mut(), &grad);
    Ok(loss)
}

/// Monte Carlo KL estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KlEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// `E[d(x)]` over the given features.
pub fn kl_estimate_from(disc: &DiscriminatorModel, features: &[Vec<f64>]) -> KlEstimate {
    let scores = par::map_slice(features, |x| disc.score(x));
    KlEstimate {
        mean: math::mean(&scores),
        std_err: math::std_dev(&scores) / (scores.len() as f64).sqrt(),
    }
}

/// Estimate `KL(q_θ ‖ p_base)` as the mean full-table score over
/// `num_samples` policies from the model.
pub fn kl_estimate(disc: &DiscriminatorModel, model: &LatentPolicyModel, num_samples: usize, seed: u64) -> KlEstimate {
    let feats = par::map_range(num_samples, |i| {
        let mut rng = rng::stream(seed, "kl_estimate", i as u64);
        let z = model.sample_latent(&mut rng);
        table_features(&model.log_prob_table(&z))
    });
    kl_estimate_from(disc, &feats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_disc(seed: u64) -> DiscriminatorModel {
        let mut rng = rng::stream(seed, "disc", 0);
        let mut d = DiscriminatorModel::new(2, 3, &DiscriminatorConfig::default(), &mut rng);
        let normal = Normal::new(0.0, 0.5).unwrap();
        for p in d.params_mut() {
            *p = normal.sample(&mut rng);
        }
        d
    }

    #[test]
    fn zero_discriminator_loss_is_two_ln2() {
        let mut rng = rng::stream(0, "disc", 0);
        let d = DiscriminatorModel::new(2, 3, &DiscriminatorConfig::default(), &mut rng);
        let q = vec![vec![0.1; 6]; 4];
        let b = vec![vec![-0.3; 6]; 5];
        assert!((discriminator_loss(&d, &q, &b) - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = small_disc(1);
        let x = vec![-0.2, -1.0, -0.05, -2.0, -0.4, -0.7];
        let mut g = vec![0.0; d.num_params()];
        d.accumulate_param_grad(&x, 1.0, &mut g);
        let h = 1e-6;
        for i in 0..d.num_params() {
            let mut dp = d.clone();
            dp.params_mut()[i] += h;
            let mut dm = d.clone();
            dm.params_mut()[i] -= h;
            let fd = (dp.score(&x) - dm.score(&x)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "param {i}");
        }
        let gx = d.input_grad(&x);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (d.score(&xp) - d.score(&xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn separates_point_masses_monotonically() {
        let mut rng = rng::stream(2, "disc", 0);
        let mut d = DiscriminatorModel::new(2, 2, &DiscriminatorConfig::default(), &mut rng);
        let q = vec![table_features(&[0.9f64.ln(), 0.1f64.ln(), 0.5f64.ln(), 0.5f64.ln()]); 16];
        let b = vec![table_features(&[0.2f64.ln(), 0.8f64.ln(), 0.7f64.ln(), 0.3f64.ln()]); 16];
        let mut opt = Adam::new(d.num_params(), 1e-2, 0.5);
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let loss = discriminator_update(&mut d, &q, &b, &mut opt).unwrap();
            assert!(loss <= prev + 1e-12, "loss went up: {prev} -> {loss}");
            prev = loss;
        }
        assert!(prev < 0.5);
    }

    #[test]
    fn empty_batch_rejected() {
        let mut d = small_disc(3);
        let mut opt = Adam::new(d.num_params(), 1e-3, 0.5);
        assert!(discriminator_update(&mut d, &[], &[vec![0.0; 6]], &mut opt).is_err());
    }

    #[test]
    fn window_counts() {
        let steps = [Step { state: 0, action: 1 }, Step { state: 0, action: 1 }, Step { state: 1, action: 0 }];
        let x = window_features(&steps, 2, 2, 2);
        assert_eq!(x, vec![0.0, 1.0, 0.0, 0.0]);
    }
}
