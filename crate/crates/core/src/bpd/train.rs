//! Fitting the latent policy model to the Boltzmann policy distribution.
//!
//! The model maximizes `E_{π~q}[β J(π) − d(π)]` while the discriminator `d`
//! is trained to separate model policies from base-measure policies. The
//! return term uses a likelihood-ratio policy gradient over rollouts; the
//! discriminator term is differentiated through the policy table in
//! full-table mode and enters as an episode-level bonus in window mode.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{BpdError, Result};
use crate::math;
use crate::mdp::{policy_return, rollout_policy, TabularMdp, Trajectory};
use crate::optim::Adam;
use crate::par;
use crate::rng::{self, Rng};

use super::base::{BaseMeasureConfig, ProductDirichlet};
use super::disc::{
    discriminator_update, kl_estimate_from, table_feature_jacobian, table_features, window_features,
    DiscriminatorConfig, DiscriminatorModel, Representation,
};
use super::model::LatentPolicyModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PgVariant {
    ReinforceBaseline,
    ClippedSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub beta: f64,
    pub latent_dim: usize,
    pub iterations: usize,
    /// Policies sampled per iteration (M).
    pub policies_per_batch: usize,
    pub episodes_per_policy: usize,
    pub horizon: usize,
    pub variant: PgVariant,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub grad_clip: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// Surrogate epochs per batch (clipped-surrogate only).
    pub sgd_epochs: usize,
    /// Discriminator updates per policy update.
    pub disc_steps: usize,
    pub disc_batch: usize,
    /// Adam first-moment coefficient of the policy optimizer.
    pub momentum: f64,
    pub disc: DiscriminatorConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 10.0,
            latent_dim: 2,
            iterations: 500,
            policies_per_batch: 16,
            episodes_per_policy: 2,
            horizon: 64,
            variant: PgVariant::ReinforceBaseline,
            policy_lr: 0.02,
            value_lr: 0.05,
            grad_clip: 10.0,
            gae_lambda: 0.98,
            clip_eps: 0.05,
            sgd_epochs: 8,
            disc_steps: 2,
            disc_batch: 64,
            momentum: 0.5,
            disc: DiscriminatorConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(BpdError::config("train.beta", "must be non-negative and finite"));
        }
        if self.latent_dim == 0 {
            return Err(BpdError::config("train.latent_dim", "must be positive"));
        }
        if self.policies_per_batch < 2 {
            return Err(BpdError::config("train.policies_per_batch", "must be at least 2"));
        }
        for (name, v) in [
            ("train.episodes_per_policy", self.episodes_per_policy),
            ("train.horizon", self.horizon),
            ("train.disc_batch", self.disc_batch),
        ] {
            if v == 0 {
                return Err(BpdError::config(name, "must be positive"));
            }
        }
        for (name, v) in [
            ("train.policy_lr", self.policy_lr),
            ("train.value_lr", self.value_lr),
            ("train.grad_clip", self.grad_clip),
            ("train.clip_eps", self.clip_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BpdError::config(name, "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(BpdError::config("train.gae_lambda", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(BpdError::config("train.momentum", "must lie in [0, 1)"));
        }
        if self.variant == PgVariant::ClippedSurrogate && self.sgd_epochs == 0 {
            return Err(BpdError::config("train.sgd_epochs", "must be positive"));
        }
        self.disc.validate()
    }
}

/// Linear-in-latent baseline `V(s, z) = c[s] + v[s]·z` (standard discounting).
#[derive(Debug, Clone)]
struct ValueModel {
    latent_dim: usize,
    params: Vec<f64>,
}

impl ValueModel {
    fn new(num_states: usize, latent_dim: usize) -> Self {
        ValueModel {
            latent_dim,
            params: vec![0.0; num_states * (latent_dim + 1)],
        }
    }

    fn value(&self, s: usize, z: &[f64]) -> f64 {
        let off = s * (self.latent_dim + 1);
        self.params[off] + z.iter().zip(&self.params[off + 1..off + 1 + self.latent_dim]).map(|(a, b)| a * b).sum::<f64>()
    }

    fn accumulate_grad(&self, s: usize, z: &[f64], coeff: f64, grad: &mut [f64]) {
        let off = s * (self.latent_dim + 1);
        grad[off] += coeff;
        for (k, zk) in z.iter().enumerate() {
            grad[off + 1 + k] += coeff * zk;
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iter: usize,
    #[serde(rename = "mean_J")]
    pub mean_j: f64,
    pub kl_estimate: f64,
    pub disc_loss: f64,
}

pub fn write_train_log_csv<W: Write>(w: W, log: &[TrainLogRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in log {
        wr.serialize(r).map_err(|e| BpdError::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}

fn log_to_csv(log: &[TrainLogRow]) -> String {
    let mut buf = Vec::new();
    let _ = write_train_log_csv(&mut buf, log);
    String::from_utf8(buf).unwrap_or_default()
}

/// Trained model, its discriminator and the per-iteration log.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: LatentPolicyModel,
    pub disc: DiscriminatorModel,
    pub log: Vec<TrainLogRow>,
}

/// Rollouts for one sampled policy.
struct PolicyBatch {
    z: Vec<f64>,
    episodes: Vec<Trajectory>,
    /// Per-episode, per-step return-to-go `Σ_k γ^k r_{t+k}`.
    returns_to_go: Vec<Vec<f64>>,
    /// Episode-level bonus `−d(window)`; zero in full-table mode.
    bonus: Vec<f64>,
}

struct Trainer<'a> {
    mdp: &'a TabularMdp,
    cfg: &'a TrainConfig,
    base: ProductDirichlet,
    model: LatentPolicyModel,
    value: ValueModel,
    disc: DiscriminatorModel,
    policy_opt: Adam,
    value_opt: Adam,
    disc_opt: Adam,
}

impl<'a> Trainer<'a> {
    fn collect(&self, iter: usize) -> Vec<PolicyBatch> {
        let cfg = self.cfg;
        let model = &self.model;
        let disc = &self.disc;
        let mdp = self.mdp;
        let g = mdp.discount();
        par::map_range(cfg.policies_per_batch, |i| {
            let idx = (iter * cfg.policies_per_batch + i) as u64;
            let mut rng = rng::stream(cfg.seed, "bpd.rollout", idx);
            let z = model.sample_latent(&mut rng);
            let policy = model.policy(&z);
            let mut episodes = Vec::with_capacity(cfg.episodes_per_policy);
            let mut returns_to_go = Vec::with_capacity(cfg.episodes_per_policy);
            let mut bonus = Vec::with_capacity(cfg.episodes_per_policy);
            for _ in 0..cfg.episodes_per_policy {
                let ep = rollout_policy(mdp, &policy, cfg.horizon, &mut rng);
                let mut rtg = vec![0.0; ep.len()];
                let mut acc = 0.0;
                for t in (0..ep.len()).rev() {
                    let st = ep.steps[t];
                    acc = mdp.reward(st.state, st.action) + g * acc;
                    rtg[t] = acc;
                }
                let b = match disc.representation {
                    Representation::FullTable => 0.0,
                    Representation::Window => {
                        let x = window_features(&ep.steps, disc.window, mdp.num_states(), mdp.num_actions());
                        -disc.score(&x)
                    }
                };
                episodes.push(ep);
                returns_to_go.push(rtg);
                bonus.push(b);
            }
            PolicyBatch {
                z,
                episodes,
                returns_to_go,
                bonus,
            }
        })
    }

    /// Per-step policy-gradient coefficients, aligned with `batch[i].episodes[e].steps`.
    fn advantages(&self, batch: &[PolicyBatch]) -> Vec<Vec<Vec<f64>>> {
        let cfg = self.cfg;
        let g = self.mdp.discount();
        let n_eps = (batch.len() * cfg.episodes_per_policy) as f64;
        let mean_bonus = batch.iter().flat_map(|b| b.bonus.iter()).sum::<f64>() / n_eps;
        batch
            .iter()
            .map(|pb| {
                pb.episodes
                    .iter()
                    .enumerate()
                    .map(|(e, ep)| {
                        let values: Vec<f64> = ep.steps.iter().map(|st| self.value.value(st.state, &pb.z)).collect();
                        let raw: Vec<f64> = match cfg.variant {
                            PgVariant::ReinforceBaseline => {
                                (0..ep.len()).map(|t| pb.returns_to_go[e][t] - values[t]).collect()
                            }
                            PgVariant::ClippedSurrogate => {
                                let mut adv = vec![0.0; ep.len()];
                                let mut acc = 0.0;
                                for t in (0..ep.len()).rev() {
                                    let st = ep.steps[t];
                                    let next_v = if t + 1 < ep.len() { values[t + 1] } else { 0.0 };
                                    let delta = self.mdp.reward(st.state, st.action) + g * next_v - values[t];
                                    acc = delta + g * cfg.gae_lambda * acc;
                                    adv[t] = acc;
                                }
                                adv
                            }
                        };
                        // J weights the reward of step t (1-based) by γ^t
                        let mut w = g;
                        raw.iter()
                            .enumerate()
                            .map(|(t, a)| {
                                let mut c = cfg.beta * w * a;
                                w *= g;
                                if self.disc.representation == Representation::Window && t < self.disc.window {
                                    c += pb.bonus[e] - mean_bonus;
                                }
                                c
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Ascent direction of `−E[d(π)]` by differentiating through the policy table.
    fn pathwise_disc_grad(&self, latents: &[&[f64]]) -> Vec<f64> {
        let np = self.model.num_params();
        if self.disc.representation != Representation::FullTable {
            return vec![0.0; np];
        }
        let model = &self.model;
        let disc = &self.disc;
        let na = model.num_actions();
        let m = latents.len() as f64;
        let parts = par::map_slice(latents, |z| {
            let mut grad = vec![0.0; np];
            let lt = model.log_prob_table(z);
            let x = table_features(&lt);
            let gx = disc.input_grad(&x);
            let jac = table_feature_jacobian(&lt);
            for s in 0..model.num_states() {
                let g_lp: Vec<f64> = (0..na).map(|a| gx[s * na + a] * jac[s * na + a]).collect();
                let total: f64 = g_lp.iter().sum();
                for b in 0..na {
                    let p = lt[s * na + b].exp();
                    let g_logit = g_lp[b] - p * total;
                    model.accumulate_logit_grad(s, b, z, -g_logit / m, &mut grad);
                }
            }
            grad
        });
        par::sum_vecs(&parts, np)
    }

    fn policy_step(&mut self, batch: &[PolicyBatch], coeffs: &[Vec<Vec<f64>>]) {
        let np = self.model.num_params();
        let n_eps = (batch.len() * self.cfg.episodes_per_policy) as f64;
        let latents: Vec<&[f64]> = batch.iter().map(|b| b.z.as_slice()).collect();
        let epochs = match self.cfg.variant {
            PgVariant::ReinforceBaseline => 1,
            PgVariant::ClippedSurrogate => self.cfg.sgd_epochs,
        };
        // behaviour log-probs for the ratio
        let old_lp: Vec<Vec<Vec<f64>>> = batch
            .iter()
            .map(|pb| {
                pb.episodes
                    .iter()
                    .map(|ep| ep.steps.iter().map(|st| self.model.log_prob(st.state, st.action, &pb.z)).collect())
                    .collect()
            })
            .collect();
        for _ in 0..epochs {
            let model = &self.model;
            let variant = self.cfg.variant;
            let eps = self.cfg.clip_eps;
            let parts = par::map_range(batch.len(), |i| {
                let pb = &batch[i];
                let mut grad = vec![0.0; np];
                for (e, ep) in pb.episodes.iter().enumerate() {
                    for (t, st) in ep.steps.iter().enumerate() {
                        let c = coeffs[i][e][t];
                        if c == 0.0 {
                            continue;
                        }
                        let scale = match variant {
                            PgVariant::ReinforceBaseline => c,
                            PgVariant::ClippedSurrogate => {
                                let ratio = (model.log_prob(st.state, st.action, &pb.z) - old_lp[i][e][t]).exp();
                                let clipped = (c > 0.0 && ratio > 1.0 + eps) || (c < 0.0 && ratio < 1.0 - eps);
                                if clipped {
                                    0.0
                                } else {
                                    c * ratio
                                }
                            }
                        };
                        if scale != 0.0 {
                            model.accumulate_grad_log_prob(st.state, st.action, &pb.z, scale / n_eps, &mut grad);
                        }
                    }
                }
                grad
            });
            let mut ascent = par::sum_vecs(&parts, np);
            let gd = self.pathwise_disc_grad(&latents);
            for (a, b) in ascent.iter_mut().zip(&gd) {
                *a += b;
            }
            math::clip_norm(&mut ascent, self.cfg.grad_clip);
            let descent: Vec<f64> = ascent.iter().map(|x| -x).collect();
            self.policy_opt.step(self.model.params_mut(), &descent);
        }
    }

    fn value_step(&mut self, batch: &[PolicyBatch]) {
        let mut grad = vec![0.0; self.value.params.len()];
        let mut n = 0.0;
        for pb in batch {
            for (e, ep) in pb.episodes.iter().enumerate() {
                for (t, st) in ep.steps.iter().enumerate() {
                    let err = self.value.value(st.state, &pb.z) - pb.returns_to_go[e][t];
                    self.value.accumulate_grad(st.state, &pb.z, err, &mut grad);
                    n += 1.0;
                }
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        self.value_opt.step(&mut self.value.params, &grad);
    }

    fn base_features(&self, rng: &mut Rng) -> Vec<f64> {
        let lt = self.base.sample_log_table(rng);
        match self.disc.representation {
            Representation::FullTable => table_features(&lt),
            Representation::Window => {
                let pol = crate::mdp::TabularPolicy::from_rows_unchecked(
                    self.mdp.num_states(),
                    self.mdp.num_actions(),
                    lt.into_iter().map(f64::exp).collect(),
                );
                let ep = rollout_policy(self.mdp, &pol, self.disc.window, rng);
                window_features(&ep.steps, self.disc.window, self.mdp.num_states(), self.mdp.num_actions())
            }
        }
    }

    fn model_features(&self, rng: &mut Rng) -> Vec<f64> {
        let z = self.model.sample_latent(rng);
        match self.disc.representation {
            Representation::FullTable => table_features(&self.model.log_prob_table(&z)),
            Representation::Window => {
                let pol = self.model.policy(&z);
                let ep = rollout_policy(self.mdp, &pol, self.disc.window, rng);
                window_features(&ep.steps, self.disc.window, self.mdp.num_states(), self.mdp.num_actions())
            }
        }
    }

    /// Discriminator updates; returns the last pre-step loss and the KL
    /// estimate on the last model batch.
    fn disc_steps(&mut self, iter: usize) -> Result<(f64, f64)> {
        let mut last = (f64::NAN, f64::NAN);
        for j in 0..self.cfg.disc_steps {
            let idx = (iter * self.cfg.disc_steps + j) as u64;
            let this = &*self;
            let q: Vec<Vec<f64>> = par::map_range(self.cfg.disc_batch, |k| {
                let mut rng = rng::stream(this.cfg.seed ^ idx, "bpd.disc.q", k as u64);
                this.model_features(&mut rng)
            });
            let b: Vec<Vec<f64>> = par::map_range(self.cfg.disc_batch, |k| {
                let mut rng = rng::stream(this.cfg.seed ^ idx, "bpd.disc.base", k as u64);
                this.base_features(&mut rng)
            });
            let kl = kl_estimate_from(&self.disc, &q).mean;
            let loss = discriminator_update(&mut self.disc, &q, &b, &mut self.disc_opt)?;
            last = (loss, kl);
        }
        Ok(last)
    }
}

/// Fit a latent policy model to the BPD of `mdp` under base measure `base`.
pub fn train_bpd(mdp: &TabularMdp, base: &BaseMeasureConfig, cfg: &TrainConfig) -> Result<TrainResult> {
    base.validate()?;
    cfg.validate()?;
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let mut init_rng = rng::stream(cfg.seed, "bpd.init", 0);
    let model = LatentPolicyModel::init(ns, na, cfg.latent_dim, &mut init_rng);
    let disc = DiscriminatorModel::new(ns, na, &cfg.disc, &mut init_rng);
    let mut trainer = Trainer {
        mdp,
        cfg,
        base: ProductDirichlet::symmetric(ns, na, base.alpha),
        policy_opt: Adam::new(model.num_params(), cfg.policy_lr, cfg.momentum),
        value_opt: Adam::new(ns * (cfg.latent_dim + 1), cfg.value_lr, 0.9),
        disc_opt: Adam::new(disc.num_params(), cfg.disc.lr, cfg.disc.momentum),
        value: ValueModel::new(ns, cfg.latent_dim),
        model,
        disc,
    };
    let mut log = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let (disc_loss, kl) = if cfg.disc_steps > 0 {
            trainer.disc_steps(iter)?
        } else {
            (f64::NAN, 0.0)
        };
        let batch = trainer.collect(iter);
        let coeffs = trainer.advantages(&batch);
        trainer.policy_step(&batch, &coeffs);
        trainer.value_step(&batch);

        let js: Vec<f64> = par::map_slice(&batch, |pb| policy_return(mdp, &trainer.model.policy(&pb.z)).unwrap_or(f64::NAN));
        let mean_j = math::mean(&js);
        log.push(TrainLogRow {
            iter,
            mean_j,
            kl_estimate: kl,
            disc_loss,
        });
        let objective = cfg.beta * mean_j - kl;
        let bad_params = trainer.model.params().iter().any(|p| !p.is_finite());
        if !objective.is_finite() && cfg.disc_steps > 0 || bad_params || kl > 1e3 {
            let reason = if kl > 1e3 {
                format!("KL estimate {kl:.3e} exceeds 1e3")
            } else {
                format!("objective {objective} (mean J {mean_j}, KL {kl})")
            };
            return Err(BpdError::Diverged {
                iteration: iter,
                reason,
                log_csv: log_to_csv(&log),
            });
        }
    }
    Ok(TrainResult {
        model: trainer.model,
        disc: trainer.disc,
        log,
    })
}

/// Per-state marginal `E_z[f_θ(·|s, z)]` over `num_samples` latents.
pub fn model_marginals(model: &LatentPolicyModel, num_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let latents: Vec<Vec<f64>> = (0..num_samples)
        .map(|i| model.sample_latent(&mut rng::stream(seed, "marginals", i as u64)))
        .collect();
    (0..model.num_states()).map(|s| model.marginal(s, &latents)).collect()
}
