//! Ground-truth BPD computations on tiny MDPs.
//!
//! Two estimators of `E_{π~p_BPD}[π(·|s)]` (optionally conditioned on an
//! observed history):
//! - grid quadrature over the product of per-state simplices, using the
//!   centroids of an equal-volume barycentric (Kuhn) subdivision;
//! - self-normalized importance sampling with the Dirichlet base as proposal.
//!
//! Also provides a dense latent-grid Bayes posterior for latent policy models
//! and a quadrature check of the entropy/KL identity on one-state models.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bpd::base::{dirichlet_log_density, ProductDirichlet};
use crate::bpd::model::LatentPolicyModel;
use crate::error::{BpdError, Result};
use crate::math::sigmoid;
use crate::mdp::{TabularMdp, Trajectory};
use crate::par;
use crate::rng;

/// Quadrature is refused above this many free simplex coordinates.
pub const MAX_QUADRATURE_DIMS: usize = 4;
/// Effective sample sizes below this are reported as a warning.
pub const ESS_WARNING: f64 = 100.0;
/// Fixed work split so reductions do not depend on the thread count.
const CHUNKS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    GridQuadrature,
    ImportanceSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub method: OracleMethod,
    /// Subdivisions per simplex edge (quadrature).
    pub resolution: usize,
    /// Proposal draws (importance sampling).
    pub samples: usize,
    /// Upper bound on the number of product-grid points (quadrature).
    pub max_points: u64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            method: OracleMethod::GridQuadrature,
            resolution: 200,
            samples: 1_000_000,
            max_points: 400_000_000,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn quadrature(resolution: usize) -> Self {
        OracleConfig {
            method: OracleMethod::GridQuadrature,
            resolution,
            ..Default::default()
        }
    }

    pub fn importance(samples: usize, seed: u64) -> Self {
        OracleConfig {
            method: OracleMethod::ImportanceSampling,
            samples,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            OracleMethod::GridQuadrature if self.resolution < 10 => {
                Err(BpdError::config("oracle.resolution", "must be at least 10"))
            }
            OracleMethod::ImportanceSampling if self.samples < 1000 => {
                Err(BpdError::config("oracle.samples", "must be at least 1000"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub beta: f64,
    pub alpha: f64,
    pub resolution: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub history_len: usize,
}

/// Oracle answer; serialized as `{method, params, marginals, ess, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub method: OracleMethod,
    pub params: OracleParams,
    /// `marginals[s][a]`.
    pub marginals: Vec<Vec<f64>>,
    /// Effective sample size of the normalized weights.
    pub ess: f64,
    pub num_points: u64,
    pub warnings: Vec<String>,
}

impl OracleResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Centroids of the equal-volume Kuhn subdivision of the probability simplex
/// over `num_actions` outcomes, `resolution` cells per edge. Returns a flat
/// row-major table of `resolution^(A−1)` points, each carrying equal mass.
pub fn simplex_grid(num_actions: usize, resolution: usize) -> Vec<f64> {
    let d = num_actions - 1;
    if d == 0 {
        return vec![1.0];
    }
    let perms = permutations(d);
    let mut out = Vec::new();
    let mut k = vec![0usize; d];
    let mut y = vec![0.0; d];
    loop {
        for perm in &perms {
            // within runs of equal k the fractional parts must increase with the
            // index, i.e. a later index comes first in the ordering
            let mut pos = vec![0usize; d];
            for (j, &i) in perm.iter().enumerate() {
                pos[i] = j;
            }
            if (0..d - 1).any(|i| k[i] == k[i + 1] && pos[i + 1] > pos[i]) {
                continue;
            }
            for i in 0..d {
                let frac = (d - pos[i]) as f64 / (d + 1) as f64;
                y[i] = (k[i] as f64 + frac) / resolution as f64;
            }
            let mut prev = 0.0;
            for &yi in &y {
                out.push(yi - prev);
                prev = yi;
            }
            out.push(1.0 - prev);
        }
        // next non-decreasing k
        let mut i = d;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if k[i] + 1 < resolution {
                k[i] += 1;
                let v = k[i];
                k[i + 1..].iter_mut().for_each(|x| *x = v);
                break;
            }
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// `(s, a)` visit counts of a history.
fn history_counts(mdp: &TabularMdp, history: &Trajectory) -> Result<Vec<f64>> {
    history.check(mdp)?;
    let na = mdp.num_actions();
    let mut counts = vec![0.0; mdp.num_states() * na];
    for st in &history.steps {
        counts[st.state * na + st.action] += 1.0;
    }
    Ok(counts)
}

/// `J(π)` for a row-major probability table, reusing scratch buffers.
struct ReturnSolver {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ReturnSolver {
    fn new(n: usize) -> Self {
        ReturnSolver {
            n,
            a: vec![0.0; n * n],
            b: vec![0.0; n],
        }
    }

    fn policy_return(&mut self, mdp: &TabularMdp, probs: &[f64]) -> f64 {
        let n = self.n;
        let na = mdp.num_actions();
        let g = mdp.discount();
        if n == 1 {
            let r: f64 = (0..na).map(|a| probs[a] * mdp.reward(0, a)).sum();
            return g * r / (1.0 - g);
        }
        self.a.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..n {
            self.a[s * n + s] = 1.0;
            let mut r = 0.0;
            for a in 0..na {
                let p = probs[s * na + a];
                r += p * mdp.reward(s, a);
                for (s2, t) in mdp.next_dist(s, a).iter().enumerate() {
                    self.a[s * n + s2] -= g * p * t;
                }
            }
            self.b[s] = r;
        }
        // Gaussian elimination with partial pivoting
        for c in 0..n {
            let piv = (c..n)
                .max_by(|&i, &j| self.a[i * n + c].abs().total_cmp(&self.a[j * n + c].abs()))
                .unwrap_or(c);
            if piv != c {
                for k in 0..n {
                    self.a.swap(c * n + k, piv * n + k);
                }
                self.b.swap(c, piv);
            }
            let d = self.a[c * n + c];
            for r in c + 1..n {
                let f = self.a[r * n + c] / d;
                if f != 0.0 {
                    for k in c..n {
                        self.a[r * n + k] -= f * self.a[c * n + k];
                    }
                    self.b[r] -= f * self.b[c];
                }
            }
        }
        for c in (0..n).rev() {
            let mut acc = self.b[c];
            for k in c + 1..n {
                acc -= self.a[c * n + k] * self.b[k];
            }
            self.b[c] = acc / self.a[c * n + c];
        }
        g * mdp.start_dist().iter().zip(&self.b).map(|(p, v)| p * v).sum::<f64>()
    }
}

/// Running log-space weighted sums: `Σ w_i x_i`, `Σ w_i`, `Σ w_i²`.
#[derive(Clone)]
struct WeightedAcc {
    shift: f64,
    sum_w: f64,
    sum_w2: f64,
    sum_wx: Vec<f64>,
}

impl WeightedAcc {
    fn new(len: usize) -> Self {
        WeightedAcc {
            shift: f64::NEG_INFINITY,
            sum_w: 0.0,
            sum_w2: 0.0,
            sum_wx: vec![0.0; len],
        }
    }

    fn rescale(&mut self, new_shift: f64) {
        if self.shift == f64::NEG_INFINITY {
            self.shift = new_shift;
            return;
        }
        let f = (self.shift - new_shift).exp();
        self.sum_w *= f;
        self.sum_w2 *= f * f;
        self.sum_wx.iter_mut().for_each(|x| *x *= f);
        self.shift = new_shift;
    }

    fn add(&mut self, log_w: f64, x: &[f64]) {
        if log_w == f64::NEG_INFINITY || log_w.is_nan() {
            return;
        }
        if log_w > self.shift {
            self.rescale(log_w);
        }
        let w = (log_w - self.shift).exp();
        self.sum_w += w;
        self.sum_w2 += w * w;
        for (acc, xi) in self.sum_wx.iter_mut().zip(x) {
            *acc += w * xi;
        }
    }

    fn merge(mut self, other: &WeightedAcc) -> WeightedAcc {
        if other.shift == f64::NEG_INFINITY {
            return self;
        }
        let target = self.shift.max(other.shift);
        self.rescale(target);
        let f = (other.shift - target).exp();
        self.sum_w += f * other.sum_w;
        self.sum_w2 += f * f * other.sum_w2;
        for (a, b) in self.sum_wx.iter_mut().zip(&other.sum_wx) {
            *a += f * b;
        }
        self
    }

    fn ess(&self) -> f64 {
        self.sum_w * self.sum_w / self.sum_w2
    }
}

fn check_inputs(beta: f64, alpha: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(BpdError::config("beta", "must be non-negative and finite"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(BpdError::config("alpha", "must be positive"));
    }
    Ok(())
}

fn finish(
    acc: WeightedAcc,
    mdp: &TabularMdp,
    cfg: &OracleConfig,
    beta: f64,
    alpha: f64,
    history_len: usize,
    num_points: u64,
) -> Result<OracleResult> {
    if !(acc.sum_w > 0.0) {
        return Err(BpdError::Numerical(
            "all oracle weights vanish: the history is impossible under the support of the base measure".into(),
        ));
    }
    let na = mdp.num_actions();
    let marginals = (0..mdp.num_states())
        .map(|s| acc.sum_wx[s * na..(s + 1) * na].iter().map(|x| x / acc.sum_w).collect())
        .collect();
    let ess = acc.ess();
    let mut warnings = Vec::new();
    if ess < ESS_WARNING {
        let msg = format!("effective sample size {ess:.1} is below {ESS_WARNING}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let quad = cfg.method == OracleMethod::GridQuadrature;
    Ok(OracleResult {
        method: cfg.method,
        params: OracleParams {
            beta,
            alpha,
            resolution: quad.then_some(cfg.resolution),
            samples: (!quad).then_some(cfg.samples),
            seed: (!quad).then_some(cfg.seed),
            history_len,
        },
        marginals,
        ess,
        num_points,
        warnings,
    })
}

fn quadrature(
    mdp: &TabularMdp,
    beta: f64,
    alpha: f64,
    counts: &[f64],
    cfg: &OracleConfig,
    history_len: usize,
) -> Result<OracleResult> {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let dims = ns * (na - 1);
    if dims > MAX_QUADRATURE_DIMS {
        return Err(BpdError::config(
            "oracle.method",
            format!("quadrature needs |S|·(|A|−1) ≤ {MAX_QUADRATURE_DIMS}, got {dims}; use importance sampling"),
        ));
    }
    let grid = simplex_grid(na, cfg.resolution);
    let per_state = (grid.len() / na) as u64;
    let total = per_state.checked_pow(ns as u32).unwrap_or(u64::MAX);
    if total > cfg.max_points {
        return Err(BpdError::config(
            "oracle.resolution",
            format!("{total} grid points exceed max_points = {}; lower the resolution", cfg.max_points),
        ));
    }
    // per-state log weight of each grid point: Dirichlet density + history likelihood
    let alphas = vec![alpha; na];
    let point_logs: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            grid.chunks(na)
                .map(|p| {
                    let lp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
                    let lik: f64 = (0..na)
                        .filter(|&a| counts[s * na + a] > 0.0)
                        .map(|a| counts[s * na + a] * lp[a])
                        .sum();
                    dirichlet_log_density(&lp, &alphas) + lik
                })
                .collect()
        })
        .collect();
    let chunk = total.div_ceil(CHUNKS as u64);
    let parts = par::map_range(CHUNKS, |c| {
        let mut acc = WeightedAcc::new(ns * na);
        let mut solver = ReturnSolver::new(ns);
        let mut probs = vec![0.0; ns * na];
        let lo = c as u64 * chunk;
        let hi = (lo + chunk).min(total);
        for idx in lo..hi {
            let mut rem = idx;
            let mut lw = 0.0;
            for s in 0..ns {
                let i = (rem % per_state) as usize;
                rem /= per_state;
                probs[s * na..(s + 1) * na].copy_from_slice(&grid[i * na..(i + 1) * na]);
                lw += point_logs[s][i];
            }
            if beta != 0.0 {
                lw += beta * solver.policy_return(mdp, &probs);
            }
            acc.add(lw, &probs);
        }
        acc
    });
    let acc = parts.iter().fold(WeightedAcc::new(ns * na), |a, b| a.merge(b));
    finish(acc, mdp, cfg, beta, alpha, history_len, total)
}

fn importance(
    mdp: &TabularMdp,
    beta: f64,
    alpha: f64,
    counts: &[f64],
    cfg: &OracleConfig,
    history_len: usize,
) -> Result<OracleResult> {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let base = ProductDirichlet::symmetric(ns, na, alpha);
    let chunk = cfg.samples.div_ceil(CHUNKS);
    let parts = par::map_range(CHUNKS, |c| {
        let mut acc = WeightedAcc::new(ns * na);
        let mut solver = ReturnSolver::new(ns);
        let mut rng = rng::stream(cfg.seed, "oracle.importance", c as u64);
        let lo = c * chunk;
        let hi = (lo + chunk).min(cfg.samples);
        for _ in lo..hi {
            let lt = base.sample_log_table(&mut rng);
            let probs: Vec<f64> = lt.iter().map(|x| x.exp()).collect();
            let lik: f64 = counts.iter().zip(&lt).filter(|(n, _)| **n > 0.0).map(|(n, l)| n * l).sum();
            let lw = beta * solver.policy_return(mdp, &probs) + lik;
            acc.add(lw, &probs);
        }
        acc
    });
    let acc = parts.iter().fold(WeightedAcc::new(ns * na), |a, b| a.merge(b));
    finish(acc, mdp, cfg, beta, alpha, history_len, cfg.samples as u64)
}

/// `E_{π~p_BPD}[π(a|s)]` for every state, where `p_BPD ∝ exp(β J(π))·Dir(α)`.
pub fn oracle_marginals(mdp: &TabularMdp, beta: f64, alpha: f64, cfg: &OracleConfig) -> Result<OracleResult> {
    oracle_conditioned(mdp, beta, alpha, &Trajectory::default(), cfg)
}

/// Marginals of the BPD posterior given an observed history, at every state.
pub fn oracle_conditioned(
    mdp: &TabularMdp,
    beta: f64,
    alpha: f64,
    history: &Trajectory,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    check_inputs(beta, alpha)?;
    cfg.validate()?;
    let counts = history_counts(mdp, history)?;
    match cfg.method {
        OracleMethod::GridQuadrature => quadrature(mdp, beta, alpha, &counts, cfg, history.len()),
        OracleMethod::ImportanceSampling => importance(mdp, beta, alpha, &counts, cfg, history.len()),
    }
}

/// Posterior predictive `E[π(·|query_state) | history]` under the BPD.
pub fn oracle_posterior_predictive(
    mdp: &TabularMdp,
    beta: f64,
    alpha: f64,
    history: &Trajectory,
    query_state: usize,
    cfg: &OracleConfig,
) -> Result<Vec<f64>> {
    if query_state >= mdp.num_states() {
        return Err(BpdError::OutOfRange(format!("query state {query_state}")));
    }
    let res = oracle_conditioned(mdp, beta, alpha, history, cfg)?;
    Ok(res.marginals[query_state].clone())
}

/// Exact Bayes predictive of a latent policy model by a dense grid over `z`.
///
/// The latent prior `N(0, I)` is discretized on `points_per_dim` midpoints of
/// `[−radius, radius]` per dimension, weighted by the prior density times the
/// history likelihood. Intended for `latent_dim ≤ 3`.
pub fn latent_grid_predictive(
    model: &LatentPolicyModel,
    history: &Trajectory,
    query_state: usize,
    points_per_dim: usize,
    radius: f64,
) -> Result<Vec<f64>> {
    let n = model.latent_dim();
    if n > 3 {
        return Err(BpdError::config("latent_dim", "dense latent grid supports at most 3 dimensions"));
    }
    if points_per_dim < 2 || !(radius > 0.0) {
        return Err(BpdError::config("points_per_dim", "need at least 2 points and a positive radius"));
    }
    if query_state >= model.num_states() {
        return Err(BpdError::OutOfRange(format!("query state {query_state}")));
    }
    let h = 2.0 * radius / points_per_dim as f64;
    let total = points_per_dim.pow(n as u32);
    let na = model.num_actions();
    let parts = par::map_range(CHUNKS.min(total), |c| {
        let chunk = total.div_ceil(CHUNKS.min(total));
        let mut acc = WeightedAcc::new(na);
        let mut z = vec![0.0; n];
        for idx in c * chunk..((c + 1) * chunk).min(total) {
            let mut rem = idx;
            for zk in z.iter_mut() {
                *zk = -radius + h * ((rem % points_per_dim) as f64 + 0.5);
                rem /= points_per_dim;
            }
            let mut lw = -0.5 * z.iter().map(|x| x * x).sum::<f64>();
            for st in &history.steps {
                lw += model.log_prob(st.state, st.action, &z);
            }
            acc.add(lw, &model.action_probs(query_state, &z));
        }
        acc
    });
    let acc = parts.iter().fold(WeightedAcc::new(na), |a, b| a.merge(b));
    Ok(acc.sum_wx.iter().map(|x| x / acc.sum_w).collect())
}

/// Both sides of `H_μ(q) = ln ∫dμ − KL(q ‖ p_base)` for a one-state,
/// two-action latent model, with `μ(p) = p^{α−1}(1−p)^{α−1}` on `p = π(a₁)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyIdentity {
    /// `−∫ q ln(dq/dμ)`, integrated over the latent.
    pub entropy: f64,
    /// `ln ∫dμ = ln B(α, α)`.
    pub log_mass: f64,
    /// `KL(q ‖ Beta(α, α))`, integrated over the simplex coordinate.
    pub kl: f64,
}

impl EntropyIdentity {
    pub fn gap(&self) -> f64 {
        (self.entropy - (self.log_mass - self.kl)).abs()
    }
}

/// Evaluate both sides of the entropy/KL identity by independent 1-D
/// quadratures: the entropy in latent space via change of variables, the KL
/// in policy space against the Beta density.
pub fn entropy_kl_identity(model: &LatentPolicyModel, alpha: f64, nodes: usize) -> Result<EntropyIdentity> {
    if model.num_states() != 1 || model.num_actions() != 2 {
        return Err(BpdError::ShapeMismatch(
            "entropy identity check needs a one-state, two-action model".into(),
        ));
    }
    if !(alpha > 0.0) || nodes < 100 {
        return Err(BpdError::config("nodes", "need alpha > 0 and at least 100 nodes"));
    }
    // p = sigmoid(w·z + b) depends on z only through a scalar projection u ~ N(b, s²)
    let b = model.bias(0, 0) - model.bias(0, 1);
    let s = (0..model.latent_dim())
        .map(|k| (model.weight(0, 0, k) - model.weight(0, 1, k)).powi(2))
        .sum::<f64>()
        .sqrt();
    if !(s > 0.0) {
        return Err(BpdError::Numerical("degenerate model: q is a point mass".into()));
    }
    let log_mu = |p: f64| (alpha - 1.0) * (p.ln() + (1.0 - p).ln());
    // latent side: H_μ(q) = H(u) + E[ln dp/du] + E[ln μ(p)], with dp/du = p(1−p)
    let radius = 10.0;
    let h = 2.0 * radius / nodes as f64;
    let mut entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s * s).ln();
    let mut mass = 0.0;
    let mut acc = 0.0;
    for i in 0..nodes {
        let e = -radius + h * (i as f64 + 0.5);
        let w = (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt() * h;
        let u = b + s * e;
        let p = sigmoid(u);
        let q1 = sigmoid(-u);
        acc += w * (p.ln() + q1.ln() + log_mu(p));
        mass += w;
    }
    entropy += acc / mass;
    // policy side: density of p under q, KL against Beta(α, α), midpoint rule in logit space
    let log_beta_fn = 2.0 * ln_gamma(alpha) - ln_gamma(2.0 * alpha);
    let lo = b - radius * s;
    let hu = 2.0 * radius * s / nodes as f64;
    let mut kl = 0.0;
    let mut tot = 0.0;
    for i in 0..nodes {
        let u = lo + hu * (i as f64 + 0.5);
        let p = sigmoid(u);
        let q1 = sigmoid(-u);
        let ln_jac = p.ln() + q1.ln();
        let ln_q_u = -0.5 * ((u - b) / s).powi(2) - (s * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let ln_q_p = ln_q_u - ln_jac;
        let ln_beta = log_mu(p) - log_beta_fn;
        let w = ln_q_u.exp() * hu;
        kl += w * (ln_q_p - ln_beta);
        tot += w;
    }
    kl /= tot;
    Ok(EntropyIdentity {
        entropy,
        log_mass: log_beta_fn,
        kl,
    })
}

/// Closed-form bandit marginal for two arms with rewards (1, 0), uniform base:
/// `E[p]` under density `∝ exp(c·p)` on `[0, 1]`, `c = β·γ/(1−γ)`.
pub fn two_arm_uniform_marginal(beta: f64, discount: f64) -> f64 {
    let c = beta * discount / (1.0 - discount);
    if c.abs() < 1e-8 {
        return 0.5;
    }
    // ∫ p e^{cp} / ∫ e^{cp} = 1/(1 − e^{−c}) − 1/c
    1.0 / (1.0 - (-c).exp()) - 1.0 / c
}
