//! Tabular MDPs, policies, trajectories and exact policy evaluation.
//!
//! Returns follow the convention `J(π) = E[Σ_{t≥1} γ^t R(s_t, a_t)]`: the first
//! reward is already discounted once. Value functions (`V`, `Q`) use the usual
//! convention that starts discounting at `γ^0`, so `J = γ · ρᵀV`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BpdError, Result};
use crate::rng::{self, Rng};

const ROW_TOL: f64 = 1e-12;

/// Finite MDP with dense transition tensor `P[s][a][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// Row-major `[s][a][s']`.
    transitions: Vec<f64>,
    /// Row-major `[s][a]`.
    rewards: Vec<f64>,
    discount: f64,
    start_dist: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        discount: f64,
        start_dist: Vec<f64>,
    ) -> Result<Self> {
        let mdp = TabularMdp {
            num_states,
            num_actions,
            transitions,
            rewards,
            discount,
            start_dist,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Check every structural invariant. Also used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.num_states, self.num_actions);
        if s == 0 || a == 0 {
            return Err(BpdError::InvalidMdp("state and action counts must be positive".into()));
        }
        if self.transitions.len() != s * a * s {
            return Err(BpdError::InvalidMdp(format!(
                "transition tensor has {} entries, expected {}",
                self.transitions.len(),
                s * a * s
            )));
        }
        if self.rewards.len() != s * a {
            return Err(BpdError::InvalidMdp(format!(
                "reward table has {} entries, expected {}",
                self.rewards.len(),
                s * a
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(BpdError::InvalidMdp(format!("discount {} outside [0, 1)", self.discount)));
        }
        if self.start_dist.len() != s {
            return Err(BpdError::InvalidMdp("start distribution length mismatch".into()));
        }
        check_distribution(&self.start_dist, ROW_TOL)
            .map_err(|e| BpdError::InvalidMdp(format!("start distribution: {e}")))?;
        for st in 0..s {
            for ac in 0..a {
                check_distribution(self.next_dist(st, ac), ROW_TOL).map_err(|e| {
                    BpdError::InvalidMdp(format!("P[{st}][{ac}]: {e}"))
                })?;
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(BpdError::InvalidMdp("non-finite reward".into()));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// `P[s][a][·]`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        let off = (s * self.num_actions + a) * n;
        &self.transitions[off..off + n]
    }

    /// Copy with every reward multiplied by `c`.
    pub fn with_scaled_rewards(&self, c: f64) -> TabularMdp {
        let mut out = self.clone();
        out.rewards.iter_mut().for_each(|r| *r *= c);
        out
    }

    /// Copy with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<TabularMdp> {
        let mut out = self.clone();
        out.discount = discount;
        out.validate()?;
        Ok(out)
    }

    pub fn sample_start(&self, rng: &mut Rng) -> usize {
        rng::sample_categorical(rng, &self.start_dist)
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut Rng) -> usize {
        rng::sample_categorical(rng, self.next_dist(s, a))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: TabularMdp = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    /// A random MDP with Dirichlet(1) transitions and uniform rewards in [0, 1).
    pub fn random(num_states: usize, num_actions: usize, discount: f64, rng: &mut Rng) -> Result<Self> {
        use rand::Rng as _;
        let mut transitions = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            let row: Vec<f64> = (0..num_states).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
            let total: f64 = row.iter().sum();
            transitions.extend(row.iter().map(|x| x / total));
        }
        let rewards = (0..num_states * num_actions).map(|_| rng.random::<f64>()).collect();
        let mut start = vec![0.0; num_states];
        start[0] = 1.0;
        TabularMdp::new(num_states, num_actions, transitions, rewards, discount, start)
    }
}

fn check_distribution(p: &[f64], tol: f64) -> std::result::Result<(), String> {
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err("negative or non-finite entry".into());
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// Per-state action distributions `π[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub const ROW_TOL: f64 = 1e-9;

    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(BpdError::InvalidPolicy(format!(
                "{} probabilities for {}x{} table",
                probs.len(),
                num_states,
                num_actions
            )));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            check_distribution(row, Self::ROW_TOL)
                .map_err(|e| BpdError::InvalidPolicy(format!("row {s}: {e}")))?;
        }
        Ok(TabularPolicy {
            num_states,
            num_actions,
            probs,
        })
    }

    /// Build from rows without validation; callers guarantee normalized rows.
    pub(crate) fn from_rows_unchecked(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), num_states * num_actions);
        TabularPolicy {
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        TabularPolicy::from_rows_unchecked(num_states, num_actions, vec![p; num_states * num_actions])
    }

    /// Deterministic policy choosing `actions[s]` at every state.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(BpdError::OutOfRange(format!("action {a} at state {s}")));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(TabularPolicy::from_rows_unchecked(actions.len(), num_actions, probs))
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.num_states != mdp.num_states() || self.num_actions != mdp.num_actions() {
            return Err(BpdError::ShapeMismatch(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.num_states,
                self.num_actions,
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

/// One `(state, action)` pair of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
}

/// Time-ordered `(s_1, a_1), …, (s_T, a_T)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>) -> Self {
        Trajectory { steps }
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Self {
        Trajectory {
            steps: pairs.iter().map(|&(state, action)| Step { state, action }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.state)
    }

    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.action)
    }

    /// Check indices against an MDP.
    pub fn check(&self, mdp: &TabularMdp) -> Result<()> {
        for (t, st) in self.steps.iter().enumerate() {
            if st.state >= mdp.num_states() || st.action >= mdp.num_actions() {
                return Err(BpdError::OutOfRange(format!(
                    "step {t}: ({}, {}) outside {}x{}",
                    st.state,
                    st.action,
                    mdp.num_states(),
                    mdp.num_actions()
                )));
            }
        }
        Ok(())
    }

    /// Discounted return `Σ_t γ^t R(s_t, a_t)` with `t` starting at 1.
    pub fn discounted_return(&self, mdp: &TabularMdp) -> f64 {
        let g = mdp.discount();
        let mut w = g;
        let mut total = 0.0;
        for st in &self.steps {
            total += w * mdp.reward(st.state, st.action);
            w *= g;
        }
        total
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StepRecord {
    episode: usize,
    t: usize,
    state: usize,
    action: usize,
}

/// Write trajectories as JSON lines `{episode, t, state, action}`; `t` starts at 1.
pub fn write_trajectories_jsonl<W: Write>(mut w: W, trajectories: &[Trajectory]) -> Result<()> {
    for (episode, traj) in trajectories.iter().enumerate() {
        for (i, st) in traj.steps.iter().enumerate() {
            let rec = StepRecord {
                episode,
                t: i + 1,
                state: st.state,
                action: st.action,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Inverse of [`write_trajectories_jsonl`]. Episodes are returned in index order.
pub fn read_trajectories_jsonl<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line)?;
        if rec.episode >= out.len() {
            out.resize_with(rec.episode + 1, Trajectory::default);
        }
        let traj = &mut out[rec.episode];
        if rec.t != traj.len() + 1 {
            return Err(BpdError::OutOfRange(format!(
                "episode {} has step t={} after {} steps",
                rec.episode,
                rec.t,
                traj.len()
            )));
        }
        traj.steps.push(Step {
            state: rec.state,
            action: rec.action,
        });
    }
    Ok(out)
}

/// Standard-convention state values `V(s) = E[Σ_{k≥0} γ^k R(s_k, a_k) | s_0 = s]`
/// from the linear system `(I − γ P_π) V = r_π`.
pub fn policy_values(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    policy.check_shape(mdp)?;
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let g = mdp.discount();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for a in 0..na {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            r[s] += pa * mdp.reward(s, a);
            for (s2, p) in mdp.next_dist(s, a).iter().enumerate() {
                if *p != 0.0 {
                    m[(s, s2)] -= g * pa * p;
                }
            }
        }
    }
    let v = m
        .lu()
        .solve(&r)
        .ok_or_else(|| BpdError::Numerical("singular policy-evaluation system".into()))?;
    Ok(v.iter().cloned().collect())
}

/// Expected return `J(π)` with the first reward discounted by `γ`.
pub fn policy_return(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    let v = policy_values(mdp, policy)?;
    Ok(mdp.discount() * dot(mdp.start_dist(), &v))
}

/// Discounted state occupancy `d = ρᵀ (I − γ P_π)⁻¹`, i.e.
/// `d(s) = Σ_{k≥0} γ^k Pr(s_k = s)` from the start distribution.
pub fn state_occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    policy.check_shape(mdp)?;
    let n = mdp.num_states();
    let g = mdp.discount();
    // transpose system: (I − γ P_πᵀ) d = ρ
    let mut m = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for (s2, p) in mdp.next_dist(s, a).iter().enumerate() {
                if *p != 0.0 {
                    m[(s2, s)] -= g * pa * p;
                }
            }
        }
    }
    let d = m
        .lu()
        .solve(&DVector::from_column_slice(mdp.start_dist()))
        .ok_or_else(|| BpdError::Numerical("singular occupancy system".into()))?;
    Ok(d.iter().cloned().collect())
}

/// Exact gradient of `J(π)` w.r.t. the logits of a softmax policy, row-major
/// `[s][a]`: `∂J/∂logit[s][a] = γ · d(s) · π(a|s) · (Q(s,a) − V(s))`.
pub fn policy_return_grad_logits(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let v = policy_values(mdp, policy)?;
    let d = state_occupancy(mdp, policy)?;
    let na = mdp.num_actions();
    let g = mdp.discount();
    let mut out = vec![0.0; mdp.num_states() * na];
    for s in 0..mdp.num_states() {
        for a in 0..na {
            let q = mdp.reward(s, a) + g * dot(mdp.next_dist(s, a), &v);
            out[s * na + a] = g * d[s] * policy.prob(s, a) * (q - v[s]);
        }
    }
    Ok(out)
}

/// `J(π)` via iterative policy evaluation; used as a cross-check of the linear solve.
pub fn policy_return_iterative(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<f64> {
    policy.check_shape(mdp)?;
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    loop {
        let mut next = vec![0.0; n];
        let mut delta: f64 = 0.0;
        for s in 0..n {
            let mut acc = 0.0;
            for a in 0..mdp.num_actions() {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                acc += pa * (mdp.reward(s, a) + mdp.discount() * dot(mdp.next_dist(s, a), &v));
            }
            next[s] = acc;
            delta = delta.max((acc - v[s]).abs());
        }
        v = next;
        if delta * mdp.discount() / (1.0 - mdp.discount()).max(1e-300) < tol || delta == 0.0 {
            break;
        }
    }
    Ok(mdp.discount() * dot(mdp.start_dist(), &v))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Roll out a tabular policy for `horizon` steps, fully determined by `seed`.
pub fn rollout(mdp: &TabularMdp, policy: &TabularPolicy, horizon: usize, seed: u64) -> Result<Trajectory> {
    policy.check_shape(mdp)?;
    if horizon == 0 {
        return Err(BpdError::config("horizon", "must be at least 1"));
    }
    let mut rng = rng::stream(seed, "rollout", 0);
    Ok(rollout_policy(mdp, policy, horizon, &mut rng))
}

/// Roll out a tabular policy using the caller's generator.
pub fn rollout_policy(mdp: &TabularMdp, policy: &TabularPolicy, horizon: usize, rng: &mut Rng) -> Trajectory {
    rollout_with(mdp, horizon, rng, |s, rng| rng::sample_categorical(rng, policy.row(s)))
}

/// Roll out an arbitrary action chooser `choose(state, rng) -> action`.
pub fn rollout_with<F>(mdp: &TabularMdp, horizon: usize, rng: &mut Rng, mut choose: F) -> Trajectory
where
    F: FnMut(usize, &mut Rng) -> usize,
{
    let mut steps = Vec::with_capacity(horizon);
    let mut s = mdp.sample_start(rng);
    for t in 0..horizon {
        let a = choose(s, rng);
        steps.push(Step { state: s, action: a });
        if t + 1 < horizon {
            s = mdp.sample_next(s, a, rng);
        }
    }
    Trajectory { steps }
}

/// One-state bandit with the given rewards and discount.
pub fn bandit(rewards: &[f64], discount: f64) -> Result<TabularMdp> {
    let na = rewards.len();
    TabularMdp::new(1, na, vec![1.0; na], rewards.to_vec(), discount, vec![1.0])
}
