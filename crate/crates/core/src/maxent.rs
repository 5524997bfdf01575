//! Boltzmann rationality: soft value iteration and the MaxEnt policy.

use serde::{Deserialize, Serialize};

use crate::error::{BpdError, Result};
use crate::math::logsumexp;
use crate::mdp::{dot, TabularMdp, TabularPolicy, Trajectory};
use crate::predict::{OnlinePredictor, PolicyPredictor, PredictionSession};

pub use crate::predict::{cross_entropy, CeReport};

/// Default rationality coefficient (temperature 0.1).
pub const DEFAULT_BETA: f64 = 10.0;

/// Converged soft Bellman solution and its softmax policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftSolution {
    pub beta: f64,
    /// `Q[s][a]`, row-major.
    pub q_soft: Vec<f64>,
    pub v_soft: Vec<f64>,
    pub policy: TabularPolicy,
    /// Sup-norm change of `Q` in the last sweep.
    pub residual: f64,
    /// Residual after every sweep.
    pub residuals: Vec<f64>,
}

impl SoftSolution {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q_soft[s * self.policy.num_actions() + a]
    }
}

fn soft_value(q_row: &[f64], beta: f64, scratch: &mut [f64]) -> f64 {
    for (x, q) in scratch.iter_mut().zip(q_row) {
        *x = beta * q;
    }
    logsumexp(scratch) / beta
}

/// Iterate `Q ← R + γ P V`, `V = (1/β) log Σ_a exp(β Q)` until the sup-norm
/// change of `Q` is at most `tol`.
pub fn soft_value_iteration(mdp: &TabularMdp, beta: f64, tol: f64, max_iters: usize) -> Result<SoftSolution> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(BpdError::config("beta", "must be positive and finite"));
    }
    if !(tol > 0.0) {
        return Err(BpdError::config("tol", "must be positive"));
    }
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let g = mdp.discount();
    let mut q = mdp.rewards().to_vec();
    let mut v = vec![0.0; ns];
    let mut scratch = vec![0.0; na];
    let mut residuals = Vec::new();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        for s in 0..ns {
            v[s] = soft_value(&q[s * na..(s + 1) * na], beta, &mut scratch);
        }
        residual = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let nq = mdp.reward(s, a) + g * dot(mdp.next_dist(s, a), &v);
                residual = f64::max(residual, (nq - q[s * na + a]).abs());
                q[s * na + a] = nq;
            }
        }
        residuals.push(residual);
        if residual <= tol {
            break;
        }
    }
    if residual > tol {
        return Err(BpdError::NotConverged {
            residual,
            tol,
            iters: max_iters,
        });
    }
    for s in 0..ns {
        v[s] = soft_value(&q[s * na..(s + 1) * na], beta, &mut scratch);
    }
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            probs[s * na + a] = (beta * (q[s * na + a] - v[s])).exp();
        }
        let row = &mut probs[s * na..(s + 1) * na];
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    Ok(SoftSolution {
        beta,
        q_soft: q,
        v_soft: v,
        policy: TabularPolicy::from_rows_unchecked(ns, na, probs),
        residual,
        residuals,
    })
}

/// Boltzmann-rational prediction of `a_t` given a history: the MaxEnt policy
/// row at `s_t`, whatever came before. `t` is 1-based.
pub fn br_predict(solution: &SoftSolution, history: &Trajectory, t: usize) -> Result<Vec<f64>> {
    if t == 0 || t > history.len() {
        return Err(BpdError::OutOfRange(format!("t = {t} for history of length {}", history.len())));
    }
    let s = history.steps[t - 1].state;
    if s >= solution.policy.num_states() {
        return Err(BpdError::OutOfRange(format!("state {s}")));
    }
    Ok(solution.policy.row(s).to_vec())
}

impl OnlinePredictor for SoftSolution {
    fn session(&self, _seed: u64) -> Box<dyn PredictionSession + '_> {
        Box::new(PolicyPredictor { policy: &self.policy })
    }
}

/// Hard (β → ∞) optimal Q-values by ordinary value iteration.
pub fn hard_q_values(mdp: &TabularMdp, tol: f64) -> Vec<f64> {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let mut q = vec![0.0; ns * na];
    loop {
        let v: Vec<f64> = (0..ns)
            .map(|s| q[s * na..(s + 1) * na].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let nq = mdp.reward(s, a) + mdp.discount() * dot(mdp.next_dist(s, a), &v);
                delta = delta.max((nq - q[s * na + a]).abs());
                q[s * na + a] = nq;
            }
        }
        if delta <= tol {
            return q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::bandit;

    #[test]
    fn bandit_softmax() {
        let mdp = bandit(&[1.0, 0.0], 0.0).unwrap();
        let sol = soft_value_iteration(&mdp, 10.0, 1e-12, 100).unwrap();
        let expect = 1.0 / (1.0 + (-10f64).exp());
        assert!((sol.policy.prob(0, 0) - expect).abs() < 1e-12);
        assert!((sol.policy.prob(0, 0) - 0.9999546).abs() < 1e-7);
    }

    #[test]
    fn tiny_beta_is_uniform() {
        let mdp = bandit(&[1.0, 0.0, 0.3, 0.7], 0.5).unwrap();
        let sol = soft_value_iteration(&mdp, 1e-6, 1e-10, 10_000).unwrap();
        for a in 0..4 {
            assert!((sol.policy.prob(0, a) - 0.25).abs() < 1e-4);
        }
    }

    #[test]
    fn soft_value_identity() {
        let mdp = bandit(&[0.2, 0.4, 0.1], 0.7).unwrap();
        let sol = soft_value_iteration(&mdp, 3.0, 1e-12, 10_000).unwrap();
        let lse = logsumexp(&[3.0 * sol.q(0, 0), 3.0 * sol.q(0, 1), 3.0 * sol.q(0, 2)]) / 3.0;
        assert!((sol.v_soft[0] - lse).abs() < 1e-9);
    }

    #[test]
    fn non_convergence_reported() {
        let mdp = bandit(&[1.0, 0.0], 0.99).unwrap();
        let err = soft_value_iteration(&mdp, 10.0, 1e-12, 3).unwrap_err();
        assert!(matches!(err, BpdError::NotConverged { iters: 3, .. }));
        assert!(soft_value_iteration(&mdp, 0.0, 1e-6, 3).is_err());
        assert!(soft_value_iteration(&mdp, 1.0, 0.0, 3).is_err());
    }

    #[test]
    fn br_predict_uses_current_state_only() {
        let mdp = bandit(&[1.0, 0.0], 0.0).unwrap();
        let sol = soft_value_iteration(&mdp, 10.0, 1e-12, 100).unwrap();
        let h1 = Trajectory::from_pairs(&[(0, 0), (0, 0), (0, 1)]);
        let h2 = Trajectory::from_pairs(&[(0, 1), (0, 1), (0, 1)]);
        assert_eq!(br_predict(&sol, &h1, 3).unwrap(), br_predict(&sol, &h2, 3).unwrap());
        assert_eq!(br_predict(&sol, &h1, 1).unwrap(), sol.policy.row(0).to_vec());
        assert!(br_predict(&sol, &h1, 0).is_err());
        assert!(br_predict(&sol, &h1, 4).is_err());
    }
}
