//! Product-of-Dirichlet base measure over tabular policies.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{BpdError, Result};
use crate::math::logsumexp;
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseMeasureConfig {
    /// Symmetric Dirichlet concentration.
    pub alpha: f64,
}

impl Default for BaseMeasureConfig {
    fn default() -> Self {
        BaseMeasureConfig { alpha: 0.2 }
    }
}

impl BaseMeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(BpdError::config("alpha", "must be positive"));
        }
        Ok(())
    }
}

/// `ln G` for `G ~ Gamma(shape, 1)`, accurate even when `G` underflows.
fn ln_gamma_sample(shape: f64, rng: &mut Rng) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("shape > 0").sample(rng).ln()
    } else {
        // G = G' · U^{1/shape} with G' ~ Gamma(shape + 1)
        let g = Gamma::new(shape + 1.0, 1.0).expect("shape > 0").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

/// Log of a `Dir(alpha)` sample.
pub fn sample_dirichlet_log(alpha: &[f64], rng: &mut Rng) -> Vec<f64> {
    let mut lg: Vec<f64> = alpha.iter().map(|&a| ln_gamma_sample(a, rng)).collect();
    let lse = logsumexp(&lg);
    lg.iter_mut().for_each(|x| *x -= lse);
    lg
}

/// `ln Dir(p; alpha)` given `ln p`.
pub fn dirichlet_log_density(log_p: &[f64], alpha: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    let norm = ln_gamma(a0) - alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>();
    norm + alpha.iter().zip(log_p).map(|(a, lp)| (a - 1.0) * lp).sum::<f64>()
}

/// Closed-form `KL(Dir(a) ‖ Dir(b))`.
pub fn dirichlet_kl(a: &[f64], b: &[f64]) -> f64 {
    let a0: f64 = a.iter().sum();
    let b0: f64 = b.iter().sum();
    let mut kl = ln_gamma(a0) - ln_gamma(b0);
    for (ai, bi) in a.iter().zip(b) {
        kl += ln_gamma(*bi) - ln_gamma(*ai) + (ai - bi) * (digamma(*ai) - digamma(a0));
    }
    kl
}

/// Independent Dirichlet at every state, possibly with different parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductDirichlet {
    pub num_actions: usize,
    /// One concentration vector per state.
    pub alphas: Vec<Vec<f64>>,
}

impl ProductDirichlet {
    pub fn symmetric(num_states: usize, num_actions: usize, alpha: f64) -> Self {
        ProductDirichlet {
            num_actions,
            alphas: vec![vec![alpha; num_actions]; num_states],
        }
    }

    pub fn num_states(&self) -> usize {
        self.alphas.len()
    }

    /// Row-major log-probability table of one sampled policy.
    pub fn sample_log_table(&self, rng: &mut Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_states() * self.num_actions);
        for a in &self.alphas {
            out.extend(sample_dirichlet_log(a, rng));
        }
        out
    }

    pub fn sample_policy(&self, rng: &mut Rng) -> TabularPolicy {
        let probs = self.sample_log_table(rng).into_iter().map(f64::exp).collect();
        TabularPolicy::from_rows_unchecked(self.num_states(), self.num_actions, probs)
    }

    pub fn log_density(&self, log_table: &[f64]) -> f64 {
        self.alphas
            .iter()
            .enumerate()
            .map(|(s, a)| dirichlet_log_density(&log_table[s * self.num_actions..(s + 1) * self.num_actions], a))
            .sum()
    }

    pub fn kl_to(&self, other: &ProductDirichlet) -> f64 {
        self.alphas.iter().zip(&other.alphas).map(|(a, b)| dirichlet_kl(a, b)).sum()
    }
}

/// Draw a policy from the base measure: each state's row from `Dir(α, …, α)`.
pub fn sample_base_policy(mdp: &TabularMdp, cfg: &BaseMeasureConfig, seed: u64) -> Result<TabularPolicy> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, "base_policy", 0);
    Ok(ProductDirichlet::symmetric(mdp.num_states(), mdp.num_actions(), cfg.alpha).sample_policy(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_on_simplex() {
        let mdp = crate::mdp::bandit(&[0.0; 4], 0.5).unwrap();
        for seed in 0..50 {
            let p = sample_base_policy(&mdp, &BaseMeasureConfig { alpha: 0.2 }, seed).unwrap();
            assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(sample_base_policy(&mdp, &BaseMeasureConfig { alpha: 0.0 }, 0).is_err());
    }

    #[test]
    fn kl_of_identical_is_zero() {
        assert!(dirichlet_kl(&[0.3, 2.0, 1.0], &[0.3, 2.0, 1.0]).abs() < 1e-12);
        assert!(dirichlet_kl(&[2.0, 1.0], &[1.0, 1.0]) > 0.0);
    }

    #[test]
    fn uniform_dirichlet_density() {
        // Dir(1,1,1) has density Γ(3) = 2 on the simplex
        let lp = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        assert!((dirichlet_log_density(&lp, &[1.0, 1.0, 1.0]) - 2f64.ln()).abs() < 1e-12);
    }
}
