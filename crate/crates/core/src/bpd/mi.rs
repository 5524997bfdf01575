//! Plug-in estimate of `I(a_t; a_t' | s_t, s_t')` from sampled rollouts.
//!
//! Each `(t, t')` entry groups episodes by the visited state pair, computes
//! the plug-in mutual information of the empirical joint action distribution
//! within each group, and averages the groups weighted by their size. Groups
//! with too few samples are reported as missing rather than as zero.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bpd::model::LatentPolicyModel;
use crate::error::{BpdError, Result};
use crate::maxent::SoftSolution;
use crate::mdp::{rollout_policy, TabularMdp, Trajectory};
use crate::par;
use crate::rng;

pub const DEFAULT_MIN_SAMPLES: usize = 50;

/// Where policies come from.
#[derive(Debug, Clone, Copy)]
pub enum MiSource<'a> {
    /// A fresh latent (hence policy) per sampled policy.
    Latent(&'a LatentPolicyModel),
    /// The single MaxEnt policy.
    Soft(&'a SoftSolution),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiConfig {
    pub horizon: usize,
    pub num_policies: usize,
    pub rollouts_per_policy: usize,
    pub min_samples: usize,
    pub seed: u64,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            horizon: 10,
            num_policies: 20_000,
            rollouts_per_policy: 1,
            min_samples: DEFAULT_MIN_SAMPLES,
            seed: 0,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mi.horizon", self.horizon),
            ("mi.num_policies", self.num_policies),
            ("mi.rollouts_per_policy", self.rollouts_per_policy),
            ("mi.min_samples", self.min_samples),
        ] {
            if v == 0 {
                return Err(BpdError::config(name, "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiMatrix {
    pub horizon: usize,
    /// `values[t][t']`, `None` when every state-pair group was too small.
    pub values: Vec<Vec<Option<f64>>>,
    /// Samples in the groups that entered each entry.
    pub samples: Vec<Vec<usize>>,
    /// Number of state-pair groups skipped for having too few samples.
    pub missing_groups: usize,
}

impl MiMatrix {
    /// Mean of the available off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> Option<f64> {
        let vals: Vec<f64> = (0..self.horizon)
            .flat_map(|t| (0..self.horizon).filter(move |&u| u != t).map(move |u| (t, u)))
            .filter_map(|(t, u)| self.values[t][u])
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Largest available off-diagonal entry.
    pub fn max_off_diagonal(&self) -> Option<f64> {
        (0..self.horizon)
            .flat_map(|t| (0..self.horizon).filter(move |&u| u != t).map(move |u| (t, u)))
            .filter_map(|(t, u)| self.values[t][u])
            .reduce(f64::max)
    }

    /// CSV rows `{t, t_prime, mi, samples}` with 1-based timesteps; missing
    /// entries have an empty `mi` field.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "t_prime", "mi", "samples"])
            .map_err(|e| BpdError::Io(std::io::Error::other(e)))?;
        for t in 0..self.horizon {
            for u in 0..self.horizon {
                let mi = self.values[t][u].map(|v| format!("{v}")).unwrap_or_default();
                wr.write_record([(t + 1).to_string(), (u + 1).to_string(), mi, self.samples[t][u].to_string()])
                    .map_err(|e| BpdError::Io(std::io::Error::other(e)))?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Plug-in mutual information (nats) of a joint count table `counts[a][b]`.
pub fn plugin_mi(counts: &[u64], na: usize) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let mut row = vec![0u64; na];
    let mut col = vec![0u64; na];
    for a in 0..na {
        for b in 0..na {
            row[a] += counts[a * na + b];
            col[b] += counts[a * na + b];
        }
    }
    let mut mi = 0.0;
    for a in 0..na {
        for b in 0..na {
            let c = counts[a * na + b];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (row[a] as f64 * col[b] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

type Groups = BTreeMap<(usize, usize, usize, usize), Vec<u64>>;

fn count_pairs(trajs: &[Trajectory], horizon: usize, na: usize) -> Groups {
    let mut g: Groups = BTreeMap::new();
    for tr in trajs {
        for t in 0..horizon.min(tr.len()) {
            for u in t..horizon.min(tr.len()) {
                let (x, y) = (tr.steps[t], tr.steps[u]);
                let cell = g.entry((t, u, x.state, y.state)).or_insert_with(|| vec![0; na * na]);
                cell[x.action * na + y.action] += 1;
            }
        }
    }
    g
}

/// Estimate the `horizon × horizon` conditional mutual-information matrix.
pub fn mutual_information(source: MiSource<'_>, mdp: &TabularMdp, cfg: &MiConfig) -> Result<MiMatrix> {
    cfg.validate()?;
    let na = mdp.num_actions();
    match source {
        MiSource::Latent(m) if m.num_states() != mdp.num_states() || m.num_actions() != na => {
            return Err(BpdError::ShapeMismatch("model and MDP dimensions differ".into()))
        }
        MiSource::Soft(s) => s.policy.check_shape(mdp)?,
        _ => {}
    }
    const CHUNKS: usize = 64;
    let per = cfg.num_policies.div_ceil(CHUNKS);
    let parts = par::map_range(CHUNKS, |c| {
        let lo = c * per;
        let hi = (lo + per).min(cfg.num_policies);
        let mut trajs = Vec::new();
        for i in lo..hi {
            let mut r = rng::stream(cfg.seed, "mi.policy", i as u64);
            let policy = match source {
                MiSource::Latent(m) => {
                    let z = m.sample_latent(&mut r);
                    m.policy(&z)
                }
                MiSource::Soft(s) => s.policy.clone(),
            };
            for _ in 0..cfg.rollouts_per_policy {
                trajs.push(rollout_policy(mdp, &policy, cfg.horizon, &mut r));
            }
        }
        count_pairs(&trajs, cfg.horizon, na)
    });
    let mut groups: Groups = BTreeMap::new();
    for part in parts {
        for (k, v) in part {
            let e = groups.entry(k).or_insert_with(|| vec![0; na * na]);
            e.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
        }
    }
    let h = cfg.horizon;
    let mut num = vec![vec![0.0; h]; h];
    let mut den = vec![vec![0usize; h]; h];
    let mut missing = 0;
    for ((t, u, _, _), counts) in &groups {
        let n: u64 = counts.iter().sum();
        if (n as usize) < cfg.min_samples {
            missing += 1;
            continue;
        }
        num[*t][*u] += n as f64 * plugin_mi(counts, na);
        den[*t][*u] += n as usize;
    }
    let mut values = vec![vec![None; h]; h];
    let mut samples = vec![vec![0; h]; h];
    for t in 0..h {
        for u in t..h {
            let v = (den[t][u] > 0).then(|| num[t][u] / den[t][u] as f64);
            values[t][u] = v;
            values[u][t] = v;
            samples[t][u] = den[t][u];
            samples[u][t] = den[t][u];
        }
    }
    Ok(MiMatrix {
        horizon: h,
        values,
        samples,
        missing_groups: missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::entropy;

    #[test]
    fn plugin_mi_of_independent_and_copy() {
        // perfectly copied uniform binary variable: ln 2
        assert!((plugin_mi(&[50, 0, 0, 50], 2) - 2f64.ln()).abs() < 1e-12);
        // exact product table: zero
        assert!(plugin_mi(&[25, 25, 25, 25], 2).abs() < 1e-12);
    }

    #[test]
    fn diagonal_is_conditional_entropy() {
        // a single-state bandit: the diagonal equals the plug-in action entropy
        let mdp = crate::mdp::bandit(&[1.0, 0.0, 0.5], 0.5).unwrap();
        let sol = crate::maxent::soft_value_iteration(&mdp, 1.0, 1e-12, 1000).unwrap();
        let cfg = MiConfig {
            horizon: 3,
            num_policies: 4000,
            ..Default::default()
        };
        let m = mutual_information(MiSource::Soft(&sol), &mdp, &cfg).unwrap();
        let data: Vec<Trajectory> = (0..cfg.num_policies)
            .map(|i| {
                let mut r = rng::stream(cfg.seed, "mi.policy", i as u64);
                rollout_policy(&mdp, &sol.policy, 3, &mut r)
            })
            .collect();
        let mut freq = vec![0.0; 3];
        data.iter().for_each(|t| freq[t.steps[0].action] += 1.0);
        freq.iter_mut().for_each(|x| *x /= cfg.num_policies as f64);
        assert!((m.values[0][0].unwrap() - entropy(&freq)).abs() < 1e-12);
        assert!(m.max_off_diagonal().unwrap() < 0.01);
    }

    #[test]
    fn small_groups_are_missing() {
        let mdp = crate::mdp::bandit(&[1.0, 0.0], 0.5).unwrap();
        let sol = crate::maxent::soft_value_iteration(&mdp, 1.0, 1e-12, 1000).unwrap();
        let cfg = MiConfig {
            horizon: 2,
            num_policies: 10,
            ..Default::default()
        };
        let m = mutual_information(MiSource::Soft(&sol), &mdp, &cfg).unwrap();
        assert!(m.values[0][1].is_none());
        assert!(m.missing_groups > 0);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,t_prime,mi,samples"));
    }
}
