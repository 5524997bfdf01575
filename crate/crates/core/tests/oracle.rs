use bpd_core::mdp::{bandit, rollout, TabularMdp, TabularPolicy, Trajectory};
use bpd_core::oracle::{oracle_conditioned, oracle_marginals, OracleConfig};
use bpd_core::rng;

fn tv(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| 0.5 * x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn tiny_instances() -> Vec<(TabularMdp, Trajectory)> {
    let mut out = vec![(bandit(&[1.0, 0.0], 0.5).unwrap(), Trajectory::default())];
    for seed in 0..3 {
        let mdp = TabularMdp::random(2, 2, 0.7, &mut rng::stream(seed, "test.oracle", 0)).unwrap();
        let hist = rollout(&mdp, &TabularPolicy::uniform(2, 2), 4, seed).unwrap();
        out.push((mdp, hist));
    }
    out
}

#[test]
fn quadrature_and_importance_sampling_agree() {
    for (mdp, hist) in tiny_instances() {
        for (beta, alpha) in [(2.0, 1.0), (5.0, 0.5)] {
            let q = oracle_conditioned(&mdp, beta, alpha, &hist, &OracleConfig::quadrature(120)).unwrap();
            let is = oracle_conditioned(&mdp, beta, alpha, &hist, &OracleConfig::importance(400_000, 1)).unwrap();
            let d = tv(&q.marginals, &is.marginals);
            assert!(d <= 0.01, "TV {d} (β={beta}, α={alpha}, ess {})", is.ess);
        }
    }
}

#[test]
fn doubling_quadrature_resolution_converges() {
    let mdp = bandit(&[1.0, 0.0], 0.5).unwrap();
    let base = oracle_marginals(&mdp, 2.0, 1.0, &OracleConfig::default()).unwrap();
    let res = OracleConfig::default().resolution;
    let fine = oracle_marginals(&mdp, 2.0, 1.0, &OracleConfig::quadrature(2 * res)).unwrap();
    assert!(tv(&base.marginals, &fine.marginals) < 1e-4);
}

#[test]
fn bandit_marginal_matches_closed_form() {
    // uniform base, J(p) = p: E[p] under exp(2p) on [0, 1]
    let expected = 1.0 / (1.0 - (-2.0f64).exp()) - 0.5;
    let mdp = bandit(&[1.0, 0.0], 0.5).unwrap();
    let r = oracle_marginals(&mdp, 2.0, 1.0, &OracleConfig::default()).unwrap();
    // midpoint rule at the default 200 cells: error O(h²) ≈ 1e-5
    assert!((r.marginals[0][0] - expected).abs() < 1e-5, "{} vs {expected}", r.marginals[0][0]);
}

#[test]
fn oracle_json_has_the_documented_fields() {
    let mdp = bandit(&[1.0, 0.0], 0.5).unwrap();
    let r = oracle_marginals(&mdp, 2.0, 1.0, &OracleConfig::quadrature(50)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    for key in ["method", "params", "marginals", "ess"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}
