use bpd_core::bpd::{model_marginals, sample_policy, train_bpd, BaseMeasureConfig, TrainConfig};
use bpd_core::mdp::{bandit, policy_return, TabularMdp};
use bpd_core::par;

fn bandit_config(beta: f64, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        beta,
        iterations: 400,
        policy_lr: 0.01,
        horizon: 20,
        policies_per_batch: 32,
        disc_batch: 128,
        seed,
        ..TrainConfig::default()
    };
    cfg.disc.lr = 2e-3;
    cfg
}

fn expected_return(mdp: &TabularMdp, model: &bpd_core::bpd::LatentPolicyModel) -> f64 {
    let n = 2000;
    (0..n)
        .map(|i| policy_return(mdp, &sample_policy(model, i).1).unwrap())
        .sum::<f64>()
        / n as f64
}

#[test]
fn expected_return_grows_with_beta() {
    let mdp = bandit(&[1.0, 0.0], 0.5).unwrap();
    let base = BaseMeasureConfig { alpha: 1.0 };
    for seed in 0..3 {
        let lo = train_bpd(&mdp, &base, &bandit_config(0.5, seed)).unwrap();
        let hi = train_bpd(&mdp, &base, &bandit_config(4.0, seed)).unwrap();
        let (jl, jh) = (expected_return(&mdp, &lo.model), expected_return(&mdp, &hi.model));
        assert!(jh >= jl - 0.02, "seed {seed}: E[J] {jh:.4} at β=4 vs {jl:.4} at β=0.5");
    }
}

#[test]
fn training_is_identical_across_thread_counts() {
    let mdp = TabularMdp::random(3, 2, 0.8, &mut bpd_core::rng::stream(2, "test.mdp", 0)).unwrap();
    let cfg = TrainConfig {
        iterations: 25,
        ..bandit_config(2.0, 9)
    };
    let base = BaseMeasureConfig { alpha: 0.5 };
    let one = par::with_threads(1, || train_bpd(&mdp, &base, &cfg)).unwrap();
    let four = par::with_threads(4, || train_bpd(&mdp, &base, &cfg)).unwrap();
    assert_eq!(one.model, four.model);
    assert_eq!(model_marginals(&one.model, 500, 1), model_marginals(&four.model, 500, 1));
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let mdp = bandit(&[1.0, 0.0], 0.5).unwrap();
    let base = BaseMeasureConfig { alpha: 1.0 };
    for cfg in [
        TrainConfig { beta: -1.0, ..TrainConfig::default() },
        TrainConfig { beta: f64::NAN, ..TrainConfig::default() },
        TrainConfig { policies_per_batch: 1, ..TrainConfig::default() },
    ] {
        assert!(matches!(train_bpd(&mdp, &base, &cfg), Err(bpd_core::BpdError::InvalidConfig { .. })), "{cfg:?}");
    }
    assert!(train_bpd(&mdp, &BaseMeasureConfig { alpha: 0.0 }, &TrainConfig::default()).is_err());
}
