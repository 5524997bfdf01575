use bpd_core::bpd::{sample_policy, train_bpd, BaseMeasureConfig};
use bpd_core::experiments::gridworld_train_config;
use bpd_core::gridworld::{AppleGridworld, GridworldConfig};
use bpd_core::inference::{MarginalPredictor, ParticlePredictor};
use bpd_core::mdp::{rollout, Trajectory};
use bpd_core::predict::cross_entropy;

#[test]
fn conditioning_on_history_helps_on_model_data() {
    let world = AppleGridworld::new(GridworldConfig::compact_ring()).unwrap();
    let mdp = world.mdp();
    let cfg = bpd_core::bpd::TrainConfig {
        iterations: 300,
        seed: 4,
        ..gridworld_train_config()
    };
    let model = train_bpd(mdp, &BaseMeasureConfig { alpha: 0.2 }, &cfg).unwrap().model;
    let data: Vec<Trajectory> = (0..120u64)
        .map(|i| {
            let (_, policy) = sample_policy(&model, 1000 + i);
            rollout(mdp, &policy, 40, i).unwrap()
        })
        .collect();
    let pf = ParticlePredictor {
        model: &model,
        count: 512,
    };
    let marginal = MarginalPredictor::new(&model, 4000, 5);
    let a = cross_entropy(&pf, &data, 0).unwrap();
    let b = cross_entropy(&marginal, &data, 0).unwrap();
    let se = (a.std_err().powi(2) + b.std_err().powi(2)).sqrt();
    assert!(a.mean_ce <= b.mean_ce + 2.0 * se, "{} vs {}", a.mean_ce, b.mean_ce);
    assert!(a.mean_ce < b.mean_ce, "{} vs {}", a.mean_ce, b.mean_ce);
}
