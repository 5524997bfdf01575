use bpd_core::coop::compose_two_player;
use bpd_core::experiments::{
    eval_team, human_datasets, scripted_policy_table, train_best_response, CollabConfig, HumanModelSpec,
    RobotPolicy,
};
use bpd_core::gridworld::{AppleGridworld, GridworldConfig, Side};
use bpd_core::experiments::SimulatedHuman;
use bpd_core::maxent::{hard_q_values, soft_value_iteration};
use bpd_core::mdp::{policy_return, TabularPolicy};

#[test]
fn human_datasets_are_reproducible_from_spec_and_seed() {
    let world = AppleGridworld::new(GridworldConfig::compact_ring()).unwrap();
    let a = human_datasets(&world, &[0.5, 0.9], 3, 2, 30, 17).unwrap();
    let b = human_datasets(&world, &[0.5, 0.9], 3, 2, 30, 17).unwrap();
    let c = human_datasets(&world, &[0.5, 0.9], 3, 2, 30, 18).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn deterministic_human() -> SimulatedHuman {
    SimulatedHuman {
        consistency: 1.0,
        usual_dir_to_tree: Side::LeftAround,
        usual_dir_back: Side::RightAround,
        seed: 1,
    }
}

#[test]
fn best_response_to_a_deterministic_human_is_near_optimal() {
    let game = compose_two_player(GridworldConfig::compact_ring()).unwrap();
    let table = scripted_policy_table(&game, &deterministic_human()).unwrap();
    let induced = game.induced_robot_mdp(&table).unwrap();
    let na = induced.num_actions();
    let q = hard_q_values(&induced, 1e-12);
    let greedy: Vec<usize> = (0..induced.num_states())
        .map(|s| (0..na).max_by(|&a, &b| q[s * na + a].total_cmp(&q[s * na + b])).unwrap())
        .collect();
    let optimum = policy_return(&induced, &TabularPolicy::deterministic(na, &greedy).unwrap()).unwrap();
    let br = train_best_response(&game, &HumanModelSpec::MaxEnt(&table), None, &CollabConfig::default()).unwrap();
    let achieved = policy_return(&induced, &br.robot.as_tabular().unwrap()).unwrap();
    assert!(achieved >= 0.95 * optimum, "best response {achieved:.4} vs optimum {optimum:.4}");
}

#[test]
fn best_response_training_improves_for_every_human_spec() {
    let game = compose_two_player(GridworldConfig::compact_ring()).unwrap();
    let mdp = game.world().mdp();
    let maxent = soft_value_iteration(mdp, 10.0, 1e-10, 100_000).unwrap();
    let bpd_model = bpd_core::bpd::LatentPolicyModel::init(
        mdp.num_states(),
        mdp.num_actions(),
        2,
        &mut bpd_core::rng::stream(3, "test.model", 0),
    );
    let specs = [
        HumanModelSpec::MaxEnt(&maxent.policy),
        HumanModelSpec::BpdSamplePerEpisode(&bpd_model),
        HumanModelSpec::FixedScripted(SimulatedHuman {
            consistency: 0.8,
            ..deterministic_human()
        }),
    ];
    for spec in &specs {
        for seed in 0..3 {
            let cfg = CollabConfig {
                iterations: 150,
                episodes_per_iter: 32,
                seed,
                ..CollabConfig::default()
            };
            let br = train_best_response(&game, spec, None, &cfg).unwrap();
            let k = 10;
            let first: f64 = br.curve[..k].iter().sum::<f64>() / k as f64;
            let last: f64 = br.curve[br.curve.len() - k..].iter().sum::<f64>() / k as f64;
            assert!(last >= first, "{}: seed {seed}: {first:.3} -> {last:.3}", spec.label());
        }
    }
}

#[test]
fn robot_policies_round_trip_and_evaluate_identically() {
    let game = compose_two_player(GridworldConfig::compact_ring()).unwrap();
    let robot = RobotPolicy::uniform(&game, None);
    let back = RobotPolicy::from_json(&robot.to_json().unwrap()).unwrap();
    assert_eq!(robot, back);
    let human = HumanModelSpec::FixedScripted(deterministic_human());
    let a = eval_team(&game, &robot, &human, 50, 30, 9).unwrap();
    let b = eval_team(&game, &back, &human, 50, 30, 9).unwrap();
    assert_eq!(a.mean_return.to_bits(), b.mean_return.to_bits());
    assert!(a.ci_low <= a.mean_return && a.mean_return <= a.ci_high);
}
