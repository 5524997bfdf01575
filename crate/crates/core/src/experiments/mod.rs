//! Simulated-human data, prediction benchmarks and collaboration experiments.

pub mod collab;
pub mod humans;
pub mod manifest;
pub mod pipelines;

pub use collab::{
    eval_team, eval_team_population, scripted_policy_table, train_best_response, write_collab_csv, BestResponse, MAX_ROBOT_CONTEXTS,
    CollabConfig, CollabRow, HumanModelSpec, MemoryConfig, RobotMemory, RobotPolicy, TeamEval,
};
pub use humans::{leg_sides, simulate_humans, HumanWalker, SimulatedHuman};
pub use pipelines::{
    collab_train_config, consistency_levels, eval_collab_robots, eval_prediction, train_collab_robots, gridworld_train_config, human_datasets, run_collab_experiment,
    run_mi_experiment, run_prediction_experiment, write_prediction_csv, CollabExperiment, CollabReport, MiExperiment,
    MiReport, PredictionExperiment, PredictionReport, PredictionRow,
};
pub use manifest::Manifest;
