//! End-to-end pipelines, evaluation metrics and experiment reports.

mod config;
mod eval;
mod mrp;
mod pipeline;

pub use config::{Config, ConfigError, Profile};
pub use eval::{
    build_report, eval_sim_success, mode_name, run_experiment, ExperimentReport, ExperimentRuns, eval_tree_success, rollout_of, run_random_baseline, run_search,
    training_interventions, Breakdown, EpisodeResult, EpisodeTrace, EvalReport, Rate, SeedSummary, SimOutcome,
};
pub use mrp::{expand_fully, mrp_check, MrpReport};
pub use pipeline::{
    dataset_splits, generate_dataset, label_dataset, label_episode, label_tree, model_seed, train_models,
    training_graphs, DataManifest, LabeledInstruction, SplitCounts,
};
