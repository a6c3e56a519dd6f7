//! Phase 1: skill discovery with imitation and mutual-information losses,
//! cluster-based pair mining, and positive-unlabeled optimality scores.

mod cluster;
mod losses;
mod optimality;
mod pairs;
mod trainer;

pub use cluster::{choose_source, cluster_points, kmeans, purity, zeta, ClusterAssignment, ClusterSource};
pub use losses::{imitation_loss, mi_loss, PairLayout};
pub use optimality::{
    estimate_skill_optimality, min_max_signed, propagate_optimality, OptimalityTable, SkillStats, PREF_DELTA,
};
pub use pairs::{keep_positive, sample_pairs, PairSample};
pub use trainer::{
    discovery_objective, discovery_step, objective_graph, model_dims, run_discovery, Discovery, EpochReport, Pool, StepBatch,
    StepLosses,
};
