//! Evaluation metrics, rollouts, skill analyses, checkpoints and the
//! behavior-cloning baseline.

mod bc;
mod checkpoint;
mod embeddings;
mod metrics;
mod pipeline;
mod rollout;
mod skills;

pub use bc::{train_bc, BcModel, BcRun, BcSetting};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use embeddings::{embedding_rows, embeddings_to_text, export_embeddings, parse_embeddings, EmbeddingRow};
pub use metrics::{action_metrics, argmax, ActionMetrics};
pub use pipeline::{
    clean_test_refs, evaluate, negatives_from, run_pipeline, sdil_action_metrics, MetricsReport, PipelineRun,
};
pub use rollout::{episode_start, rollout_reward, run_episode, Policy, RolloutStats, SdilPolicy};
pub use skills::{
    export_skill_map, rank_skills, skill_selection_distribution, total_variation, SkillCell, SkillMap,
};
