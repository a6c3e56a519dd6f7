//! Phase 2: adapt the history-only encoder to the discovered skills, then
//! fine-tune against low-optimality noisy transitions.

mod losses;
mod trainer;

pub use losses::{adversarial_loss, collect_negatives, kd_loss, NegativeSet, ADV_PROB_FLOOR};
pub use trainer::{
    clean_val_loss, distill, fine_tune, run_reuse, teacher_skills, Phase, PhaseReport, Reuse,
};

#[cfg(test)]
mod tests;
