//! Hierarchical policy: windowed skill encoders, the inverse-distance skill
//! matcher with hard Gumbel selection, the skill-conditioned action policy and
//! the compatibility estimator.

mod infer;
mod input;
mod mlp;
mod model;
mod select;

pub use infer::EVAL_CHUNK;
pub use input::{corpus_encoder_batch, encoder_batch, one_hot, state_batch, EncoderInput, EncoderMode};
pub use mlp::Mlp;
pub use model::{
    Group, ModelDims, SkillForward, SkillModel, CRITIC_HIDDEN, ENCODER_HIDDEN, POLICY_HIDDEN, PROTOTYPE_INIT,
};
pub use select::{gumbel_argmax, gumbel_noise, sample_skill, select_skill, SkillSelection, DIST_FLOOR, LOG_PROB_FLOOR};
