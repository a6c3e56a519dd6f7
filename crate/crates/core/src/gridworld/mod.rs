//! Deterministic gridworlds, a shortest-path expert, noisy demonstrators and
//! the demonstration corpus format.

mod corpus;
mod env;
mod noisy;
mod planner;
mod synthetic;

pub use corpus::{
    read_corpus, write_corpus, Corpus, Label, Partition, Split, Trajectory, Transition, TransRef,
    CORPUS_MAGIC, CORPUS_VERSION,
};
pub use env::{Action, Env, EnvKind, Outcome, Pos, State, StepResult};
pub use noisy::{generate_corpus, generate_noisy, NoiseMode, DECOY_FRACTION};
pub use planner::{plan_expert, shortest_path};
pub use synthetic::{two_policy_corpus, two_policy_env, TwoPolicy};
