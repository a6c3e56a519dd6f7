//! Small dense-tensor autodiff core: tensors, a recorded graph with
//! reverse-mode gradients, Adam, and Gumbel sampling.

mod adam;
pub mod gradcheck;
mod graph;
mod gumbel;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, StRecord, Var};
pub use gumbel::{gumbel_from_uniform, gumbel_sample, UNIFORM_CLAMP};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tensor::{Real, Tensor};


#[cfg(test)]
mod tests;
