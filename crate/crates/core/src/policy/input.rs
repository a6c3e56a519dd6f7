use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};
use crate::gridworld::{Corpus, TransRef};

use super::ModelDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderMode {
    /// Sees the next state as well; used while discovering skills.
    Bi,
    /// History and current state only; deployable.
    Uni,
}

/// Look-back window plus current (and optionally next) state.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    /// Oldest first; `None` slots are zero-padded.
    pub window: Vec<Option<(Vec<f32>, usize)>>,
    pub state: Vec<f32>,
    pub next: Option<Vec<f32>>,
}

impl EncoderInput {
    /// Input for transition `r`. In bi mode the next state of the final
    /// transition is the zero vector.
    pub fn from_corpus(corpus: &Corpus, r: TransRef, window: usize, mode: EncoderMode) -> Self {
        let traj = &corpus.trajectories[r.traj];
        let slots = (0..window)
            .map(|k| {
                (r.step + k).checked_sub(window).map(|t| {
                    let tr = &traj.transitions[t];
                    (tr.state.clone(), tr.action)
                })
            })
            .collect();
        let next = match mode {
            EncoderMode::Uni => None,
            EncoderMode::Bi => Some(
                traj.transitions
                    .get(r.step + 1)
                    .map(|tr| tr.state.clone())
                    .unwrap_or_else(|| vec![0.0; corpus.state_dim]),
            ),
        };
        Self {
            window: slots,
            state: traj.transitions[r.step].state.clone(),
            next,
        }
    }

    /// Uni-mode input from an episode's history, most recent last.
    pub fn from_history(history: &[(Vec<f32>, usize)], state: &[f32], window: usize) -> Self {
        let slots = (0..window)
            .map(|k| {
                (history.len() + k)
                    .checked_sub(window)
                    .map(|t| history[t].clone())
            })
            .collect();
        Self {
            window: slots,
            state: state.to_vec(),
            next: None,
        }
    }

    /// Writes `[s, onehot(a)] x M ++ s_t (++ s_{t+1})` into `out`.
    pub fn flatten_into<R: Real>(&self, dims: &ModelDims, mode: EncoderMode, out: &mut Vec<R>) -> Result<()> {
        let ds = dims.state_dim;
        match (mode, &self.next) {
            (EncoderMode::Uni, Some(_)) => {
                return Err(Error::contract("uni encoder input must not carry s_{t+1}"));
            }
            (EncoderMode::Bi, None) => {
                return Err(Error::contract("bi encoder input requires s_{t+1}"));
            }
            _ => {}
        }
        if self.window.len() != dims.window {
            return Err(Error::contract(format!(
                "window has {} slots, expected {}",
                self.window.len(),
                dims.window
            )));
        }
        let bad_state = |s: &[f32]| s.len() != ds;
        for slot in &self.window {
            match slot {
                None => out.extend(std::iter::repeat(R::zero()).take(ds + dims.n_actions)),
                Some((s, a)) => {
                    if bad_state(s) || *a >= dims.n_actions {
                        return Err(Error::contract("window slot does not match model dims"));
                    }
                    out.extend(s.iter().map(|&v| R::of(v as f64)));
                    out.extend((0..dims.n_actions).map(|i| if i == *a { R::one() } else { R::zero() }));
                }
            }
        }
        if bad_state(&self.state) {
            return Err(Error::contract("state does not match model dims"));
        }
        out.extend(self.state.iter().map(|&v| R::of(v as f64)));
        if let Some(next) = &self.next {
            if bad_state(next) {
                return Err(Error::contract("next state does not match model dims"));
            }
            out.extend(next.iter().map(|&v| R::of(v as f64)));
        }
        Ok(())
    }

    pub fn flatten<R: Real>(&self, dims: &ModelDims, mode: EncoderMode) -> Result<Vec<R>> {
        let mut out = Vec::with_capacity(dims.encoder_input(mode));
        self.flatten_into(dims, mode, &mut out)?;
        Ok(out)
    }
}

/// `[n, encoder_input]` matrix for a batch of inputs.
pub fn encoder_batch<R: Real>(inputs: &[EncoderInput], dims: &ModelDims, mode: EncoderMode) -> Result<Tensor<R>> {
    let width = dims.encoder_input(mode);
    let mut data = Vec::with_capacity(inputs.len() * width);
    for inp in inputs {
        inp.flatten_into(dims, mode, &mut data)?;
    }
    Tensor::new(vec![inputs.len(), width], data)
}

/// Encoder matrix for corpus transitions.
pub fn corpus_encoder_batch<R: Real>(
    corpus: &Corpus,
    refs: &[TransRef],
    dims: &ModelDims,
    mode: EncoderMode,
) -> Result<Tensor<R>> {
    let inputs: Vec<EncoderInput> = refs
        .iter()
        .map(|&r| EncoderInput::from_corpus(corpus, r, dims.window, mode))
        .collect();
    encoder_batch(&inputs, dims, mode)
}

/// `[n, state_dim]` matrix of current states.
pub fn state_batch<R: Real>(corpus: &Corpus, refs: &[TransRef]) -> Result<Tensor<R>> {
    let data = refs
        .iter()
        .flat_map(|&r| corpus.transition(r).state.iter().map(|&v| R::of(v as f64)))
        .collect();
    Tensor::new(vec![refs.len(), corpus.state_dim], data)
}

/// `[n, n_actions]` one-hot matrix.
pub fn one_hot<R: Real>(indices: &[usize], width: usize) -> Result<Tensor<R>> {
    let mut data = vec![R::zero(); indices.len() * width];
    for (i, &j) in indices.iter().enumerate() {
        if j >= width {
            return Err(Error::contract(format!("index {j} >= {width}")));
        }
        data[i * width + j] = R::one();
    }
    Tensor::new(vec![indices.len(), width], data)
}
