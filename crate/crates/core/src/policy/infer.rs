use crate::diffcore::{Graph, Real, Tensor};
use crate::error::Result;
use crate::gridworld::{Corpus, TransRef};

use super::input::{corpus_encoder_batch, state_batch, EncoderMode};
use super::model::SkillModel;

/// Rows per inference graph when evaluating whole datasets.
pub const EVAL_CHUNK: usize = 256;

fn rows(t: &[f64], width: usize) -> Vec<Vec<f64>> {
    t.chunks(width).map(<[f64]>::to_vec).collect()
}

impl<R: Real> SkillModel<R> {
    /// Encoder outputs `z'` for corpus transitions.
    pub fn embed_corpus(&self, corpus: &Corpus, refs: &[TransRef], mode: EncoderMode) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(EVAL_CHUNK) {
            let mut g = Graph::inference();
            let x = g.constant(corpus_encoder_batch(corpus, chunk, &self.dims, mode)?)?;
            let z = self.encode(&mut g, x, mode)?;
            out.extend(rows(&g.value(z).to_f64_vec(), self.dims.skill_dim));
        }
        Ok(out)
    }

    /// Skill probabilities `p(z_t = z^k)` for corpus transitions.
    pub fn skill_probs_corpus(&self, corpus: &Corpus, refs: &[TransRef], mode: EncoderMode) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(EVAL_CHUNK) {
            let mut g = Graph::inference();
            let x = g.constant(corpus_encoder_batch(corpus, chunk, &self.dims, mode)?)?;
            let z = self.encode(&mut g, x, mode)?;
            let p = self.match_probs(&mut g, z)?;
            out.extend(rows(&g.value(p).to_f64_vec(), self.dims.n_skills));
        }
        Ok(out)
    }

    /// `p(a_t | s_t, z^k)` of the recorded action for every skill `k`.
    pub fn skill_likelihoods(&self, corpus: &Corpus, refs: &[TransRef]) -> Result<Vec<Vec<f64>>> {
        let k = self.dims.n_skills;
        let mut out = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(EVAL_CHUNK) {
            let n = chunk.len();
            let actions: Vec<usize> = chunk.iter().map(|&r| corpus.transition(r).action).collect();
            let mut g = Graph::inference();
            let s = g.constant(state_batch(corpus, chunk)?)?;
            let mut cols = vec![vec![0.0; k]; n];
            for j in 0..k {
                let proto: Vec<R> = self.prototype(j).into_iter().map(R::of).collect();
                let z = g.constant(Tensor::new(
                    vec![n, self.dims.skill_dim],
                    proto.iter().cycle().take(n * self.dims.skill_dim).copied().collect(),
                )?)?;
                let lp = self.action_log_probs(&mut g, s, z)?;
                let picked = g.pick(lp, &actions)?;
                for (row, v) in cols.iter_mut().zip(g.value(picked).data()) {
                    row[j] = v.f64().exp();
                }
            }
            out.extend(cols);
        }
        Ok(out)
    }

    /// Noise-free skill choice and the resulting action distribution for each
    /// transition.
    pub fn act_corpus(&self, corpus: &Corpus, refs: &[TransRef], mode: EncoderMode) -> Result<Vec<(usize, Vec<f64>)>> {
        let mut out = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(EVAL_CHUNK) {
            let mut g = Graph::inference();
            let x = g.constant(corpus_encoder_batch(corpus, chunk, &self.dims, mode)?)?;
            let f = self.skill_forward(&mut g, x, mode, None, 1.0)?;
            let s = g.constant(state_batch(corpus, chunk)?)?;
            let lp = self.action_log_probs(&mut g, s, f.skill)?;
            let probs = rows(&g.value(lp).to_f64_vec(), self.dims.n_actions);
            out.extend(
                f.hard
                    .into_iter()
                    .zip(probs)
                    .map(|(k, lp)| (k, lp.into_iter().map(f64::exp).collect())),
            );
        }
        Ok(out)
    }

}
