use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

use super::pairs::PairSample;

/// Layout of the flattened pair rows of a batch: all positives then all
/// negatives of anchor 0, then anchor 1, and so on.
#[derive(Clone, Debug, PartialEq)]
pub struct PairLayout {
    /// Anchor position (within the batch) of each pair row.
    pub anchor: Vec<usize>,
    /// Pool index supplying the skill of each pair row.
    pub partner: Vec<usize>,
    pub positive: Vec<bool>,
    /// `1 / (n_anchors * n_rows_of_same_kind_for_that_anchor)`.
    pub weight: Vec<f64>,
}

impl PairLayout {
    pub fn new(samples: &[PairSample]) -> Result<Self> {
        let n = samples.len() as f64;
        let mut out = PairLayout {
            anchor: Vec::new(),
            partner: Vec::new(),
            positive: Vec::new(),
            weight: Vec::new(),
        };
        for (i, s) in samples.iter().enumerate() {
            if s.positives.is_empty() || s.negatives.is_empty() {
                return Err(Error::contract("each anchor needs a positive and a negative"));
            }
            for (list, pos) in [(&s.positives, true), (&s.negatives, false)] {
                for &j in list.iter() {
                    out.anchor.push(i);
                    out.partner.push(j);
                    out.positive.push(pos);
                    out.weight.push(1.0 / (n * list.len() as f64));
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }
}

/// Jensen-Shannon MI loss from compatibility scores `[P, 1]`:
/// mean over anchors of `mean_pos sp(-T) + mean_neg sp(T)`.
pub fn mi_loss<R: Real>(g: &mut Graph<R>, scores: Var, layout: &PairLayout) -> Result<Var> {
    if g.value(scores).numel() != layout.len() {
        return Err(Error::contract("one score per pair row"));
    }
    let signs: Vec<f64> = layout.positive.iter().map(|&p| if p { -1.0 } else { 1.0 }).collect();
    let s = g.constant(Tensor::from_f64(g.value(scores).shape(), &signs)?)?;
    let signed = g.mul(scores, s)?;
    let sp = g.softplus(signed)?;
    g.weighted_sum(sp, layout.weight.clone())
}

/// Mean negative log-likelihood of `actions` under log-probabilities `[n, |A|]`.
pub fn imitation_loss<R: Real>(g: &mut Graph<R>, log_probs: Var, actions: &[usize]) -> Result<Var> {
    let picked = g.pick(log_probs, actions)?;
    let m = g.mean(picked)?;
    g.neg(m)
}
