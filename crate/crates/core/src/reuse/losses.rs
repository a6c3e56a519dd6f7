use crate::diffcore::{Graph, Real, Var};
use crate::error::{Error, Result};
use crate::gridworld::{Label, TransRef};
use crate::policy::LOG_PROB_FLOOR;

/// Probability floor applied before the log in the adversarial loss.
pub const ADV_PROB_FLOOR: f64 = 1e-6;

/// Distillation loss: `-mean p(z_t = teacher_t)` over student skill
/// probabilities `[n, K]`, or `-mean log p` when `log_form` is set.
pub fn kd_loss<R: Real>(g: &mut Graph<R>, student_probs: Var, teacher: &[usize], log_form: bool) -> Result<Var> {
    let p = g.pick(student_probs, teacher)?;
    let p = if log_form { g.log_floor(p, LOG_PROB_FLOOR)? } else { p };
    let m = g.mean(p)?;
    g.neg(m)
}

/// `mean log max(p(a_t | s_t, z_t), 1e-6)` over action probabilities `[n, |A|]`.
pub fn adversarial_loss<R: Real>(g: &mut Graph<R>, action_probs: Var, actions: &[usize]) -> Result<Var> {
    let p = g.pick(action_probs, actions)?;
    let l = g.log_floor(p, ADV_PROB_FLOOR)?;
    g.mean(l)
}

/// Noisy transitions whose propagated score is below the threshold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NegativeSet {
    pub refs: Vec<TransRef>,
    pub scores: Vec<f64>,
}

impl NegativeSet {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }
}

/// Selects the noisy entries of an aligned `(refs, labels, scores)` pool
/// with `score < theta_neg`.
pub fn collect_negatives(refs: &[TransRef], labels: &[Label], scores: &[f64], theta_neg: f64) -> Result<NegativeSet> {
    if refs.len() != labels.len() || refs.len() != scores.len() {
        return Err(Error::contract("refs, labels and scores must align"));
    }
    let mut out = NegativeSet::default();
    for ((&r, &l), &s) in refs.iter().zip(labels).zip(scores) {
        if l == Label::Noisy && s < theta_neg {
            out.refs.push(r);
            out.scores.push(s);
        }
    }
    Ok(out)
}
