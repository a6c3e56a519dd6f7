use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::diffcore::{Adam, Graph, ParamId};
use crate::discovery::imitation_loss;
use crate::error::{Error, Result};
use crate::gridworld::{Corpus, Split, TransRef};
use crate::policy::{
    corpus_encoder_batch, gumbel_argmax, gumbel_noise, state_batch, EncoderMode, Group, SkillModel, EVAL_CHUNK,
};

use super::losses::{adversarial_loss, kd_loss, NegativeSet};

const DISTILL_STREAM: u64 = 0x5d11_0002;
const FINE_TUNE_STREAM: u64 = 0x5d11_0003;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Step 1: only `f_uni` trains, on `L_imi + L_KD`.
    Distill,
    /// Step 2: `f_uni`, `g` and `π_low` train on `L_imi + L_adv`.
    FineTune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Distill => "reuse1",
            Phase::FineTune => "reuse2",
        }
    }

    pub fn trainable(self) -> &'static [Group] {
        match self {
            Phase::Distill => &[Group::EncoderUni],
            Phase::FineTune => &[Group::EncoderUni, Group::Matcher, Group::Policy],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseReport {
    pub phase: Phase,
    pub epoch: usize,
    pub imitation: f64,
    /// `L_KD` in step 1, `L_adv` in step 2.
    pub aux: f64,
    /// Clean-validation imitation loss after the epoch.
    pub val: f64,
}

impl PhaseReport {
    pub fn line(&self) -> String {
        let aux = match self.phase {
            Phase::Distill => "L_kd",
            Phase::FineTune => "L_adv",
        };
        format!(
            "phase={} epoch={} L_imi={:.6} {aux}={:.6} val_L_imi={:.6}",
            self.phase.as_str(),
            self.epoch,
            self.imitation,
            self.aux,
            self.val
        )
    }
}

#[derive(Clone, Debug)]
pub struct Reuse {
    pub model: SkillModel<f32>,
    pub negatives: NegativeSet,
    pub log: Vec<String>,
}

/// Noise-free `f_bi` skill choice for each transition.
pub fn teacher_skills(model: &SkillModel<f32>, corpus: &Corpus, refs: &[TransRef]) -> Result<Vec<usize>> {
    Ok(model
        .skill_probs_corpus(corpus, refs, EncoderMode::Bi)?
        .iter()
        .map(|p| gumbel_argmax(p, None, 1.0))
        .collect())
}

/// Imitation loss of the history-only policy with noise-free skill choice.
pub fn clean_val_loss(model: &SkillModel<f32>, corpus: &Corpus, refs: &[TransRef]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    let mut total = 0.0;
    for chunk in refs.chunks(EVAL_CHUNK) {
        let mut g = Graph::inference();
        let x = g.constant(corpus_encoder_batch(corpus, chunk, &model.dims, EncoderMode::Uni)?)?;
        let f = model.skill_forward(&mut g, x, EncoderMode::Uni, None, 1.0)?;
        let s = g.constant(state_batch(corpus, chunk)?)?;
        let lp = model.action_log_probs(&mut g, s, f.skill)?;
        let actions: Vec<usize> = chunk.iter().map(|&r| corpus.transition(r).action).collect();
        let l = imitation_loss(&mut g, lp, &actions)?;
        total += g.value(l).item()? as f64 * chunk.len() as f64;
    }
    Ok(total / refs.len() as f64)
}

fn numeric(op: &'static str, detail: &str) -> Error {
    Error::Numeric {
        op,
        detail: detail.into(),
    }
}

struct PhaseData<'a> {
    train: Vec<TransRef>,
    val: Vec<TransRef>,
    teacher: Option<Vec<usize>>,
    negatives: &'a [TransRef],
}

fn clean_sets(corpus: &Corpus, split: &Split) -> Result<(Vec<TransRef>, Vec<TransRef>)> {
    let train = corpus.refs(&split.clean.train);
    if train.is_empty() {
        return Err(Error::Generation("no clean training transitions".into()));
    }
    let val = corpus.refs(&split.clean.val);
    let val = if val.is_empty() { train.clone() } else { val };
    Ok((train, val))
}

/// One epoch over the clean training set; returns mean `(L_imi, aux)`.
fn train_epoch(
    model: &mut SkillModel<f32>,
    opt: &mut Adam<f32>,
    corpus: &Corpus,
    data: &PhaseData,
    phase: Phase,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let trainable: Vec<ParamId> = model.groups(phase.trainable());
    let k = model.dims.n_skills;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    order.shuffle(rng);
    let mut negs: Vec<TransRef> = data.negatives.to_vec();
    negs.shuffle(rng);
    let mut neg_cursor = 0;
    let (mut imi_sum, mut aux_sum, mut n) = (0.0, 0.0, 0usize);
    for chunk in order.chunks(cfg.batch_size) {
        let refs: Vec<TransRef> = chunk.iter().map(|&i| data.train[i]).collect();
        let actions: Vec<usize> = refs.iter().map(|&r| corpus.transition(r).action).collect();
        let noise = gumbel_noise(refs.len(), k, rng);
        let mut g = Graph::restricted(trainable.iter().copied());
        let x = g.constant(corpus_encoder_batch(corpus, &refs, &model.dims, EncoderMode::Uni)?)?;
        let f = model.skill_forward(&mut g, x, EncoderMode::Uni, Some(&noise), cfg.temperature)?;
        let s = g.constant(state_batch(corpus, &refs)?)?;
        let lp = model.action_log_probs(&mut g, s, f.skill)?;
        let imi = imitation_loss(&mut g, lp, &actions)?;
        let aux = match phase {
            Phase::Distill => {
                let teacher = data.teacher.as_ref().expect("distillation needs a teacher");
                let t: Vec<usize> = chunk.iter().map(|&i| teacher[i]).collect();
                Some(kd_loss(&mut g, f.probs, &t, cfg.kd_log)?)
            }
            Phase::FineTune if negs.is_empty() => None,
            Phase::FineTune => {
                let m = refs.len().min(negs.len());
                let batch: Vec<TransRef> = (0..m).map(|j| negs[(neg_cursor + j) % negs.len()]).collect();
                neg_cursor = (neg_cursor + m) % negs.len();
                let bad: Vec<usize> = batch.iter().map(|&r| corpus.transition(r).action).collect();
                let nz = gumbel_noise(m, k, rng);
                let xn = g.constant(corpus_encoder_batch(corpus, &batch, &model.dims, EncoderMode::Uni)?)?;
                let fn_ = model.skill_forward(&mut g, xn, EncoderMode::Uni, Some(&nz), cfg.temperature)?;
                let sn = g.constant(state_batch(corpus, &batch)?)?;
                let pa = model.action_probs(&mut g, sn, fn_.skill)?;
                Some(adversarial_loss(&mut g, pa, &bad)?)
            }
        };
        let total = match aux {
            Some(a) => g.add(imi, a)?,
            None => imi,
        };
        let tv = g.value(total).item()? as f64;
        if !tv.is_finite() {
            return Err(numeric(phase.as_str(), "non-finite loss"));
        }
        let grads = g.backward(total)?;
        if !grads.is_finite() {
            return Err(numeric(phase.as_str(), "non-finite gradient"));
        }
        opt.step(&mut model.store, &grads)?;
        imi_sum += g.value(imi).item()? as f64;
        aux_sum += aux.map_or(Ok(0.0), |a| g.value(a).item().map(|v| v as f64))?;
        n += 1;
    }
    Ok((imi_sum / n.max(1) as f64, aux_sum / n.max(1) as f64))
}

/// Trains until the clean-validation loss stops improving for `patience`
/// epochs or `reuse_epochs` is reached, then restores the best parameters.
fn run_phase(
    model: &mut SkillModel<f32>,
    corpus: &Corpus,
    data: &PhaseData,
    phase: Phase,
    cfg: &RunConfig,
    stream: u64,
) -> Result<Vec<PhaseReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(stream));
    let mut opt = Adam::new(cfg.adam());
    let mut best = clean_val_loss(model, corpus, &data.val)?;
    let mut best_store = model.store.clone();
    let mut stale = 0;
    let mut reports = Vec::new();
    for epoch in 0..cfg.reuse_epochs {
        let (imitation, aux) = train_epoch(model, &mut opt, corpus, data, phase, cfg, &mut rng)?;
        let val = clean_val_loss(model, corpus, &data.val)?;
        reports.push(PhaseReport {
            phase,
            epoch,
            imitation,
            aux,
            val,
        });
        if val < best {
            best = val;
            best_store = model.store.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.store = best_store;
    Ok(reports)
}

/// Step 1: fits `f_uni` to the clean set with distillation from `f_bi`.
/// Every other parameter is left bitwise unchanged.
pub fn distill(model: &mut SkillModel<f32>, corpus: &Corpus, split: &Split, cfg: &RunConfig) -> Result<Vec<PhaseReport>> {
    let (train, val) = clean_sets(corpus, split)?;
    let teacher = teacher_skills(model, corpus, &train)?;
    let data = PhaseData {
        train,
        val,
        teacher: Some(teacher),
        negatives: &[],
    };
    run_phase(model, corpus, &data, Phase::Distill, cfg, DISTILL_STREAM)
}

/// Step 2: end-to-end fine-tuning with the adversarial term on `negatives`.
pub fn fine_tune(
    model: &mut SkillModel<f32>,
    corpus: &Corpus,
    split: &Split,
    negatives: &NegativeSet,
    cfg: &RunConfig,
) -> Result<Vec<PhaseReport>> {
    let (train, val) = clean_sets(corpus, split)?;
    let data = PhaseData {
        train,
        val,
        teacher: None,
        negatives: &negatives.refs,
    };
    run_phase(model, corpus, &data, Phase::FineTune, cfg, FINE_TUNE_STREAM)
}

/// Both reuse steps starting from a phase-1 model.
pub fn run_reuse(
    corpus: &Corpus,
    split: &Split,
    model: &SkillModel<f32>,
    negatives: &NegativeSet,
    cfg: &RunConfig,
) -> Result<Reuse> {
    cfg.validate()?;
    let mut model = model.clone();
    let mut log: Vec<String> = distill(&mut model, corpus, split, cfg)?.iter().map(PhaseReport::line).collect();
    log.extend(fine_tune(&mut model, corpus, split, negatives, cfg)?.iter().map(PhaseReport::line));
    Ok(Reuse {
        model,
        negatives: negatives.clone(),
        log,
    })
}
