use std::fmt::Write as _;

use crate::config::RunConfig;
use crate::discovery::{run_discovery, OptimalityTable};
use crate::error::{Error, Result};
use crate::gridworld::{Corpus, Env, Label, Split, TransRef};
use crate::policy::{EncoderMode, SkillModel};
use crate::reuse::{collect_negatives, run_reuse, NegativeSet};

use super::metrics::{action_metrics, argmax, ActionMetrics};
use super::rollout::{rollout_reward, Policy, RolloutStats, SdilPolicy};
use super::skills::skill_selection_distribution;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Absent when no environment was given.
    pub reward: Option<RolloutStats>,
    pub clean_distribution: Vec<f64>,
    pub noisy_distribution: Vec<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "accuracy = {:.6}", self.accuracy);
        let _ = writeln!(s, "macro_f1 = {:.6}", self.macro_f1);
        if let Some(r) = &self.reward {
            let _ = writeln!(s, "reward_mean = {:.6}", r.mean);
            let _ = writeln!(s, "reward_std = {:.6}", r.std);
            let _ = writeln!(s, "episodes = {}", r.rewards.len());
        }
        let _ = writeln!(s, "clean_distribution = {}", join(&self.clean_distribution));
        let _ = writeln!(s, "noisy_distribution = {}", join(&self.noisy_distribution));
        s
    }
}

/// Clean test transitions, or every clean transition when the test split is empty.
pub fn clean_test_refs(corpus: &Corpus, split: &Split) -> Vec<TransRef> {
    let test = corpus.refs(&split.clean.test);
    if test.is_empty() {
        corpus.refs(&corpus.indices(Label::Clean))
    } else {
        test
    }
}

/// Greedy-action accuracy of the history-only policy on `refs`.
pub fn sdil_action_metrics(model: &SkillModel<f32>, corpus: &Corpus, refs: &[TransRef]) -> Result<ActionMetrics> {
    let pred: Vec<usize> = model
        .act_corpus(corpus, refs, EncoderMode::Uni)?
        .iter()
        .map(|(_, p)| argmax(p))
        .collect();
    let labels: Vec<usize> = refs.iter().map(|&r| corpus.transition(r).action).collect();
    action_metrics(&pred, &labels)
}

/// Action metrics on the clean test split, rollout reward when `env` is
/// given, and per-set skill selection distributions of the bi encoder.
pub fn evaluate(
    model: &SkillModel<f32>,
    corpus: &Corpus,
    split: &Split,
    env: Option<&Env>,
    rollouts: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let m = sdil_action_metrics(model, corpus, &clean_test_refs(corpus, split))?;
    let reward = match env {
        Some(env) => {
            let mut p = SdilPolicy::new(model);
            Some(rollout_reward(env, &mut p as &mut dyn Policy, rollouts, seed)?)
        }
        None => None,
    };
    let dist = |label| {
        let refs = corpus.refs(&corpus.indices(label));
        skill_selection_distribution(model, corpus, &refs, EncoderMode::Bi)
    };
    Ok(MetricsReport {
        accuracy: m.accuracy,
        macro_f1: m.macro_f1,
        reward,
        clean_distribution: dist(Label::Clean)?,
        noisy_distribution: dist(Label::Noisy)?,
    })
}

/// Negative set from a phase-1 table over its training pool.
pub fn negatives_from(corpus: &Corpus, split: &Split, table: &OptimalityTable, cfg: &RunConfig) -> Result<NegativeSet> {
    let pool = crate::discovery::Pool::train(corpus, split);
    collect_negatives(&pool.refs, &pool.labels, &table.scores, cfg.theta_neg)
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub discovered: SkillModel<f32>,
    pub table: OptimalityTable,
    pub model: SkillModel<f32>,
    pub report: MetricsReport,
    pub log: Vec<String>,
}

/// Discovery, both reuse steps and evaluation.
pub fn run_pipeline(corpus: &Corpus, cfg: &RunConfig, env: Option<&Env>) -> Result<PipelineRun> {
    if corpus.is_empty() {
        return Err(Error::Generation("empty corpus".into()));
    }
    let split = corpus.split(cfg.split_seed);
    let d = run_discovery(corpus, cfg)?;
    let negatives = negatives_from(corpus, &split, &d.table, cfg)?;
    let r = run_reuse(corpus, &split, &d.model, &negatives, cfg)?;
    let report = evaluate(&r.model, corpus, &split, env, cfg.rollouts, cfg.seed)?;
    let mut log = d.log;
    log.extend(r.log);
    Ok(PipelineRun {
        discovered: d.model,
        table: d.table,
        model: r.model,
        report,
        log,
    })
}
