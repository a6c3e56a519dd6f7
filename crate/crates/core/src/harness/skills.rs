use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::gridworld::{Corpus, Env, Pos, TransRef};
use crate::policy::{EncoderMode, SkillModel};

use super::rollout::{episode_start, Policy, SdilPolicy};

/// Mean of `p(z_t = z^k)` over the given transitions.
pub fn skill_selection_distribution(
    model: &SkillModel<f32>,
    corpus: &Corpus,
    refs: &[TransRef],
    mode: EncoderMode,
) -> Result<Vec<f64>> {
    if refs.is_empty() {
        return Err(Error::contract("selection distribution over no transitions"));
    }
    let probs = model.skill_probs_corpus(corpus, refs, mode)?;
    let mut out = vec![0.0; model.dims.n_skills];
    for row in &probs {
        for (o, p) in out.iter_mut().zip(row) {
            *o += p;
        }
    }
    Ok(out.into_iter().map(|v| v / refs.len() as f64).collect())
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

/// Skill indices ordered by descending optimality, lowest index first on ties.
pub fn rank_skills(op: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..op.len()).collect();
    idx.sort_by(|&a, &b| op[b].total_cmp(&op[a]).then(a.cmp(&b)));
    idx
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkillCell {
    pub pos: Pos,
    /// Most frequent action, lowest id on ties.
    pub action: usize,
    /// Share of visits that took `action`.
    pub consistency: f64,
    pub visits: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkillMap {
    pub skill: usize,
    pub cells: Vec<SkillCell>,
}

impl SkillMap {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("# x\ty\taction\tconsistency\tvisits\n");
        for c in &self.cells {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", c.pos.x, c.pos.y, c.action, c.consistency, c.visits);
        }
        s
    }
}

/// Rolls out with the skill pinned to `z^k` and records, per cell, the
/// actions taken where the history-only encoder would itself pick `k`.
pub fn export_skill_map(model: &SkillModel<f32>, env: &Env, k: usize, n_rollouts: usize, seed: u64) -> Result<SkillMap> {
    if k >= model.dims.n_skills {
        return Err(Error::contract(format!("skill {k} out of range")));
    }
    let mut policy = SdilPolicy::new(model);
    policy.fixed_skill = Some(k);
    let mut counts: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..n_rollouts {
        let mut state = env.initial_state(episode_start(env, seed, i))?;
        policy.reset();
        loop {
            let f = env.features(&state);
            let own = policy.select(&f)? == k;
            let a = policy.act(env, &state)?;
            if own {
                counts.entry((state.agent.y, state.agent.x)).or_insert_with(|| vec![0; env.n_actions()])[a] += 1;
            }
            let r = env.step(&state, a)?;
            if r.done {
                break;
            }
            state = r.state;
        }
    }
    let cells = counts
        .into_iter()
        .map(|((y, x), c)| {
            let visits: usize = c.iter().sum();
            let mut action = 0;
            for (a, &n) in c.iter().enumerate() {
                if n > c[action] {
                    action = a;
                }
            }
            SkillCell {
                pos: Pos::new(x, y),
                action,
                consistency: c[action] as f64 / visits as f64,
                visits,
            }
        })
        .collect();
    Ok(SkillMap { skill: k, cells })
}
