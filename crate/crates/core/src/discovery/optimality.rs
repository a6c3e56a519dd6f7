use crate::error::{Error, Result};
use crate::gridworld::Label;

/// Guards the preference ratio against an unused skill.
pub const PREF_DELTA: f64 = 1e-8;

/// Per-skill statistics of the positive-unlabeled estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillStats {
    pub p_clean: Vec<f64>,
    pub p_noisy: Vec<f64>,
    /// Expert preference `(p_clean - p_noisy) / (p_clean + δ)`.
    pub pref: Vec<f64>,
    /// Selection-weighted action likelihood.
    pub qual: Vec<f64>,
    /// `pref * qual` min-max normalized onto `[-1, 1]`.
    pub op: Vec<f64>,
}

impl SkillStats {
    /// Neutral statistics used before the first estimate.
    pub fn neutral(k: usize) -> Self {
        Self {
            p_clean: vec![1.0 / k as f64; k],
            p_noisy: vec![1.0 / k as f64; k],
            pref: vec![0.0; k],
            qual: vec![0.0; k],
            op: vec![0.0; k],
        }
    }

    pub fn from_parts(p_clean: Vec<f64>, p_noisy: Vec<f64>, qual: Vec<f64>) -> Self {
        let pref: Vec<f64> = p_clean
            .iter()
            .zip(&p_noisy)
            .map(|(c, n)| (c - n) / (c + PREF_DELTA))
            .collect();
        let prod: Vec<f64> = pref.iter().zip(&qual).map(|(p, q)| p * q).collect();
        let op = min_max_signed(&prod);
        Self {
            p_clean,
            p_noisy,
            pref,
            qual,
            op,
        }
    }
}

/// Maps the minimum to -1 and the maximum to +1; all-equal input maps to zeros.
pub fn min_max_signed(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() || hi == lo {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| 2.0 * (x - lo) / (hi - lo) - 1.0).collect()
}

/// Statistics from per-transition skill probabilities `probs[t][k]`, set
/// labels, and per-skill action likelihoods `act[t][k] = p(a_t | s_t, z^k)`.
pub fn estimate_skill_optimality(probs: &[Vec<f64>], labels: &[Label], act: &[Vec<f64>]) -> Result<SkillStats> {
    if probs.len() != labels.len() || probs.len() != act.len() {
        return Err(Error::contract("probs, labels and likelihoods must align"));
    }
    let k = probs.first().map_or(0, Vec::len);
    let mean_of = |label: Label| -> Result<Vec<f64>> {
        let rows: Vec<&Vec<f64>> = probs.iter().zip(labels).filter(|(_, &l)| l == label).map(|(p, _)| p).collect();
        if rows.is_empty() {
            return Err(Error::Generation(format!("no {} transitions", label.as_str())));
        }
        let mut m = vec![0.0; k];
        for r in &rows {
            for (a, b) in m.iter_mut().zip(r.iter()) {
                *a += b;
            }
        }
        Ok(m.into_iter().map(|v| v / rows.len() as f64).collect())
    };
    let p_clean = mean_of(Label::Clean)?;
    let p_noisy = mean_of(Label::Noisy)?;
    let qual = (0..k)
        .map(|j| {
            let (num, den) = probs.iter().zip(act).fold((0.0, 0.0), |(n, d), (p, a)| (n + p[j] * a[j], d + p[j]));
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect();
    Ok(SkillStats::from_parts(p_clean, p_noisy, qual))
}

/// Clean transitions score 1; noisy ones get `Σ_k p_k s^op_k`.
pub fn propagate_optimality(label: Label, probs: &[f64], op: &[f64]) -> f64 {
    match label {
        Label::Clean => 1.0,
        Label::Noisy => probs.iter().zip(op).map(|(p, o)| p * o).sum(),
    }
}

/// Skill statistics plus propagated scores for the training pool.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalityTable {
    pub stats: SkillStats,
    /// Aligned with the training pool.
    pub scores: Vec<f64>,
    /// Number of estimates made so far.
    pub refreshes: usize,
}

impl OptimalityTable {
    /// Before any estimate: clean transitions 1, noisy 0.
    pub fn initial(k: usize, labels: &[Label]) -> Self {
        let stats = SkillStats::neutral(k);
        let scores = labels.iter().map(|&l| propagate_optimality(l, &stats.p_clean, &stats.op)).collect();
        Self {
            stats,
            scores,
            refreshes: 0,
        }
    }

    pub fn refresh(&mut self, probs: &[Vec<f64>], labels: &[Label], act: &[Vec<f64>]) -> Result<()> {
        let stats = estimate_skill_optimality(probs, labels, act)?;
        self.scores = probs
            .iter()
            .zip(labels)
            .map(|(p, &l)| propagate_optimality(l, p, &stats.op))
            .collect();
        self.stats = stats;
        self.refreshes += 1;
        Ok(())
    }
}
