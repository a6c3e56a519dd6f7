use rand::Rng;

use crate::diffcore::gumbel_sample;

/// Probabilities are floored here before taking logs.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

/// Euclidean distances are floored here in the inverse-distance matcher.
pub const DIST_FLOOR: f64 = 1e-8;

/// A hard skill choice together with the distribution it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillSelection {
    pub probs: Vec<f64>,
    /// Zero-based skill index.
    pub index: usize,
    pub one_hot: Vec<f64>,
}

/// `argmax_i (g_i + ln max(p_i, 1e-12)) / t`; ties go to the lowest index.
pub fn gumbel_argmax(probs: &[f64], noise: Option<&[f64]>, temperature: f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &p) in probs.iter().enumerate() {
        let g = noise.map_or(0.0, |n| n[i]);
        let v = (g + p.max(LOG_PROB_FLOOR).ln()) / temperature;
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Hard selection with explicit Gumbel noise; `None` forces all noise to zero.
pub fn select_skill(probs: &[f64], temperature: f64, noise: Option<&[f64]>) -> SkillSelection {
    let index = gumbel_argmax(probs, noise, temperature);
    let mut one_hot = vec![0.0; probs.len()];
    one_hot[index] = 1.0;
    SkillSelection {
        probs: probs.to_vec(),
        index,
        one_hot,
    }
}

/// Hard selection with freshly drawn Gumbel noise.
pub fn sample_skill<G: Rng + ?Sized>(probs: &[f64], temperature: f64, rng: &mut G) -> SkillSelection {
    let noise: Vec<f64> = (0..probs.len()).map(|_| gumbel_sample(rng)).collect();
    select_skill(probs, temperature, Some(&noise))
}

/// `rows * k` Gumbel draws, row-major.
pub fn gumbel_noise<G: Rng + ?Sized>(rows: usize, k: usize, rng: &mut G) -> Vec<f64> {
    (0..rows * k).map(|_| gumbel_sample(rng)).collect()
}
