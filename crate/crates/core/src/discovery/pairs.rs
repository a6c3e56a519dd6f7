use rand::Rng;

/// Positive and negative partners of one anchor, as pool indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSample {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Keeps a candidate iff `|score - anchor_score| <= 2 (1 - ε)`.
pub fn keep_positive(anchor_score: f64, score: f64, epsilon: f64) -> bool {
    (score - anchor_score).abs() <= 2.0 * (1.0 - epsilon)
}

/// Draws `n_pos` candidates uniformly from the anchor's cluster and filters
/// them by optimality score; draws `n_neg` negatives uniformly from the other
/// clusters. An empty filtered pool falls back to the anchor itself.
pub fn sample_pairs<G: Rng + ?Sized>(
    anchor: usize,
    ids: &[usize],
    members: &[Vec<usize>],
    scores: &[f64],
    epsilon: f64,
    n_pos: usize,
    n_neg: usize,
    rng: &mut G,
) -> PairSample {
    let own = ids[anchor];
    let cluster = &members[own];
    let mut positives: Vec<usize> = (0..n_pos)
        .map(|_| cluster[rng.gen_range(0..cluster.len())])
        .filter(|&j| keep_positive(scores[anchor], scores[j], epsilon))
        .collect();
    if positives.is_empty() {
        positives.push(anchor);
    }

    let outside = ids.len() - cluster.len();
    let negatives = (0..n_neg)
        .map(|_| {
            if outside == 0 {
                let j = rng.gen_range(0..ids.len() - 1);
                return if j >= anchor { j + 1 } else { j };
            }
            let mut r = rng.gen_range(0..outside);
            for (c, m) in members.iter().enumerate() {
                if c == own {
                    continue;
                }
                if r < m.len() {
                    return m[r];
                }
                r -= m.len();
            }
            unreachable!("r < outside")
        })
        .collect();
    PairSample {
        anchor,
        positives,
        negatives,
    }
}
