use rand::Rng;

use crate::error::{Error, Result};

/// Where a batch's cluster ids came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterSource {
    /// k-means over raw states, computed once before training.
    Precomputed,
    /// k-means over current skill embeddings, recomputed each epoch.
    Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub ids: Vec<usize>,
    pub k: usize,
    pub source: ClusterSource,
    /// Probability of using embedding clusters at the time of assignment.
    pub zeta: f64,
}

impl ClusterAssignment {
    /// Member lists per cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &c) in self.ids.iter().enumerate() {
            m[c].push(i);
        }
        m
    }
}

/// `min(1, step * epoch)`.
pub fn zeta(epoch: usize, step: f64) -> f64 {
    (step * epoch as f64).min(1.0)
}

/// One Bernoulli(ζ) draw choosing the cluster source for a batch.
pub fn choose_source<G: Rng + ?Sized>(zeta: f64, rng: &mut G) -> ClusterSource {
    if zeta > 0.0 && rng.gen_bool(zeta.min(1.0)) {
        ClusterSource::Embedding
    } else {
        ClusterSource::Precomputed
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters are re-seeded with
/// the point farthest from its centroid.
pub fn kmeans<G: Rng + ?Sized>(points: &[Vec<f64>], k: usize, iters: usize, rng: &mut G) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::contract("kmeans with k = 0"));
    }
    if points.len() < k {
        return Err(Error::Generation(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq(p, &centers[centers.len() - 1]));
        }
    }

    let assign_all = |centers: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = 0;
                let mut bd = f64::INFINITY;
                for (c, ctr) in centers.iter().enumerate() {
                    let d = sq(p, ctr);
                    if d < bd {
                        bd = d;
                        best = c;
                    }
                }
                best
            })
            .collect()
    };

    let dim = points[0].len();
    let mut ids = assign_all(&centers);
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&ids) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq(&points[a], &centers[ids[a]]);
                        let db = sq(&points[b], &centers[ids[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("n > 0");
                centers[c] = points[far].clone();
                counts[ids[far]] -= 1;
                ids[far] = c;
                counts[c] = 1;
            }
        }
        let next = assign_all(&centers);
        if next == ids {
            break;
        }
        ids = next;
    }
    Ok(ids)
}

/// Fraction of points whose label is the majority label of their cluster.
pub fn purity<L: Eq + std::hash::Hash + Copy>(ids: &[usize], labels: &[L]) -> f64 {
    if ids.is_empty() {
        return 1.0;
    }
    let mut counts: std::collections::HashMap<(usize, L), usize> = std::collections::HashMap::new();
    for (&c, &l) in ids.iter().zip(labels) {
        *counts.entry((c, l)).or_default() += 1;
    }
    let mut best: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for ((c, _), n) in counts {
        let e = best.entry(c).or_default();
        *e = (*e).max(n);
    }
    best.values().sum::<usize>() as f64 / ids.len() as f64
}

pub fn cluster_points<G: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    iters: usize,
    source: ClusterSource,
    zeta: f64,
    rng: &mut G,
) -> Result<ClusterAssignment> {
    if k < 2 {
        return Err(Error::contract("clustering needs K_c >= 2"));
    }
    Ok(ClusterAssignment {
        ids: kmeans(points, k, iters, rng)?,
        k,
        source,
        zeta,
    })
}
