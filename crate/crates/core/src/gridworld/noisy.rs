use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{Corpus, Label, Trajectory};
use super::env::{Env, Pos};
use super::planner::{plan_expert, reachable_cells, shortest_path};
use crate::error::Result;

/// Share of decoy-goal trajectories in a generated noisy set.
pub const DECOY_FRACTION: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// Shortest path to a random non-goal cell, never touching the goal.
    Decoy,
    /// Uniform random actions until the goal or the step limit.
    RandomWalk,
}

pub fn generate_noisy<G: Rng + ?Sized>(
    env: &Env,
    start: Pos,
    mode: NoiseMode,
    id: usize,
    rng: &mut G,
) -> Result<Trajectory> {
    let s0 = env.initial_state(start)?;
    if mode == NoiseMode::Decoy {
        let candidates: Vec<Pos> = reachable_cells(env, &s0, Some(env.goal))
            .into_iter()
            .filter(|&p| p != start && p != env.goal)
            .collect();
        if let Some(&decoy) = candidates.choose(rng) {
            let path = shortest_path(env, &s0, Some(env.goal), |s| s.agent == decoy)
                .expect("decoy taken from the reachable set");
            let mut traj = Trajectory::record(env, id, Label::Noisy, s0, &path)?;
            traj.outcome = Some(super::env::Outcome::Elsewhere);
            return Ok(traj);
        }
    }
    let actions: Vec<usize> = (0..env.max_steps).map(|_| rng.gen_range(0..env.n_actions())).collect();
    Trajectory::record(env, id, Label::Noisy, s0, &actions)
}

/// `n_clean` expert and `n_noisy` mixed-quality trajectories from uniform
/// random starts. Clean ids come first.
pub fn generate_corpus(env: &Env, n_clean: usize, n_noisy: usize, seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::for_env(env);
    let starts = env.start_cells();
    for id in 0..n_clean {
        let start = *starts.choose(&mut rng).expect("env has starts");
        corpus.push(plan_expert(env, start, id)?)?;
    }
    for id in n_clean..n_clean + n_noisy {
        let start = *starts.choose(&mut rng).expect("env has starts");
        let mode = if rng.gen_bool(DECOY_FRACTION) {
            NoiseMode::Decoy
        } else {
            NoiseMode::RandomWalk
        };
        corpus.push(generate_noisy(env, start, mode, id, &mut rng)?)?;
    }
    Ok(corpus)
}
