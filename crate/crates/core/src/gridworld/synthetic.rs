//! Two-policy fixture: clean trajectories follow policy A in the left half of
//! an open room, noisy ones follow policy B in the right half.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::{Corpus, Label, Trajectory};
use super::env::{Action, Env, Pos};
use crate::error::Result;

const WIDTH: usize = 10;
const HEIGHT: usize = 5;

/// 10x5 open room with the goal in the bottom-left corner.
pub fn two_policy_env() -> Env {
    Env::open_room(WIDTH, HEIGHT, Pos::new(0, HEIGHT - 1), 100).expect("valid fixture")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwoPolicy {
    /// Down to the bottom row, then left to the goal.
    A,
    /// Up to the top row, then right to the top-right corner.
    B,
}

impl TwoPolicy {
    pub fn action(self, env: &Env, p: Pos) -> usize {
        match self {
            TwoPolicy::A if p.y + 1 < env.height => Action::Down.id(),
            TwoPolicy::A => Action::Left.id(),
            TwoPolicy::B if p.y > 0 => Action::Up.id(),
            TwoPolicy::B => Action::Right.id(),
        }
    }

    fn terminal(self, env: &Env) -> Pos {
        match self {
            TwoPolicy::A => env.goal,
            TwoPolicy::B => Pos::new(env.width - 1, 0),
        }
    }

    fn in_region(self, env: &Env, p: Pos) -> bool {
        match self {
            TwoPolicy::A => p.x < env.width / 2,
            TwoPolicy::B => p.x >= env.width / 2,
        }
    }

    /// Start cells of the policy's region, minus its terminal cell.
    pub fn starts(self, env: &Env) -> Vec<Pos> {
        env.cells()
            .filter(|&p| self.in_region(env, p) && p != self.terminal(env))
            .collect()
    }

    pub fn rollout(self, env: &Env, start: Pos, id: usize, label: Label) -> Result<Trajectory> {
        let mut p = start;
        let mut actions = Vec::new();
        while p != self.terminal(env) {
            let a = self.action(env, p);
            actions.push(a);
            let s = env.step(&super::env::State::at(p), a)?;
            p = s.state.agent;
        }
        Trajectory::record(env, id, label, env.initial_state(start)?, &actions)
    }
}

pub fn two_policy_corpus(n_clean: usize, n_noisy: usize, seed: u64) -> Result<(Env, Corpus)> {
    let env = two_policy_env();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::for_env(&env);
    let (sa, sb) = (TwoPolicy::A.starts(&env), TwoPolicy::B.starts(&env));
    for id in 0..n_clean {
        let start = *sa.choose(&mut rng).expect("nonempty region");
        corpus.push(TwoPolicy::A.rollout(&env, start, id, Label::Clean)?)?;
    }
    for id in n_clean..n_clean + n_noisy {
        let start = *sb.choose(&mut rng).expect("nonempty region");
        corpus.push(TwoPolicy::B.rollout(&env, start, id, Label::Noisy)?)?;
    }
    Ok((env, corpus))
}
