use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gridworld::{Env, State};
use crate::policy::{gumbel_argmax, EncoderInput, EncoderMode, SkillModel};

use super::metrics::argmax;

/// Anything that picks an action for a state, possibly using the episode
/// so far.
pub trait Policy {
    /// Called at the start of every episode.
    fn reset(&mut self) {}
    fn act(&mut self, env: &Env, state: &State) -> Result<usize>;
}

impl<F: FnMut(&Env, &State) -> Result<usize>> Policy for F {
    fn act(&mut self, env: &Env, state: &State) -> Result<usize> {
        self(env, state)
    }
}

/// The reuse-phase policy: history-only encoder, noise-free skill choice
/// and greedy actions.
#[derive(Clone, Debug)]
pub struct SdilPolicy<'a> {
    model: &'a SkillModel<f32>,
    history: Vec<(Vec<f32>, usize)>,
    /// Pins the skill instead of selecting it.
    pub fixed_skill: Option<usize>,
}

impl<'a> SdilPolicy<'a> {
    pub fn new(model: &'a SkillModel<f32>) -> Self {
        Self {
            model,
            history: Vec::new(),
            fixed_skill: None,
        }
    }

    /// Skill the history-only encoder would select for `features` now.
    pub fn select(&self, features: &[f32]) -> Result<usize> {
        let input = EncoderInput::from_history(&self.history, features, self.model.dims.window);
        let z = self.model.encode_skill(&input, EncoderMode::Uni)?;
        let p = self.model.match_skill(&z)?;
        Ok(gumbel_argmax(&p, None, 1.0))
    }

    /// Greedy action under skill `k`.
    pub fn action_for(&self, features: &[f32], k: usize) -> Result<usize> {
        let probs = self.model.predict_action(features, &self.model.prototype(k))?;
        Ok(argmax(&probs))
    }

    /// Records a step taken outside [`Policy::act`].
    pub fn observe(&mut self, features: Vec<f32>, action: usize) {
        self.history.push((features, action));
    }
}

impl Policy for SdilPolicy<'_> {
    fn reset(&mut self) {
        self.history.clear();
    }

    fn act(&mut self, env: &Env, state: &State) -> Result<usize> {
        let f = env.features(state);
        let k = match self.fixed_skill {
            Some(k) => k,
            None => self.select(&f)?,
        };
        let a = self.action_for(&f, k)?;
        self.history.push((f, a));
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStats {
    pub mean: f64,
    pub std: f64,
    /// Per-episode rewards in episode order.
    pub rewards: Vec<f64>,
}

impl RolloutStats {
    pub fn from_rewards(rewards: Vec<f64>) -> Self {
        let n = rewards.len().max(1) as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            rewards,
        }
    }
}

/// Start cell of episode `i`, drawn from the stream seeded with `seed + i`.
pub fn episode_start(env: &Env, seed: u64, i: usize) -> crate::gridworld::Pos {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
    let starts = env.start_cells();
    starts[rng.gen_range(0..starts.len())]
}

/// Runs one episode from `start` and returns its reward.
pub fn run_episode(env: &Env, policy: &mut dyn Policy, start: crate::gridworld::Pos) -> Result<f64> {
    let mut state = env.initial_state(start)?;
    policy.reset();
    loop {
        let a = policy.act(env, &state)?;
        let r = env.step(&state, a)?;
        if r.done {
            return Ok(r.reward);
        }
        state = r.state;
    }
}

/// Mean and population standard deviation of episode rewards.
pub fn rollout_reward(env: &Env, policy: &mut dyn Policy, n_episodes: usize, seed: u64) -> Result<RolloutStats> {
    if n_episodes == 0 {
        return Err(Error::contract("rollout_reward needs at least one episode"));
    }
    let rewards = (0..n_episodes)
        .map(|i| run_episode(env, policy, episode_start(env, seed, i)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RolloutStats::from_rewards(rewards))
}
