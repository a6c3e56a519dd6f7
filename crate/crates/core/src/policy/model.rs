use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};

use super::input::{EncoderInput, EncoderMode};
use super::mlp::Mlp;
use super::select::{gumbel_argmax, DIST_FLOOR, LOG_PROB_FLOOR};

pub const ENCODER_HIDDEN: [usize; 2] = [128, 64];
pub const POLICY_HIDDEN: [usize; 2] = [64, 64];
pub const CRITIC_HIDDEN: [usize; 1] = [64];
/// Prototypes start uniform on `[-PROTOTYPE_INIT, PROTOTYPE_INIT]`.
pub const PROTOTYPE_INIT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub state_dim: usize,
    pub n_actions: usize,
    /// Look-back window length M.
    pub window: usize,
    /// Number of prototypes K.
    pub n_skills: usize,
    /// Prototype width d_z.
    pub skill_dim: usize,
}

impl ModelDims {
    /// `M * (d_s + |A|) + d_s`, plus `d_s` in bi mode.
    pub fn encoder_input(&self, mode: EncoderMode) -> usize {
        let base = self.window * (self.state_dim + self.n_actions) + self.state_dim;
        match mode {
            EncoderMode::Bi => base + self.state_dim,
            EncoderMode::Uni => base,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.n_actions == 0 || self.n_skills == 0 || self.skill_dim == 0 {
            return Err(Error::contract(format!("invalid model dims {self:?}")));
        }
        Ok(())
    }
}

/// Parameter groups that train or freeze together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    EncoderBi,
    EncoderUni,
    Matcher,
    Policy,
    Critic,
}

/// Outputs of the skill path for one batch.
#[derive(Clone, Debug)]
pub struct SkillForward {
    pub embedding: Var,
    pub probs: Var,
    pub hard: Vec<usize>,
    pub one_hot: Var,
    pub skill: Var,
}

/// Encoders, prototype bank, skill-conditioned policy and compatibility
/// estimator, all in one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillModel<R = f32> {
    pub dims: ModelDims,
    pub store: ParamStore<R>,
    f_bi: Mlp,
    f_uni: Mlp,
    prototypes: ParamId,
    pi_low: Mlp,
    critic: Mlp,
}

impl<R: Real> SkillModel<R> {
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = |mode| {
            let mut s = vec![dims.encoder_input(mode)];
            s.extend(ENCODER_HIDDEN);
            s.push(dims.skill_dim);
            s
        };
        let f_bi = Mlp::new(&mut store, "f_bi", &enc(EncoderMode::Bi), &mut rng);
        let f_uni = Mlp::new(&mut store, "f_uni", &enc(EncoderMode::Uni), &mut rng);
        let protos = (0..dims.n_skills * dims.skill_dim)
            .map(|_| R::of(rng.gen_range(-PROTOTYPE_INIT..PROTOTYPE_INIT)))
            .collect();
        let prototypes = store.add("g.prototypes", Tensor::new(vec![dims.n_skills, dims.skill_dim], protos)?);
        let mut ps = vec![dims.state_dim + dims.skill_dim];
        ps.extend(POLICY_HIDDEN);
        ps.push(dims.n_actions);
        let pi_low = Mlp::new(&mut store, "pi_low", &ps, &mut rng);
        let mut cs = vec![dims.state_dim + dims.n_actions + dims.skill_dim];
        cs.extend(CRITIC_HIDDEN);
        cs.push(1);
        let critic = Mlp::new(&mut store, "critic", &cs, &mut rng);
        Ok(Self {
            dims,
            store,
            f_bi,
            f_uni,
            prototypes,
            pi_low,
            critic,
        })
    }

    /// Same architecture and values in another scalar type.
    pub fn cast<S: Real>(&self) -> SkillModel<S> {
        SkillModel {
            dims: self.dims,
            store: self.store.cast(),
            f_bi: self.f_bi.clone(),
            f_uni: self.f_uni.clone(),
            prototypes: self.prototypes,
            pi_low: self.pi_low.clone(),
            critic: self.critic.clone(),
        }
    }

    pub fn group(&self, g: Group) -> Vec<ParamId> {
        match g {
            Group::EncoderBi => self.f_bi.params(),
            Group::EncoderUni => self.f_uni.params(),
            Group::Matcher => vec![self.prototypes],
            Group::Policy => self.pi_low.params(),
            Group::Critic => self.critic.params(),
        }
    }

    pub fn groups(&self, gs: &[Group]) -> Vec<ParamId> {
        gs.iter().flat_map(|&g| self.group(g)).collect()
    }

    pub fn prototypes_id(&self) -> ParamId {
        self.prototypes
    }

    /// Row `k` of the prototype bank.
    pub fn prototype(&self, k: usize) -> Vec<f64> {
        let d = self.dims.skill_dim;
        self.store.get(self.prototypes).data()[k * d..(k + 1) * d]
            .iter()
            .map(|v| v.f64())
            .collect()
    }

    /// Zeroes the output layer of a network group (no-op for the matcher).
    pub fn zero_output(&mut self, g: Group) {
        let net = match g {
            Group::EncoderBi => &self.f_bi,
            Group::EncoderUni => &self.f_uni,
            Group::Policy => &self.pi_low,
            Group::Critic => &self.critic,
            Group::Matcher => return,
        };
        net.zero_output(&mut self.store);
    }

    // ---- graph building blocks ------------------------------------------

    pub fn encode(&self, g: &mut Graph<R>, x: Var, mode: EncoderMode) -> Result<Var> {
        let net = match mode {
            EncoderMode::Bi => &self.f_bi,
            EncoderMode::Uni => &self.f_uni,
        };
        net.forward(g, &self.store, x)
    }

    /// Inverse-distance probabilities `[n, K]` for embeddings `[n, d_z]`.
    pub fn match_probs(&self, g: &mut Graph<R>, z: Var) -> Result<Var> {
        let p = g.param(&self.store, self.prototypes)?;
        let d2 = g.sq_dist(z, p)?;
        let d = g.sqrt_floor(d2, DIST_FLOOR)?;
        let inv = g.recip(d)?;
        g.normalize_rows(inv)
    }

    /// Hard Gumbel-max choice per row with a straight-through softmax
    /// surrogate. `noise` is row-major `[n, K]`; `None` means zero noise.
    pub fn select(&self, g: &mut Graph<R>, probs: Var, noise: Option<&[f64]>, temperature: f64) -> Result<(Var, Vec<usize>)> {
        let k = self.dims.n_skills;
        let pv = g.value(probs).to_f64_vec();
        let n = pv.len() / k;
        if let Some(nz) = noise {
            if nz.len() != pv.len() {
                return Err(Error::contract(format!("noise has {} entries, expected {}", nz.len(), pv.len())));
            }
        }
        let hard: Vec<usize> = (0..n)
            .map(|i| gumbel_argmax(&pv[i * k..(i + 1) * k], noise.map(|nz| &nz[i * k..(i + 1) * k]), temperature))
            .collect();
        let mut logits = g.log_floor(probs, LOG_PROB_FLOOR)?;
        if let Some(nz) = noise {
            let gn = g.constant(Tensor::from_f64(&[n, k], nz)?)?;
            logits = g.add(logits, gn)?;
        }
        let scaled = g.scale(logits, 1.0 / temperature)?;
        let soft = g.softmax(scaled)?;
        let st = g.straight_through(soft, &hard)?;
        Ok((st, hard))
    }

    /// Selected prototype rows: `one_hot [n, K] . prototypes`.
    pub fn skill_vectors(&self, g: &mut Graph<R>, one_hot: Var) -> Result<Var> {
        let p = g.param(&self.store, self.prototypes)?;
        g.matmul(one_hot, p)
    }

    /// Full skill path: encode, match, select, embed.
    pub fn skill_forward(
        &self,
        g: &mut Graph<R>,
        x: Var,
        mode: EncoderMode,
        noise: Option<&[f64]>,
        temperature: f64,
    ) -> Result<SkillForward> {
        let embedding = self.encode(g, x, mode)?;
        let probs = self.match_probs(g, embedding)?;
        let (one_hot, hard) = self.select(g, probs, noise, temperature)?;
        let skill = self.skill_vectors(g, one_hot)?;
        Ok(SkillForward {
            embedding,
            probs,
            hard,
            one_hot,
            skill,
        })
    }

    /// Action log-probabilities `[n, |A|]` from states `[n, d_s]` and skills `[n, d_z]`.
    pub fn action_log_probs(&self, g: &mut Graph<R>, states: Var, skills: Var) -> Result<Var> {
        let x = g.concat(&[states, skills])?;
        let logits = self.pi_low.forward(g, &self.store, x)?;
        g.log_softmax(logits)
    }

    /// Action probabilities `[n, |A|]`.
    pub fn action_probs(&self, g: &mut Graph<R>, states: Var, skills: Var) -> Result<Var> {
        let x = g.concat(&[states, skills])?;
        let logits = self.pi_low.forward(g, &self.store, x)?;
        g.softmax(logits)
    }

    /// Compatibility scores `[n, 1]`.
    pub fn compatibility_scores(&self, g: &mut Graph<R>, states: Var, actions: Var, skills: Var) -> Result<Var> {
        let x = g.concat(&[states, actions, skills])?;
        self.critic.forward(g, &self.store, x)
    }

    // ---- single-example evaluation ----------------------------------------

    pub fn encode_skill(&self, input: &EncoderInput, mode: EncoderMode) -> Result<Vec<f64>> {
        let x: Vec<R> = input.flatten(&self.dims, mode)?;
        let mut g = Graph::inference();
        let xv = g.constant(Tensor::new(vec![1, x.len()], x)?)?;
        let z = self.encode(&mut g, xv, mode)?;
        Ok(g.value(z).to_f64_vec())
    }

    pub fn match_skill(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dims.skill_dim {
            return Err(Error::contract("embedding width != d_z"));
        }
        let mut g = Graph::inference();
        let zv = g.constant(Tensor::from_f64(&[1, z.len()], z)?)?;
        let p = self.match_probs(&mut g, zv)?;
        Ok(g.value(p).to_f64_vec())
    }

    pub fn predict_action(&self, state: &[f32], skill: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let s = g.constant(Tensor::new(vec![1, state.len()], state.iter().map(|&v| R::of(v as f64)).collect())?)?;
        let z = g.constant(Tensor::from_f64(&[1, skill.len()], skill)?)?;
        let lp = self.action_log_probs(&mut g, s, z)?;
        Ok(g.value(lp).to_f64_vec().into_iter().map(f64::exp).collect())
    }

    pub fn compatibility(&self, state: &[f32], action: usize, skill: &[f64]) -> Result<f64> {
        let mut g = Graph::inference();
        let s = g.constant(Tensor::new(vec![1, state.len()], state.iter().map(|&v| R::of(v as f64)).collect())?)?;
        let a = g.constant(super::input::one_hot(&[action], self.dims.n_actions)?)?;
        let z = g.constant(Tensor::from_f64(&[1, skill.len()], skill)?)?;
        let t = self.compatibility_scores(&mut g, s, a, z)?;
        Ok(g.value(t).data()[0].f64())
    }
}
