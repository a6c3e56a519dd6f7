use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::diffcore::{Adam, Graph, ParamStore, Tensor, Var};
use crate::discovery::imitation_loss;
use crate::error::{Error, Result};
use crate::gridworld::{Corpus, Env, Split, State, TransRef};
use crate::policy::{state_batch, Mlp, EVAL_CHUNK, POLICY_HIDDEN};

use super::metrics::argmax;
use super::rollout::Policy;

const BC_STREAM: u64 = 0x5d11_0004;

/// Which demonstrations the baseline trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcSetting {
    Clean,
    Mixed,
}

impl BcSetting {
    pub fn as_str(self) -> &'static str {
        match self {
            BcSetting::Clean => "clean",
            BcSetting::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clean" => Some(BcSetting::Clean),
            "mixed" => Some(BcSetting::Mixed),
            _ => None,
        }
    }
}

/// Flat state-to-action policy.
#[derive(Clone, Debug, PartialEq)]
pub struct BcModel {
    pub store: ParamStore<f32>,
    net: Mlp,
}

impl BcModel {
    pub fn new(state_dim: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut sizes = vec![state_dim];
        sizes.extend(POLICY_HIDDEN);
        sizes.push(n_actions);
        let net = Mlp::new(&mut store, "bc", &sizes, &mut rng);
        Self { store, net }
    }

    pub fn log_probs(&self, g: &mut Graph<f32>, states: Var) -> Result<Var> {
        let logits = self.net.forward(g, &self.store, states)?;
        g.log_softmax(logits)
    }

    pub fn action_probs(&self, features: &[f32]) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let s = g.constant(Tensor::new(vec![1, features.len()], features.to_vec())?)?;
        let lp = self.log_probs(&mut g, s)?;
        Ok(g.value(lp).to_f64_vec().into_iter().map(f64::exp).collect())
    }

    /// Greedy actions for corpus transitions.
    pub fn predict(&self, corpus: &Corpus, refs: &[TransRef]) -> Result<Vec<usize>> {
        let n_actions = self.net.output_dim();
        let mut out = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(EVAL_CHUNK) {
            let mut g = Graph::inference();
            let s = g.constant(state_batch(corpus, chunk)?)?;
            let lp = self.log_probs(&mut g, s)?;
            out.extend(g.value(lp).to_f64_vec().chunks(n_actions).map(argmax));
        }
        Ok(out)
    }

    /// Mean negative log-likelihood of the recorded actions.
    pub fn nll(&self, corpus: &Corpus, refs: &[TransRef]) -> Result<f64> {
        if refs.is_empty() {
            return Err(Error::contract("nll over no transitions"));
        }
        let mut total = 0.0;
        for chunk in refs.chunks(EVAL_CHUNK) {
            let mut g = Graph::inference();
            let s = g.constant(state_batch(corpus, chunk)?)?;
            let lp = self.log_probs(&mut g, s)?;
            let actions: Vec<usize> = chunk.iter().map(|&r| corpus.transition(r).action).collect();
            let l = imitation_loss(&mut g, lp, &actions)?;
            total += g.value(l).item()? as f64 * chunk.len() as f64;
        }
        Ok(total / refs.len() as f64)
    }
}

impl Policy for BcModel {
    fn act(&mut self, env: &Env, state: &State) -> Result<usize> {
        Ok(argmax(&self.action_probs(&env.features(state))?))
    }
}

#[derive(Clone, Debug)]
pub struct BcRun {
    pub model: BcModel,
    pub log: Vec<String>,
}

/// Trains the baseline with the run's optimizer settings, early stopping on
/// clean-validation NLL.
pub fn train_bc(corpus: &Corpus, split: &Split, setting: BcSetting, cfg: &RunConfig) -> Result<BcRun> {
    cfg.validate()?;
    let mut train = corpus.refs(&split.clean.train);
    if setting == BcSetting::Mixed {
        train.extend(corpus.refs(&split.noisy.train));
    }
    if train.is_empty() {
        return Err(Error::Generation("no training transitions".into()));
    }
    let val = corpus.refs(&split.clean.val);
    let val = if val.is_empty() { corpus.refs(&split.clean.train) } else { val };
    let mut model = BcModel::new(corpus.state_dim, corpus.n_actions, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(BC_STREAM));
    let mut opt = Adam::new(cfg.adam());
    let mut best = model.nll(corpus, &val)?;
    let mut best_store = model.store.clone();
    let mut stale = 0;
    let mut log = Vec::new();
    for epoch in 0..cfg.reuse_epochs {
        let mut order = train.clone();
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let s = g.constant(state_batch(corpus, chunk)?)?;
            let lp = model.log_probs(&mut g, s)?;
            let actions: Vec<usize> = chunk.iter().map(|&r| corpus.transition(r).action).collect();
            let l = imitation_loss(&mut g, lp, &actions)?;
            let grads = g.backward(l)?;
            if !grads.is_finite() {
                return Err(Error::Numeric {
                    op: "bc",
                    detail: "non-finite gradient".into(),
                });
            }
            opt.step(&mut model.store, &grads)?;
            sum += g.value(l).item()? as f64;
            n += 1;
        }
        let v = model.nll(corpus, &val)?;
        log.push(format!(
            "phase=bc setting={} epoch={epoch} L_imi={:.6} val_L_imi={v:.6}",
            setting.as_str(),
            sum / n as f64
        ));
        if v < best {
            best = v;
            best_store = model.store.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.store = best_store;
    Ok(BcRun { model, log })
}
