use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::env::{Env, Outcome, State};
use crate::error::{Error, Result};

pub const CORPUS_MAGIC: &str = "SDILCORPUS";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Clean,
    Noisy,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Noisy => "noisy",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "clean" => Some(Label::Clean),
            "noisy" => Some(Label::Noisy),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub label: Label,
    pub transitions: Vec<Transition>,
    /// Known for generated episodes; not stored in corpus files.
    pub outcome: Option<Outcome>,
    pub reward: Option<f64>,
}

impl Trajectory {
    /// Replays `actions` from `start`, stopping early if the episode ends.
    pub fn record(env: &Env, id: usize, label: Label, start: State, actions: &[usize]) -> Result<Self> {
        let mut s = start;
        let mut transitions = Vec::with_capacity(actions.len());
        let mut outcome = Outcome::Elsewhere;
        let mut reward = 0.0;
        for &a in actions {
            transitions.push(Transition {
                state: env.features(&s),
                action: a,
            });
            let r = env.step(&s, a)?;
            s = r.state;
            reward = r.reward;
            if r.done {
                outcome = if s.agent == env.goal {
                    Outcome::Goal
                } else {
                    Outcome::Timeout
                };
                break;
            }
        }
        Ok(Self {
            id,
            label,
            transitions,
            outcome: Some(outcome),
            reward: Some(reward),
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Copy without the episode summary, as it reads back from a file.
    pub fn without_episode_info(&self) -> Self {
        Self {
            outcome: None,
            reward: None,
            ..self.clone()
        }
    }
}

/// Address of one transition inside a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransRef {
    pub traj: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub state_dim: usize,
    pub n_actions: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Train/val/test trajectory indices of one demonstration set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub clean: Partition,
    pub noisy: Partition,
}

impl Split {
    pub fn set(&self, label: Label) -> &Partition {
        match label {
            Label::Clean => &self.clean,
            Label::Noisy => &self.noisy,
        }
    }
}

impl Partition {
    /// 3:2:5 split of `ids` after a seeded shuffle.
    fn new(mut ids: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        ids.shuffle(rng);
        let n = ids.len();
        let n_train = (n as f64 * 0.3).round() as usize;
        let n_val = ((n as f64 * 0.2).round() as usize).min(n - n_train);
        let mut test = ids.split_off(n_train + n_val);
        let mut val = ids.split_off(n_train);
        let mut train = ids;
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { train, val, test }
    }
}

impl Corpus {
    pub fn new(state_dim: usize, n_actions: usize) -> Self {
        Self {
            state_dim,
            n_actions,
            trajectories: Vec::new(),
        }
    }

    pub fn for_env(env: &Env) -> Self {
        Self::new(env.state_dim(), env.n_actions())
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        if traj.is_empty() {
            return Err(Error::contract(format!("trajectory {} is empty", traj.id)));
        }
        for tr in &traj.transitions {
            if tr.state.len() != self.state_dim || tr.action >= self.n_actions {
                return Err(Error::contract(format!(
                    "trajectory {} does not match corpus dims ({}, {})",
                    traj.id, self.state_dim, self.n_actions
                )));
            }
        }
        self.trajectories.push(traj);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Indices of trajectories carrying `label`.
    pub fn indices(&self, label: Label) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.trajectories[i].label == label)
            .collect()
    }

    pub fn transition(&self, r: TransRef) -> &Transition {
        &self.trajectories[r.traj].transitions[r.step]
    }

    pub fn label(&self, r: TransRef) -> Label {
        self.trajectories[r.traj].label
    }

    /// Every transition of the listed trajectories, in order.
    pub fn refs(&self, trajs: &[usize]) -> Vec<TransRef> {
        trajs
            .iter()
            .flat_map(|&traj| (0..self.trajectories[traj].len()).map(move |step| TransRef { traj, step }))
            .collect()
    }

    pub fn all_refs(&self) -> Vec<TransRef> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.refs(&all)
    }

    /// Per-set 3:2:5 partition, reproducible from `seed`.
    pub fn split(&self, seed: u64) -> Split {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = Partition::new(self.indices(Label::Clean), &mut rng);
        let noisy = Partition::new(self.indices(Label::Noisy), &mut rng);
        Split { clean, noisy }
    }

    pub fn without_episode_info(&self) -> Self {
        Self {
            trajectories: self.trajectories.iter().map(Trajectory::without_episode_info).collect(),
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{CORPUS_MAGIC} {CORPUS_VERSION} {} {}\n",
            self.state_dim, self.n_actions
        );
        for traj in &self.trajectories {
            for (t, tr) in traj.transitions.iter().enumerate() {
                let _ = write!(out, "{}\t{}\t{}\t{}\t", traj.id, traj.label.as_str(), t, tr.action);
                for (i, v) in tr.state.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Corpus> {
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        if !text.ends_with('\n') {
            let last = text.lines().count().max(1);
            return Err(perr(last, "missing trailing newline".into()));
        }
        let mut lines = text[..text.len() - 1].split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().expect("split yields at least one piece");
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 4 || fields[0] != CORPUS_MAGIC {
            return Err(perr(1, format!("bad header {header:?}")));
        }
        let version: u32 = fields[1].parse().map_err(|_| perr(1, "bad version".into()))?;
        if version != CORPUS_VERSION {
            return Err(perr(1, format!("unsupported version {version}")));
        }
        let state_dim: usize = fields[2].parse().map_err(|_| perr(1, "bad state_dim".into()))?;
        let n_actions: usize = fields[3].parse().map_err(|_| perr(1, "bad n_actions".into()))?;
        let mut corpus = Corpus::new(state_dim, n_actions);
        let mut seen = std::collections::HashSet::new();

        for (no, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(perr(no, format!("expected 5 tab-separated fields, got {}", f.len())));
            }
            let id: usize = f[0].parse().map_err(|_| perr(no, format!("bad trajectory id {:?}", f[0])))?;
            let label = Label::parse(f[1]).ok_or_else(|| perr(no, format!("bad label {:?}", f[1])))?;
            let step: usize = f[2].parse().map_err(|_| perr(no, format!("bad step index {:?}", f[2])))?;
            let action: usize = f[3].parse().map_err(|_| perr(no, format!("bad action {:?}", f[3])))?;
            if action >= n_actions {
                return Err(perr(no, format!("action {action} >= {n_actions}")));
            }
            let state = f[4]
                .split(',')
                .map(|v| match v.parse::<f32>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(perr(no, format!("bad state component {v:?}"))),
                })
                .collect::<Result<Vec<f32>>>()?;
            if state.len() != state_dim {
                return Err(perr(no, format!("state has {} components, expected {state_dim}", state.len())));
            }

            let continues = corpus.trajectories.last().is_some_and(|t| t.id == id);
            if continues {
                let traj = corpus.trajectories.last_mut().expect("checked");
                if traj.label != label {
                    return Err(perr(no, "label changes within a trajectory".into()));
                }
                if step != traj.len() {
                    return Err(perr(no, format!("step index {step}, expected {}", traj.len())));
                }
                traj.transitions.push(Transition { state, action });
            } else {
                if !seen.insert(id) {
                    return Err(perr(no, format!("trajectory {id} is not contiguous")));
                }
                if step != 0 {
                    return Err(perr(no, format!("trajectory {id} starts at step {step}")));
                }
                corpus.trajectories.push(Trajectory {
                    id,
                    label,
                    transitions: vec![Transition { state, action }],
                    outcome: None,
                    reward: None,
                });
            }
        }
        Ok(corpus)
    }
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, corpus.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_text(&text)
}
