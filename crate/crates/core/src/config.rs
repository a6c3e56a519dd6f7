//! Run configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Weight of the mutual-information term.
    pub lambda: f64,
    /// Positive-pair filter strength; pairs with `|Δscore| > 2(1 - ε)` are dropped.
    pub epsilon: f64,
    pub window: usize,
    pub n_skills: usize,
    pub skill_dim: usize,
    /// Per-epoch increment of the embedding-clustering probability.
    pub zeta_step: f64,
    pub epochs: usize,
    /// Optimality table refresh period, in epochs.
    pub pu_every: usize,
    pub batch_size: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Noisy transitions scoring below this join the negative set.
    pub theta_neg: f64,
    pub temperature: f64,
    pub kmeans_iters: usize,
    /// Epoch cap per reuse step and for the BC baseline.
    pub reuse_epochs: usize,
    pub patience: usize,
    /// Use `-log p` instead of `-p` in the distillation loss.
    pub kd_log: bool,
    pub seed: u64,
    pub split_seed: u64,
    pub env: String,
    pub rollouts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epsilon: 0.1,
            window: 5,
            n_skills: 8,
            skill_dim: 16,
            zeta_step: 0.05,
            epochs: 50,
            pu_every: 5,
            batch_size: 64,
            n_pos: 4,
            n_neg: 4,
            lr: 1e-3,
            weight_decay: 5e-4,
            theta_neg: -0.5,
            temperature: 1.0,
            kmeans_iters: 20,
            reuse_epochs: 50,
            patience: 5,
            kd_log: false,
            seed: 0,
            split_seed: 0,
            env: "fourroom".into(),
            rollouts: 1000,
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value {v:?} for {key}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return bad("lambda must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.n_skills == 0 || self.skill_dim == 0 {
            return bad("n_skills and skill_dim must be positive");
        }
        if self.pu_every == 0 || self.batch_size == 0 {
            return bad("pu_every and batch_size must be positive");
        }
        if self.n_pos == 0 || self.n_neg == 0 {
            return bad("n_pos and n_neg must be positive");
        }
        if self.temperature <= 0.0 || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return bad("temperature and lr must be positive, weight_decay >= 0");
        }
        if !(0.0..=1.0).contains(&self.zeta_step) {
            return bad("zeta_step must lie in [0, 1]");
        }
        if self.rollouts == 0 {
            return bad("rollouts must be positive");
        }
        Ok(())
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "lambda" => self.lambda = parse_num(line, key, v)?,
            "epsilon" => self.epsilon = parse_num(line, key, v)?,
            "window" => self.window = parse_num(line, key, v)?,
            "n_skills" => self.n_skills = parse_num(line, key, v)?,
            "skill_dim" => self.skill_dim = parse_num(line, key, v)?,
            "zeta_step" => self.zeta_step = parse_num(line, key, v)?,
            "epochs" => self.epochs = parse_num(line, key, v)?,
            "pu_every" => self.pu_every = parse_num(line, key, v)?,
            "batch_size" => self.batch_size = parse_num(line, key, v)?,
            "n_pos" => self.n_pos = parse_num(line, key, v)?,
            "n_neg" => self.n_neg = parse_num(line, key, v)?,
            "lr" => self.lr = parse_num(line, key, v)?,
            "weight_decay" => self.weight_decay = parse_num(line, key, v)?,
            "theta_neg" => self.theta_neg = parse_num(line, key, v)?,
            "temperature" => self.temperature = parse_num(line, key, v)?,
            "kmeans_iters" => self.kmeans_iters = parse_num(line, key, v)?,
            "reuse_epochs" => self.reuse_epochs = parse_num(line, key, v)?,
            "patience" => self.patience = parse_num(line, key, v)?,
            "kd_log" => self.kd_log = parse_num(line, key, v)?,
            "seed" => self.seed = parse_num(line, key, v)?,
            "split_seed" => self.split_seed = parse_num(line, key, v)?,
            "env" => self.env = v.to_string(),
            "rollouts" => self.rollouts = parse_num(line, key, v)?,
            other => return Err(Error::Config(format!("line {line}: unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(i + 1, k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("lambda", &self.lambda);
        kv("epsilon", &self.epsilon);
        kv("window", &self.window);
        kv("n_skills", &self.n_skills);
        kv("skill_dim", &self.skill_dim);
        kv("zeta_step", &self.zeta_step);
        kv("epochs", &self.epochs);
        kv("pu_every", &self.pu_every);
        kv("batch_size", &self.batch_size);
        kv("n_pos", &self.n_pos);
        kv("n_neg", &self.n_neg);
        kv("lr", &self.lr);
        kv("weight_decay", &self.weight_decay);
        kv("theta_neg", &self.theta_neg);
        kv("temperature", &self.temperature);
        kv("kmeans_iters", &self.kmeans_iters);
        kv("reuse_epochs", &self.reuse_epochs);
        kv("patience", &self.patience);
        kv("kd_log", &self.kd_log);
        kv("seed", &self.seed);
        kv("split_seed", &self.split_seed);
        kv("env", &self.env);
        kv("rollouts", &self.rollouts);
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn adam(&self) -> crate::diffcore::AdamConfig {
        crate::diffcore::AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.lambda, c.epsilon, c.window, c.n_skills), (1.0, 0.1, 5, 8));
        assert_eq!((c.batch_size, c.epochs, c.pu_every), (64, 50, 5));
        assert_eq!((c.lr, c.weight_decay, c.theta_neg), (1e-3, 5e-4, -0.5));
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig {
            lambda: 0.0,
            seed: 42,
            env: "doorkey".into(),
            kd_log: true,
            ..Default::default()
        };
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_blanks() {
        let c = RunConfig::from_text("# header\n\nlambda = 0.5  # weight\n  epochs=3\n").unwrap();
        assert_eq!((c.lambda, c.epochs), (0.5, 3));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(RunConfig::from_text("lamda = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("lambda 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("epochs = -1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("epsilon = 2\n"), Err(Error::Config(_))));
    }
}
