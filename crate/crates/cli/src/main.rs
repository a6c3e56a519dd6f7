use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use sdil::config::RunConfig;
use sdil::discovery::{Discovery, Pool};
use sdil::gridworld::{generate_corpus, read_corpus, write_corpus, Corpus, Env, Label};
use sdil::harness::{
    action_metrics, clean_test_refs, evaluate, export_embeddings, export_skill_map, rank_skills, rollout_reward,
    skill_selection_distribution, train_bc, BcSetting, Checkpoint, Policy,
};
use sdil::policy::{EncoderMode, SkillModel};
use sdil::reuse::{collect_negatives, distill, fine_tune};

#[derive(Parser, Debug)]
#[command(name = "sdil", version, about = "Skill discovery and reuse from noisy demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a clean + noisy demonstration corpus.
    GenDemos {
        #[arg(long, default_value = "fourroom")]
        env: String,
        #[arg(long)]
        clean: usize,
        #[arg(long)]
        noisy: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 1: skill discovery.
    TrainDiscover {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 2: distillation and adversarial fine-tuning.
    TrainReuse {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Action metrics, rollout reward and skill distributions.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        rollouts: Option<usize>,
        /// Defaults to the env in the checkpoint config.
        #[arg(long)]
        env: Option<String>,
    },
    /// Skill maps, ranking, selection distributions and embeddings.
    AnalyzeSkills {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Adds selection distributions and the embedding export.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        rollouts: usize,
    },
    /// Flat behavior-cloning baseline.
    BaselineBc {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        setting: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        env: Option<String>,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn save(model: &SkillModel<f32>, cfg: &RunConfig, d: Option<&Discovery>, table: Option<&Checkpoint>, out: &Path) -> anyhow::Result<()> {
    let mut ck = Checkpoint::from_model(model, cfg);
    if let Some(d) = d {
        ck = ck.with_table(&d.table);
    } else if let Some(src) = table {
        ck.tensors
            .extend(src.tensors.iter().filter(|(n, _)| n.starts_with("table.")).cloned());
    }
    ck.save(out)?;
    Ok(())
}

fn gen_demos(env: &str, clean: usize, noisy: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    let env = Env::by_name(env)?;
    let corpus = generate_corpus(&env, clean, noisy, seed)?;
    write_corpus(&corpus, out)?;
    println!("wrote {} trajectories, {} transitions to {}", corpus.len(), corpus.n_transitions(), out.display());
    Ok(())
}

fn train_discover(corpus: &Path, config: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let corpus = read_corpus(corpus)?;
    let split = corpus.split(cfg.split_seed);
    let mut d = Discovery::new(&corpus, &split, &cfg)?;
    for _ in 0..cfg.epochs {
        match d.run_epoch(&corpus) {
            Ok(r) => println!("{}", r.line()),
            Err(e) => {
                save(&d.model, &cfg, Some(&d), None, out).context("saving last good checkpoint")?;
                eprintln!("saved last good checkpoint (epoch {}) to {}", d.epoch, out.display());
                return Err(e.into());
            }
        }
    }
    save(&d.model, &cfg, Some(&d), None, out)?;
    println!("saved {}", out.display());
    Ok(())
}

fn train_reuse(corpus: &Path, ckpt: &Path, config: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let src = Checkpoint::load(ckpt)?;
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => src.run_config()?,
    };
    let corpus = read_corpus(corpus)?;
    let split = corpus.split(cfg.split_seed);
    let pool = Pool::train(&corpus, &split);
    let scores = src
        .transition_scores()
        .context("checkpoint has no optimality table; train-discover output expected")?;
    if scores.len() != pool.len() {
        bail!(
            "checkpoint scores cover {} transitions but the corpus training pool has {}; corpus or split_seed differ",
            scores.len(),
            pool.len()
        );
    }
    let negatives = collect_negatives(&pool.refs, &pool.labels, &scores, cfg.theta_neg)?;
    println!("negatives={}", negatives.len());
    let mut model = src.model()?;
    let mut good = model.clone();
    let reports = distill(&mut model, &corpus, &split, &cfg).and_then(|r| {
        good = model.clone();
        let mut all = r;
        all.extend(fine_tune(&mut model, &corpus, &split, &negatives, &cfg)?);
        Ok(all)
    });
    match reports {
        Ok(r) => {
            for line in r {
                println!("{}", line.line());
            }
        }
        Err(e) => {
            save(&good, &cfg, None, Some(&src), out).context("saving last good checkpoint")?;
            eprintln!("saved last good checkpoint to {}", out.display());
            return Err(e.into());
        }
    }
    save(&model, &cfg, None, Some(&src), out)?;
    println!("saved {}", out.display());
    Ok(())
}

fn resolve_env(name: Option<&str>, cfg: &RunConfig) -> anyhow::Result<Env> {
    Ok(Env::by_name(name.unwrap_or(&cfg.env))?)
}

fn check_corpus(corpus: &Corpus, model: &SkillModel<f32>) -> anyhow::Result<()> {
    if corpus.state_dim != model.dims.state_dim || corpus.n_actions != model.dims.n_actions {
        bail!("corpus does not match the checkpoint's state or action dimensions");
    }
    Ok(())
}

fn eval(ckpt: &Path, corpus: &Path, rollouts: Option<usize>, env: Option<&str>) -> anyhow::Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let cfg = ck.run_config()?;
    let model = ck.model()?;
    let corpus = read_corpus(corpus)?;
    check_corpus(&corpus, &model)?;
    let env = resolve_env(env, &cfg)?;
    let split = corpus.split(cfg.split_seed);
    let report = evaluate(&model, &corpus, &split, Some(&env), rollouts.unwrap_or(cfg.rollouts), cfg.seed)?;
    print!("{}", report.to_text());
    Ok(())
}

fn analyze(ckpt: &Path, env: Option<&str>, out: &Path, corpus: Option<&Path>, rollouts: usize) -> anyhow::Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let cfg = ck.run_config()?;
    let model = ck.model()?;
    let env = resolve_env(env, &cfg)?;
    if env.state_dim() != model.dims.state_dim {
        bail!("env {} does not match the checkpoint's state dimension", env.kind.name());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let write = |name: &str, text: String| -> anyhow::Result<()> {
        let p = out.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    for k in 0..model.dims.n_skills {
        let map = export_skill_map(&model, &env, k, rollouts, cfg.seed)?;
        write(&format!("skill_map_{k}.tsv"), map.to_tsv())?;
    }
    if let Some(op) = ck.skill_optimality() {
        let mut s = String::from("# rank\tskill\top\n");
        for (r, k) in rank_skills(&op).into_iter().enumerate() {
            s.push_str(&format!("{r}\t{k}\t{}\n", op[k]));
        }
        write("skill_ranking.tsv", s)?;
    }
    if let Some(path) = corpus {
        let corpus = read_corpus(path)?;
        check_corpus(&corpus, &model)?;
        let mut s = String::from("# set\tskill\tprobability\n");
        for label in [Label::Clean, Label::Noisy] {
            let refs = corpus.refs(&corpus.indices(label));
            if refs.is_empty() {
                continue;
            }
            let d = skill_selection_distribution(&model, &corpus, &refs, EncoderMode::Bi)?;
            for (k, p) in d.iter().enumerate() {
                s.push_str(&format!("{}\t{k}\t{p}\n", label.as_str()));
            }
        }
        write("selection.tsv", s)?;
        let n = export_embeddings(&model, &corpus, out.join("embeddings.tsv"))?;
        println!("embeddings={n}");
    }
    println!("wrote analysis to {}", out.display());
    Ok(())
}

fn baseline_bc(
    corpus: &Path,
    setting: &str,
    config: Option<&Path>,
    rollouts: Option<usize>,
    env: Option<&str>,
) -> anyhow::Result<()> {
    let Some(setting) = BcSetting::parse(setting) else {
        return Err(UsageError(format!("unknown setting {setting:?}; expected clean or mixed")).into());
    };
    let cfg = load_config(config)?;
    let corpus = read_corpus(corpus)?;
    let split = corpus.split(cfg.split_seed);
    let run = train_bc(&corpus, &split, setting, &cfg)?;
    for line in &run.log {
        println!("{line}");
    }
    let test = clean_test_refs(&corpus, &split);
    let pred = run.model.predict(&corpus, &test)?;
    let labels: Vec<usize> = test.iter().map(|&r| corpus.transition(r).action).collect();
    let m = action_metrics(&pred, &labels)?;
    println!("accuracy = {:.6}", m.accuracy);
    println!("macro_f1 = {:.6}", m.macro_f1);
    let env = resolve_env(env, &cfg)?;
    if env.state_dim() == corpus.state_dim {
        let mut policy = run.model.clone();
        let stats = rollout_reward(&env, &mut policy as &mut dyn Policy, rollouts.unwrap_or(cfg.rollouts), cfg.seed)?;
        println!("reward_mean = {:.6}", stats.mean);
        println!("reward_std = {:.6}", stats.std);
    }
    Ok(())
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenDemos {
            env,
            clean,
            noisy,
            seed,
            out,
        } => gen_demos(&env, clean, noisy, seed, &out),
        Command::TrainDiscover { corpus, config, out } => train_discover(&corpus, config.as_deref(), &out),
        Command::TrainReuse {
            corpus,
            ckpt,
            config,
            out,
        } => train_reuse(&corpus, &ckpt, config.as_deref(), &out),
        Command::Eval {
            ckpt,
            corpus,
            rollouts,
            env,
        } => eval(&ckpt, &corpus, rollouts, env.as_deref()),
        Command::AnalyzeSkills {
            ckpt,
            env,
            out,
            corpus,
            rollouts,
        } => analyze(&ckpt, env.as_deref(), &out, corpus.as_deref(), rollouts),
        Command::BaselineBc {
            corpus,
            setting,
            config,
            rollouts,
            env,
        } => baseline_bc(&corpus, &setting, config.as_deref(), rollouts, env.as_deref()),
    }
}

/// 2 for numeric or training failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<sdil::Error>() {
        Some(sdil::Error::Numeric { .. } | sdil::Error::Generation(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
