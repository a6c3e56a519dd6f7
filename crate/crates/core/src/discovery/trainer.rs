use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::diffcore::{Adam, Graph, ParamId, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::gridworld::{Corpus, Label, Split, TransRef};
use crate::policy::{
    corpus_encoder_batch, gumbel_noise, one_hot, state_batch, EncoderMode, Group, ModelDims, SkillModel,
};

use super::cluster::{choose_source, cluster_points, purity, zeta, ClusterAssignment, ClusterSource};
use super::losses::{imitation_loss, mi_loss, PairLayout};
use super::optimality::OptimalityTable;
use super::pairs::sample_pairs;

/// Offset between the parameter-init seed and the training stream seed.
const TRAIN_STREAM: u64 = 0x5d11_0001;

/// Training transitions of both sets, with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Pool {
    pub refs: Vec<TransRef>,
    pub labels: Vec<Label>,
}

impl Pool {
    pub fn train(corpus: &Corpus, split: &Split) -> Self {
        let mut refs = corpus.refs(&split.clean.train);
        refs.extend(corpus.refs(&split.noisy.train));
        let labels = refs.iter().map(|&r| corpus.label(r)).collect();
        Self { refs, labels }
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }
}

pub fn model_dims(corpus: &Corpus, cfg: &RunConfig) -> ModelDims {
    ModelDims {
        state_dim: corpus.state_dim,
        n_actions: corpus.n_actions,
        window: cfg.window,
        n_skills: cfg.n_skills,
        skill_dim: cfg.skill_dim,
    }
}

/// One discovery update's inputs, with every random draw fixed.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub anchors: Vec<TransRef>,
    pub layout: PairLayout,
    /// Transition supplying the skill of each pair row.
    pub partners: Vec<TransRef>,
    pub anchor_noise: Vec<f64>,
    pub pair_noise: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub imitation: f64,
    pub mi: f64,
}

/// Anchor states and actions repeated once per pair row.
fn pair_inputs<R: Real>(corpus: &Corpus, batch: &StepBatch, n_actions: usize) -> Result<(Tensor<R>, Tensor<R>)> {
    let rows: Vec<TransRef> = batch.layout.anchor.iter().map(|&i| batch.anchors[i]).collect();
    let actions: Vec<usize> = rows.iter().map(|&r| corpus.transition(r).action).collect();
    Ok((state_batch(corpus, &rows)?, one_hot(&actions, n_actions)?))
}

/// Builds `L_imi` and `L_mi` for a fixed batch on `g`, with the partner
/// skills on the same differentiable path as the anchors.
pub fn objective_graph<R: Real>(
    g: &mut Graph<R>,
    model: &SkillModel<R>,
    corpus: &Corpus,
    batch: &StepBatch,
    temperature: f64,
) -> Result<(Var, Var)> {
    let x = g.constant(corpus_encoder_batch(corpus, &batch.anchors, &model.dims, EncoderMode::Bi)?)?;
    let f = model.skill_forward(g, x, EncoderMode::Bi, Some(&batch.anchor_noise), temperature)?;
    let s = g.constant(state_batch(corpus, &batch.anchors)?)?;
    let lp = model.action_log_probs(g, s, f.skill)?;
    let actions: Vec<usize> = batch.anchors.iter().map(|&r| corpus.transition(r).action).collect();
    let imi = imitation_loss(g, lp, &actions)?;
    let xp = g.constant(corpus_encoder_batch(corpus, &batch.partners, &model.dims, EncoderMode::Bi)?)?;
    let pf = model.skill_forward(g, xp, EncoderMode::Bi, Some(&batch.pair_noise), temperature)?;
    let (ps, pa) = pair_inputs(corpus, batch, model.dims.n_actions)?;
    let (ps, pa) = (g.constant(ps)?, g.constant(pa)?);
    let t = model.compatibility_scores(g, ps, pa, pf.skill)?;
    let mi = mi_loss(g, t, &batch.layout)?;
    Ok((imi, mi))
}

/// Both loss terms on a fixed batch, without updating anything.
pub fn discovery_objective<R: Real>(
    model: &SkillModel<R>,
    corpus: &Corpus,
    batch: &StepBatch,
    temperature: f64,
) -> Result<StepLosses> {
    let mut g = Graph::inference();
    let (imi, mi) = objective_graph(&mut g, model, corpus, batch, temperature)?;
    Ok(StepLosses {
        imitation: g.value(imi).item()?.f64(),
        mi: g.value(mi).item()?.f64(),
    })
}

fn check_grads(grads: &crate::diffcore::Gradients<f32>, what: &'static str) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric {
            op: what,
            detail: "non-finite gradient".into(),
        });
    }
    Ok(())
}

/// One compatibility-estimator update on `L_mi`, then one update of the
/// encoder, prototypes and action policy on `L_imi + λ L_mi`. On error the
/// model and both optimizers are left as they were.
pub fn discovery_step(
    model: &mut SkillModel<f32>,
    opt: &mut Adam<f32>,
    critic_opt: &mut Adam<f32>,
    corpus: &Corpus,
    batch: &StepBatch,
    lambda: f64,
    temperature: f64,
) -> Result<StepLosses> {
    if lambda < 0.0 {
        return Err(Error::contract("lambda must be >= 0"));
    }
    let main: Vec<ParamId> = model.groups(&[Group::EncoderBi, Group::Matcher, Group::Policy]);
    let critic: Vec<ParamId> = model.group(Group::Critic);
    let actions: Vec<usize> = batch.anchors.iter().map(|&r| corpus.transition(r).action).collect();

    let mut g = Graph::restricted(main.iter().copied());
    let x = g.constant(corpus_encoder_batch(corpus, &batch.anchors, &model.dims, EncoderMode::Bi)?)?;
    let f = model.skill_forward(&mut g, x, EncoderMode::Bi, Some(&batch.anchor_noise), temperature)?;
    let s = g.constant(state_batch(corpus, &batch.anchors)?)?;
    let lp = model.action_log_probs(&mut g, s, f.skill)?;
    let imi = imitation_loss(&mut g, lp, &actions)?;

    // Partner skills: differentiable when the MI term is active, otherwise
    // only their values are needed.
    let xp_t = corpus_encoder_batch(corpus, &batch.partners, &model.dims, EncoderMode::Bi)?;
    let (pair_skill, pair_values) = if lambda > 0.0 {
        let xp = g.constant(xp_t)?;
        let pf = model.skill_forward(&mut g, xp, EncoderMode::Bi, Some(&batch.pair_noise), temperature)?;
        (Some(pf.skill), g.value(pf.skill).clone())
    } else {
        let mut gi = Graph::inference();
        let xp = gi.constant(xp_t)?;
        let pf = model.skill_forward(&mut gi, xp, EncoderMode::Bi, Some(&batch.pair_noise), temperature)?;
        (None, gi.value(pf.skill).clone())
    };
    let (ps, pa) = pair_inputs(corpus, batch, model.dims.n_actions)?;

    // Compatibility estimator step.
    let mut gc = Graph::restricted(critic.iter().copied());
    let (cs, ca, cz) = (gc.constant(ps.clone())?, gc.constant(pa.clone())?, gc.constant(pair_values)?);
    let t = model.compatibility_scores(&mut gc, cs, ca, cz)?;
    let mi_c = mi_loss(&mut gc, t, &batch.layout)?;
    let mi_value = gc.value(mi_c).item()? as f64;
    let cgrads = gc.backward(mi_c)?;
    check_grads(&cgrads, "critic step")?;
    let critic_backup: Vec<Tensor<f32>> = critic.iter().map(|&id| model.store.get(id).clone()).collect();
    let critic_opt_backup = critic_opt.clone();
    critic_opt.step(&mut model.store, &cgrads)?;

    let main_step = (|| -> Result<f64> {
        let imitation = g.value(imi).item()? as f64;
        let total = match pair_skill {
            Some(z) => {
                let (ps, pa) = (g.constant(ps)?, g.constant(pa)?);
                let t = model.compatibility_scores(&mut g, ps, pa, z)?;
                let mi = mi_loss(&mut g, t, &batch.layout)?;
                let weighted = g.scale(mi, lambda)?;
                g.add(imi, weighted)?
            }
            None => imi,
        };
        let grads = g.backward(total)?;
        check_grads(&grads, "discovery step")?;
        opt.step(&mut model.store, &grads)?;
        Ok(imitation)
    })();
    match main_step {
        Ok(imitation) => Ok(StepLosses {
            imitation,
            mi: mi_value,
        }),
        Err(e) => {
            for (id, t) in critic.iter().zip(critic_backup) {
                model.store.set(*id, t)?;
            }
            *critic_opt = critic_opt_backup;
            Err(e)
        }
    }
}

/// Per-epoch summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub imitation: f64,
    pub mi: f64,
    pub sop: Vec<f64>,
    pub purity: f64,
}

impl EpochReport {
    pub fn line(&self) -> String {
        let sop: Vec<String> = self.sop.iter().map(|v| format!("{v:.6}")).collect();
        format!(
            "epoch={} L_imi={:.6} L_mi={:.6} sop={} purity={:.4}",
            self.epoch,
            self.imitation,
            self.mi,
            sop.join(","),
            self.purity
        )
    }
}

/// Phase-1 trainer state.
#[derive(Clone, Debug)]
pub struct Discovery {
    pub config: RunConfig,
    pub model: SkillModel<f32>,
    pub table: OptimalityTable,
    pub pool: Pool,
    pub state_clusters: ClusterAssignment,
    opt: Adam<f32>,
    critic_opt: Adam<f32>,
    rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<String>,
}

impl Discovery {
    pub fn new(corpus: &Corpus, split: &Split, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let pool = Pool::train(corpus, split);
        if !pool.labels.contains(&Label::Clean) || !pool.labels.contains(&Label::Noisy) {
            return Err(Error::Generation("training pool needs clean and noisy transitions".into()));
        }
        let model = SkillModel::new(model_dims(corpus, config), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(TRAIN_STREAM));
        let states: Vec<Vec<f64>> = pool
            .refs
            .iter()
            .map(|&r| corpus.transition(r).state.iter().map(|&v| v as f64).collect())
            .collect();
        let k_c = config.n_skills.max(2);
        let state_clusters =
            cluster_points(&states, k_c, config.kmeans_iters, ClusterSource::Precomputed, 0.0, &mut rng)?;
        let table = OptimalityTable::initial(config.n_skills, &pool.labels);
        Ok(Self {
            config: config.clone(),
            model,
            table,
            pool,
            state_clusters,
            opt: Adam::new(config.adam()),
            critic_opt: Adam::new(config.adam()),
            rng,
            epoch: 0,
            log: Vec::new(),
        })
    }

    /// Draws pairs and noise for `anchors` (pool indices) under `assignment`.
    pub fn make_batch(&mut self, anchors: &[usize], assignment: &ClusterAssignment, members: &[Vec<usize>]) -> Result<StepBatch> {
        let cfg = &self.config;
        let samples: Vec<_> = anchors
            .iter()
            .map(|&a| {
                sample_pairs(
                    a,
                    &assignment.ids,
                    members,
                    &self.table.scores,
                    cfg.epsilon,
                    cfg.n_pos,
                    cfg.n_neg,
                    &mut self.rng,
                )
            })
            .collect();
        let layout = PairLayout::new(&samples)?;
        let k = self.model.dims.n_skills;
        let anchor_noise = gumbel_noise(anchors.len(), k, &mut self.rng);
        let pair_noise = gumbel_noise(layout.len(), k, &mut self.rng);
        Ok(StepBatch {
            anchors: anchors.iter().map(|&i| self.pool.refs[i]).collect(),
            partners: layout.partner.iter().map(|&i| self.pool.refs[i]).collect(),
            layout,
            anchor_noise,
            pair_noise,
        })
    }

    pub fn step(&mut self, corpus: &Corpus, batch: &StepBatch) -> Result<StepLosses> {
        discovery_step(
            &mut self.model,
            &mut self.opt,
            &mut self.critic_opt,
            corpus,
            batch,
            self.config.lambda,
            self.config.temperature,
        )
    }

    /// Re-estimates skill optimality and transition scores over the pool.
    pub fn refresh_table(&mut self, corpus: &Corpus) -> Result<()> {
        let probs = self.model.skill_probs_corpus(corpus, &self.pool.refs, EncoderMode::Bi)?;
        let act = self.model.skill_likelihoods(corpus, &self.pool.refs)?;
        self.table.refresh(&probs, &self.pool.labels, &act)
    }

    pub fn run_epoch(&mut self, corpus: &Corpus) -> Result<EpochReport> {
        let e = self.epoch;
        let z = zeta(e, self.config.zeta_step);
        let emb_clusters = if z > 0.0 {
            let emb = self.model.embed_corpus(corpus, &self.pool.refs, EncoderMode::Bi)?;
            Some(cluster_points(
                &emb,
                self.state_clusters.k,
                self.config.kmeans_iters,
                ClusterSource::Embedding,
                z,
                &mut self.rng,
            )?)
        } else {
            None
        };
        let state_members = self.state_clusters.members();
        let emb_members = emb_clusters.as_ref().map(ClusterAssignment::members);

        let mut order: Vec<usize> = (0..self.pool.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut imi, mut mi, mut n) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let source = choose_source(z, &mut self.rng);
            let batch = match (source, &emb_clusters, &emb_members) {
                (ClusterSource::Embedding, Some(a), Some(m)) => self.make_batch(chunk, a, m)?,
                _ => {
                    let a = self.state_clusters.clone();
                    self.make_batch(chunk, &a, &state_members)?
                }
            };
            let l = self.step(corpus, &batch)?;
            imi += l.imitation;
            mi += l.mi;
            n += 1;
        }
        if (e + 1) % self.config.pu_every == 0 {
            self.refresh_table(corpus)?;
        }
        let used = emb_clusters.as_ref().unwrap_or(&self.state_clusters);
        let report = EpochReport {
            epoch: e,
            imitation: imi / n.max(1) as f64,
            mi: mi / n.max(1) as f64,
            sop: self.table.stats.op.clone(),
            purity: purity(&used.ids, &self.pool.labels),
        };
        self.log.push(report.line());
        self.epoch += 1;
        Ok(report)
    }
}

/// Phase 1 for `config.epochs` epochs.
pub fn run_discovery(corpus: &Corpus, config: &RunConfig) -> Result<Discovery> {
    let split = corpus.split(config.split_seed);
    let mut d = Discovery::new(corpus, &split, config)?;
    for _ in 0..config.epochs {
        d.run_epoch(corpus)?;
    }
    Ok(d)
}
