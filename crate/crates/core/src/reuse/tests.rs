use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::config::RunConfig;
use crate::diffcore::gradcheck::{check_param_coords, check_params, sample_coords, FINE_FD_STEP};
use crate::diffcore::{Graph, Tensor};
use crate::discovery::{run_discovery, Discovery};
use crate::error::Error;
use crate::gridworld::{generate_corpus, two_policy_corpus, Corpus, Env, Label, Pos, TransRef, TwoPolicy};
use crate::policy::{corpus_encoder_batch, EncoderMode, Group, ModelDims, SkillModel};

fn probs_tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::from_f64(&[rows.len(), rows[0].len()], &rows.concat()).unwrap()
}

fn kd_of(rows: &[Vec<f64>], teacher: &[usize], log_form: bool) -> f64 {
    let mut g = Graph::<f64>::new();
    let p = g.constant(probs_tensor(rows)).unwrap();
    let l = kd_loss(&mut g, p, teacher, log_form).unwrap();
    g.value(l).item().unwrap()
}

fn adv_of(rows: &[Vec<f64>], actions: &[usize]) -> f64 {
    let mut g = Graph::<f64>::new();
    let p = g.constant(probs_tensor(rows)).unwrap();
    let l = adversarial_loss(&mut g, p, actions).unwrap();
    g.value(l).item().unwrap()
}

fn refs(n: usize) -> Vec<TransRef> {
    (0..n).map(|i| TransRef { traj: i, step: 0 }).collect()
}

#[test]
fn kd_examples() {
    assert_eq!(kd_of(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[1, 0], false), -1.0);
    assert_eq!(kd_of(&vec![vec![0.25; 4]; 3], &[0, 2, 3], false), -0.25);
    let v = kd_of(&[vec![0.6, 0.4], vec![0.8, 0.2]], &[0, 1], false);
    assert!((v + 0.4).abs() < 1e-12);
    let v = kd_of(&[vec![0.6, 0.4], vec![0.8, 0.2]], &[0, 1], true);
    assert!((v + (0.6f64.ln() + 0.2f64.ln()) / 2.0).abs() < 1e-12);
}

#[test]
fn adversarial_examples() {
    assert_eq!(adv_of(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]), 0.0);
    let e2 = (-2.0f64).exp();
    assert!((adv_of(&vec![vec![e2, 1.0 - e2]; 2], &[0, 0]) + 2.0).abs() < 1e-12);
    let floored = adv_of(&[vec![1e-300, 1.0]], &[0]);
    assert!((floored - 1e-6f64.ln()).abs() < 1e-12);
    assert!((floored + 13.8155).abs() < 1e-4);
    assert!(adv_of(&[vec![0.0, 1.0]], &[0]).is_finite());
}

#[test]
fn negatives_threshold_example() {
    let labels = vec![Label::Noisy; 3];
    let n = collect_negatives(&refs(3), &labels, &[-0.9, 0.0, 0.8], -0.5).unwrap();
    assert_eq!(n.refs, vec![TransRef { traj: 0, step: 0 }]);
    assert_eq!(n.scores, vec![-0.9]);
    let n = collect_negatives(&refs(3), &labels, &[-1.0, -0.9, 1.0], -1.0).unwrap();
    assert!(n.is_empty());
}

#[test]
fn negatives_exclude_clean() {
    let labels = vec![Label::Clean, Label::Noisy, Label::Clean];
    let n = collect_negatives(&refs(3), &labels, &[-1.0, -1.0, 1.0], 0.5).unwrap();
    assert_eq!(n.refs, vec![TransRef { traj: 1, step: 0 }]);
    assert!(matches!(
        collect_negatives(&refs(2), &labels, &[0.0, 0.0], 0.0),
        Err(Error::Contract(_))
    ));
}

// ---- gradients ---------------------------------------------------------------

fn small_model(seed: u64) -> SkillModel<f64> {
    let dims = ModelDims {
        state_dim: 6,
        n_actions: 4,
        window: 2,
        n_skills: 3,
        skill_dim: 4,
    };
    SkillModel::new(dims, seed).unwrap()
}

#[test]
fn adversarial_gradient_matches_finite_differences() {
    for point in 0..20u64 {
        let m = small_model(point);
        let mut rng = ChaCha8Rng::seed_from_u64(point);
        let s: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let actions = [rng.gen_range(0..4), rng.gen_range(0..4)];
        let report = check_params(&m.store, &m.group(Group::Policy), |g, store| {
            let mut mm = m.clone();
            mm.store = store.clone();
            let sv = g.constant(Tensor::from_f64(&[2, 6], &s)?)?;
            let zv = g.constant(Tensor::from_f64(&[2, 4], &z)?)?;
            let p = mm.action_probs(g, sv, zv)?;
            adversarial_loss(g, p, &actions)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "point {point}: {}", report.max_rel_error);
    }
}

fn tiny_corpus(seed: u64) -> Corpus {
    let env = Env::open_room(3, 3, Pos::new(2, 2), 20).unwrap();
    generate_corpus(&env, 10, 10, seed).unwrap()
}

#[test]
fn distillation_gradient_matches_finite_differences() {
    let mut worst = 0.0f64;
    for point in 0..20u64 {
        let corpus = tiny_corpus(point);
        let rs: Vec<TransRef> = corpus.all_refs().into_iter().take(3).collect();
        let dims = ModelDims {
            state_dim: corpus.state_dim,
            ..small_model(0).dims
        };
        let m: SkillModel<f64> = SkillModel::new(dims, point).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(point);
        let teacher: Vec<usize> = rs.iter().map(|_| rng.gen_range(0..3)).collect();
        let ids = m.groups(&[Group::EncoderUni, Group::Matcher]);
        let coords = sample_coords(&m.store, &ids, 4, &mut rng);
        let report = check_param_coords(&m.store, &coords, FINE_FD_STEP, |g, store| {
            let mut mm = m.clone();
            mm.store = store.clone();
            let x = g.constant(corpus_encoder_batch(&corpus, &rs, &mm.dims, EncoderMode::Uni)?)?;
            let z = mm.encode(g, x, EncoderMode::Uni)?;
            let p = mm.match_probs(g, z)?;
            kd_loss(g, p, &teacher, false)
        })
        .unwrap();
        worst = worst.max(report.max_rel_error);
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

// ---- training ----------------------------------------------------------------

fn tiny_phase1(seed: u64) -> (Corpus, Discovery) {
    let corpus = tiny_corpus(seed);
    let cfg = RunConfig {
        window: 2,
        n_skills: 3,
        skill_dim: 4,
        batch_size: 8,
        epochs: 2,
        pu_every: 1,
        reuse_epochs: 4,
        seed,
        ..Default::default()
    };
    let d = run_discovery(&corpus, &cfg).unwrap();
    (corpus, d)
}

#[test]
fn distillation_freezes_everything_but_the_history_encoder() {
    let (corpus, d) = tiny_phase1(3);
    let mut m = d.model.clone();
    let reports = distill(&mut m, &corpus, &corpus.split(0), &d.config).unwrap();
    assert!(!reports.is_empty());
    for g in [Group::Matcher, Group::Policy, Group::EncoderBi, Group::Critic] {
        for id in d.model.group(g) {
            let before: Vec<u32> = d.model.store.get(id).data().iter().map(|v| v.to_bits()).collect();
            let after: Vec<u32> = m.store.get(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(before, after, "{g:?} changed");
        }
    }
}

#[test]
fn reuse_never_worsens_validation_loss() {
    let (corpus, d) = tiny_phase1(5);
    let split = corpus.split(0);
    let val = corpus.refs(&split.clean.val);
    let before = clean_val_loss(&d.model, &corpus, &val).unwrap();
    let mut m = d.model.clone();
    let r = distill(&mut m, &corpus, &split, &d.config).unwrap();
    let after = clean_val_loss(&m, &corpus, &val).unwrap();
    assert!(after <= before);
    let best = r.iter().map(|x| x.val).fold(before, f64::min);
    assert_eq!(after, best);
    assert!(r[0].line().starts_with("phase=reuse1 epoch=0 L_imi="));
}

#[test]
fn empty_negative_set_is_plain_imitation() {
    let (corpus, d) = tiny_phase1(6);
    let split = corpus.split(0);
    let mut m = d.model.clone();
    let r = fine_tune(&mut m, &corpus, &split, &NegativeSet::default(), &d.config).unwrap();
    assert!(r.iter().all(|x| x.aux == 0.0 && x.phase == Phase::FineTune));
    assert!(r[0].line().contains(" L_adv="));
    for id in d.model.group(Group::Critic) {
        assert_eq!(m.store.get(id), d.model.store.get(id));
    }
}

#[test]
fn reuse_is_deterministic() {
    let (corpus, d) = tiny_phase1(7);
    let split = corpus.split(0);
    let neg = collect_negatives(&d.pool.refs, &d.pool.labels, &d.table.scores, 0.5).unwrap();
    let a = run_reuse(&corpus, &split, &d.model, &neg, &d.config).unwrap();
    let b = run_reuse(&corpus, &split, &d.model, &neg, &d.config).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
}

/// Share of transitions whose greedy action matches the clean-generating policy.
fn agreement(env: &Env, corpus: &Corpus, model: &SkillModel<f32>, rs: &[TransRef], mode: EncoderMode) -> f64 {
    let acts = model.act_corpus(corpus, rs, mode).unwrap();
    let hits = rs
        .iter()
        .zip(&acts)
        .filter(|(&r, (_, p))| {
            let pos = env.decode(&corpus.transition(r).state).unwrap().agent;
            let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            best == TwoPolicy::A.action(env, pos)
        })
        .count();
    hits as f64 / rs.len() as f64
}

#[test]
fn reuse_moves_toward_the_clean_policy() {
    let mut gain = 0.0;
    let seeds = 5;
    for seed in 0..seeds {
        let (env, corpus) = two_policy_corpus(60, 60, seed).unwrap();
        let cfg = RunConfig {
            epochs: 10,
            seed,
            ..Default::default()
        };
        let d = run_discovery(&corpus, &cfg).unwrap();
        let split = corpus.split(cfg.split_seed);
        let neg = collect_negatives(&d.pool.refs, &d.pool.labels, &d.table.scores, cfg.theta_neg).unwrap();
        let r = run_reuse(&corpus, &split, &d.model, &neg, &cfg).unwrap();
        let mut test = split.clean.test.clone();
        test.extend(&split.noisy.test);
        let rs = corpus.refs(&test);
        let before = agreement(&env, &corpus, &d.model, &rs, EncoderMode::Bi);
        let after = agreement(&env, &corpus, &r.model, &rs, EncoderMode::Uni);
        gain += (after - before) / seeds as f64;
    }
    assert!(gain >= 0.02, "mean agreement gain {gain}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_kd_in_unit_interval(
        w in prop::collection::vec(0.0f64..1.0, 12),
        teacher in prop::collection::vec(0usize..4, 3),
    ) {
        let rows: Vec<Vec<f64>> = w
            .chunks(4)
            .map(|r| {
                let t: f64 = r.iter().sum::<f64>() + 1e-9;
                r.iter().map(|v| v / t).collect()
            })
            .collect();
        let v = kd_of(&rows, &teacher, false);
        prop_assert!((-1.0..=0.0).contains(&v));
    }

    #[test]
    fn prop_negatives_monotone_in_threshold(
        scores in prop::collection::vec(-1.0f64..1.0, 1..20),
        t1 in -1.0f64..1.0, t2 in -1.0f64..1.0, seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Label> = scores.iter().map(|_| if rng.gen_bool(0.5) { Label::Noisy } else { Label::Clean }).collect();
        let rs = refs(scores.len());
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = collect_negatives(&rs, &labels, &scores, lo).unwrap();
        let b = collect_negatives(&rs, &labels, &scores, hi).unwrap();
        prop_assert!(a.refs.iter().all(|r| b.refs.contains(r)));
        prop_assert!(b.scores.iter().all(|&s| s < hi));
    }

    #[test]
    fn prop_adversarial_is_bounded(p in 0.0f64..1.0) {
        let v = adv_of(&[vec![p, 1.0 - p]], &[0]);
        prop_assert!(v <= 0.0 && v >= 1e-6f64.ln() - 1e-12);
    }
}

