use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_graph;
use super::*;
use crate::error::{Error, Result};

const TOL: f64 = 1e-4;
const POINTS: usize = 20;

fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rand_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Reduce any op output to a scalar through fixed random weights.
fn audit<F>(seed: u64, shapes: &[(&[usize], f64, f64)], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for point in 0..POINTS {
        let inputs: Vec<_> = shapes
            .iter()
            .map(|(s, lo, hi)| rand_tensor(&mut rng, s, *lo, *hi))
            .collect();
        let wseed: u64 = rng.gen();
        let report = check_graph(&inputs, |g, v| {
            let out = f(g, v)?;
            let n = g.value(out).numel();
            let w = rand_weights(&mut ChaCha8Rng::seed_from_u64(wseed), n);
            g.weighted_sum(out, w)
        })
        .unwrap();
        assert!(
            report.max_rel_error < TOL,
            "point {point}: max relative error {}",
            report.max_rel_error
        );
    }
}

#[test]
fn softplus_at_zero_is_ln2() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::scalar(0.0), true).unwrap();
    let y = g.softplus(x).unwrap();
    assert!((g.value(y).item().unwrap() - std::f32::consts::LN_2).abs() < 1e-7);
    let grads = g.backward(y).unwrap();
    assert!((grads.wrt(x).unwrap().data()[0] - 0.5).abs() < 1e-7);
}

#[test]
fn softmax_of_constant_row_is_uniform() {
    for c in [-50.0f32, 0.0, 3.5, 80.0] {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::matrix(1, 4, vec![c; 4]).unwrap()).unwrap();
        let y = g.softmax(x).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 0.25).abs() < 1e-7);
        }
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let t = rand_tensor(&mut rng, &[5, 7], -30.0, 30.0).cast::<f32>();
        let mut g = Graph::<f32>::new();
        let x = g.constant(t).unwrap();
        let y = g.softmax(x).unwrap();
        for r in 0..5 {
            let row = g.value(y).row(r);
            assert!(row.iter().all(|&p| p >= 0.0));
            let s: f64 = row.iter().map(|&p| p as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn squared_distance_example() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
    let b = g.constant(Tensor::matrix(1, 2, vec![4.0, 6.0]).unwrap()).unwrap();
    let d = g.sq_dist(a, b).unwrap();
    assert_eq!(g.value(d).data(), &[25.0]);
}

#[test]
fn square_gradient() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::scalar(3.0), true).unwrap();
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true).unwrap();
    let y = g.tanh(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
}

#[test]
fn shape_mismatch_is_contract_violation() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[3, 2])).unwrap();
    assert!(matches!(g.add(a, b), Err(Error::Contract(_))));
    assert!(matches!(g.matmul(a, a), Err(Error::Contract(_))));
}

#[test]
fn non_finite_is_numeric_error() {
    let mut g = Graph::<f32>::new();
    assert!(g.constant(Tensor::scalar(f32::NAN)).unwrap_err().is_numeric());
    let x = g.constant(Tensor::scalar(0.0)).unwrap();
    assert!(g.recip(x).unwrap_err().is_numeric());
}

#[test]
fn every_leaf_gets_matching_gradient_shape() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::zeros(&[3, 4]), true).unwrap();
    let w = g.leaf(Tensor::zeros(&[4, 2]), true).unwrap();
    let b = g.leaf(Tensor::zeros(&[2]), true).unwrap();
    let y = g.affine(x, w, b).unwrap();
    let l = g.mean(y).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.wrt(x).unwrap().shape(), &[3, 4]);
    assert_eq!(grads.wrt(w).unwrap().shape(), &[4, 2]);
    assert_eq!(grads.wrt(b).unwrap().shape(), &[2]);
}

#[test]
fn grad_affine() {
    audit(1, &[(&[3, 4], -1.0, 1.0), (&[4, 5], -1.0, 1.0), (&[5], -1.0, 1.0)], |g, v| {
        g.affine(v[0], v[1], v[2])
    });
}

#[test]
fn grad_matmul() {
    audit(2, &[(&[3, 4], -1.0, 1.0), (&[4, 2], -1.0, 1.0)], |g, v| g.matmul(v[0], v[1]));
}

#[test]
fn grad_add_row_add_sub_mul_scale() {
    audit(3, &[(&[3, 4], -1.0, 1.0), (&[4], -1.0, 1.0)], |g, v| g.add_row(v[0], v[1]));
    audit(4, &[(&[2, 3], -1.0, 1.0), (&[2, 3], -1.0, 1.0)], |g, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(s, v[1])?;
        let m = g.mul(d, v[1])?;
        g.scale(m, -0.7)
    });
}

#[test]
fn grad_tanh_softplus() {
    audit(5, &[(&[3, 3], -2.0, 2.0)], |g, v| g.tanh(v[0]));
    audit(6, &[(&[3, 3], -4.0, 4.0)], |g, v| g.softplus(v[0]));
}

#[test]
fn grad_relu_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..POINTS {
        // magnitudes in [0.1, 1] keep every probe on one side of zero
        let data: Vec<f64> = (0..9)
            .map(|_| {
                let m = rng.gen_range(0.1..1.0);
                if rng.gen::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let t = Tensor::new(vec![3, 3], data).unwrap();
        let r = check_graph(&[t], |g, v| {
            let y = g.relu(v[0])?;
            g.weighted_sum(y, (1..=9).map(|i| i as f64 * 0.1).collect())
        })
        .unwrap();
        assert!(r.max_rel_error < TOL);
    }
}

#[test]
fn grad_log_softmax_family() {
    audit(8, &[(&[3, 5], -3.0, 3.0)], |g, v| g.softmax(v[0]));
    audit(9, &[(&[3, 5], -3.0, 3.0)], |g, v| g.log_softmax(v[0]));
    audit(10, &[(&[4, 2], 0.5, 3.0)], |g, v| g.log_floor(v[0], 1e-6));
}

#[test]
fn grad_concat_reductions_pick() {
    audit(11, &[(&[2, 3], -1.0, 1.0), (&[2, 2], -1.0, 1.0)], |g, v| g.concat(&[v[0], v[1]]));
    audit(12, &[(&[3, 4], -1.0, 1.0)], |g, v| g.mean(v[0]));
    audit(13, &[(&[3, 4], -1.0, 1.0)], |g, v| g.sum(v[0]));
    audit(14, &[(&[3, 4], -1.0, 1.0)], |g, v| g.pick(v[0], &[0, 3, 2]));
}

#[test]
fn grad_distance_chain() {
    audit(15, &[(&[3, 4], -1.0, 1.0), (&[5, 4], -1.0, 1.0)], |g, v| g.sq_dist(v[0], v[1]));
    audit(16, &[(&[2, 3], 0.2, 2.0)], |g, v| g.sqrt_floor(v[0], 1e-8));
    audit(17, &[(&[2, 3], 0.5, 2.0)], |g, v| g.recip(v[0]));
    audit(18, &[(&[2, 4], 0.2, 2.0)], |g, v| g.normalize_rows(v[0]));
}

#[test]
fn grad_two_layer_tanh_network() {
    audit(
        19,
        &[
            (&[4, 6], -1.0, 1.0),
            (&[6, 8], -0.8, 0.8),
            (&[8], -0.5, 0.5),
            (&[8, 3], -0.8, 0.8),
            (&[3], -0.5, 0.5),
        ],
        |g, v| {
            let h = g.affine(v[0], v[1], v[2])?;
            let h = g.tanh(h)?;
            let o = g.affine(h, v[3], v[4])?;
            g.tanh(o)
        },
    );
}

#[test]
fn f32_gradients_track_f64_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[6, 3], -1.0, 1.0);
    let run = |x: Tensor<f64>, w: Tensor<f64>| -> Vec<f64> {
        let mut g = Graph::<f32>::new();
        let xv = g.constant(x.cast()).unwrap();
        let wv = g.leaf(w.cast(), true).unwrap();
        let h = g.matmul(xv, wv).unwrap();
        let h = g.log_softmax(h).unwrap();
        let l = g.mean(h).unwrap();
        g.backward(l).unwrap().wrt(wv).unwrap().to_f64_vec()
    };
    let lo = run(x.clone(), w.clone());
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x).unwrap();
    let wv = g.leaf(w, true).unwrap();
    let h = g.matmul(xv, wv).unwrap();
    let h = g.log_softmax(h).unwrap();
    let l = g.mean(h).unwrap();
    let hi = g.backward(l).unwrap().wrt(wv).unwrap().to_f64_vec();
    for (a, b) in lo.iter().zip(&hi) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn forward_backward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut g = Graph::<f32>::new();
        let x = g.constant(rand_tensor(&mut rng, &[8, 5], -1.0, 1.0).cast()).unwrap();
        let w = g.leaf(rand_tensor(&mut rng, &[5, 4], -1.0, 1.0).cast(), true).unwrap();
        let b = g.leaf(rand_tensor(&mut rng, &[4], -1.0, 1.0).cast(), true).unwrap();
        let h = g.affine(x, w, b).unwrap();
        let h = g.softmax(h).unwrap();
        let l = g.mean(h).unwrap();
        let grads = g.backward(l).unwrap();
        let mut bits: Vec<u32> = grads.wrt(w).unwrap().data().iter().map(|v| v.to_bits()).collect();
        bits.extend(grads.wrt(b).unwrap().data().iter().map(|v| v.to_bits()));
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn straight_through_forward_is_hard_backward_is_identity() {
    let mut g = Graph::<f64>::new();
    let s = g.leaf(Tensor::matrix(2, 3, vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3]).unwrap(), true).unwrap();
    let h = g.straight_through(s, &[1, 0]).unwrap();
    assert_eq!(g.value(h).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    let l = g.weighted_sum(h, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.wrt(s).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

// ---- Adam ------------------------------------------------------------

fn scalar_store(v: f32) -> (ParamStore<f32>, ParamId) {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::scalar(v));
    (store, id)
}

fn grad_of(store: &ParamStore<f32>, id: ParamId, f: impl Fn(&mut Graph<f32>, Var) -> Var) -> Gradients<f32> {
    let mut g = Graph::new();
    let x = g.param(store, id).unwrap();
    let l = f(&mut g, x);
    g.backward(l).unwrap()
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let (mut store, id) = scalar_store(0.37);
    let mut opt = Adam::new(AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    });
    let grads = grad_of(&store, id, |g, x| g.scale(x, 0.0).unwrap());
    for _ in 0..10 {
        opt.step(&mut store, &grads).unwrap();
    }
    assert_eq!(store.get(id).data()[0], 0.37);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let (mut store, id) = scalar_store(0.0);
    let mut opt = Adam::new(AdamConfig::default());
    // d/dx of x is 1
    let grads = grad_of(&store, id, |g, x| g.scale(x, 1.0).unwrap());
    opt.step(&mut store, &grads).unwrap();
    // m̂ = 1, v̂ = 1 -> step = lr / (1 + 1e-8)
    let moved = -store.get(id).data()[0] as f64;
    assert!((moved - 1e-3).abs() < 1e-6, "moved {moved}");
}

/// Plain Adam recurrence on f(x) = x², written out independently.
fn reference_adam_quadratic(x0: f64, lr: f64, wd: f64, steps: usize) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    for t in 1..=steps {
        let g = 2.0 * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        x -= lr * (mh / (vh.sqrt() + eps) + wd * x);
    }
    x
}

#[test]
fn adam_descends_quadratic() {
    // at lr 1e-3 Adam moves about lr per step, which stops just short of 0.9
    // after 100 steps; lr 1e-2 is used for this example
    let lr = 1e-2;
    let (mut store, id) = scalar_store(1.0);
    let mut opt = Adam::new(AdamConfig {
        lr,
        ..AdamConfig::default()
    });
    for _ in 0..100 {
        let grads = grad_of(&store, id, |g, x| g.mul(x, x).unwrap());
        opt.step(&mut store, &grads).unwrap();
    }
    let x = store.get(id).data()[0] as f64;
    assert!(x.abs() < 0.9, "x = {x}");
    assert!((x - reference_adam_quadratic(1.0, lr, 5e-4, 100)).abs() < 1e-5);
    assert_eq!(opt.steps_taken(), 100);
}

#[test]
fn adam_applies_decoupled_weight_decay() {
    let (mut store, id) = scalar_store(2.0);
    let mut opt = Adam::new(AdamConfig {
        lr: 0.1,
        weight_decay: 5e-4,
        ..AdamConfig::default()
    });
    let grads = grad_of(&store, id, |g, x| g.scale(x, 0.0).unwrap());
    opt.step(&mut store, &grads).unwrap();
    let expected = 2.0 - 0.1 * 5e-4 * 2.0;
    assert!((store.get(id).data()[0] as f64 - expected).abs() < 1e-6);
}

#[test]
fn restricted_graph_only_differentiates_listed_params() {
    let mut store = ParamStore::<f32>::new();
    let a = store.add("a", Tensor::scalar(1.0));
    let b = store.add("b", Tensor::scalar(2.0));
    let mut g = Graph::restricted([b]);
    let va = g.param(&store, a).unwrap();
    let vb = g.param(&store, b).unwrap();
    let y = g.mul(va, vb).unwrap();
    let grads = g.backward(y).unwrap();
    assert!(grads.param(a).is_none());
    assert_eq!(grads.param(b).unwrap().data(), &[1.0]);
}
