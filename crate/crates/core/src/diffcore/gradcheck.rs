//! Central finite differences in `f64`, used to audit analytic gradients.
//!
//! Only forward evaluations are used here, so a check never depends on the
//! backward formulas it audits. Straight-through nodes are differentiated
//! through their surrogate: perturbed evaluations keep the base point's hard
//! choices and add the surrogate's change (see `Graph::straight_through`).

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Step used by every gradient audit in this crate.
pub const FD_STEP: f64 = 1e-3;
/// Step for checks that pass through the inverse-distance skill matcher.
pub const FINE_FD_STEP: f64 = 1e-4;

/// Denominator floor for [`relative_error`]; below it the error is absolute.
pub const REL_FLOOR: f64 = 1e-2;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

/// Builds `f` on fresh `f64` graphs whose leaves are `inputs`, then compares
/// the reverse-mode gradient of every leaf with central differences.
pub fn check_graph<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let base_st = std::cell::RefCell::new(None);
    let eval = |vals: &[Tensor<f64>], want_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::<f64>::new();
        if let Some(r) = base_st.borrow().as_ref() {
            g.freeze_straight_through(Vec::clone(r));
        }
        let vars = vals
            .iter()
            .map(|t| g.leaf(t.clone(), want_grad))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        let loss = g.value(out).item()?;
        if !want_grad {
            return Ok((loss, Vec::new()));
        }
        let grads = g.backward(out)?;
        *base_st.borrow_mut() = Some(g.straight_through_log().to_vec());
        let per = vars
            .iter()
            .zip(vals)
            .map(|(v, t)| match grads.wrt(*v) {
                Some(gt) => gt.to_f64_vec(),
                None => vec![0.0; t.numel()],
            })
            .collect();
        Ok((loss, per))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let flat = t.to_f64_vec();
        let num = numeric_gradient(
            |x| {
                let mut vals = inputs.to_vec();
                vals[k] = Tensor::new(t.shape().to_vec(), x.to_vec())?;
                Ok(eval(&vals, false)?.0)
            },
            &flat,
            FD_STEP,
        )?;
        for (a, n) in analytic[k].iter().zip(&num) {
            worst = worst.max(relative_error(*a, *n));
        }
        numeric.push(num);
    }
    Ok(GradReport {
        max_rel_error: worst,
        analytic,
        numeric,
    })
}

/// Compares reverse-mode gradients of the stored parameters `ids` with
/// central differences of `f`, which rebuilds the loss from a store.
pub fn check_params<F>(store: &ParamStore<f64>, ids: &[ParamId], f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let coords: Vec<(ParamId, Vec<usize>)> = ids.iter().map(|&id| (id, (0..store.get(id).numel()).collect())).collect();
    check_param_coords(store, &coords, FD_STEP, f)
}

/// Like [`check_params`], restricted to the listed flat coordinates of each
/// parameter and with step `h`. Reports hold one entry per listed coordinate.
pub fn check_param_coords<F>(store: &ParamStore<f64>, coords: &[(ParamId, Vec<usize>)], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::restricted(coords.iter().map(|(id, _)| *id));
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    let base_st = g.straight_through_log().to_vec();
    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for (id, idx) in coords {
        let full = grads
            .param(*id)
            .map(Tensor::to_f64_vec)
            .unwrap_or_else(|| vec![0.0; store.get(*id).numel()]);
        let a: Vec<f64> = idx.iter().map(|&i| full[i]).collect();
        let base: Vec<f64> = idx.iter().map(|&i| store.get(*id).data()[i]).collect();
        let num = numeric_gradient(
            |x| {
                for (&i, &v) in idx.iter().zip(x) {
                    probe.get_mut(*id).data_mut()[i] = v;
                }
                let mut g = Graph::inference();
                g.freeze_straight_through(base_st.clone());
                let out = f(&mut g, &probe)?;
                let v = g.value(out).item();
                for (&i, &v0) in idx.iter().zip(&base) {
                    probe.get_mut(*id).data_mut()[i] = v0;
                }
                v
            },
            &base,
            h,
        )?;
        for (x, y) in a.iter().zip(&num) {
            worst = worst.max(relative_error(*x, *y));
        }
        analytic.push(a);
        numeric.push(num);
    }
    Ok(GradReport {
        max_rel_error: worst,
        analytic,
        numeric,
    })
}

/// Up to `per_param` distinct random coordinates of every listed parameter.
pub fn sample_coords<G: rand::Rng + ?Sized>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    per_param: usize,
    rng: &mut G,
) -> Vec<(ParamId, Vec<usize>)> {
    ids.iter()
        .map(|&id| {
            let n = store.get(id).numel();
            let mut idx = rand::seq::index::sample(rng, n, per_param.min(n)).into_vec();
            idx.sort_unstable();
            (id, idx)
        })
        .collect()
}
