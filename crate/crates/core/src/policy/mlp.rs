use rand::Rng;

use crate::diffcore::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::Result;

/// Fully connected network with tanh between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    sizes: Vec<usize>,
}

impl Mlp {
    /// Registers Glorot-uniform weights and zero biases for `sizes`
    /// (input, hidden..., output) under `prefix`.
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        prefix: &str,
        sizes: &[usize],
        rng: &mut G,
    ) -> Self {
        assert!(sizes.len() >= 2, "mlp needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| R::of(rng.gen_range(-limit..limit)))
                    .collect();
                let wt = Tensor::new(vec![fan_in, fan_out], data).expect("sized");
                let w = store.add(format!("{prefix}.{i}.w"), wt);
                let b = store.add(format!("{prefix}.{i}.b"), Tensor::zeros(&[fan_out]));
                (w, b)
            })
            .collect();
        Self {
            layers,
            sizes: sizes.to_vec(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Sets the output layer's weights and bias to zero.
    pub fn zero_output<R: Real>(&self, store: &mut ParamStore<R>) {
        let (w, b) = *self.layers.last().expect("nonempty");
        for id in [w, b] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = R::zero());
        }
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (g.param(store, w)?, g.param(store, b)?);
            h = g.affine(h, wv, bv)?;
            if i + 1 < self.layers.len() {
                h = g.tanh(h)?;
            }
        }
        Ok(h)
    }
}
