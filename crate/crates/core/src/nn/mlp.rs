use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;

/// Element-wise nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

/// `tanh` via a single `exp`; absolute error stays within a few ulps of
/// 1, and it is several times cheaper than the libm routine.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(tanh),
            Activation::Relu => z.mapv_inplace(|x| x.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Multiplies `delta` in place by the derivative, expressed through the
    /// activation's output.
    fn backprop(self, out: &Array2<f64>, delta: &mut Array2<f64>) {
        match self {
            Activation::Tanh => delta.zip_mut_with(out, |d, &a| *d *= 1.0 - a * a),
            Activation::Relu => delta.zip_mut_with(out, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }
}

/// One dense layer; `weight` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        weight: Array2<f64>,
        bias: Array1<f64>,
        activation: Activation,
    ) -> Result<Self, NnError> {
        if bias.len() != weight.nrows() {
            return Err(NnError::Shape {
                what: "layer bias",
                expected: weight.nrows(),
                got: bias.len(),
            });
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// A feed-forward network: a chain of dense layers. This is the parameter
/// set every learned component in the crate is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations recorded by [`Mlp::forward_batch_cached`]; `acts[0]` is the
/// input and `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.acts[0]
    }
}

/// Per-layer gradients, shape-congruent with an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weight.raw_dim()),
                        Array1::zeros(l.bias.len()),
                    )
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|x| x.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|&x| x == 0.0))
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|((w, b), l)| w.dim() == l.weight.dim() && b.len() == l.bias.len())
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::Shape {
                    what: "layer chaining",
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Builds `sizes[0] -> sizes[1] -> ... -> sizes[n]` with `hidden` after
    /// every layer but the last, which is linear. Weights and biases are
    /// drawn uniformly from `±sqrt(1 / fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::Empty);
        }
        if let Some(&zero) = sizes.iter().find(|&&s| s == 0) {
            return Err(NnError::Shape {
                what: "layer width",
                expected: 1,
                got: zero,
            });
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..=bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..=bound));
                let activation = if i + 1 == n {
                    Activation::Identity
                } else {
                    hidden
                };
                Layer {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.activation == b.activation)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Iterates every scalar parameter in layer order (weights row-major, then bias).
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn copy_from(&mut self, other: &Mlp) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.assign(&b.weight);
            a.bias.assign(&b.bias);
        }
    }

    fn check_input(&self, got: usize) -> Result<(), NnError> {
        if got != self.in_dim() {
            return Err(NnError::Shape {
                what: "network input",
                expected: self.in_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-wise forward pass over a `(batch, in)` matrix.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(input.ncols())?;
        let mut x = input.to_owned();
        for layer in &self.layers {
            x = affine(&x, layer);
        }
        Ok(x)
    }

    pub fn forward_batch_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache, NnError> {
        self.check_input(input.ncols())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_owned());
        for layer in &self.layers {
            let next = affine(acts.last().unwrap(), layer);
            acts.push(next);
        }
        Ok(ForwardCache { acts })
    }

    /// Reverse-mode pass for `sum_rows <upstream_row, output_row>`: returns
    /// parameter gradients summed over the batch and the per-row input
    /// gradient.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>), NnError> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(NnError::Shape {
                what: "upstream gradient",
                expected: out.len(),
                got: upstream.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&cache.acts[i + 1], &mut delta);
            let dw = delta.t().dot(&cache.acts[i]);
            let db = delta.sum_axis(Axis(0));
            grads.push((dw, db));
            delta = delta.dot(&layer.weight);
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Single-sample gradient of `<upstream, mlp(input)>`.
    pub fn backward(
        &self,
        input: &[f64],
        upstream: &[f64],
    ) -> Result<(Gradients, Vec<f64>), NnError> {
        self.check_input(input.len())?;
        if upstream.len() != self.out_dim() {
            return Err(NnError::Shape {
                what: "upstream gradient",
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("contiguous row");
        let cache = self.forward_batch_cached(x)?;
        let (g, dx) = self.backward_batch(&cache, up)?;
        Ok((g, dx.into_raw_vec_and_offset().0))
    }
}

fn affine(x: &Array2<f64>, layer: &Layer) -> Array2<f64> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias;
    layer.activation.apply(&mut z);
    z
}
