//! Dense feed-forward network in double precision: forward pass, MSE loss,
//! backpropagation and Adam.
//!
//! Weights are stored `(fan_out × fan_in)`, so a layer computes
//! `z = W·x + b` per sample and then applies its activation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default topology: 10 sensor features, hidden widths 32 and 16, 3 classes.
pub const DEFAULT_TOPOLOGY: [usize; 4] = [10, 32, 16, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative evaluated at the pre-activation. ReLU'(0) is 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    weights: Matrix,
    biases: Vec<f64>,
    activation: Activation,
}

impl LayerParams {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(Error::dim("layer bias length", weights.rows(), biases.len()));
        }
        if !weights.is_finite() || biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(fan_out, fan_in),
            biases: vec![0.0; fan_out],
            activation,
        }
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Flat mutable view over weights then biases; used by optimizers and
    /// finite-difference checks. Shapes cannot change through it.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .as_mut_slice()
            .iter_mut()
            .chain(self.biases.iter_mut())
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.as_slice().iter().chain(self.biases.iter())
    }

    pub fn len(&self) -> usize {
        self.weights.as_slice().len() + self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.fan_in(), self.fan_out(), self.activation)
    }
}

/// Ordered dense layers; layer `i` feeds layer `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<LayerParams>,
}

impl NetworkParams {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::dim(
                    format!("layer {} fan_in", i + 1),
                    pair[0].fan_out(),
                    pair[1].fan_in(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// He-uniform weights (limit `sqrt(6 / fan_in)`), zero biases, ReLU on
    /// every layer.
    pub fn he_uniform<R: Rng + ?Sized>(topology: &[usize], rng: &mut R) -> Result<Self> {
        check_topology(topology)?;
        let layers = topology
            .windows(2)
            .map(|w| he_layer(w[0], w[1], rng))
            .collect();
        Self::new(layers)
    }

    /// Training initialisation: He-uniform hidden layers with zero biases; the
    /// output layer starts with zero weights and every bias at `1 / width`,
    /// the mean of a one-hot target, so no ReLU output unit starts dead.
    pub fn for_training<R: Rng + ?Sized>(topology: &[usize], rng: &mut R) -> Result<Self> {
        check_topology(topology)?;
        let last = topology.len() - 2;
        let layers = topology
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if i == last {
                    let mut out = LayerParams::zeros(w[0], w[1], Activation::Relu);
                    out.biases.fill(1.0 / w[1] as f64);
                    out
                } else {
                    he_layer(w[0], w[1], rng)
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn topology(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(LayerParams::fan_out))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    /// Zero-initialised container with the same shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    /// Single-sample forward pass returning only the output activations.
    pub fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::dim("layer 0 input", self.input_width(), x.len()));
        }
        let mut current = x.to_vec();
        for layer in &self.layers {
            current = (0..layer.fan_out())
                .map(|o| {
                    let z = dot(layer.weights.row(o), &current) + layer.biases[o];
                    layer.activation.apply(z)
                })
                .collect();
        }
        Ok(current)
    }
}

fn check_topology(topology: &[usize]) -> Result<()> {
    if topology.len() < 2 || topology.contains(&0) {
        return Err(Error::Config(format!(
            "topology needs at least two non-zero widths, got {topology:?}"
        )));
    }
    Ok(())
}

fn he_layer<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> LayerParams {
    let limit = (6.0 / fan_in as f64).sqrt();
    let mut layer = LayerParams::zeros(fan_in, fan_out, Activation::Relu);
    for v in layer.weights.as_mut_slice() {
        *v = rng.random_range(-limit..limit);
    }
    layer
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Every pre- and post-activation of one batch, `(batch × width)` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().expect("trace has at least one layer")
    }

    /// Post-activations of hidden layer `index` (0 = first hidden layer).
    pub fn hidden(&self, index: usize) -> Option<&Matrix> {
        if index + 1 < self.post.len() {
            self.post.get(index)
        } else {
            None
        }
    }
}

pub fn forward(params: &NetworkParams, batch: &Matrix) -> Result<ForwardTrace> {
    if batch.cols() != params.input_width() {
        return Err(Error::dim("layer 0 input", params.input_width(), batch.cols()));
    }
    let n = batch.rows();
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post: Vec<Matrix> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let input = post.last().unwrap_or(batch);
        let mut z = Matrix::zeros(n, layer.fan_out());
        let mut a = Matrix::zeros(n, layer.fan_out());
        for s in 0..n {
            let x = input.row(s);
            for o in 0..layer.fan_out() {
                let v = dot(layer.weights.row(o), x) + layer.biases[o];
                z[(s, o)] = v;
                a[(s, o)] = layer.activation.apply(v);
            }
        }
        pre.push(z);
        post.push(a);
    }
    Ok(ForwardTrace {
        input: batch.clone(),
        pre,
        post,
    })
}

/// `(1 / (batch · width)) · Σ (output − target)²`.
pub fn mse_loss(output: &Matrix, targets: &Matrix) -> Result<f64> {
    check_same_shape("mse targets", output, targets)?;
    let count = output.as_slice().len();
    if count == 0 {
        return Ok(0.0);
    }
    let sum: f64 = output
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(o, t)| (o - t) * (o - t))
        .sum();
    Ok(sum / count as f64)
}

fn check_same_shape(context: &str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::dim(format!("{context} rows"), a.rows(), b.rows()));
    }
    if a.cols() != b.cols() {
        return Err(Error::dim(format!("{context} columns"), a.cols(), b.cols()));
    }
    Ok(())
}

/// Gradients share the parameter container type.
pub type Gradients = NetworkParams;

/// Backpropagates the MSE loss through `trace`.
///
/// `sparsity_grads[h]`, when present, is `∂penalty/∂post[h]` for hidden layer
/// `h`, `(batch × width)`; it is added to the activation delta of that layer
/// before propagating further down.
pub fn backward(
    trace: &ForwardTrace,
    params: &NetworkParams,
    targets: &Matrix,
    sparsity_grads: Option<&[Option<Matrix>]>,
) -> Result<Gradients> {
    let n_layers = params.layers.len();
    if trace.pre.len() != n_layers || trace.post.len() != n_layers {
        return Err(Error::dim("trace layer count", n_layers, trace.pre.len()));
    }
    for (i, (layer, z)) in params.layers.iter().zip(&trace.pre).enumerate() {
        if z.cols() != layer.fan_out() {
            return Err(Error::dim(format!("trace layer {i} width"), layer.fan_out(), z.cols()));
        }
    }
    let output = trace.output();
    check_same_shape("backward targets", output, targets)?;
    if let Some(sg) = sparsity_grads {
        if sg.len() != params.hidden_layer_count() {
            return Err(Error::dim(
                "sparsity gradient layer count",
                params.hidden_layer_count(),
                sg.len(),
            ));
        }
        for (h, g) in sg.iter().enumerate() {
            if let Some(g) = g {
                check_same_shape(&format!("sparsity gradient of hidden layer {h}"), g, &trace.post[h])?;
            }
        }
    }

    let n = trace.batch_size();
    let scale = if output.as_slice().is_empty() {
        0.0
    } else {
        2.0 / output.as_slice().len() as f64
    };

    // ∂J/∂(post-activation) of the current layer.
    let mut d_post = Matrix::zeros(n, output.cols());
    for (d, (o, t)) in d_post
        .as_mut_slice()
        .iter_mut()
        .zip(output.as_slice().iter().zip(targets.as_slice()))
    {
        *d = scale * (o - t);
    }

    let mut grads = params.zeros_like();
    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        if l + 1 < n_layers {
            if let Some(Some(g)) = sparsity_grads.map(|sg| &sg[l]) {
                for (d, gv) in d_post.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *d += gv;
                }
            }
        }
        let z = &trace.pre[l];
        let mut delta = d_post;
        for (d, zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *d *= layer.activation.derivative(*zv);
        }
        let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        let g = &mut grads.layers[l];
        for s in 0..n {
            let x = input.row(s);
            let ds = delta.row(s);
            for (o, &dv) in ds.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                g.biases[o] += dv;
                for (gw, xv) in g.weights.row_mut(o).iter_mut().zip(x) {
                    *gw += dv * xv;
                }
            }
        }
        let mut next = Matrix::zeros(n, layer.fan_in());
        if l > 0 {
            for s in 0..n {
                let ds = delta.row(s);
                let out = next.row_mut(s);
                for (o, &dv) in ds.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    for (nv, w) in out.iter_mut().zip(layer.weights.row(o)) {
                        *nv += dv * w;
                    }
                }
            }
        }
        d_post = next;
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: NetworkParams,
    second_moment: NetworkParams,
    step_count: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &NetworkParams {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &NetworkParams {
        &self.second_moment
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient entry
/// is non-finite or the shapes disagree.
pub fn adam_step(params: &mut NetworkParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.topology() != params.topology() || state.first_moment.topology() != params.topology() {
        return Err(Error::dim(
            "adam gradient layers",
            params.layers.len(),
            grads.layers.len(),
        ));
    }
    for (l, layer) in grads.layers.iter().enumerate() {
        if let Some(pos) = layer.values().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {pos} of layer {l}; update rejected"
            )));
        }
    }

    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);

    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first_moment.layers.iter_mut())
        .zip(state.second_moment.layers.iter_mut())
    {
        for (((pv, gv), mv), vv) in p
            .values_mut()
            .zip(g.values())
            .zip(m.values_mut())
            .zip(v.values_mut())
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
