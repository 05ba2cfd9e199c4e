//! Dense-network numerics: forward pass, softmax cross-entropy, manual
//! backpropagation and the two optimizers the experiments use.
//!
//! Parameters are laid out layer by layer, each layer contributing its
//! weight matrix (row per output unit, `out_dim x in_dim`, row-major)
//! followed by its bias. [`ParamVector`] and [`Gradient`] share that order.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    #[default]
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the pre-activation `z` and the
    /// activation output `a = apply(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NumericFault(format!("{what} entry {i} is {}", values[i]))),
        None => Ok(()),
    }
}

/// Flat trainable parameters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "parameter")?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// SHA-256 over the little-endian bit patterns; any change to any
    /// parameter changes it.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.0 {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "parameter vectors differ in length");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Gradient aligned index-for-index with a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Gradient(Vec<f64>);

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "gradient")?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self += other`, coordinate-wise.
    pub fn accumulate(&mut self, other: &Gradient) {
        assert_eq!(self.len(), other.len(), "gradient length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    /// `out_dim` rows of `in_dim` weights.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
    /// Dropout probability applied to this layer's output in training
    /// passes. Zero disables it.
    dropout: f64,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid(format!(
                "dense layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
            dropout: 0.0,
        })
    }

    /// Builds a layer from explicit weights given as one row per output unit.
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let out_dim = rows.len();
        let in_dim = rows.first().map_or(0, Vec::len);
        let mut layer = Self::zeros(in_dim, out_dim, activation)?;
        if rows.iter().any(|r| r.len() != in_dim) {
            return Err(Error::invalid("weight rows have unequal lengths"));
        }
        if bias.len() != out_dim {
            return Err(Error::invalid(format!(
                "bias has {} entries, expected {out_dim}",
                bias.len()
            )));
        }
        layer.weights = rows.concat();
        layer.bias = bias;
        check_finite(&layer.weights, "weight")?;
        check_finite(&layer.bias, "bias")?;
        Ok(layer)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let bound = 1.0 / (self.in_dim as f64).sqrt();
        for w in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *w = rng.gen_range(-bound..=bound);
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        self.dropout = rate;
        Ok(self)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    /// `N+ (N- + 1)`.
    pub fn param_count(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        dense_forward(self, x)
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    fn read_params(&mut self, src: &[f64]) {
        let (w, b) = src.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }
}

/// `activation(W x + b)`.
pub fn dense_forward(layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layer.in_dim {
        return Err(Error::invalid(format!(
            "input has {} entries, layer expects {}",
            x.len(),
            layer.in_dim
        )));
    }
    let mut out = layer.pre_activation(x);
    for v in &mut out {
        *v = layer.activation.apply(*v);
    }
    Ok(out)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn loss_for_label(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Categorical cross-entropy of `softmax(logits)` against a one-hot target.
pub fn cross_entropy_loss(logits: &[f64], one_hot: &[f64]) -> Result<f64> {
    if logits.len() != one_hot.len() || logits.is_empty() {
        return Err(Error::invalid(format!(
            "logits ({}) and target ({}) lengths differ",
            logits.len(),
            one_hot.len()
        )));
    }
    let label = one_hot_index(one_hot)?;
    Ok(loss_for_label(&softmax(logits), label))
}

/// Index of the single 1 in an axis-aligned unit vector.
pub fn one_hot_index(y: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::invalid("target has more than one hot entry"));
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::invalid(format!("target entry {i} is {v}, not 0 or 1")));
        }
    }
    hot.ok_or_else(|| Error::invalid("target has no hot entry"))
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[label] = 1.0;
    y
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// A feed-forward stack of dense layers whose last layer emits logits.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

/// Per-layer record of a forward pass, kept for backpropagation.
struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Multiplicative dropout factors per output unit (`mask / keep`).
    scale: Vec<Option<Vec<f64>>>,
    output: Vec<f64>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::invalid(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(DenseLayer::in_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(DenseLayer::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            layer.init_uniform(rng);
        }
    }

    pub fn params(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            layer.write_params(&mut out);
        }
        ParamVector(out)
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, network has {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.param_count();
            layer.read_params(&params.0[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Inference pass. An empty network is the identity map.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = dense_forward(layer, &cur)?;
        }
        Ok(cur)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    fn trace<R: Rng + ?Sized>(&self, x: &[f64], mut dropout_rng: Option<&mut R>) -> Result<Trace> {
        let n = self.layers.len();
        let mut tr = Trace {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            scale: Vec::with_capacity(n),
            output: Vec::new(),
        };
        let mut cur = x.to_vec();
        for layer in &self.layers {
            if cur.len() != layer.in_dim {
                return Err(Error::invalid(format!(
                    "input has {} entries, layer expects {}",
                    cur.len(),
                    layer.in_dim
                )));
            }
            let pre = layer.pre_activation(&cur);
            let mut out: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
            let scale = match dropout_rng.as_deref_mut() {
                Some(rng) if layer.dropout > 0.0 => {
                    let keep = 1.0 - layer.dropout;
                    let s: Vec<f64> = (0..layer.out_dim)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    for (o, f) in out.iter_mut().zip(&s) {
                        *o *= f;
                    }
                    Some(s)
                }
                _ => None,
            };
            tr.inputs.push(std::mem::replace(&mut cur, out));
            tr.pre.push(pre);
            tr.scale.push(scale);
        }
        tr.output = cur;
        Ok(tr)
    }

    /// Loss and gradient for one labelled sample, without dropout.
    pub fn backward(&self, x: &[f64], label: usize) -> Result<(f64, Gradient)> {
        self.backward_with::<rand::rngs::ThreadRng>(x, label, None)
    }

    /// Loss and gradient for one labelled sample. When `dropout_rng` is
    /// given, layers with a non-zero dropout rate draw their masks from it
    /// in layer order.
    pub fn backward_with<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        label: usize,
        dropout_rng: Option<&mut R>,
    ) -> Result<(f64, Gradient)> {
        let classes = self
            .output_dim()
            .ok_or_else(|| Error::invalid("cannot backpropagate through an empty network"))?;
        if label >= classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {classes} outputs"
            )));
        }
        let tr = self.trace(x, dropout_rng)?;
        let probs = softmax(&tr.output);
        let loss = loss_for_label(&probs, label);

        // dL/d(layer output), starting from softmax - y at the logits.
        let mut upstream = probs;
        upstream[label] -= 1.0;

        let mut grad = vec![0.0; self.param_count()];
        let mut end = grad.len();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let start = end - layer.param_count();
            let input = &tr.inputs[l];
            let pre = &tr.pre[l];
            let mut delta = upstream;
            for (j, d) in delta.iter_mut().enumerate() {
                if let Some(s) = &tr.scale[l] {
                    *d *= s[j];
                }
                let a = layer.activation.apply(pre[j]);
                *d *= layer.activation.derivative(pre[j], a);
            }
            let (gw, gb) = grad[start..end].split_at_mut(layer.weights.len());
            for (j, &dj) in delta.iter().enumerate() {
                let row = &mut gw[j * layer.in_dim..(j + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g = dj * xi;
                }
                gb[j] = dj;
            }
            if l > 0 {
                let mut next = vec![0.0; layer.in_dim];
                for (j, &dj) in delta.iter().enumerate() {
                    let row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += w * dj;
                    }
                }
                upstream = next;
            } else {
                upstream = Vec::new();
            }
            end = start;
        }
        let grad = Gradient(grad);
        if !grad.is_finite() || !loss.is_finite() {
            return Err(Error::NumericFault("non-finite gradient in backward pass".into()));
        }
        Ok((loss, grad))
    }

    /// Loss of one sample under the current parameters, no dropout.
    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        let logits = self.forward(x)?;
        if label >= logits.len() {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        Ok(loss_for_label(&softmax(&logits), label))
    }

    /// Splits into the layers before `at` and the layers from `at` on.
    pub fn split_off(mut self, at: usize) -> (Network, Network) {
        let tail = self.layers.split_off(at);
        (self, Network { layers: tail })
    }

    /// Relu on/off pattern of a forward pass, used to detect kinks.
    pub(crate) fn relu_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        let tr = self.trace::<rand::rngs::ThreadRng>(x, None)?;
        Ok(self
            .layers
            .iter()
            .zip(&tr.pre)
            .filter(|(layer, _)| layer.activation == Activation::Relu)
            .flat_map(|(_, pre)| pre.iter().map(|z| *z > 0.0))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    SgdMomentum {
        learning_rate: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        l2_penalty: f64,
    },
    Adam {
        learning_rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        l2_penalty: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig::SgdMomentum {
            learning_rate,
            momentum: 0.0,
            l2_penalty: 0.0,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig::Adam {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            l2_penalty: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lr, l2) = match *self {
            OptimizerConfig::SgdMomentum {
                learning_rate,
                momentum,
                l2_penalty,
            } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::config(format!("momentum {momentum} not in [0, 1)")));
                }
                (learning_rate, l2_penalty)
            }
            OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
                l2_penalty,
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::config("adam betas must lie in [0, 1)"));
                }
                if epsilon.is_nan() || epsilon <= 0.0 {
                    return Err(Error::config("adam epsilon must be positive"));
                }
                (learning_rate, l2_penalty)
            }
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate {lr} must be positive")));
        }
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::config(format!("l2 penalty {l2} must be non-negative")));
        }
        Ok(())
    }
}

/// Optimizer plus its per-parameter accumulators.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimizerConfig,
    /// Velocity for SGD, first moment for Adam.
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, len: usize) -> Result<Self> {
        config.validate()?;
        let second = match config {
            OptimizerConfig::Adam { .. } => vec![0.0; len],
            OptimizerConfig::SgdMomentum { .. } => Vec::new(),
        };
        Ok(Self {
            config,
            first: vec![0.0; len],
            second,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to `theta` in place.
    ///
    /// SGD: `v <- mu v + (g + l2 theta)`, `theta <- theta - lr v`; with zero
    /// momentum and penalty this is the plain `theta - lr g` replacement.
    /// Adam follows the bias-corrected standard form with the L2 term folded
    /// into the gradient.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != grad.len() || theta.len() != self.first.len() {
            return Err(Error::invalid(format!(
                "optimizer sized for {}, got {} params and {} gradient entries",
                self.first.len(),
                theta.len(),
                grad.len()
            )));
        }
        check_finite(grad, "gradient")?;
        self.steps += 1;
        match self.config {
            OptimizerConfig::SgdMomentum {
                learning_rate,
                momentum,
                l2_penalty,
            } => {
                for ((t, g), v) in theta.iter_mut().zip(grad).zip(&mut self.first) {
                    let g = g + l2_penalty * *t;
                    *v = momentum * *v + g;
                    *t -= learning_rate * *v;
                }
            }
            OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
                l2_penalty,
            } => {
                let bc1 = 1.0 - beta1.powi(self.steps as i32);
                let bc2 = 1.0 - beta2.powi(self.steps as i32);
                for (((t, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    let g = g + l2_penalty * *t;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *t -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        check_finite(theta, "updated parameter")
    }
}
