//! Small dense feed-forward networks with hand-written backpropagation.
//!
//! Hidden layers use ReLU. The head is either linear or softmax. Gradients are
//! computed one sample at a time and accumulated by the caller; [`Mlp::adam_step`]
//! applies an accumulated gradient with bias-corrected Adam.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite input at position {0}")]
    NonFiniteInput(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint schema error: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    Linear,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output_head: OutputHead,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, head: OutputHead) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            output_head: head,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(NetError::InvalidSpec("all dimensions must be >= 1".into()));
        }
        if self.output_head == OutputHead::Softmax && self.output_dim < 2 {
            return Err(NetError::InvalidSpec(
                "softmax head needs at least 2 outputs".into(),
            ));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Row-major weights (`outputs × inputs`) plus biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
        }));
    }
}

/// Parameter-shaped buffer; used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| DenseLayer::zeros(i, o))
                .collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Flattened view in (layer, weights, bias) order.
    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|g| *g *= factor);
    }

    pub fn add(&mut self, other: &Gradients) -> Result<(), NetError> {
        if !self.same_shape(other) {
            return Err(NetError::ShapeMismatch("gradient structures differ".into()));
        }
        self.values_mut().zip(other.values()).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn fill(&mut self, v: f64) {
        self.values_mut().for_each(|g| *g = v);
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|g| *g == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }

    pub fn same_shape(&self, other: &Gradients) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Gradients,
    pub v: Gradients,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer; `acts[0]` is the network input.
    acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<DenseLayer>,
    adam: AdamState,
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, fresh optimizer state.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self, NetError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| {
                let limit = (6.0 / (i + o) as f64).sqrt();
                let mut layer = DenseLayer::zeros(i, o);
                for w in &mut layer.weights {
                    *w = rng.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(Self::from_layers(spec, layers))
    }

    fn from_layers(spec: MlpSpec, layers: Vec<DenseLayer>) -> Self {
        let zeros = Gradients::zeros(&spec);
        Self {
            adam: AdamState {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
            spec,
            layers,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Parameters flattened in the same order as [`Gradients::flat`].
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        if let Some(p) = self.params_mut().nth(index) {
            *p = value;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Multiplies one layer's weights and biases by `factor`.
    pub fn scale_layer(&mut self, layer: usize, factor: f64) {
        let l = &mut self.layers[layer];
        l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|w| *w *= factor);
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache, NetError> {
        if x.len() != self.spec.input_dim {
            return Err(NetError::ShapeMismatch(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(NetError::NonFiniteInput(i));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        let mut output = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[l], &mut z);
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
                acts.push(z);
            } else {
                if self.spec.output_head == OutputHead::Softmax {
                    softmax_in_place(&mut z);
                }
                output = z;
            }
        }
        Ok(ForwardCache { acts, output })
    }

    /// Forward pass returning only the output.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.forward(x).map(|c| c.output)
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient with respect to the network output (probabilities for
    /// a softmax head).
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Result<Gradients, NetError> {
        let mut grads = Gradients::zeros(&self.spec);
        self.backward_into(cache, grad_output, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Mlp::backward`] but adds into an existing accumulator.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        grads: &mut Gradients,
    ) -> Result<(), NetError> {
        if grad_output.len() != self.spec.output_dim
            || cache.output.len() != self.spec.output_dim
            || cache.acts.len() != self.layers.len()
        {
            return Err(NetError::ShapeMismatch(
                "cache or output gradient does not match the network".into(),
            ));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(NetError::ShapeMismatch("gradient accumulator shape".into()));
        }
        let mut delta: Vec<f64> = match self.spec.output_head {
            OutputHead::Linear => grad_output.to_vec(),
            OutputHead::Softmax => {
                let p = &cache.output;
                let dot: f64 = p.iter().zip(grad_output).map(|(a, b)| a * b).sum();
                p.iter().zip(grad_output).map(|(pk, gk)| pk * (gk - dot)).collect()
            }
        };
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.acts[l];
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(w, x)| *w += d * x);
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            // ReLU: the stored activation is zero exactly where the unit was inactive.
            prev.iter_mut()
                .zip(input)
                .for_each(|(p, a)| if *a <= 0.0 { *p = 0.0 });
            delta = prev;
        }
        Ok(())
    }

    /// One bias-corrected Adam update with an accumulated gradient.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<(), NetError> {
        if !grads.same_shape(&self.adam.m) {
            return Err(NetError::ShapeMismatch("gradients do not match parameters".into()));
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.adam.m.layers[l];
            let v = &mut self.adam.v.layers[l];
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            };
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
        Ok(())
    }

    pub fn to_checkpoint_json(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let mut s = serde_json::to_string(&ck).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, NetError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| NetError::Schema(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(NetError::Schema(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(NetError::Schema(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        let model = ck.model;
        model.spec.validate()?;
        let expected = Gradients::zeros(&model.spec);
        let layers_ok = model.layers.len() == expected.layers.len()
            && model.layers.iter().zip(&expected.layers).all(|(a, b)| {
                a.inputs == b.inputs
                    && a.outputs == b.outputs
                    && a.weights.len() == b.weights.len()
                    && a.bias.len() == b.bias.len()
            });
        let moments_ok = [&model.adam.m, &model.adam.v].iter().all(|g| {
            g.same_shape(&expected)
                && g.layers
                    .iter()
                    .zip(&expected.layers)
                    .all(|(a, b)| a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len())
        });
        if !layers_ok || !moments_ok {
            return Err(NetError::ShapeMismatch(
                "stored parameters do not match the stored spec".into(),
            ));
        }
        if !model.all_finite() {
            return Err(NetError::Schema("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_json()).map_err(|source| NetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_checkpoint_json(&text)
    }

    /// Loads a checkpoint and checks it was built for `spec`.
    pub fn load_expecting(path: impl AsRef<Path>, spec: &MlpSpec) -> Result<Self, NetError> {
        let m = Self::load(path)?;
        if m.spec != *spec {
            return Err(NetError::ShapeMismatch(format!(
                "checkpoint spec {:?} differs from expected {:?}",
                m.spec, spec
            )));
        }
        Ok(m)
    }
}

pub const CHECKPOINT_FORMAT: &str = "tinynet-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: Mlp,
}
