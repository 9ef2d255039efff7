use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Identity => {}
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
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

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }

    /// ReLU hidden layers followed by the width-1 sigmoid output.
    pub fn relu_stack(hidden: &[usize]) -> Vec<LayerSpec> {
        hidden
            .iter()
            .map(|&w| LayerSpec::new(w, Activation::Relu))
            .chain(std::iter::once(LayerSpec::new(1, Activation::Sigmoid)))
            .collect()
    }
}

/// Named architectures used by the audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Two hidden layers of 40 units.
    Standard,
    /// 1024-512-256-128, for large-feature datasets.
    Wide,
    /// 64-128-32 attack classifier.
    Attack,
}

impl Architecture {
    pub fn hidden(self) -> &'static [usize] {
        match self {
            Architecture::Standard => &[40, 40],
            Architecture::Wide => &[1024, 512, 256, 128],
            Architecture::Attack => &[64, 128, 32],
        }
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        LayerSpec::relu_stack(self.hidden())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Dense feed-forward binary classifier with a single output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    layers: Vec<Dense>,
    seed: u64,
}

/// Per-parameter arrays shaped like a model's weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Params {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            w: model.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            b: model.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let sq: f64 = self.w.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
            + self.b.iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
        sq.sqrt()
    }

    pub fn scale(&mut self, f: f64) {
        self.w.iter_mut().for_each(|w| *w *= f);
        self.b.iter_mut().for_each(|b| *b *= f);
    }

    pub fn add_scaled(&mut self, other: &Params, f: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            a.scaled_add(f, b);
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            a.scaled_add(f, b);
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.w.iter_mut().for_each(|w| w.iter_mut().for_each(&mut f));
        self.b.iter_mut().for_each(|b| b.iter_mut().for_each(&mut f));
    }

    pub fn len(&self) -> usize {
        self.w.iter().map(|w| w.len()).sum::<usize>() + self.b.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.b.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Anything that maps feature rows to the positive-class score.
pub trait Predictor: Sync {
    fn input_dim(&self) -> usize;

    fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Array1<f64>;

    fn predict_one(&self, x: ArrayView1<'_, f64>) -> f64 {
        let row = x.insert_axis(Axis(0));
        self.predict_batch(row)[0]
    }
}

/// Predictors with an analytic input gradient.
pub trait Differentiable: Predictor {
    fn input_gradients(&self, x: ArrayView2<'_, f64>) -> Array2<f64>;
}

pub(crate) struct ForwardCache {
    /// pre-activations per layer
    pub z: Vec<Array2<f64>>,
    /// activations; `a[0]` is the input
    pub a: Vec<Array2<f64>>,
}

impl MlpModel {
    /// Seeded initialization: He-uniform for ReLU layers, Glorot-uniform
    /// otherwise; zero biases.
    pub fn new(input_dim: usize, layers: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if layers.is_empty() || layers.iter().any(|l| l.width == 0) {
            return Err(Error::Config("layers must be non-empty with positive widths".into()));
        }
        if layers.last().map(|l| l.width) != Some(1) {
            return Err(Error::Config("output layer must have width 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input_dim;
        let mut dense = Vec::with_capacity(layers.len());
        for spec in layers {
            let limit = match spec.activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + spec.width) as f64).sqrt(),
            };
            let weights =
                Array2::from_shape_simple_fn((fan_in, spec.width), || rng.random_range(-limit..=limit));
            dense.push(Dense {
                weights,
                bias: Array1::zeros(spec.width),
                activation: spec.activation,
            });
            fan_in = spec.width;
        }
        Ok(Self {
            input_dim,
            layers: dense,
            seed,
        })
    }

    /// Builds a model from explicit parameters.
    pub fn from_layers(input_dim: usize, layers: Vec<Dense>, seed: u64) -> Result<Self> {
        let mut fan_in = input_dim;
        for l in &layers {
            if l.weights.nrows() != fan_in {
                return Err(Error::Dimension {
                    expected: fan_in,
                    got: l.weights.nrows(),
                });
            }
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::Dimension {
                    expected: l.weights.ncols(),
                    got: l.bias.len(),
                });
            }
            fan_in = l.weights.ncols();
        }
        if fan_in != 1 || layers.is_empty() {
            return Err(Error::Config("output layer must have width 1".into()));
        }
        Ok(Self {
            input_dim,
            layers,
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec::new(l.weights.ncols(), l.activation))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().expect("non-empty").activation
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Probability for a single feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(self.predict_one(ArrayView1::from(x)))
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.forward(x)? >= 0.5))
    }

    pub fn predict_labels(&self, x: ArrayView2<'_, f64>) -> Vec<u8> {
        self.predict_batch(x).iter().map(|&p| u8::from(p >= 0.5)).collect()
    }

    pub(crate) fn forward_cache(&self, x: ArrayView2<'_, f64>) -> ForwardCache {
        let mut z = Vec::with_capacity(self.layers.len());
        let mut a = Vec::with_capacity(self.layers.len() + 1);
        a.push(x.to_owned());
        for layer in &self.layers {
            let mut pre = a.last().expect("input pushed").dot(&layer.weights);
            pre += &layer.bias;
            let mut act = pre.clone();
            layer.activation.apply(&mut act);
            z.push(pre);
            a.push(act);
        }
        ForwardCache { z, a }
    }

    /// Mean binary cross-entropy over the batch plus `0.5·l2·‖W‖²/n`, and its
    /// gradient. Requires a sigmoid output layer.
    pub fn loss_gradient(&self, x: ArrayView2<'_, f64>, y: &[f64], l2: f64) -> (f64, Params) {
        let n = x.nrows() as f64;
        let cache = self.forward_cache(x);
        let logits = cache.z.last().expect("non-empty");
        let probs = cache.a.last().expect("non-empty");
        let mut loss = 0.0;
        for (zv, &t) in logits.column(0).iter().zip(y) {
            // stable BCE on logits
            loss += zv.max(0.0) - zv * t + (-zv.abs()).exp().ln_1p();
        }
        loss /= n;

        let mut delta = Array2::<f64>::zeros(probs.raw_dim());
        for (i, (&p, &t)) in probs.column(0).iter().zip(y).enumerate() {
            delta[[i, 0]] = (p - t) / n;
        }
        let mut grads = Params::zeros_like(self);
        for l in (0..self.layers.len()).rev() {
            grads.w[l] = cache.a[l].t().dot(&delta);
            grads.b[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.layers[l].weights.t());
                let act = self.layers[l - 1].activation;
                Zip::from(&mut prev)
                    .and(&cache.z[l - 1])
                    .and(&cache.a[l])
                    .for_each(|d, &zv, &av| *d *= act.derivative(zv, av));
                delta = prev;
            }
        }
        if l2 > 0.0 {
            let mut penalty = 0.0;
            for (g, layer) in grads.w.iter_mut().zip(&self.layers) {
                penalty += layer.weights.iter().map(|v| v * v).sum::<f64>();
                g.scaled_add(l2 / n, &layer.weights);
            }
            loss += 0.5 * l2 * penalty / n;
        }
        (loss, grads)
    }

    pub(crate) fn apply_update(&mut self, update: &Params, f: f64) {
        for (layer, (w, b)) in self.layers.iter_mut().zip(update.w.iter().zip(&update.b)) {
            layer.weights.scaled_add(f, w);
            layer.bias.scaled_add(f, b);
        }
    }

    /// Parameters as a `Params` value.
    pub fn params(&self) -> Params {
        Params {
            w: self.layers.iter().map(|l| l.weights.clone()).collect(),
            b: self.layers.iter().map(|l| l.bias.clone()).collect(),
        }
    }

    /// Text serialization: header, one line per layer, then row-major
    /// weights followed by biases for each layer, one value per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "xpaudit-mlp v1");
        let _ = writeln!(out, "input_dim {}", self.input_dim);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "layers {}", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(out, "layer {} {}", l.weights.ncols(), l.activation.name());
        }
        for l in &self.layers {
            for v in l.weights.iter() {
                let _ = writeln!(out, "{v:e}");
            }
            for v in l.bias.iter() {
                let _ = writeln!(out, "{v:e}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |detail: &str| Error::Parse {
            path: "<model>".into(),
            detail: detail.to_string(),
        };
        let mut lines = text.lines();
        if lines.next() != Some("xpaudit-mlp v1") {
            return Err(bad("unsupported header"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            line.strip_prefix(key)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| bad(&format!("expected `{key}`")))
        };
        let input_dim: usize = field("input_dim")?.parse().map_err(|_| bad("input_dim"))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed"))?;
        let n_layers: usize = field("layers")?.parse().map_err(|_| bad("layers"))?;
        let mut specs = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let spec = field("layer")?;
            let mut parts = spec.split_whitespace();
            let width: usize = parts
                .next()
                .and_then(|w| w.parse().ok())
                .ok_or_else(|| bad("layer width"))?;
            let act = parts
                .next()
                .and_then(Activation::parse)
                .ok_or_else(|| bad("layer activation"))?;
            specs.push((width, act));
        }
        let mut values = lines.map(|l| l.trim().parse::<f64>().map_err(|_| bad("parameter value")));
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(n_layers);
        for (width, activation) in specs {
            let w: Vec<f64> = (&mut values).take(fan_in * width).collect::<Result<_>>()?;
            let b: Vec<f64> = (&mut values).take(width).collect::<Result<_>>()?;
            if w.len() != fan_in * width || b.len() != width {
                return Err(bad("truncated parameters"));
            }
            layers.push(Dense {
                weights: Array2::from_shape_vec((fan_in, width), w).map_err(|e| bad(&e.to_string()))?,
                bias: Array1::from(b),
                activation,
            });
            fan_in = width;
        }
        Self::from_layers(input_dim, layers, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { detail, .. } => Error::Parse {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    /// SHA-256 of the text serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

impl Predictor for MlpModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut a = x.dot(&self.layers[0].weights);
        a += &self.layers[0].bias;
        self.layers[0].activation.apply(&mut a);
        for layer in &self.layers[1..] {
            a = a.dot(&layer.weights);
            a += &layer.bias;
            layer.activation.apply(&mut a);
        }
        a.column(0).to_owned()
    }
}

impl Differentiable for MlpModel {
    fn input_gradients(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let cache = self.forward_cache(x);
        let last = self.layers.len() - 1;
        let out_act = self.layers[last].activation;
        let mut delta = cache.z[last].clone();
        Zip::from(&mut delta)
            .and(&cache.a[last + 1])
            .for_each(|d, &av| *d = out_act.derivative(*d, av));
        for l in (1..=last).rev() {
            let mut prev = delta.dot(&self.layers[l].weights.t());
            let act = self.layers[l - 1].activation;
            Zip::from(&mut prev)
                .and(&cache.z[l - 1])
                .and(&cache.a[l])
                .for_each(|d, &zv, &av| *d *= act.derivative(zv, av));
            delta = prev;
        }
        delta.dot(&self.layers[0].weights.t())
    }
}
