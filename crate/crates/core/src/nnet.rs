//! Fixed-topology multilayer perceptron with exact backprop, Adam and
//! (0, 1) min-max scaling.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid scaler: {0}")]
    Scaler(String),
    #[error("cache does not match model: {0}")]
    StaleCache(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, minibatch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("model file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Result<Self, NnetError> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => Err(NnetError::Parse(format!("unknown activation {s}"))),
        }
    }
}

/// Per-dimension min-max map onto (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self, NnetError> {
        if min.len() != max.len() {
            return Err(NnetError::Scaler("min and max lengths differ".into()));
        }
        if let Some(i) = (0..min.len()).find(|&i| !(min[i] < max[i])) {
            return Err(NnetError::Scaler(format!("dimension {i}: min {} !< max {}", min[i], max[i])));
        }
        Ok(Self { min, max })
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self, NnetError> {
        Self::new(bounds.iter().map(|b| b.0).collect(), bounds.iter().map(|b| b.1).collect())
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn scale(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(i, x)| (x - self.min[i]) / (self.max[i] - self.min[i])).collect()
    }

    pub fn unscale(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(i, x)| self.min[i] + x * (self.max[i] - self.min[i])).collect()
    }

    fn scale_rows(&self, a: &Array2<f64>) -> Array2<f64> {
        let mut out = a.clone();
        for mut row in out.rows_mut() {
            for (i, x) in row.iter_mut().enumerate() {
                *x = (*x - self.min[i]) / (self.max[i] - self.min[i]);
            }
        }
        out
    }

    fn unscale_rows(&self, a: &Array2<f64>) -> Array2<f64> {
        let mut out = a.clone();
        for mut row in out.rows_mut() {
            for (i, x) in row.iter_mut().enumerate() {
                *x = self.min[i] + *x * (self.max[i] - self.min[i]);
            }
        }
        out
    }
}

/// One affine layer; `weights` is `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub input_scaler: Option<Scaler>,
    pub output_scaler: Option<Scaler>,
}

/// Activations recorded by a forward pass, in the model's internal space.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[l]` feeds layer `l`; the last entry is the network output.
    pub activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache has at least the input")
    }
}

/// Parameter gradients, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, ReLU hidden and identity output.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Result<Self, NnetError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnetError::Dimension(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-r..r));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation: if l + 1 == n { Activation::Identity } else { Activation::Relu },
                }
            })
            .collect();
        Ok(Self { layers, input_scaler: None, output_scaler: None })
    }

    pub fn with_scalers(mut self, input: Option<Scaler>, output: Option<Scaler>) -> Result<Self, NnetError> {
        if let Some(s) = &input {
            if s.dim() != self.input_dim() {
                return Err(NnetError::Dimension("input scaler size".into()));
            }
        }
        if let Some(s) = &output {
            if s.dim() != self.output_dim() {
                return Err(NnetError::Dimension("output scaler size".into()));
            }
        }
        self.input_scaler = input;
        self.output_scaler = output;
        Ok(self)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.bias.len()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.bias.len()).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Map raw inputs into the internal space (identity without a scaler).
    pub fn scale_inputs(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.input_scaler {
            Some(s) => s.scale_rows(x),
            None => x.clone(),
        }
    }

    pub fn scale_outputs(&self, y: &Array2<f64>) -> Array2<f64> {
        match &self.output_scaler {
            Some(s) => s.scale_rows(y),
            None => y.clone(),
        }
    }

    pub fn unscale_outputs(&self, y: &Array2<f64>) -> Array2<f64> {
        match &self.output_scaler {
            Some(s) => s.unscale_rows(y),
            None => y.clone(),
        }
    }

    /// Forward pass on internal-space rows, keeping every activation.
    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<ForwardCache, NnetError> {
        if x.ncols() != self.input_dim() {
            return Err(NnetError::Dimension(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let prev = activations.last().unwrap();
            let mut z = prev.dot(&layer.weights.t());
            z += &layer.bias;
            if layer.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Batched forward pass. With `scaled`, inputs are mapped through the
    /// input scaler and outputs back through the output scaler.
    pub fn forward(&self, x: &Array2<f64>, scaled: bool) -> Result<Array2<f64>, NnetError> {
        if scaled {
            let cache = self.forward_cached(&self.scale_inputs(x))?;
            Ok(self.unscale_outputs(cache.output()))
        } else {
            Ok(self.forward_cached(x)?.activations.pop().unwrap())
        }
    }

    /// Single-sample convenience wrapper around [`MlpModel::forward`].
    pub fn predict(&self, x: &[f64], scaled: bool) -> Result<Vec<f64>, NnetError> {
        let a = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| NnetError::Dimension(e.to_string()))?;
        Ok(self.forward(&a, scaled)?.row(0).to_vec())
    }

    /// Reverse-mode gradients of a scalar loss given its gradient with
    /// respect to the internal-space output rows.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Array2<f64>) -> Result<Gradients, NnetError> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(NnetError::StaleCache("layer count".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if cache.activations[l + 1].ncols() != layer.bias.len() || cache.activations[l].ncols() != layer.weights.ncols() {
                return Err(NnetError::StaleCache(format!("layer {l} shape")));
            }
        }
        if output_grad.dim() != cache.output().dim() {
            return Err(NnetError::Dimension("output gradient shape".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                let post = &cache.activations[l + 1];
                ndarray::Zip::from(&mut delta).and(post).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let gw = delta.t().dot(&cache.activations[l]);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&layer.weights);
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Text container; floats are written in shortest round-trip form so a
    /// save/load cycle is bit-exact.
    pub fn to_text(&self) -> String {
        let mut out = String::from("mlp 1\n");
        let join = |v: &mut dyn Iterator<Item = &f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let sizes: Vec<String> = self.sizes().iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "sizes {}", sizes.join(" "));
        let acts: Vec<&str> = self.layers.iter().map(|l| l.activation.name()).collect();
        let _ = writeln!(out, "activations {}", acts.join(" "));
        for (name, sc) in [("input_scaler", &self.input_scaler), ("output_scaler", &self.output_scaler)] {
            match sc {
                None => {
                    let _ = writeln!(out, "{name} none");
                }
                Some(s) => {
                    let _ = writeln!(out, "{name} {} | {}", join(&mut s.min.iter()), join(&mut s.max.iter()));
                }
            }
        }
        for layer in &self.layers {
            let _ = writeln!(out, "w {}", join(&mut layer.weights.iter()));
            let _ = writeln!(out, "b {}", join(&mut layer.bias.iter()));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NnetError> {
        let mut lines = text.lines();
        let mut next = |key: &str| -> Result<String, NnetError> {
            let line = lines.next().ok_or_else(|| NnetError::Parse(format!("missing `{key}`")))?;
            line.strip_prefix(key)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| NnetError::Parse(format!("expected `{key}`, found `{line}`")))
        };
        if next("mlp")? != "1" {
            return Err(NnetError::Parse("unsupported version".into()));
        }
        let floats = |s: &str| -> Result<Vec<f64>, NnetError> {
            s.split_whitespace().map(|v| v.parse::<f64>().map_err(|e| NnetError::Parse(format!("{v}: {e}")))).collect()
        };
        let sizes: Vec<usize> = next("sizes")?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| NnetError::Parse(format!("bad size {v}"))))
            .collect::<Result<_, _>>()?;
        let acts: Vec<Activation> = next("activations")?.split_whitespace().map(Activation::parse).collect::<Result<_, _>>()?;
        if sizes.len() < 2 || acts.len() != sizes.len() - 1 {
            return Err(NnetError::Parse("sizes and activations disagree".into()));
        }
        let mut scalers = Vec::new();
        for key in ["input_scaler", "output_scaler"] {
            let body = next(key)?;
            if body == "none" {
                scalers.push(None);
            } else {
                let (lo, hi) = body.split_once('|').ok_or_else(|| NnetError::Parse(format!("{key} needs `min | max`")))?;
                scalers.push(Some(Scaler::new(floats(lo)?, floats(hi)?)?));
            }
        }
        let mut layers = Vec::new();
        for (l, act) in acts.into_iter().enumerate() {
            let (fi, fo) = (sizes[l], sizes[l + 1]);
            let w = floats(&next("w")?)?;
            let b = floats(&next("b")?)?;
            let weights = Array2::from_shape_vec((fo, fi), w).map_err(|e| NnetError::Parse(format!("layer {l}: {e}")))?;
            if b.len() != fo {
                return Err(NnetError::Parse(format!("layer {l}: bias length")));
            }
            layers.push(Layer { weights, bias: Array1::from(b), activation: act });
        }
        let output_scaler = scalers.pop().unwrap();
        let input_scaler = scalers.pop().unwrap();
        Self { layers, input_scaler: None, output_scaler: None }.with_scalers(input_scaler, output_scaler)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment accumulators over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }

    pub fn for_model(model: &MlpModel) -> Self {
        Self::new(model.parameter_count())
    }

    /// One bias-corrected Adam step over `params`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), NnetError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnetError::Dimension("adam parameter count".into()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Adam step applied to every weight and bias of `model`.
    pub fn update_model(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) -> Result<(), NnetError> {
        let mut params = flatten_params(model);
        self.update(&mut params, &grads.flatten(), lr)?;
        set_params(model, &params)
    }
}

pub fn flatten_params(model: &MlpModel) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.parameter_count());
    for l in &model.layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

pub fn set_params(model: &mut MlpModel, params: &[f64]) -> Result<(), NnetError> {
    if params.len() != model.parameter_count() {
        return Err(NnetError::Dimension("parameter count".into()));
    }
    let mut k = 0;
    for l in &mut model.layers {
        for w in l.weights.iter_mut() {
            *w = params[k];
            k += 1;
        }
        for b in l.bias.iter_mut() {
            *b = params[k];
            k += 1;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean over samples and output components.
    MeanSquared,
    /// Mean over samples of the squared norm of the output error.
    SquaredNorm,
}

impl LossKind {
    /// Loss value and its gradient with respect to the predictions.
    pub fn evaluate(self, pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
        let diff = pred - target;
        let n = pred.nrows().max(1) as f64;
        let denom = match self {
            LossKind::MeanSquared => n * pred.ncols().max(1) as f64,
            LossKind::SquaredNorm => n,
        };
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / denom;
        (loss, diff * (2.0 / denom))
    }
}

/// Piecewise-constant learning rate: `(epochs, lr)` segments in order.
pub type Schedule = Vec<(usize, f64)>;

pub fn schedule_epochs(schedule: &[(usize, f64)]) -> usize {
    schedule.iter().map(|s| s.0).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub schedule: Schedule,
    pub loss: LossKind,
    pub seed: u64,
    /// Minibatches between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: usize,
}

/// Minibatch training on raw-space data. Inputs and targets pass through
/// the model's scalers, so the loss lives in the internal space.
///
/// Returns the mean training loss of every epoch. `on_checkpoint` receives
/// the global minibatch count and the model every `checkpoint_every`
/// minibatches.
pub fn train_minibatch(
    model: &mut MlpModel,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &MlpModel),
) -> Result<Vec<f64>, NnetError> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(NnetError::EmptyDataset);
    }
    if targets.nrows() != n || targets.ncols() != model.output_dim() {
        return Err(NnetError::Dimension("targets shape".into()));
    }
    let x = model.scale_inputs(inputs);
    let y = model.scale_outputs(targets);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::for_model(model);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = config.batch_size.clamp(1, n);
    let mut history = Vec::with_capacity(schedule_epochs(&config.schedule));
    let mut minibatches = 0usize;
    let mut epoch = 0usize;
    for &(epochs, lr) in &config.schedule {
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (b, chunk) in order.chunks(batch).enumerate() {
                let xb = x.select(Axis(0), chunk);
                let yb = y.select(Axis(0), chunk);
                let cache = model.forward_cached(&xb)?;
                let (loss, g) = config.loss.evaluate(cache.output(), &yb);
                if !loss.is_finite() {
                    return Err(NnetError::Divergence { epoch, batch: b });
                }
                total += loss * chunk.len() as f64;
                let grads = model.backward(&cache, &g)?;
                adam.update_model(model, &grads, lr)?;
                minibatches += 1;
                if config.checkpoint_every > 0 && minibatches.is_multiple_of(config.checkpoint_every) {
                    on_checkpoint(minibatches, model);
                }
            }
            history.push(total / n as f64);
            epoch += 1;
        }
    }
    Ok(history)
}

/// Rows of a slice of fixed-width records as an `Array2`.
pub fn rows_to_array<const N: usize>(rows: &[[f64; N]]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), N), |(i, j)| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use ndarray::array;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = MlpModel::new(&[3, 4, 2], &mut rng(0)).unwrap();
        let zeros = vec![0.0; m.parameter_count()];
        set_params(&mut m, &zeros).unwrap();
        assert_eq!(m.predict(&[1.0, -2.0, 3.0], false).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        let mut m = MlpModel::new(&[1, 1], &mut rng(0)).unwrap();
        m.layers[0].weights = array![[2.0]];
        m.layers[0].bias = array![1.0];
        assert_eq!(m.predict(&[3.0], false).unwrap(), vec![7.0]);
    }

    #[test]
    fn input_scaler_feeds_unit_interval() {
        let mut m = MlpModel::new(&[1, 1], &mut rng(0)).unwrap();
        m.layers[0].weights = array![[1.0]];
        let m = m.with_scalers(Some(Scaler::new(vec![0.0], vec![10.0]).unwrap()), None).unwrap();
        assert_eq!(m.predict(&[5.0], true).unwrap(), vec![0.5]);
    }

    #[test]
    fn linear_layer_gradient_closed_form() {
        let mut m = MlpModel::new(&[2, 1], &mut rng(0)).unwrap();
        m.layers[0].weights = array![[0.5, -1.0]];
        m.layers[0].bias = array![0.2];
        let x = array![[1.5, 2.0]];
        let t = 0.7;
        let cache = m.forward_cached(&x).unwrap();
        let r = cache.output()[[0, 0]] - t;
        let g = m.backward(&cache, &array![[2.0 * r]]).unwrap();
        assert_relative_eq!(g.layers[0].0[[0, 0]], 2.0 * r * 1.5, epsilon = 1e-15);
        assert_relative_eq!(g.layers[0].0[[0, 1]], 2.0 * r * 2.0, epsilon = 1e-15);
        assert_relative_eq!(g.layers[0].1[0], 2.0 * r, epsilon = 1e-15);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let m = MlpModel::new(&[3, 8, 8, 2], &mut rng(1)).unwrap();
        let x = array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]];
        let cache = m.forward_cached(&x).unwrap();
        let g = m.backward(&cache, &Array2::zeros((2, 2))).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let m = MlpModel::new(&[3, 8, 2], &mut rng(1)).unwrap();
        let other = MlpModel::new(&[3, 5, 5, 2], &mut rng(1)).unwrap();
        let cache = other.forward_cached(&array![[0.1, 0.2, 0.3]]).unwrap();
        assert!(matches!(m.backward(&cache, &array![[1.0, 1.0]]), Err(NnetError::StaleCache(_))));
    }

    /// Central-difference oracle on the loss `0.5 |f(x)|^2` summed over rows.
    pub(crate) fn max_gradient_error(sizes: &[usize], seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut m = MlpModel::new(sizes, &mut r).unwrap();
        for l in &mut m.layers {
            l.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((4, sizes[0]), |_| r.random_range(0.0..1.0));
        let loss = |m: &MlpModel| m.forward_cached(&x).unwrap().output().iter().map(|v| 0.5 * v * v).sum::<f64>();
        let cache = m.forward_cached(&x).unwrap();
        let analytic = m.backward(&cache, cache.output()).unwrap().flatten();
        let base = flatten_params(&m);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            set_params(&mut m, &p).unwrap();
            let lp = loss(&m);
            p[i] = base[i] - h;
            set_params(&mut m, &p).unwrap();
            let lm = loss(&m);
            let numeric = (lp - lm) / (2.0 * h);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn backprop_matches_central_differences() {
        assert!(max_gradient_error(&[2, 64, 64, 1], 5) < 1e-4);
        assert!(max_gradient_error(&[3, 6, 5, 4, 2], 6) < 1e-4);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        let mut adam = AdamState::new(1);
        let mut p = [1.0];
        adam.update(&mut p, &[0.5], 0.01).unwrap();
        let expected = 0.01 * 0.5 / ((0.5f64 * 0.5).sqrt() + 1e-8);
        assert_relative_eq!(1.0 - p[0], expected, epsilon = 1e-15);
        assert!((1.0 - p[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_with_zero_gradient_never_moves() {
        let mut adam = AdamState::new(3);
        let mut p = [1.0, -2.0, 3.0];
        for _ in 0..50 {
            adam.update(&mut p, &[0.0; 3], 0.1).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_update_sign_ignores_loss_scale() {
        let m = MlpModel::new(&[2, 6, 1], &mut rng(2)).unwrap();
        let x = array![[0.3, 0.9], [0.1, 0.4]];
        let cache = m.forward_cached(&x).unwrap();
        let g = m.backward(&cache, &Array2::from_elem((2, 1), 1.0)).unwrap().flatten();
        let g10: Vec<f64> = g.iter().map(|v| v * 10.0).collect();
        let base = flatten_params(&m);
        let (mut a, mut b) = (base.clone(), base.clone());
        AdamState::new(base.len()).update(&mut a, &g, 1e-3).unwrap();
        AdamState::new(base.len()).update(&mut b, &g10, 1e-3).unwrap();
        for i in 0..base.len() {
            let (da, db) = (a[i] - base[i], b[i] - base[i]);
            assert_eq!(da.signum(), db.signum());
            if g[i].abs() > 1e-4 {
                assert!((da - db).abs() <= 0.01 * da.abs());
            }
        }
    }

    #[test]
    fn linear_regression_converges() {
        let mut r = rng(4);
        let xs: Vec<[f64; 1]> = (0..1000).map(|_| [r.random_range(0.0..1.0)]).collect();
        let ys: Vec<[f64; 1]> = xs.iter().map(|x| [3.0 * x[0]]).collect();
        let mut m = MlpModel::new(&[1, 1], &mut r).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            schedule: vec![(40, 0.05), (20, 0.005)],
            loss: LossKind::MeanSquared,
            seed: 1,
            checkpoint_every: 0,
        };
        let h = train_minibatch(&mut m, &rows_to_array(&xs), &rows_to_array(&ys), &cfg, |_, _| {}).unwrap();
        assert_eq!(h.len(), 60);
        assert!(*h.last().unwrap() < 1e-6);
    }

    #[test]
    fn training_is_reproducible() {
        let xs: Vec<[f64; 2]> = (0..50).map(|i| [i as f64 / 50.0, (i * 7 % 50) as f64 / 50.0]).collect();
        let ys: Vec<[f64; 1]> = xs.iter().map(|x| [x[0] * x[1]]).collect();
        let cfg = TrainConfig {
            batch_size: 8,
            schedule: vec![(3, 0.01), (2, 0.001)],
            loss: LossKind::MeanSquared,
            seed: 9,
            checkpoint_every: 4,
        };
        let run = || {
            let mut m = MlpModel::new(&[2, 8, 1], &mut rng(3)).unwrap();
            let mut ticks = vec![];
            let h = train_minibatch(&mut m, &rows_to_array(&xs), &rows_to_array(&ys), &cfg, |k, _| ticks.push(k)).unwrap();
            (h, m, ticks)
        };
        let (h1, m1, t1) = run();
        let (h2, m2, _) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        // 7 minibatches per epoch, 5 epochs.
        assert_eq!(t1, vec![4, 8, 12, 16, 20, 24, 28, 32]);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut m = MlpModel::new(&[1, 1], &mut rng(0)).unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            schedule: vec![(1, 0.01)],
            loss: LossKind::MeanSquared,
            seed: 0,
            checkpoint_every: 0,
        };
        let r = train_minibatch(&mut m, &Array2::zeros((0, 1)), &Array2::zeros((0, 1)), &cfg, |_, _| {});
        assert_eq!(r, Err(NnetError::EmptyDataset));
    }

    #[test]
    fn model_text_round_trip_is_bit_exact() {
        let m = MlpModel::new(&[4, 7, 3], &mut rng(8))
            .unwrap()
            .with_scalers(
                Some(Scaler::new(vec![0.2, 1.0, 1.0, 0.9], vec![0.8, 1.2, 1.3, 1.1]).unwrap()),
                Some(Scaler::new(vec![-1.0, 0.0, 1e-3], vec![1.0, 0.1, 0.2]).unwrap()),
            )
            .unwrap();
        let back = MlpModel::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.to_text(), m.to_text());
    }

    proptest! {
        #[test]
        fn unscale_inverts_scale(lo in -10.0f64..10.0, w in 0.01f64..20.0, t in 0.0f64..1.0) {
            let s = Scaler::new(vec![lo], vec![lo + w]).unwrap();
            let v = lo + t * w;
            prop_assert!((s.unscale(&s.scale(&[v]))[0] - v).abs() < 1e-12);
        }
    }
}
