//! Reference rectifier MLP with hand-written backprop and Adam.
//!
//! Besides forecasts the model exposes what the acquisition strategies need:
//! MC-dropout samples, last-hidden-layer embeddings and last-layer gradient
//! embeddings under the pseudo-label. Post-hoc temperature scaling lives here too.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix, ProbVector, RngStream};

/// Hyperparameters for [`MlpClassifier::train`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub reinit_each_round: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 128,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            reinit_each_round: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("train.learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("train.epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("train.batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("train.epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Affine layer, weights stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    weights: Matrix,
    bias: Vec<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Dense {
        Dense {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Dense {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut weights = Matrix::zeros(fan_out, fan_in);
        for w in weights.as_mut_slice() {
            *w = (2.0 * rng.uniform() - 1.0) * limit;
        }
        Dense {
            weights,
            bias: vec![0.0; fan_out],
        }
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let mut z = input
            .matmul_transpose(&self.weights)
            .expect("layer widths are fixed at construction");
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        z
    }
}

/// Training report.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy over the training set, evaluation mode, after each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// Fully connected classifier: `d → hidden… → K` with ReLU, dropout before the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    layers: Vec<Dense>,
    dropout: f64,
}

/// Cached activations of one forward pass.
struct Trace {
    /// `inputs[l]` is the input of layer `l`; the last entry is the (possibly dropped-out) input to the output layer.
    inputs: Vec<Matrix>,
    /// Pre-activations of hidden layers.
    pre: Vec<Matrix>,
    /// Inverted-dropout multipliers applied to the last hidden activation.
    mask: Option<Vec<f64>>,
    logits: Matrix,
}

impl MlpClassifier {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        dropout: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if input_dim == 0 || classes < 2 {
            return Err(Error::InvalidConfig(
                "model needs input_dim >= 1 and at least two classes".into(),
            ));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidConfig("model needs nonzero hidden layers".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidConfig(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let layers = widths
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Ok(Self { layers, dropout })
    }

    /// Model with every weight and bias zero.
    pub fn zeros(input_dim: usize, hidden: &[usize], classes: usize, dropout: f64) -> Result<Self> {
        let mut m = Self::new(input_dim, hidden, classes, dropout, &mut RngStream::new(0))?;
        for layer in &mut m.layers {
            *layer = layer.zeros_like();
        }
        Ok(m)
    }

    /// Builds a model from explicit `(weights out×in, bias)` layers.
    pub fn from_layers(layers: Vec<(Matrix, Vec<f64>)>, dropout: f64) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidConfig("need at least one hidden layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].0.rows() != pair[1].0.cols() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].0.rows(),
                    got: pair[1].0.cols(),
                });
            }
        }
        if let Some((w, b)) = layers.iter().find(|(w, b)| w.rows() != b.len()) {
            return Err(Error::DimensionMismatch {
                expected: w.rows(),
                got: b.len(),
            });
        }
        Ok(Self {
            layers: layers
                .into_iter()
                .map(|(weights, bias)| Dense { weights, bias })
                .collect(),
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().expect("nonempty").weights.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weights.cols()
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout {rate} outside [0, 1)")));
        }
        self.dropout = rate;
        Ok(())
    }

    /// Redraws every weight from the Glorot-uniform initializer.
    pub fn reinitialize(&mut self, rng: &mut RngStream) {
        for layer in &mut self.layers {
            *layer = Dense::glorot(layer.weights.cols(), layer.weights.rows(), rng);
        }
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.rows() > 0 && inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.cols(),
            });
        }
        Ok(())
    }

    fn forward(&self, inputs: &Matrix, dropout_rng: Option<&mut RngStream>) -> Trace {
        let hidden = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(hidden);
        let mut current = inputs.clone();
        for layer in &self.layers[..hidden] {
            let z = layer.forward(&current);
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = v.max(0.0);
            }
            acts.push(current);
            pre.push(z);
            current = a;
        }
        let mut mask = None;
        if let Some(rng) = dropout_rng {
            if self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let m: Vec<f64> = (0..current.as_slice().len())
                    .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                for (v, s) in current.as_mut_slice().iter_mut().zip(&m) {
                    *v *= s;
                }
                mask = Some(m);
            }
        }
        let logits = self.layers[hidden].forward(&current);
        acts.push(current);
        Trace {
            inputs: acts,
            pre,
            mask,
            logits,
        }
    }

    /// Raw output scores, evaluation mode.
    pub fn logits(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        Ok(self.forward(inputs, None).logits)
    }

    pub fn predict_proba(&self, inputs: &Matrix) -> Result<Vec<ProbVector>> {
        let logits = self.logits(inputs)?;
        logits.iter_rows().map(softmax).collect()
    }

    /// `n_samples` stochastic passes with dropout active; result is `[sample][row]`.
    pub fn mc_dropout_predict(
        &self,
        inputs: &Matrix,
        n_samples: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Vec<ProbVector>>> {
        if self.dropout <= 0.0 {
            return Err(Error::DropoutRequired);
        }
        if n_samples < 2 {
            return Err(Error::InvalidConfig("MC-dropout needs at least two samples".into()));
        }
        self.check_input(inputs)?;
        (0..n_samples)
            .map(|_| {
                let trace = self.forward(inputs, Some(rng));
                trace.logits.iter_rows().map(softmax).collect()
            })
            .collect()
    }

    /// Last hidden layer activations, evaluation mode.
    pub fn penultimate_embedding(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let mut trace = self.forward(inputs, None);
        Ok(trace.inputs.pop().expect("output layer input"))
    }

    /// Per-sample cross-entropy gradient w.r.t. the output weights under the
    /// predicted label: `(p − onehot(ŷ)) ⊗ z`, flattened class-major.
    pub fn gradient_embedding(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let mut trace = self.forward(inputs, None);
        let z = trace.inputs.pop().expect("output layer input");
        let k = self.classes();
        let h = z.cols();
        let mut out = Matrix::zeros(inputs.rows(), k * h);
        for r in 0..inputs.rows() {
            let p = raw_softmax(trace.logits.row(r));
            let y_hat = crate::numerics::argmax(&p);
            let zr = z.row(r);
            let dst = out.row_mut(r);
            for c in 0..k {
                let g = p[c] - if c == y_hat { 1.0 } else { 0.0 };
                for (j, zv) in zr.iter().enumerate() {
                    dst[c * h + j] = g * zv;
                }
            }
        }
        Ok(out)
    }

    /// Mean cross-entropy, evaluation mode.
    pub fn loss(&self, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
        self.check_batch(inputs, labels)?;
        let trace = self.forward(inputs, None);
        Ok(cross_entropy(&trace.logits, labels))
    }

    fn check_batch(&self, inputs: &Matrix, labels: &[usize]) -> Result<()> {
        self.check_input(inputs)?;
        if inputs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.rows(),
                got: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= self.classes()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes(),
            });
        }
        Ok(())
    }

    fn backward(&self, trace: &Trace, labels: &[usize]) -> Vec<Dense> {
        let n = labels.len() as f64;
        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        let mut delta = Matrix::zeros(trace.logits.rows(), trace.logits.cols());
        for (r, &y) in labels.iter().enumerate() {
            let p = raw_softmax(trace.logits.row(r));
            for (c, d) in delta.row_mut(r).iter_mut().enumerate() {
                *d = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
            }
        }
        for l in (0..self.layers.len()).rev() {
            let input = &trace.inputs[l];
            grads[l].weights = delta.transpose_matmul(input).expect("shapes");
            for (b, col) in grads[l].bias.iter_mut().zip(0..delta.cols()) {
                *b = (0..delta.rows()).map(|r| delta.get(r, col)).sum();
            }
            if l == 0 {
                break;
            }
            let mut upstream = delta.matmul(&self.layers[l].weights).expect("shapes");
            if l == self.layers.len() - 1 {
                if let Some(mask) = &trace.mask {
                    for (u, m) in upstream.as_mut_slice().iter_mut().zip(mask) {
                        *u *= m;
                    }
                }
            }
            for (u, z) in upstream
                .as_mut_slice()
                .iter_mut()
                .zip(trace.pre[l - 1].as_slice())
            {
                if *z <= 0.0 {
                    *u = 0.0;
                }
            }
            delta = upstream;
        }
        grads
    }

    /// Mean cross-entropy and its gradient w.r.t. all parameters, evaluation mode.
    /// The gradient uses the layout of [`MlpClassifier::parameters`].
    pub fn loss_and_gradient(&self, inputs: &Matrix, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(inputs, labels)?;
        let trace = self.forward(inputs, None);
        let loss = cross_entropy(&trace.logits, labels);
        let grads = self.backward(&trace, labels);
        Ok((loss, flatten(&grads)))
    }

    /// All parameters, layer by layer: weights row-major, then bias.
    pub fn parameters(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.parameters().len();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weights.as_mut_slice();
            w.copy_from_slice(&params[offset..offset + w.len()]);
            offset += w.len();
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + b]);
            offset += b;
        }
        Ok(())
    }

    /// Index of the output-layer weight `W[class][unit]` in the parameter vector.
    pub fn output_weight_index(&self, class: usize, unit: usize) -> usize {
        let before: usize = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum();
        before + class * self.embedding_dim() + unit
    }

    /// Mini-batch Adam on cross-entropy. Reinitializes first when
    /// `cfg.reinit_each_round` is set. Deterministic given `rng`.
    pub fn train(
        &mut self,
        inputs: &Matrix,
        labels: &[usize],
        cfg: &TrainConfig,
        rng: &mut RngStream,
    ) -> Result<TrainReport> {
        cfg.validate()?;
        if labels.is_empty() {
            return Err(Error::EmptyLabeledSet);
        }
        self.check_batch(inputs, labels)?;
        if cfg.reinit_each_round {
            let mut init = rng.child("init");
            self.reinitialize(&mut init);
        }
        let mut adam = Adam::new(&self.layers);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size) {
                let x = inputs.select_rows(chunk);
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let trace = self.forward(&x, Some(rng));
                let batch_loss = cross_entropy(&trace.logits, &y);
                if !batch_loss.is_finite() {
                    return Err(Error::TrainingDiverged);
                }
                let grads = self.backward(&trace, &y);
                adam.step(&mut self.layers, &grads, cfg);
            }
            let loss = self.loss(inputs, labels)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged);
            }
            epoch_losses.push(loss);
        }
        let final_loss = *epoch_losses.last().expect("epochs >= 1");
        Ok(TrainReport {
            epoch_losses,
            final_loss,
        })
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weights.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

/// Softmax without the simplex floor, for exact gradients.
fn raw_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_at(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[class] - lse
}

fn cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -log_softmax_at(logits.row(r), y))
        .sum();
    total / labels.len() as f64
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
}

impl Adam {
    fn new(layers: &[Dense]) -> Self {
        Self {
            m: layers.iter().map(Dense::zeros_like).collect(),
            v: layers.iter().map(Dense::zeros_like).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Dense], grads: &[Dense], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            };
            update(
                p.weights.as_mut_slice(),
                g.weights.as_slice(),
                m.weights.as_mut_slice(),
                v.weights.as_mut_slice(),
            );
            update(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
    }
}

/// Post-hoc temperature scaling of logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureScaler {
    temperature: f64,
}

const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);

impl TemperatureScaler {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidConfig(format!("temperature {temperature} must be > 0")));
        }
        Ok(Self { temperature })
    }

    pub fn identity() -> Self {
        Self { temperature: 1.0 }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Golden-section search for the temperature minimizing validation
    /// cross-entropy of `softmax(logits / T)` over `T ∈ [0.05, 20]`.
    pub fn fit(logits: &Matrix, labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("temperature scaling needs validation data"));
        }
        if logits.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: logits.rows(),
                got: labels.len(),
            });
        }
        let nll = |t: f64| {
            let mut scaled = logits.clone();
            for v in scaled.as_mut_slice() {
                *v /= t;
            }
            cross_entropy(&scaled, labels)
        };
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = TEMPERATURE_RANGE;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = nll(c);
        let mut fd = nll(d);
        while b - a > 1e-7 {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = nll(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = nll(d);
            }
        }
        Self::new(0.5 * (a + b))
    }

    pub fn scale(&self, logits: &Matrix) -> Matrix {
        let mut out = logits.clone();
        for v in out.as_mut_slice() {
            *v /= self.temperature;
        }
        out
    }

    pub fn probabilities(&self, logits: &Matrix) -> Result<Vec<ProbVector>> {
        self.scale(logits).iter_rows().map(softmax).collect()
    }
}

/// Fits a temperature for `model` on held-out data.
pub fn fit_temperature(
    model: &MlpClassifier,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<TemperatureScaler> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("temperature scaling needs validation data"));
    }
    let logits = model.logits(inputs)?;
    TemperatureScaler::fit(&logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(rng: &mut RngStream, n: usize) -> (Matrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let (a, b) = if y == 0 { (0.1, 0.9) } else { (0.9, 0.1) };
            rows.push(vec![a + 0.05 * rng.normal(), b + 0.05 * rng.normal()]);
            labels.push(y);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = RngStream::new(13);
        let mut model = MlpClassifier::new(4, &[5, 3], 3, 0.5, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.4, 0.9, 0.3], [0.8, 0.2, 0.5, 0.6], [0.3, 0.3, 0.1, 0.9]]).unwrap();
        let y = [0, 2, 1];
        let (_, grad) = model.loss_and_gradient(&x, &y).unwrap();
        let base = model.parameters();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-5;
            model.set_parameters(&p).unwrap();
            let up = model.loss(&x, &y).unwrap();
            p[i] -= 2e-5;
            model.set_parameters(&p).unwrap();
            let down = model.loss(&x, &y).unwrap();
            let fd = (up - down) / 2e-5;
            assert!((fd - grad[i]).abs() <= 1e-4 * fd.abs().max(grad[i].abs()) + 1e-8, "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn separable_blobs_fit() {
        let mut rng = RngStream::new(1);
        let (x, y) = blobs(&mut rng, 100);
        let mut model = MlpClassifier::new(2, &[128], 2, 0.5, &mut rng).unwrap();
        model.train(&x, &y, &TrainConfig::default(), &mut rng).unwrap();
        let probs = model.predict_proba(&x).unwrap();
        let acc = probs.iter().zip(&y).filter(|(p, &t)| p.argmax() == t).count() as f64 / 100.0;
        assert!(acc >= 0.99, "accuracy {acc}");
        assert_eq!(probs[0].argmax(), y[0]);
    }

    #[test]
    fn single_sample_loss_decreases() {
        let mut rng = RngStream::new(2);
        let x = Matrix::from_rows(&[[0.3, 0.9]]).unwrap();
        let mut model = MlpClassifier::new(2, &[16], 3, 0.5, &mut rng).unwrap();
        let cfg = TrainConfig { epochs: 5, ..Default::default() };
        let report = model.train(&x, &[2], &cfg, &mut rng).unwrap();
        for w in report.epoch_losses.windows(2) {
            assert!(w[1] < w[0], "{:?}", report.epoch_losses);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = RngStream::new(9);
            let (x, y) = blobs(&mut rng, 40);
            let mut model = MlpClassifier::new(2, &[8], 2, 0.5, &mut rng).unwrap();
            model.train(&x, &y, &TrainConfig { epochs: 3, ..Default::default() }, &mut rng).unwrap();
            model.parameters()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let model = MlpClassifier::zeros(3, &[4], 4, 0.5).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, 0.0, 0.5]]).unwrap();
        for p in model.predict_proba(&x).unwrap() {
            assert!(p.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
        assert!(matches!(
            model.predict_proba(&Matrix::from_rows(&[[0.1, 0.2]]).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn penultimate_embedding_hand_computed() {
        let hidden = Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap();
        let out = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let model =
            MlpClassifier::from_layers(vec![(hidden, vec![0.0, -1.0]), (out, vec![0.0, 0.0])], 0.5).unwrap();
        let x = Matrix::from_rows(&[[2.0, 1.0], [0.0, 0.0], [2.0, 1.0]]).unwrap();
        let z = model.penultimate_embedding(&x).unwrap();
        // relu(2 - 1) = 1, relu(1 + 2 - 1) = 2
        assert_eq!(z.row(0), &[1.0, 2.0]);
        assert_eq!(z.row(0), z.row(2));
        assert_eq!(z.row(1), &[0.0, 0.0]);

        let zero_bias = MlpClassifier::from_layers(
            vec![
                (Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap(), vec![0.0, 0.0]),
                (Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), vec![0.0, 0.0]),
            ],
            0.5,
        )
        .unwrap();
        let z0 = zero_bias.penultimate_embedding(&Matrix::zeros(1, 2)).unwrap();
        assert_eq!(z0.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_embedding_uniform_forecast() {
        // Hidden unit 0 fires with value 1, unit 1 is off; output layer is zero → uniform forecast.
        let hidden = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        let out = Matrix::zeros(2, 2);
        let model = MlpClassifier::from_layers(vec![(hidden, vec![0.0, 0.0]), (out, vec![0.0, 0.0])], 0.5).unwrap();
        let g = model.gradient_embedding(&Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(g.row(0), &[-0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn gradient_embedding_vanishes_when_confident() {
        let hidden = Matrix::from_rows(&[[1.0]]).unwrap();
        let out = Matrix::from_rows(&[[40.0], [-40.0]]).unwrap();
        let model = MlpClassifier::from_layers(vec![(hidden, vec![0.0]), (out, vec![0.0, 0.0])], 0.5).unwrap();
        let g = model.gradient_embedding(&Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        let norm: f64 = g.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-30);
    }

    #[test]
    fn mc_dropout_contract() {
        let mut rng = RngStream::new(5);
        let model = MlpClassifier::new(3, &[16], 3, 0.5, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.5, 0.9], [0.7, 0.2, 0.4]]).unwrap();
        let a = model.mc_dropout_predict(&x, 10, &mut RngStream::new(8)).unwrap();
        let b = model.mc_dropout_predict(&x, 10, &mut RngStream::new(8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        for r in 0..2 {
            let mean: Vec<f64> = (0..3).map(|c| a.iter().map(|s| s[r].as_slice()[c]).sum::<f64>() / 10.0).collect();
            assert!((mean.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        let mut tiny = model.clone();
        tiny.set_dropout(1e-6).unwrap();
        let det = tiny.predict_proba(&x).unwrap();
        let samples = tiny.mc_dropout_predict(&x, 5, &mut rng).unwrap();
        for s in &samples {
            for (p, q) in s.iter().zip(&det) {
                for (u, v) in p.as_slice().iter().zip(q.as_slice()) {
                    assert!((u - v).abs() < 1e-3);
                }
            }
        }

        let mut off = model.clone();
        off.set_dropout(0.0).unwrap();
        assert_eq!(
            off.mc_dropout_predict(&x, 5, &mut rng).unwrap_err().to_string(),
            "MC-dropout requires dropout"
        );
    }

    #[test]
    fn mc_dropout_mean_variance_shrinks() {
        // Variance of the slice mean over repeats should scale like 1 / n_samples.
        let mut rng = RngStream::new(21);
        let model = MlpClassifier::new(2, &[32], 2, 0.5, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.4, 0.6]]).unwrap();
        let spread = |n: usize, rng: &mut RngStream| {
            let means: Vec<f64> = (0..200)
                .map(|_| {
                    let s = model.mc_dropout_predict(&x, n, rng).unwrap();
                    s.iter().map(|slice| slice[0].as_slice()[0]).sum::<f64>() / n as f64
                })
                .collect();
            let mu = means.iter().sum::<f64>() / means.len() as f64;
            means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (means.len() - 1) as f64
        };
        let v4 = spread(4, &mut rng);
        let v64 = spread(64, &mut rng);
        let ratio = v4 / v64;
        assert!(ratio > 8.0 && ratio < 32.0, "variance ratio {ratio}");
    }

    #[test]
    fn temperature_identity_on_calibrated_logits() {
        let mut rng = RngStream::new(4);
        let (logits, labels) = calibrated_logits(&mut rng, 20_000, 1.0);
        let t = TemperatureScaler::fit(&logits, &labels).unwrap();
        assert!((t.temperature() - 1.0).abs() < 0.05, "{}", t.temperature());
    }

    #[test]
    fn temperature_recovers_logit_scale() {
        let mut rng = RngStream::new(6);
        let (logits, labels) = calibrated_logits(&mut rng, 20_000, 3.0);
        let t = TemperatureScaler::fit(&logits, &labels).unwrap();
        assert!((t.temperature() - 3.0).abs() < 0.15, "{}", t.temperature());
        let before: Vec<usize> = logits.iter_rows().map(|r| crate::numerics::argmax(r)).collect();
        let after: Vec<usize> = t.probabilities(&logits).unwrap().iter().map(|p| p.argmax()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn temperature_on_exact_identity_optimum() {
        // Labels drawn to match softmax(logits) exactly in expectation: two logit
        // patterns repeated with label counts proportional to their probabilities.
        let rows = [[2f64.ln(), 0.0], [0.0, 3f64.ln()]];
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for (row, counts) in rows.iter().zip([[2, 1], [1, 3]]) {
            for (class, &c) in counts.iter().enumerate() {
                for _ in 0..c * 100 {
                    logits.push(row.to_vec());
                    labels.push(class);
                }
            }
        }
        let t = TemperatureScaler::fit(&Matrix::from_rows(&logits).unwrap(), &labels).unwrap();
        assert!((t.temperature() - 1.0).abs() < 1e-3, "{}", t.temperature());
        assert!(TemperatureScaler::fit(&Matrix::zeros(0, 2), &[]).is_err());
    }

    fn calibrated_logits(rng: &mut RngStream, n: usize, scale: f64) -> (Matrix, Vec<usize>) {
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..3).map(|_| 1.5 * rng.normal()).collect();
            let p = raw_softmax(&z);
            labels.push(rng.weighted_index(&p).unwrap());
            rows.push(z.iter().map(|v| v * scale).collect::<Vec<_>>());
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }
}
