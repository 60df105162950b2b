use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{dot, norm};
use crate::samples::SampleSet;

/// Temperature used when attacking a trained model.
pub const ATTACK_TEMPERATURE: f64 = 1.0 / 50.0;

/// `exp(z_i / t) / Σ_j exp(z_j / t)`, evaluated with the maximum subtracted.
pub fn softmax_temperature(z: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::DomainError(format!("temperature {t} must be positive")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::DomainError("logits must be finite".into()));
    }
    Ok(softmax_unchecked(z, t))
}

fn softmax_unchecked(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = z.iter().map(|v| ((v - m) / t).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn log_sum_exp(z: &[f64], t: f64) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m / t + z.iter().map(|v| ((v - m) / t).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A classifier exposing class probabilities and the input gradient of its
/// cross-entropy loss. Implementations must be safe to call concurrently.
pub trait DifferentiableClassifier: Sync {
    fn num_classes(&self) -> usize;
    fn dim(&self) -> usize;
    fn predict_probs(&self, x: &[f64]) -> Vec<f64>;
    fn loss(&self, x: &[f64], y: usize) -> f64;
    fn loss_gradient(&self, x: &[f64], y: usize) -> Vec<f64>;

    fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_probs(x))
    }

    /// A positive multiple of the loss gradient. Override when the gradient
    /// itself underflows for confident predictions.
    fn ascent_direction(&self, x: &[f64], y: usize) -> Vec<f64> {
        self.loss_gradient(x, y)
    }
}

/// Multinomial logistic regression on l2-normalized inputs:
/// `p = softmax((W x̂ + b) / t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClassifier {
    pub classes: usize,
    pub dim: usize,
    pub temperature: f64,
    /// `classes × dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            learning_rate: 0.5,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ToyClassifier {
    pub fn zeros(classes: usize, dim: usize, temperature: f64) -> Self {
        Self {
            classes,
            dim,
            temperature,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 {
            return Err(Error::Config("classifier needs at least 2 classes and 1 feature".into()));
        }
        if self.weights.len() != self.classes * self.dim {
            return Err(Error::DimensionError {
                expected: self.classes * self.dim,
                got: self.weights.len(),
            });
        }
        if self.bias.len() != self.classes {
            return Err(Error::DimensionError {
                expected: self.classes,
                got: self.bias.len(),
            });
        }
        if !(self.temperature > 0.0) {
            return Err(Error::DomainError(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn with_temperature(&self, temperature: f64) -> Self {
        Self {
            temperature,
            ..self.clone()
        }
    }

    fn weight_row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    /// Unit vector along `x` and its norm; the zero vector maps to itself.
    fn unit(x: &[f64]) -> (Vec<f64>, f64) {
        let n = norm(x);
        if n == 0.0 {
            (vec![0.0; x.len()], 0.0)
        } else {
            (x.iter().map(|v| v / n).collect(), n)
        }
    }

    fn logits_unit(&self, u: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| dot(self.weight_row(c), u) + self.bias[c])
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.logits_unit(&Self::unit(x).0)
    }

    /// Maps `dL/dz` to `dL/dx` through the normalization `x ↦ x / ‖x‖`.
    fn backprop(&self, u: &[f64], n: f64, gz: &[f64]) -> Vec<f64> {
        if n == 0.0 {
            return vec![0.0; self.dim];
        }
        let mut gu = vec![0.0; self.dim];
        for (c, &g) in gz.iter().enumerate() {
            if g != 0.0 {
                for (a, w) in gu.iter_mut().zip(self.weight_row(c)) {
                    *a += g * w;
                }
            }
        }
        let radial = dot(&gu, u);
        gu.iter().zip(u).map(|(g, ui)| (g - radial * ui) / n).collect()
    }
}

impl DifferentiableClassifier for ToyClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_probs(&self, x: &[f64]) -> Vec<f64> {
        softmax_unchecked(&self.logits(x), self.temperature)
    }

    fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    fn loss(&self, x: &[f64], y: usize) -> f64 {
        let z = self.logits(x);
        log_sum_exp(&z, self.temperature) - z[y] / self.temperature
    }

    fn loss_gradient(&self, x: &[f64], y: usize) -> Vec<f64> {
        let (u, n) = Self::unit(x);
        let mut gz = softmax_unchecked(&self.logits_unit(&u), self.temperature);
        gz[y] -= 1.0;
        gz.iter_mut().for_each(|g| *g /= self.temperature);
        self.backprop(&u, n, &gz)
    }

    /// `p - e_y` rescaled by `1 / max_{j≠y} p_j`, which stays representable
    /// when the true-class probability rounds to one.
    fn ascent_direction(&self, x: &[f64], y: usize) -> Vec<f64> {
        let (u, n) = Self::unit(x);
        let z = self.logits_unit(&u);
        let m = z
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut gz: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(j, &v)| if j == y { 0.0 } else { ((v - m) / self.temperature).exp() })
            .collect();
        gz[y] = -gz.iter().sum::<f64>();
        self.backprop(&u, n, &gz)
    }
}

/// Fits a [`ToyClassifier`] by seeded minibatch SGD from zero weights.
pub fn train_toy_classifier(train: &SampleSet, config: &TrainConfig) -> Result<ToyClassifier> {
    let labels = train.require_labels()?;
    let classes = train.num_classes();
    let present = {
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if present < 2 {
        return Err(Error::DegenerateLabels(format!(
            "training set has {present} distinct class(es)"
        )));
    }
    if !(config.learning_rate > 0.0) || config.batch_size == 0 {
        return Err(Error::Config("learning rate and batch size must be positive".into()));
    }
    let mut model = ToyClassifier::zeros(classes, train.dim(), config.temperature);
    model.validate()?;
    let units = train.normalized()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let d = train.dim();
    let mut grad_w = vec![0.0; classes * d];
    let mut grad_b = vec![0.0; classes];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let u = units.row(i);
                let mut gz = softmax_unchecked(&model.logits_unit(u), model.temperature);
                gz[labels[i] as usize] -= 1.0;
                for (c, g) in gz.iter().enumerate() {
                    let g = g / model.temperature;
                    grad_b[c] += g;
                    for (a, v) in grad_w[c * d..(c + 1) * d].iter_mut().zip(u) {
                        *a += g * v;
                    }
                }
            }
            let step = config.learning_rate / batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad_w) {
                *w -= step * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&grad_b) {
                *b -= step * g;
            }
        }
    }
    Ok(model)
}
