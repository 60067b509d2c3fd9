//! Multi-layer perceptron with sigmoid hidden units and backpropagation,
//! plus the jointly trained deep-and-wide model. Every hidden layer has
//! exactly as many units as the input has features.
//!
//! Weights serialize to a flat numeric record: for each hidden layer its
//! weight matrix in row-major order then its bias vector, then the head
//! weights and head bias (deep-and-wide appends the wide weights and the
//! shared bias after the deep block).

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{cross_transform, WideModel};

pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_LR: f64 = 0.05;
const EARLY_STOP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Sigmoid output for binary classification.
    Logistic,
    /// Raw affine output for regression.
    Affine,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `(in, out)` weight matrix; both dimensions equal the feature count.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub head_w: Array1<f64>,
    pub head_b: f64,
    pub head: Head,
}

impl MlpModel {
    /// Zero-initialized network of `hidden_layers` layers of width `d`.
    pub fn zeroed(d: usize, hidden_layers: usize, head: Head) -> Self {
        MlpModel {
            layers: (0..hidden_layers)
                .map(|_| Layer {
                    w: Array2::zeros((d, d)),
                    b: Array1::zeros(d),
                })
                .collect(),
            head_w: Array1::zeros(d),
            head_b: 0.0,
            head,
        }
    }

    /// Random init: uniform(-0.5, 0.5)/sqrt(fan_in), biases zero.
    pub fn init(d: usize, hidden_layers: usize, head: Head, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d as f64).sqrt();
        let mut model = MlpModel::zeroed(d, hidden_layers, head);
        for layer in &mut model.layers {
            for v in layer.w.iter_mut() {
                *v = (rng.random::<f64>() - 0.5) * scale;
            }
        }
        for v in model.head_w.iter_mut() {
            *v = (rng.random::<f64>() - 0.5) * scale;
        }
        model
    }

    pub fn input_dim(&self) -> usize {
        self.head_w.len()
    }

    /// Forward pass returning the prediction and each hidden layer's
    /// activation vector.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, Vec<Array1<f64>>)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut a = Array1::from_vec(x.to_vec());
        let mut cache = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            a = (a.dot(&layer.w) + &layer.b).mapv(sigmoid);
            cache.push(a.clone());
        }
        let z = a.dot(&self.head_w) + self.head_b;
        let out = match self.head {
            Head::Logistic => sigmoid(z),
            Head::Affine => z,
        };
        Ok((out, cache))
    }

    /// Pre-head score for a whole batch, with per-layer activations.
    fn forward_batch(&self, xs: &Array2<f64>) -> (Array1<f64>, Vec<Array2<f64>>) {
        let mut a = xs.clone();
        let mut cache = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            a = (a.dot(&layer.w) + &layer.b).mapv(sigmoid);
            cache.push(a.clone());
        }
        let z = a.dot(&self.head_w) + self.head_b;
        (z, cache)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.0)
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<f64> {
        Ok(f64::from(self.predict(x)? >= 0.5))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for layer in &self.layers {
            flat.extend(layer.w.iter());
            flat.extend(layer.b.iter());
        }
        flat.extend(self.head_w.iter());
        flat.push(self.head_b);
        flat
    }

    pub fn from_flat(d: usize, hidden_layers: usize, head: Head, flat: &[f64]) -> Result<Self> {
        let expected = hidden_layers * (d * d + d) + d + 1;
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: flat.len(),
            });
        }
        let mut model = MlpModel::zeroed(d, hidden_layers, head);
        let mut it = flat.iter().copied();
        for layer in &mut model.layers {
            for v in layer.w.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in layer.b.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        for v in model.head_w.iter_mut() {
            *v = it.next().unwrap();
        }
        model.head_b = it.next().unwrap();
        Ok(model)
    }
}

/// Mean loss of the model on a batch: logistic loss for classification
/// heads, half squared error for affine heads.
pub fn batch_loss(model: &MlpModel, xs: &Array2<f64>, ys: &[f64]) -> f64 {
    let (z, _) = model.forward_batch(xs);
    let n = ys.len() as f64;
    match model.head {
        Head::Logistic => z
            .iter()
            .zip(ys)
            .map(|(&z, &y)| {
                let p = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n,
        Head::Affine => z
            .iter()
            .zip(ys)
            .map(|(&z, &y)| 0.5 * (z - y) * (z - y))
            .sum::<f64>()
            / n,
    }
}

/// Analytic gradient of `batch_loss` in `to_flat` order.
pub fn gradient_flat(model: &MlpModel, xs: &Array2<f64>, ys: &[f64]) -> Vec<f64> {
    let (grads, _) = backward(model, xs, ys);
    grads
}

/// Shared backward pass: returns the flat gradient and the batch loss.
fn backward(model: &MlpModel, xs: &Array2<f64>, ys: &[f64]) -> (Vec<f64>, f64) {
    let n = ys.len() as f64;
    let (z, cache) = model.forward_batch(xs);
    let targets = Array1::from_vec(ys.to_vec());

    // Both heads reduce to delta = (output - y)/n on the pre-head score.
    let (outputs, loss) = match model.head {
        Head::Logistic => {
            let p = z.mapv(sigmoid);
            let loss = p
                .iter()
                .zip(ys)
                .map(|(&p, &y)| {
                    let p = p.clamp(1e-12, 1.0 - 1e-12);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n;
            (p, loss)
        }
        Head::Affine => {
            let loss = z
                .iter()
                .zip(ys)
                .map(|(&z, &y)| 0.5 * (z - y) * (z - y))
                .sum::<f64>()
                / n;
            (z.clone(), loss)
        }
    };
    let delta_out = (&outputs - &targets) / n;

    let last_a = cache.last().cloned().unwrap_or_else(|| xs.clone());
    let grad_head_w = last_a.t().dot(&delta_out);
    let grad_head_b = delta_out.sum();

    let mut layer_grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(model.layers.len());
    // delta over the last hidden activations
    let mut delta: Array2<f64> = {
        let mut d = Array2::zeros(last_a.raw_dim());
        for (mut row, &e) in d.rows_mut().into_iter().zip(delta_out.iter()) {
            row.assign(&model.head_w.mapv(|w| w * e));
        }
        d
    };
    for (k, layer) in model.layers.iter().enumerate().rev() {
        let a_k = &cache[k];
        let local = &delta * &a_k.mapv(|a| a * (1.0 - a));
        let a_prev = if k == 0 { xs } else { &cache[k - 1] };
        let grad_w = a_prev.t().dot(&local);
        let grad_b = local.sum_axis(Axis(0));
        layer_grads.push((grad_w, grad_b));
        if k > 0 {
            delta = local.dot(&layer.w.t());
        }
    }
    layer_grads.reverse();

    let mut flat = Vec::new();
    for (gw, gb) in &layer_grads {
        flat.extend(gw.iter());
        flat.extend(gb.iter());
    }
    flat.extend(grad_head_w.iter());
    flat.push(grad_head_b);
    (flat, loss)
}

fn apply_step(model: &mut MlpModel, grad: &[f64], lr: f64) {
    let mut it = grad.iter();
    for layer in &mut model.layers {
        for v in layer.w.iter_mut() {
            *v -= lr * it.next().unwrap();
        }
        for v in layer.b.iter_mut() {
            *v -= lr * it.next().unwrap();
        }
    }
    for v in model.head_w.iter_mut() {
        *v -= lr * it.next().unwrap();
    }
    model.head_b -= lr * it.next().unwrap();
}

#[derive(Debug, Clone)]
pub struct MlpFit {
    pub model: MlpModel,
    pub loss_trace: Vec<f64>,
}

/// Full-batch backpropagation; stops early once the loss improvement
/// falls below 1e-9.
pub fn fit_mlp(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    hidden_layers: usize,
    epochs: usize,
    lr: f64,
    init_seed: u64,
    head: Head,
) -> Result<MlpFit> {
    if hidden_layers == 0 {
        return Err(Error::Validation("need at least one hidden layer".into()));
    }
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::DimensionMismatch {
            expected: train_x.len(),
            actual: train_y.len(),
        });
    }
    if head == Head::Logistic {
        for &y in train_y {
            if y != 0.0 && y != 1.0 {
                return Err(Error::NonBinaryLabels(y));
            }
        }
    }
    let d = train_x[0].len();
    let xs = Array2::from_shape_vec(
        (train_x.len(), d),
        train_x.iter().flatten().copied().collect(),
    )
    .expect("rectangular input");

    let mut model = MlpModel::init(d, hidden_layers, head, init_seed);
    let mut loss_trace = Vec::with_capacity(epochs);
    let mut prev_loss = f64::INFINITY;
    for _ in 0..epochs {
        let (grad, loss) = backward(&model, &xs, train_y);
        apply_step(&mut model, &grad, lr);
        loss_trace.push(loss);
        if (prev_loss - loss).abs() < EARLY_STOP_TOL {
            break;
        }
        prev_loss = loss;
    }
    Ok(MlpFit { model, loss_trace })
}

/// Wide and deep parts summed pre-sigmoid, with one shared bias. The
/// wide component's own bias and the deep head bias stay zero so the
/// shared bias is the only offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepWideModel {
    pub wide: WideModel,
    pub deep: MlpModel,
    pub bias: f64,
    pub head: Head,
}

impl DeepWideModel {
    /// Combined pre-head score `z_wide + z_deep + bias`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let z_wide = self.wide.score(x);
        let (z_deep, _) = self.deep_score(x)?;
        Ok(z_wide + z_deep + self.bias)
    }

    fn deep_score(&self, x: &[f64]) -> Result<(f64, Vec<Array1<f64>>)> {
        // the deep part is affine pre-head regardless of the joint head
        let mut affine = self.deep.clone();
        affine.head = Head::Affine;
        affine.forward(x)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let z = self.score(x)?;
        Ok(match self.head {
            Head::Logistic => sigmoid(z),
            Head::Affine => z,
        })
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<f64> {
        Ok(f64::from(self.predict(x)? >= 0.5))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = self.deep.to_flat();
        flat.extend(&self.wide.weights);
        flat.push(self.bias);
        flat
    }
}

/// Batch loss of the joint model under its head.
pub fn deep_wide_loss(model: &DeepWideModel, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    xs.iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = model.score(x).expect("dimension checked by caller");
            match model.head {
                Head::Logistic => {
                    let p = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                }
                Head::Affine => 0.5 * (z - y) * (z - y),
            }
        })
        .sum::<f64>()
        / n
}

/// Analytic gradient of `deep_wide_loss` in `to_flat` order.
pub fn deep_wide_gradient_flat(model: &DeepWideModel, xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
    let (grad, _) = deep_wide_backward(model, xs, ys);
    grad
}

fn deep_wide_backward(model: &DeepWideModel, xs: &[Vec<f64>], ys: &[f64]) -> (Vec<f64>, f64) {
    let n = ys.len() as f64;
    let d = model.deep.input_dim();
    let batch = Array2::from_shape_vec((xs.len(), d), xs.iter().flatten().copied().collect())
        .expect("rectangular input");

    // deep pre-head score + wide score, shared bias
    let mut affine = model.deep.clone();
    affine.head = Head::Affine;
    let (z_deep, cache) = affine.forward_batch(&batch);
    let z_total: Vec<f64> = xs
        .iter()
        .zip(z_deep.iter())
        .map(|(x, zd)| model.wide.score(x) + zd + model.bias)
        .collect();

    let (delta_out, loss): (Vec<f64>, f64) = match model.head {
        Head::Logistic => {
            let probs: Vec<f64> = z_total.iter().map(|&z| sigmoid(z)).collect();
            let loss = probs
                .iter()
                .zip(ys)
                .map(|(&p, &y)| {
                    let p = p.clamp(1e-12, 1.0 - 1e-12);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n;
            (
                probs.iter().zip(ys).map(|(&p, &y)| (p - y) / n).collect(),
                loss,
            )
        }
        Head::Affine => {
            let loss = z_total
                .iter()
                .zip(ys)
                .map(|(&z, &y)| 0.5 * (z - y) * (z - y))
                .sum::<f64>()
                / n;
            (
                z_total.iter().zip(ys).map(|(&z, &y)| (z - y) / n).collect(),
                loss,
            )
        }
    };
    let delta_arr = Array1::from_vec(delta_out.clone());

    // deep block gradients (same recursion as the plain MLP)
    let last_a = cache.last().cloned().unwrap_or_else(|| batch.clone());
    let grad_head_w = last_a.t().dot(&delta_arr);
    let mut layer_grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::new();
    let mut delta: Array2<f64> = {
        let mut m = Array2::zeros(last_a.raw_dim());
        for (mut row, &e) in m.rows_mut().into_iter().zip(delta_arr.iter()) {
            row.assign(&model.deep.head_w.mapv(|w| w * e));
        }
        m
    };
    for (k, layer) in model.deep.layers.iter().enumerate().rev() {
        let a_k = &cache[k];
        let local = &delta * &a_k.mapv(|a| a * (1.0 - a));
        let a_prev = if k == 0 { &batch } else { &cache[k - 1] };
        layer_grads.push((a_prev.t().dot(&local), local.sum_axis(Axis(0))));
        if k > 0 {
            delta = local.dot(&layer.w.t());
        }
    }
    layer_grads.reverse();

    // wide gradients over the extended feature vector
    let mut grad_wide = vec![0.0f64; model.wide.weights.len()];
    let mut grad_bias = 0.0f64;
    for (x, &e) in xs.iter().zip(&delta_out) {
        let mut ext = x.clone();
        ext.extend(cross_transform(x, &model.wide.crosses, &model.wide.thresholds));
        for (g, v) in grad_wide.iter_mut().zip(&ext) {
            *g += e * v;
        }
        grad_bias += e;
    }

    let mut flat = Vec::new();
    for (gw, gb) in &layer_grads {
        flat.extend(gw.iter());
        flat.extend(gb.iter());
    }
    flat.extend(grad_head_w.iter());
    flat.push(0.0); // deep head bias is pinned at zero (shared bias)
    flat.extend(&grad_wide);
    flat.push(grad_bias);
    (flat, loss)
}

#[derive(Debug, Clone)]
pub struct DeepWideFit {
    pub model: DeepWideModel,
    pub loss_trace: Vec<f64>,
}

/// Joint full-batch training of both components.
pub fn fit_deep_wide(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    crosses: Vec<(usize, usize)>,
    thresholds: Vec<f64>,
    hidden_layers: usize,
    epochs: usize,
    lr: f64,
    init_seed: u64,
    head: Head,
) -> Result<DeepWideFit> {
    if hidden_layers == 0 {
        return Err(Error::Validation("need at least one hidden layer".into()));
    }
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::DimensionMismatch {
            expected: train_x.len(),
            actual: train_y.len(),
        });
    }
    if head == Head::Logistic {
        for &y in train_y {
            if y != 0.0 && y != 1.0 {
                return Err(Error::NonBinaryLabels(y));
            }
        }
    }
    let d = train_x[0].len();
    let wide_width = d + crosses.len();
    let mut model = DeepWideModel {
        wide: WideModel {
            weights: vec![0.0; wide_width],
            bias: 0.0,
            crosses,
            thresholds,
        },
        deep: MlpModel::init(d, hidden_layers, Head::Affine, init_seed),
        bias: 0.0,
        head,
    };
    model.deep.head = head; // head kind recorded on both for serialization

    let mut loss_trace = Vec::with_capacity(epochs);
    let mut prev_loss = f64::INFINITY;
    for _ in 0..epochs {
        let (grad, loss) = deep_wide_backward(&model, train_x, train_y);
        let mut it = grad.iter();
        for layer in &mut model.deep.layers {
            for v in layer.w.iter_mut() {
                *v -= lr * it.next().unwrap();
            }
            for v in layer.b.iter_mut() {
                *v -= lr * it.next().unwrap();
            }
        }
        for v in model.deep.head_w.iter_mut() {
            *v -= lr * it.next().unwrap();
        }
        it.next(); // deep head bias stays zero
        for v in model.wide.weights.iter_mut() {
            *v -= lr * it.next().unwrap();
        }
        model.bias -= lr * it.next().unwrap();
        loss_trace.push(loss);
        if (prev_loss - loss).abs() < EARLY_STOP_TOL {
            break;
        }
        prev_loss = loss;
    }
    Ok(DeepWideFit { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_classify_to_half() {
        let m = MlpModel::zeroed(3, 2, Head::Logistic);
        assert_eq!(m.predict(&[1.0, -2.0, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn zero_weights_regress_to_zero() {
        let m = MlpModel::zeroed(3, 2, Head::Affine);
        assert_eq!(m.predict(&[1.0, -2.0, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_single_unit_chain() {
        // d=1, one hidden layer: a = sigmoid(0.7*x + 0.1), out = sigmoid(1.3*a - 0.2)
        let mut m = MlpModel::zeroed(1, 1, Head::Logistic);
        m.layers[0].w[[0, 0]] = 0.7;
        m.layers[0].b[0] = 0.1;
        m.head_w[0] = 1.3;
        m.head_b = -0.2;
        let x = 0.9;
        let a = sigmoid(0.7 * x + 0.1);
        let want = sigmoid(1.3 * a - 0.2);
        let (got, cache) = m.forward(&[x]).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((cache[0][0] - a).abs() < 1e-12);
    }

    #[test]
    fn xor_is_learned() {
        let xs = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let ys = vec![0.0, 1.0, 1.0, 0.0];
        // lr must be high enough to leave the 0.693 plateau before the
        // early-stop rule fires
        let fit = fit_mlp(&xs, &ys, 2, 20000, 5.0, 0, Head::Logistic).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(fit.model.predict_label(x).unwrap(), y, "failed at {x:?}");
        }
    }

    #[test]
    fn fixed_seed_reproduces_weights() {
        let a = MlpModel::init(5, 3, Head::Affine, 46);
        let b = MlpModel::init(5, 3, Head::Affine, 46);
        assert_eq!(a, b);
        let c = MlpModel::init(5, 3, Head::Affine, 47);
        assert_ne!(a, c);
    }

    #[test]
    fn flat_round_trip() {
        let m = MlpModel::init(4, 2, Head::Logistic, 9);
        let back = MlpModel::from_flat(4, 2, Head::Logistic, &m.to_flat()).unwrap();
        assert_eq!(m, back);
    }

    fn fd_check_mlp(d: usize, layers: usize, head: Head, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 5;
        let xs_rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let ys: Vec<f64> = (0..n)
            .map(|_| match head {
                Head::Logistic => f64::from(rng.random::<f64>() > 0.5),
                Head::Affine => rng.random::<f64>() * 2.0 - 1.0,
            })
            .collect();
        let xs = Array2::from_shape_vec((n, d), xs_rows.iter().flatten().copied().collect()).unwrap();
        let model = MlpModel::init(d, layers, head, seed ^ 0xABCD);
        let analytic = gradient_flat(&model, &xs, &ys);
        let flat = model.to_flat();
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += h;
            let mut minus = flat.clone();
            minus[i] -= h;
            let lp = batch_loss(&MlpModel::from_flat(d, layers, head, &plus).unwrap(), &xs, &ys);
            let lm = batch_loss(&MlpModel::from_flat(d, layers, head, &minus).unwrap(), &xs, &ys);
            let numeric = (lp - lm) / (2.0 * h);
            // floor keeps finite-difference round-off from dominating the
            // ratio when deep sigmoid stacks shrink gradients below 1e-6
            let rel = (numeric - analytic[i]).abs() / (numeric.abs() + analytic[i].abs()).max(1e-5);
            max_rel = max_rel.max(rel);
        }
        max_rel
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for (layers, head, seed) in [
            (1, Head::Logistic, 3u64),
            (2, Head::Affine, 4),
            (3, Head::Logistic, 5),
            (5, Head::Affine, 6),
        ] {
            let err = fd_check_mlp(3, layers, head, seed);
            assert!(err < 1e-4, "layers={layers} rel err {err}");
        }
    }

    #[test]
    fn deep_frozen_at_zero_equals_wide_only() {
        let wide = WideModel {
            weights: vec![0.4, -0.7],
            bias: 0.0,
            crosses: vec![],
            thresholds: vec![],
        };
        let dw = DeepWideModel {
            wide: wide.clone(),
            deep: MlpModel::zeroed(2, 2, Head::Logistic),
            bias: 0.25,
            head: Head::Logistic,
        };
        let solo = WideModel {
            bias: 0.25,
            ..wide
        };
        for x in [[0.3, 0.9], [-1.0, 0.2], [2.0, -2.0]] {
            let want = sigmoid(solo.score(&x));
            assert!((dw.predict(&x).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_frozen_at_zero_equals_deep_only() {
        let deep = MlpModel::init(2, 2, Head::Affine, 11);
        let dw = DeepWideModel {
            wide: WideModel {
                weights: vec![0.0, 0.0],
                bias: 0.0,
                crosses: vec![],
                thresholds: vec![],
            },
            deep: deep.clone(),
            bias: 0.0,
            head: Head::Affine,
        };
        let mut affine = deep;
        affine.head = Head::Affine;
        for x in [[0.3, 0.9], [-1.0, 0.2]] {
            let want = affine.predict(&x).unwrap();
            assert!((dw.predict(&x).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_loss_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| f64::from(x[0] > x[1])).collect();
        let fit = fit_deep_wide(
            &xs,
            &ys,
            vec![(0, 1)],
            vec![0.5, 0.5],
            2,
            200,
            0.1,
            5,
            Head::Logistic,
        )
        .unwrap();
        for pair in fit.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn deep_wide_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        for head in [Head::Logistic, Head::Affine] {
            let ys: Vec<f64> = (0..6)
                .map(|_| match head {
                    Head::Logistic => f64::from(rng.random::<f64>() > 0.5),
                    Head::Affine => rng.random::<f64>(),
                })
                .collect();
            let fit = fit_deep_wide(
                &xs,
                &ys,
                vec![(0, 2)],
                vec![0.5, 0.5, 0.5],
                2,
                3,
                0.05,
                7,
                head,
            )
            .unwrap();
            let model = fit.model;
            let analytic = deep_wide_gradient_flat(&model, &xs, &ys);
            let h = 1e-5;
            // perturb the deep layers and wide weights through the flat order
            let flat = model.to_flat();
            let deep_len = model.deep.to_flat().len();
            for i in 0..flat.len() {
                if i == deep_len - 1 {
                    continue; // the pinned deep head bias has no gradient
                }
                let rebuild = |flat: &[f64]| {
                    let mut m = model.clone();
                    let d = m.deep.input_dim();
                    let layers = m.deep.layers.len();
                    m.deep =
                        MlpModel::from_flat(d, layers, m.deep.head, &flat[..deep_len]).unwrap();
                    let w = m.wide.weights.len();
                    m.wide.weights = flat[deep_len..deep_len + w].to_vec();
                    m.bias = flat[deep_len + w];
                    m
                };
                let mut plus = flat.clone();
                plus[i] += h;
                let mut minus = flat.clone();
                minus[i] -= h;
                let lp = deep_wide_loss(&rebuild(&plus), &xs, &ys);
                let lm = deep_wide_loss(&rebuild(&minus), &xs, &ys);
                let numeric = (lp - lm) / (2.0 * h);
                let rel =
                    (numeric - analytic[i]).abs() / (numeric.abs() + analytic[i].abs()).max(1e-8);
                assert!(rel < 1e-4, "param {i} rel err {rel}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn logistic_forward_stays_in_open_unit_interval(
            seed in 0u64..300,
            x in proptest::collection::vec(-20.0f64..20.0, 3),
        ) {
            let m = MlpModel::init(3, 2, Head::Logistic, seed);
            let p = m.predict(&x).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
