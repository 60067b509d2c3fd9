//! Generalized linear models: least-squares regression (with a ridge
//! fallback for singular Gram matrices), cross-product transforms over
//! binarized features, and the logistic "wide" classifier.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_LR: f64 = 0.01;
const RIDGE_FALLBACK: f64 = 1e-8;

/// Linear model over raw features plus optional cross-product bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WideModel {
    /// Weights over `raw features ++ crosses`.
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Feature-index pairs whose binarized product is appended.
    pub crosses: Vec<(usize, usize)>,
    /// Per-raw-feature cut values used to binarize cross inputs.
    pub thresholds: Vec<f64>,
}

impl WideModel {
    fn extended(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        out.extend(cross_transform(x, &self.crosses, &self.thresholds));
        out
    }

    /// Pre-sigmoid score `w·x̃ + b`.
    pub fn score(&self, x: &[f64]) -> f64 {
        let ext = self.extended(x);
        self.bias
            + self
                .weights
                .iter()
                .zip(&ext)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    /// Classification decision at threshold 0.5: label 1 iff score >= 0.
    pub fn predict_label(&self, x: &[f64]) -> f64 {
        f64::from(self.score(x) >= 0.0)
    }

    pub fn predict_value(&self, x: &[f64]) -> f64 {
        self.score(x)
    }
}

/// All index pairs (i, j) with i < j.
pub fn all_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(d * (d.saturating_sub(1)) / 2);
    for i in 0..d {
        for j in i + 1..d {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Binarize each feature as `1 iff x_i > threshold_i` and emit the
/// product of each cross pair's bits.
pub fn cross_transform(x: &[f64], crosses: &[(usize, usize)], thresholds: &[f64]) -> Vec<f64> {
    crosses
        .iter()
        .map(|&(i, j)| {
            let a = f64::from(x[i] > thresholds[i]);
            let b = f64::from(x[j] > thresholds[j]);
            a * b
        })
        .collect()
}

/// Per-feature medians of the training rows, the default binarization
/// cuts for cross inputs.
pub fn feature_medians(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows.first().map_or(0, Vec::len);
    (0..d)
        .map(|f| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = col.len();
            if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) / 2.0
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub model: WideModel,
    /// True when the Gram matrix was singular and the ridge fallback
    /// (λ = 1e-8) produced the solution.
    pub used_ridge_fallback: bool,
}

fn least_squares(design: &[Vec<f64>], targets: &[f64]) -> Result<(Vec<f64>, bool)> {
    let d = design.first().map_or(0, Vec::len);
    let width = d + 1; // bias column last
    let mut gram = Array2::<f64>::zeros((width, width));
    let mut rhs = Array1::<f64>::zeros(width);
    let ext = |row: &Vec<f64>, k: usize| if k < d { row[k] } else { 1.0 };
    for (row, &y) in design.iter().zip(targets) {
        for a in 0..width {
            let va = ext(row, a);
            rhs[a] += va * y;
            for b in a..width {
                gram[[a, b]] += va * ext(row, b);
            }
        }
    }
    for a in 0..width {
        for b in 0..a {
            gram[[a, b]] = gram[[b, a]];
        }
    }

    // Equilibrate so every column is on unit scale; raw weather features
    // span six orders of magnitude and would otherwise swamp the pivot
    // test and the ridge fallback.
    let scale: Vec<f64> = (0..width)
        .map(|a| gram[[a, a]].max(f64::MIN_POSITIVE).sqrt())
        .collect();
    let mut eq = Array2::<f64>::zeros((width, width));
    for a in 0..width {
        for b in 0..width {
            eq[[a, b]] = gram[[a, b]] / (scale[a] * scale[b]);
        }
    }
    let eq_rhs = Array1::from_iter((0..width).map(|a| rhs[a] / scale[a]));

    let (z, used_ridge_fallback) = match linalg::solve(eq.clone(), eq_rhs.clone()) {
        Ok(z) => (z, false),
        Err(Error::SingularSystem(_)) => {
            let mut ridge = eq;
            for a in 0..width {
                ridge[[a, a]] += RIDGE_FALLBACK;
            }
            (linalg::solve(ridge, eq_rhs)?, true)
        }
        Err(e) => return Err(e),
    };
    let solution: Vec<f64> = z.iter().zip(&scale).map(|(v, s)| v / s).collect();
    Ok((solution, used_ridge_fallback))
}

/// Least-squares fit of `y = w·x + b` via the normal equations.
pub fn fit_linear_regression(train_x: &[Vec<f64>], train_y: &[f64]) -> Result<LinearFit> {
    fit_wide_regressor(train_x, train_y, Vec::new(), Vec::new())
}

/// Least-squares fit over raw features plus cross-product bits.
pub fn fit_wide_regressor(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    crosses: Vec<(usize, usize)>,
    thresholds: Vec<f64>,
) -> Result<LinearFit> {
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::DimensionMismatch {
            expected: train_x.len(),
            actual: train_y.len(),
        });
    }
    let design: Vec<Vec<f64>> = train_x
        .iter()
        .map(|x| {
            let mut row = x.clone();
            row.extend(cross_transform(x, &crosses, &thresholds));
            row
        })
        .collect();
    let (mut solution, used_ridge_fallback) = least_squares(&design, train_y)?;
    let bias = solution.pop().expect("bias column present");
    Ok(LinearFit {
        model: WideModel {
            weights: solution,
            bias,
            crosses,
            thresholds,
        },
        used_ridge_fallback,
    })
}

#[derive(Debug, Clone)]
pub struct WideFit {
    pub model: WideModel,
    /// Mean logistic loss after each epoch; last entry is the final loss.
    pub loss_trace: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logistic_loss(probs: &[f64], labels: &[f64]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / labels.len() as f64
}

/// Logistic regression over raw + crossed features, trained by
/// full-batch gradient descent from all-zero weights.
pub fn fit_wide_classifier(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    crosses: Vec<(usize, usize)>,
    thresholds: Vec<f64>,
    epochs: usize,
    lr: f64,
) -> Result<WideFit> {
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::DimensionMismatch {
            expected: train_x.len(),
            actual: train_y.len(),
        });
    }
    for &y in train_y {
        if y != 0.0 && y != 1.0 {
            return Err(Error::NonBinaryLabels(y));
        }
    }
    let design: Vec<Vec<f64>> = train_x
        .iter()
        .map(|x| {
            let mut row = x.clone();
            row.extend(cross_transform(x, &crosses, &thresholds));
            row
        })
        .collect();
    let width = design.first().map_or(0, Vec::len);
    let n = design.len() as f64;

    let mut weights = vec![0.0f64; width];
    let mut bias = 0.0f64;
    let mut loss_trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut grad_w = vec![0.0f64; width];
        let mut grad_b = 0.0f64;
        let mut probs = Vec::with_capacity(design.len());
        for (row, &y) in design.iter().zip(train_y) {
            let z = bias + weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
            let p = sigmoid(z);
            probs.push(p);
            let err = (p - y) / n;
            for (g, v) in grad_w.iter_mut().zip(row) {
                *g += err * v;
            }
            grad_b += err;
        }
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= lr * g;
        }
        bias -= lr * grad_b;
        // loss after the update, on the same batch
        let after: Vec<f64> = design
            .iter()
            .map(|row| sigmoid(bias + weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>()))
            .collect();
        loss_trace.push(logistic_loss(&after, train_y));
    }

    Ok(WideFit {
        model: WideModel {
            weights,
            bias,
            crosses,
            thresholds,
        },
        loss_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_products_of_binaries() {
        // thresholds 0.5: x=[1,0] binarizes to [1,0]
        let t = vec![0.5, 0.5];
        assert_eq!(cross_transform(&[1.0, 0.0], &[(0, 1)], &t), vec![0.0]);
        assert_eq!(cross_transform(&[1.0, 1.0], &[(0, 1)], &t), vec![1.0]);
    }

    #[test]
    fn three_features_give_three_pairs() {
        let pairs = all_pairs(3);
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
        let out = cross_transform(&[1.0, 1.0, 0.0], &pairs, &[0.5; 3]);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn noiseless_line_is_recovered() {
        let xs = vec![vec![0.0], vec![1.0], vec![2.0]];
        let ys = vec![1.0, 3.0, 5.0];
        let fit = fit_linear_regression(&xs, &ys).unwrap();
        assert!((fit.model.weights[0] - 2.0).abs() < 1e-9);
        assert!((fit.model.bias - 1.0).abs() < 1e-9);
        let preds: Vec<f64> = xs.iter().map(|x| fit.model.predict_value(x)).collect();
        let eval = crate::metrics::evaluate_regressor(&ys, &preds).unwrap();
        assert!(eval.r2.value().unwrap() >= 0.999999);
    }

    #[test]
    fn constant_targets_put_mean_in_bias() {
        let xs = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let ys = vec![4.0; 4];
        let fit = fit_linear_regression(&xs, &ys).unwrap();
        assert!(fit.model.weights[0].abs() < 1e-9);
        assert!((fit.model.bias - 4.0).abs() < 1e-9);
    }

    #[test]
    fn residuals_are_orthogonal_to_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..9).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x.iter().sum::<f64>() * 0.3 + rng.random::<f64>())
            .collect();
        let fit = fit_linear_regression(&xs, &ys).unwrap();
        let residuals: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| y - fit.model.predict_value(x))
            .collect();
        for f in 0..9 {
            let dot: f64 = xs.iter().zip(&residuals).map(|(x, r)| x[f] * r).sum();
            assert!(dot.abs() < 1e-6, "column {f} correlation {dot}");
        }
        let bias_dot: f64 = residuals.iter().sum();
        assert!(bias_dot.abs() < 1e-6);
    }

    #[test]
    fn underdetermined_system_uses_ridge_fallback() {
        // 2 samples, 4 features: Gram is singular
        let xs = vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0]];
        let ys = vec![1.0, 2.0];
        let fit = fit_linear_regression(&xs, &ys).unwrap();
        assert!(fit.used_ridge_fallback);
    }

    #[test]
    fn separable_set_is_classified_perfectly() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..10 {
            xs.push(vec![i as f64 * 0.1, 1.0]);
            ys.push(0.0);
            xs.push(vec![i as f64 * 0.1 + 5.0, -1.0]);
            ys.push(1.0);
        }
        let fit = fit_wide_classifier(&xs, &ys, Vec::new(), Vec::new(), 3000, 0.5).unwrap();
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| fit.model.predict_label(x) == y)
            .count();
        assert_eq!(correct, xs.len());
    }

    #[test]
    fn zero_epochs_yield_constant_positive_label() {
        let xs = vec![vec![1.0], vec![-4.0], vec![2.5]];
        let ys = vec![1.0, 0.0, 1.0];
        let fit = fit_wide_classifier(&xs, &ys, Vec::new(), Vec::new(), 0, 0.1).unwrap();
        for x in &xs {
            assert_eq!(fit.model.score(x), 0.0);
            assert_eq!(fit.model.predict_label(x), 1.0);
        }
    }

    #[test]
    fn loss_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>()])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| f64::from(x[0] + x[1] > 0.4)).collect();
        let fit = fit_wide_classifier(&xs, &ys, Vec::new(), Vec::new(), 300, 0.05).unwrap();
        for pair in fit.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn non_binary_labels_are_rejected() {
        let xs = vec![vec![1.0]];
        let ys = vec![0.3];
        assert!(matches!(
            fit_wide_classifier(&xs, &ys, Vec::new(), Vec::new(), 1, 0.1),
            Err(Error::NonBinaryLabels(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn crosses_emit_only_bits(
            x in proptest::collection::vec(-10.0f64..10.0, 4),
            t in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let out = cross_transform(&x, &all_pairs(4), &t);
            prop_assert_eq!(out.len(), 6);
            for v in out {
                prop_assert!(v == 0.0 || v == 1.0);
            }
        }

        #[test]
        fn label_matches_score_sign(
            w in proptest::collection::vec(-3.0f64..3.0, 3),
            b in -2.0f64..2.0,
            x in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let model = WideModel { weights: w, bias: b, crosses: vec![], thresholds: vec![] };
            let label = model.predict_label(&x);
            prop_assert_eq!(label == 1.0, model.score(&x) >= 0.0);
        }
    }
}
