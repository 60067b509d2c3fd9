//! Classification accuracy and the four regression metrics (R², MSE,
//! RMSE, Pearson correlation), plus the per-trial report row they feed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A metric that can be undefined for degenerate inputs.
///
/// Ranking and report emission print the `Invalid` case literally as
/// `invalid` instead of propagating NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetricValue {
    Valid(f64),
    Invalid,
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Valid(v) => Some(*v),
            MetricValue::Invalid => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, MetricValue::Valid(_))
    }
}

impl std::fmt::Display for MetricValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricValue::Valid(v) => write!(f, "{v}"),
            MetricValue::Invalid => write!(f, "invalid"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationEval {
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionEval {
    pub r2: MetricValue,
    pub mse: f64,
    pub rmse: f64,
    pub pcc: MetricValue,
}

/// Outcome of one trial: a metric block, or the error that aborted it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskEval {
    Classification(ClassificationEval),
    Regression(RegressionEval),
    Failed { message: String },
}

/// Everything needed to re-run a trial to an identical result.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub task: String,
    pub family: String,
    pub dataset: String,
    pub normalization: String,
    pub scope: String,
    pub split_mode: String,
    pub requested_seed: String,
    pub drawn_seed: Option<u64>,
    pub model_seed: Option<u64>,
    pub parameter: String,
    pub flags: Vec<String>,
}

impl Provenance {
    /// Deterministic sort key; grid output is ordered by this.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.task, self.family, self.dataset, self.normalization, self.requested_seed, self.parameter
        )
    }
}

/// One row of an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub eval: TaskEval,
}

impl EvalReport {
    pub fn accuracy(&self) -> Option<f64> {
        match &self.eval {
            TaskEval::Classification(c) => Some(c.accuracy),
            _ => None,
        }
    }

    pub fn regression(&self) -> Option<&RegressionEval> {
        match &self.eval {
            TaskEval::Regression(r) => Some(r),
            _ => None,
        }
    }
}

/// Accuracy = correct / total over paired label vectors.
pub fn evaluate_classifier(truth: &[f64], predicted: &[f64]) -> Result<ClassificationEval> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("no labels to score".into()));
    }
    let correct = truth
        .iter()
        .zip(predicted)
        .filter(|(a, b)| a == b)
        .count();
    Ok(ClassificationEval {
        accuracy: correct as f64 / truth.len() as f64,
    })
}

/// MSE, RMSE, R² (invalid when the truth has zero variance), and sample
/// Pearson correlation (invalid when either side has zero variance).
pub fn evaluate_regressor(truth: &[f64], predicted: &[f64]) -> Result<RegressionEval> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.len() < 2 {
        return Err(Error::InsufficientData(
            "regression metrics need at least 2 points".into(),
        ));
    }
    let n = truth.len() as f64;
    let mse = truth
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / n;
    let rmse = mse.sqrt();

    let mean_y = truth.iter().sum::<f64>() / n;
    let ss_tot = truth.iter().map(|y| (y - mean_y) * (y - mean_y)).sum::<f64>();
    let ss_res = mse * n;
    let r2 = if ss_tot == 0.0 {
        MetricValue::Invalid
    } else {
        MetricValue::Valid(1.0 - ss_res / ss_tot)
    };

    let mean_p = predicted.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (y, p) in truth.iter().zip(predicted) {
        let dy = y - mean_y;
        let dp = p - mean_p;
        sxx += dy * dy;
        syy += dp * dp;
        sxy += dy * dp;
    }
    let pcc = if sxx == 0.0 || syy == 0.0 {
        MetricValue::Invalid
    } else {
        MetricValue::Valid(sxy / (sxx.sqrt() * syy.sqrt()))
    };

    Ok(RegressionEval { r2, mse, rmse, pcc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_counts_matches() {
        let eval = evaluate_classifier(&[1.0, 0.0, 1.0, 1.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(eval.accuracy, 0.75);
    }

    #[test]
    fn accuracy_identity_and_all_wrong() {
        let y = [1.0, 0.0, 1.0];
        assert_eq!(evaluate_classifier(&y, &y).unwrap().accuracy, 1.0);
        let flipped = [0.0, 1.0, 0.0];
        assert_eq!(evaluate_classifier(&y, &flipped).unwrap().accuracy, 0.0);
    }

    #[test]
    fn accuracy_rejects_length_mismatch() {
        assert!(evaluate_classifier(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn perfect_prediction_scores_r2_one() {
        let y = [0.3, 1.2, -0.4, 2.0];
        let eval = evaluate_regressor(&y, &y).unwrap();
        assert_eq!(eval.mse, 0.0);
        assert_eq!(eval.r2, MetricValue::Valid(1.0));
    }

    #[test]
    fn mean_predictor_scores_r2_zero() {
        let y = [1.0, 2.0, 3.0, 6.0];
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let pred = [mean; 4];
        let eval = evaluate_regressor(&y, &pred).unwrap();
        assert!(eval.r2.value().unwrap().abs() < 1e-12);
    }

    #[test]
    fn hand_computed_mse_rmse() {
        // y=[0,1], ŷ=[0.5,0.5]: residuals ±0.5 → mse 0.25, rmse 0.5
        let eval = evaluate_regressor(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        assert_eq!(eval.mse, 0.25);
        assert_eq!(eval.rmse, 0.5);
    }

    #[test]
    fn pcc_affine_relation_is_one() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let eval = evaluate_regressor(&x, &y).unwrap();
        assert!((eval.pcc.value().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_truth_flags_invalid() {
        let eval = evaluate_regressor(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(eval.r2, MetricValue::Invalid);
        assert_eq!(eval.pcc, MetricValue::Invalid);
    }

    #[test]
    fn constant_prediction_flags_pcc_only() {
        let eval = evaluate_regressor(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(eval.r2.is_valid());
        assert_eq!(eval.pcc, MetricValue::Invalid);
    }

    #[test]
    fn invalid_prints_literally() {
        assert_eq!(MetricValue::Invalid.to_string(), "invalid");
        assert_eq!(MetricValue::Valid(0.25).to_string(), "0.25");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rmse_squared_equals_mse(
            ys in proptest::collection::vec(-100.0f64..100.0, 2..40),
            shift in -5.0f64..5.0,
        ) {
            let pred: Vec<f64> = ys.iter().map(|v| v + shift).collect();
            let eval = evaluate_regressor(&ys, &pred).unwrap();
            prop_assert!((eval.rmse * eval.rmse - eval.mse).abs() < 1e-12);
        }

        #[test]
        fn r2_never_exceeds_one(
            ys in proptest::collection::vec(-100.0f64..100.0, 2..40),
            ps in proptest::collection::vec(-100.0f64..100.0, 2..40),
        ) {
            let n = ys.len().min(ps.len());
            let eval = evaluate_regressor(&ys[..n], &ps[..n]).unwrap();
            if let MetricValue::Valid(r2) = eval.r2 {
                prop_assert!(r2 <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn pcc_invariant_under_positive_affine(
            ys in proptest::collection::vec(-50.0f64..50.0, 3..30),
            scale in 0.1f64..10.0,
            offset in -10.0f64..10.0,
        ) {
            let pred: Vec<f64> = ys.iter().enumerate().map(|(i, v)| v * 0.5 + (i % 3) as f64).collect();
            let base = evaluate_regressor(&ys, &pred).unwrap();
            let transformed: Vec<f64> = pred.iter().map(|v| scale * v + offset).collect();
            let moved = evaluate_regressor(&ys, &transformed).unwrap();
            if let (Some(a), Some(b)) = (base.pcc.value(), moved.pcc.value()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
