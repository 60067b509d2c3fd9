//! Kernel SVM classifier and ε-insensitive SVR trained by sequential
//! minimal optimization on the dual.
//!
//! The solver is the standard two-multiplier coordinate ascent over
//!     min ½ βᵀQβ + pᵀβ   s.t.  yᵀβ = 0,  0 ≤ β ≤ C,
//! with Q_ij = y_i y_j K(x_i, x_j). Classification uses p = -1; the
//! ε-insensitive regression dual is folded into the same form by the
//! usual 2n expansion (α block with y=+1, α* block with y=-1, linear
//! terms ε∓y). Working pairs are chosen by maximal KKT violation with
//! ties broken by index, so training is fully deterministic.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Linear,
    Poly { degree: u32, gamma: f64, coef0: f64 },
    Rbf { gamma: f64 },
    Sigmoid { gamma: f64, coef0: f64 },
}

impl KernelSpec {
    /// The conventional default gamma = 1/d.
    pub fn default_gamma(d: usize) -> f64 {
        1.0 / d.max(1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Poly { degree, gamma, .. } => {
                if degree < 1 {
                    Err(Error::Validation("poly degree must be >= 1".into()))
                } else if gamma <= 0.0 {
                    Err(Error::Validation(format!("gamma {gamma} must be > 0")))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Rbf { gamma } | KernelSpec::Sigmoid { gamma, .. } => {
                if gamma <= 0.0 {
                    Err(Error::Validation(format!("gamma {gamma} must be > 0")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Poly { .. } => write!(f, "poly"),
            KernelSpec::Rbf { .. } => write!(f, "rbf"),
            KernelSpec::Sigmoid { .. } => write!(f, "sigmoid"),
        }
    }
}

/// Evaluate the kernel on two equal-length vectors.
pub fn kernel_eval(spec: KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    spec.validate()?;
    let dot = || x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    Ok(match spec {
        KernelSpec::Linear => dot(),
        KernelSpec::Poly {
            degree,
            gamma,
            coef0,
        } => (gamma * dot() + coef0).powi(degree as i32),
        KernelSpec::Rbf { gamma } => {
            let sq = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (-gamma * sq).exp()
        }
        KernelSpec::Sigmoid { gamma, coef0 } => (gamma * dot() + coef0).tanh(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SvmParams {
    pub c: f64,
    pub tol: f64,
    /// Iteration budget in units of training-set passes.
    pub max_passes: usize,
    pub track_objective: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            tol: 1e-3,
            max_passes: 100,
            track_objective: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DualCoefficients {
    /// Raw multipliers and the ±1 labels of the classification dual.
    Classification { alphas: Vec<f64>, labels: Vec<f64> },
    /// Paired multipliers of the ε-insensitive dual.
    Regression { alpha: Vec<f64>, alpha_star: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub train_x: Vec<Vec<f64>>,
    pub dual: DualCoefficients,
    /// Decision bias b₀; predictions are Σ coef·K(xᵢ,x) + b₀.
    pub bias: f64,
    pub c: f64,
    pub epsilon: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Dual objective (maximization form) per iteration when tracking
    /// was requested, starting with the initial point.
    pub objective_trace: Vec<f64>,
}

impl SvmModel {
    fn coefficients(&self) -> Vec<f64> {
        match &self.dual {
            DualCoefficients::Classification { alphas, labels } => {
                alphas.iter().zip(labels).map(|(a, y)| a * y).collect()
            }
            DualCoefficients::Regression { alpha, alpha_star } => alpha
                .iter()
                .zip(alpha_star)
                .map(|(a, s)| a - s)
                .collect(),
        }
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        let mut acc = self.bias;
        for (xi, &co) in self.train_x.iter().zip(&self.coefficients()) {
            if co != 0.0 {
                acc += co * kernel_eval(self.kernel, xi, x)?;
            }
        }
        Ok(acc)
    }

    /// Classification output in {0, 1}.
    pub fn predict_label(&self, x: &[f64]) -> Result<f64> {
        Ok(f64::from(self.decision(x)? >= 0.0))
    }

    pub fn predict_value(&self, x: &[f64]) -> Result<f64> {
        self.decision(x)
    }

    /// Σ αᵢyᵢ, zero at any feasible point of the classification dual.
    pub fn equality_residual(&self) -> f64 {
        match &self.dual {
            DualCoefficients::Classification { alphas, labels } => {
                alphas.iter().zip(labels).map(|(a, y)| a * y).sum()
            }
            DualCoefficients::Regression { alpha, alpha_star } => alpha
                .iter()
                .zip(alpha_star)
                .map(|(a, s)| a - s)
                .sum(),
        }
    }

    /// Largest complementary-slackness violation over the training set
    /// (classification only).
    pub fn max_kkt_violation(&self) -> Result<f64> {
        let DualCoefficients::Classification { alphas, labels } = &self.dual else {
            return Err(Error::Validation(
                "KKT audit applies to classification models".into(),
            ));
        };
        let bound_eps = 1e-9 * self.c.max(1.0);
        let mut worst = 0.0f64;
        for ((xi, &a), &y) in self.train_x.iter().zip(alphas).zip(labels) {
            let margin = y * self.decision(xi)?;
            let v = if a <= bound_eps {
                (1.0 - margin).max(0.0)
            } else if a >= self.c - bound_eps {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            worst = worst.max(v);
        }
        Ok(worst)
    }
}

struct SmoProblem<'a> {
    ker: &'a Array2<f64>,
    y: &'a [f64],
    p: &'a [f64],
    c: f64,
    tol: f64,
    max_iter: usize,
    track_objective: bool,
}

struct SmoSolution {
    alpha: Vec<f64>,
    rho: f64,
    iterations: usize,
    converged: bool,
    objective_trace: Vec<f64>,
}

fn smo_solve(prob: &SmoProblem) -> SmoSolution {
    let n = prob.y.len();
    let mut alpha = vec![0.0f64; n];
    let mut grad: Vec<f64> = prob.p.to_vec();
    let q = |s: usize, t: usize| prob.y[s] * prob.y[t] * prob.ker[[s, t]];

    let objective = |alpha: &[f64], grad: &[f64]| -> f64 {
        // minimization objective is ½ Σ α(G + p); report its negation
        -(alpha
            .iter()
            .zip(grad.iter().zip(prob.p))
            .map(|(a, (g, p))| a * (g + p))
            .sum::<f64>()
            / 2.0)
    };

    let mut trace = Vec::new();
    if prob.track_objective {
        trace.push(objective(&alpha, &grad));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < prob.max_iter {
        // maximal violating pair, ties to the lower index
        let mut i: Option<usize> = None;
        let mut m = f64::NEG_INFINITY;
        let mut j: Option<usize> = None;
        let mut mm = f64::INFINITY;
        for t in 0..n {
            let val = -prob.y[t] * grad[t];
            let in_up = (prob.y[t] > 0.0 && alpha[t] < prob.c)
                || (prob.y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (prob.y[t] > 0.0 && alpha[t] > 0.0)
                || (prob.y[t] < 0.0 && alpha[t] < prob.c);
            if in_up && val > m {
                m = val;
                i = Some(t);
            }
            if in_low && val < mm {
                mm = val;
                j = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i, j) else {
            converged = true;
            break;
        };
        if m - mm < prob.tol {
            converged = true;
            break;
        }

        let old_i = alpha[i];
        let old_j = alpha[j];
        let quad = (prob.ker[[i, i]] + prob.ker[[j, j]]
            - 2.0 * prob.y[i] * prob.y[j] * prob.ker[[i, j]])
        .max(TAU);
        if prob.y[i] != prob.y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > prob.c {
                    alpha[i] = prob.c;
                    alpha[j] = prob.c - diff;
                }
            } else if alpha[j] > prob.c {
                alpha[j] = prob.c;
                alpha[i] = prob.c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > prob.c {
                if alpha[i] > prob.c {
                    alpha[i] = prob.c;
                    alpha[j] = sum - prob.c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > prob.c {
                if alpha[j] > prob.c {
                    alpha[j] = prob.c;
                    alpha[i] = sum - prob.c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
        iterations += 1;
        if prob.track_objective {
            trace.push(objective(&alpha, &grad));
        }
    }

    // bias from the free multipliers, or the midpoint of the bounds
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut nr_free = 0usize;
    for t in 0..n {
        let yg = prob.y[t] * grad[t];
        if alpha[t] >= prob.c {
            if prob.y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if prob.y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nr_free += 1;
            sum_free += yg;
        }
    }
    let rho = if nr_free > 0 {
        sum_free / nr_free as f64
    } else {
        (ub + lb) / 2.0
    };

    SmoSolution {
        alpha,
        rho,
        iterations,
        converged,
        objective_trace: trace,
    }
}

fn kernel_matrix(kernel: KernelSpec, xs: &[Vec<f64>]) -> Result<Array2<f64>> {
    let n = xs.len();
    let mut ker = Array2::zeros((n, n));
    for s in 0..n {
        for t in s..n {
            let v = kernel_eval(kernel, &xs[s], &xs[t])?;
            ker[[s, t]] = v;
            ker[[t, s]] = v;
        }
    }
    Ok(ker)
}

/// Train a binary classifier on 0/1 labels.
pub fn fit_svc(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    kernel: KernelSpec,
    params: SvmParams,
) -> Result<SvmModel> {
    kernel.validate()?;
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::DimensionMismatch {
            expected: train_x.len(),
            actual: train_y.len(),
        });
    }
    let mut labels = Vec::with_capacity(train_y.len());
    for &y in train_y {
        if y == 0.0 {
            labels.push(-1.0);
        } else if y == 1.0 {
            labels.push(1.0);
        } else {
            return Err(Error::NonBinaryLabels(y));
        }
    }
    if labels.iter().all(|&y| y > 0.0) || labels.iter().all(|&y| y < 0.0) {
        return Err(Error::Validation(
            "classifier training needs both classes".into(),
        ));
    }

    let ker = kernel_matrix(kernel, train_x)?;
    let p = vec![-1.0f64; labels.len()];
    let solution = smo_solve(&SmoProblem {
        ker: &ker,
        y: &labels,
        p: &p,
        c: params.c,
        tol: params.tol,
        max_iter: params.max_passes.saturating_mul(labels.len()).max(1),
        track_objective: params.track_objective,
    });

    Ok(SvmModel {
        kernel,
        train_x: train_x.to_vec(),
        dual: DualCoefficients::Classification {
            alphas: solution.alpha,
            labels,
        },
        bias: -solution.rho,
        c: params.c,
        epsilon: None,
        converged: solution.converged,
        iterations: solution.iterations,
        objective_trace: solution.objective_trace,
    })
}

/// Train an ε-insensitive regressor on real targets.
pub fn fit_svr(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    kernel: KernelSpec,
    epsilon: f64,
    params: SvmParams,
) -> Result<SvmModel> {
    kernel.validate()?;
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::DimensionMismatch {
            expected: train_x.len(),
            actual: train_y.len(),
        });
    }
    if epsilon < 0.0 {
        return Err(Error::Validation(format!("epsilon {epsilon} must be >= 0")));
    }
    let n = train_x.len();
    let ker = kernel_matrix(kernel, train_x)?;
    let mut ker2 = Array2::zeros((2 * n, 2 * n));
    for s in 0..2 * n {
        for t in 0..2 * n {
            ker2[[s, t]] = ker[[s % n, t % n]];
        }
    }
    let mut y2 = vec![1.0f64; 2 * n];
    let mut p2 = vec![0.0f64; 2 * n];
    for t in 0..n {
        y2[n + t] = -1.0;
        p2[t] = epsilon - train_y[t];
        p2[n + t] = epsilon + train_y[t];
    }

    let solution = smo_solve(&SmoProblem {
        ker: &ker2,
        y: &y2,
        p: &p2,
        c: params.c,
        tol: params.tol,
        max_iter: params.max_passes.saturating_mul(2 * n).max(1),
        track_objective: params.track_objective,
    });

    Ok(SvmModel {
        kernel,
        train_x: train_x.to_vec(),
        dual: DualCoefficients::Regression {
            alpha: solution.alpha[..n].to_vec(),
            alpha_star: solution.alpha[n..].to_vec(),
        },
        bias: -solution.rho,
        c: params.c,
        epsilon: Some(epsilon),
        converged: solution.converged,
        iterations: solution.iterations,
        objective_trace: solution.objective_trace,
    })
}
