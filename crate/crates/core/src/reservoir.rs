//! Echo-state reservoir classifier: fixed random input weights, a
//! directed Erdős–Rényi 0/1 adjacency rescaled to a target spectral
//! radius, tanh state updates, and a ridge-trained linear readout.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_SPECTRAL_RADIUS: f64 = 0.9;
pub const DEFAULT_INPUT_SCALING: f64 = 1.0;
pub const DEFAULT_CONNECTIVITY: f64 = 0.1;
pub const DEFAULT_WASHOUT: usize = 10;
pub const DEFAULT_RIDGE: f64 = 1e-6;

const MAX_REGEN_ATTEMPTS: u64 = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reservoir {
    /// Input weights, d × M, entries uniform in [0, δ].
    pub w_in: Array2<f64>,
    /// Recurrent weights, M × M, rescaled to the target spectral radius.
    pub adjacency: Array2<f64>,
    /// Current state vector, length M; starts at zero.
    pub state: Array1<f64>,
    pub spectral_radius: f64,
    pub input_scaling: f64,
    /// How many adjacency draws were discarded for having radius zero.
    pub regen_count: u64,
}

/// Largest eigenvalue magnitude of a nonnegative matrix by power
/// iteration (the dominant eigenvalue of such a matrix is real and
/// nonnegative, so the iteration converges).
fn power_radius(a: &Array2<f64>) -> f64 {
    let m = a.nrows();
    let mut v = Array1::from_elem(m, 1.0 / (m as f64).sqrt());
    let mut lambda_prev = f64::NAN;
    for iter in 0..20_000 {
        let w = a.dot(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-200 {
            return 0.0;
        }
        v = w / norm;
        if iter >= 30 && (norm - lambda_prev).abs() < 1e-13 * norm.max(1.0) {
            return norm;
        }
        lambda_prev = norm;
    }
    lambda_prev
}

/// Build a reservoir from a seed. A zero-radius adjacency draw is
/// discarded and redrawn from an incremented sub-seed, with the number
/// of discards recorded on the result.
pub fn build(
    d: usize,
    size: usize,
    input_scaling: f64,
    spectral_radius: f64,
    connectivity: f64,
    seed: u64,
) -> Result<Reservoir> {
    if size == 0 {
        return Err(Error::Validation("reservoir size must be >= 1".into()));
    }
    if spectral_radius <= 0.0 {
        return Err(Error::Validation("spectral radius must be > 0".into()));
    }
    if !(0.0..=1.0).contains(&connectivity) {
        return Err(Error::Validation(format!(
            "connection probability {connectivity} outside [0,1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_in = Array2::zeros((d, size));
    for v in w_in.iter_mut() {
        *v = rng.random::<f64>() * input_scaling;
    }

    let mut regen_count = 0;
    let (adjacency, radius) = loop {
        let mut adj_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(regen_count).wrapping_add(1));
        let mut a = Array2::zeros((size, size));
        for v in a.iter_mut() {
            if adj_rng.random::<f64>() < connectivity {
                *v = 1.0;
            }
        }
        let radius = power_radius(&a);
        if radius > 1e-9 {
            break (a, radius);
        }
        regen_count += 1;
        if regen_count >= MAX_REGEN_ATTEMPTS {
            return Err(Error::Validation(format!(
                "adjacency spectral radius stayed zero after {MAX_REGEN_ATTEMPTS} draws \
                 (size {size}, connectivity {connectivity})"
            )));
        }
    };
    let adjacency = adjacency * (spectral_radius / radius);

    Ok(Reservoir {
        w_in,
        adjacency,
        state: Array1::zeros(size),
        spectral_radius,
        input_scaling,
        regen_count,
    })
}

impl Reservoir {
    pub fn size(&self) -> usize {
        self.state.len()
    }

    pub fn reset_state(&mut self) {
        self.state.fill(0.0);
    }

    /// Feed rows in order, updating the carried state with
    /// r(i) = tanh(r(i-1)·A + u(i)·W_in). The first `washout` states are
    /// dropped from the returned matrix but still advance the state.
    pub fn run_states(&mut self, rows: &[Vec<f64>], washout: usize) -> Result<Array2<f64>> {
        if washout >= rows.len() {
            return Err(Error::Validation(format!(
                "washout {washout} >= row count {}",
                rows.len()
            )));
        }
        let m = self.size();
        let mut out = Array2::zeros((rows.len() - washout, m));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != self.w_in.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: self.w_in.nrows(),
                    actual: row.len(),
                });
            }
            let u = Array1::from_vec(row.clone());
            let next = (self.state.dot(&self.adjacency) + u.dot(&self.w_in)).mapv(f64::tanh);
            self.state = next;
            if i >= washout {
                out.row_mut(i - washout).assign(&self.state);
            }
        }
        Ok(out)
    }
}

/// One-hot encode integer-valued labels.
pub fn one_hot(labels: &[f64], n_classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        let idx = l as usize;
        if l.fract() != 0.0 || idx >= n_classes {
            return Err(Error::Validation(format!(
                "label {l} is not a class index below {n_classes}"
            )));
        }
        out[[i, idx]] = 1.0;
    }
    Ok(out)
}

/// Ridge least-squares readout: solves (SᵀS + λI) W = SᵀT. With more
/// units than rows the equivalent dual form W = Sᵀ(SSᵀ + λI)⁻¹T is
/// solved instead; it is the same solution with a far better-conditioned
/// system as λ → 0.
pub fn fit_readout(states: &Array2<f64>, targets: &Array2<f64>, ridge: f64) -> Result<Array2<f64>> {
    if states.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            expected: states.nrows(),
            actual: targets.nrows(),
        });
    }
    let (n, m) = (states.nrows(), states.ncols());
    if m > n {
        let mut gram = states.dot(&states.t());
        for i in 0..n {
            gram[[i, i]] += ridge;
        }
        let dual = linalg::solve_multi(&gram, targets)?;
        Ok(states.t().dot(&dual))
    } else {
        let mut gram = states.t().dot(states);
        for i in 0..m {
            gram[[i, i]] += ridge;
        }
        let rhs = states.t().dot(targets);
        linalg::solve_multi(&gram, &rhs)
    }
}

/// Class predictions by argmax of `states · w_out`; ties pick the lower
/// class index.
pub fn predict_classes(states: &Array2<f64>, w_out: &Array2<f64>) -> Vec<f64> {
    let outputs = states.dot(w_out);
    outputs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as f64
        })
        .collect()
}
