//! LSTM, GRU, and bidirectional-LSTM sequence models trained by
//! backpropagation through time over full sliding windows.
//!
//! Gates use the sigmoid, candidates and the cell squash use tanh. Gate
//! blocks carry biases by default; strict mode (`use_biases = false`)
//! pins them at zero. Weights serialize to a flat record in documented
//! block order: for each direction (forward, then backward for BiLSTM),
//! for each gate (forget/input/candidate/output for LSTM,
//! update/reset/candidate for GRU): input matrix U row-major, recurrent
//! matrix W row-major, bias vector; then the readout weights and bias.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::HourlyDataset;
use crate::error::{Error, Result};
use crate::neural::Head;

pub const DEFAULT_EPOCHS: usize = 80;
pub const DEFAULT_LR: f64 = 0.05;
const EARLY_STOP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
    BiLstm,
}

impl CellKind {
    fn gate_count(&self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm | CellKind::BiLstm => 4,
        }
    }

    fn directions(&self) -> usize {
        if *self == CellKind::BiLstm {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellKind::Lstm => write!(f, "lstm"),
            CellKind::Gru => write!(f, "gru"),
            CellKind::BiLstm => write!(f, "bilstm"),
        }
    }
}

/// One gate's parameters: input matrix `u` (d × H), recurrent matrix
/// `w` (H × H), bias `b` (H).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateBlock {
    pub u: Array2<f64>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Parameters of one direction: 4 gate blocks for LSTM (f, i, c, o),
/// 3 for GRU (z, r, h).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub gates: Vec<GateBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentModel {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub forward_cell: CellParams,
    /// Present only for BiLSTM.
    pub backward_cell: Option<CellParams>,
    /// Affine head over the final hidden state (2H wide for BiLSTM).
    pub readout_w: Array1<f64>,
    pub readout_b: f64,
    pub head: Head,
    pub use_biases: bool,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Slide length-L windows over a chronological dataset: window i covers
/// rows i-L+1..=i and takes row i's target, so the first L-1 rows yield
/// no window.
pub fn make_sequences(ds: &HourlyDataset, seq_len: usize) -> Result<Vec<(Vec<Vec<f64>>, f64)>> {
    if seq_len == 0 {
        return Err(Error::Validation("sequence length must be >= 1".into()));
    }
    if ds.n_rows() < seq_len {
        return Err(Error::InsufficientData(format!(
            "dataset has {} rows, needs at least {seq_len}",
            ds.n_rows()
        )));
    }
    let rows = ds.dense_rows()?;
    let targets = ds.targets()?;
    Ok((seq_len - 1..rows.len())
        .map(|i| (rows[i + 1 - seq_len..=i].to_vec(), targets[i]))
        .collect())
}

fn zero_cell(cell: CellKind, d: usize, h: usize) -> CellParams {
    CellParams {
        gates: (0..cell.gate_count())
            .map(|_| GateBlock {
                u: Array2::zeros((d, h)),
                w: Array2::zeros((h, h)),
                b: Array1::zeros(h),
            })
            .collect(),
    }
}

fn init_cell(cell: CellKind, d: usize, h: usize, rng: &mut ChaCha8Rng) -> CellParams {
    let mut params = zero_cell(cell, d, h);
    let u_scale = 1.0 / (d as f64).sqrt();
    let w_scale = 1.0 / (h as f64).sqrt();
    for gate in &mut params.gates {
        for v in gate.u.iter_mut() {
            *v = (rng.random::<f64>() - 0.5) * u_scale;
        }
        for v in gate.w.iter_mut() {
            *v = (rng.random::<f64>() - 0.5) * w_scale;
        }
    }
    params
}

impl RecurrentModel {
    pub fn init(
        cell: CellKind,
        input_dim: usize,
        hidden: usize,
        seq_len: usize,
        head: Head,
        use_biases: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forward_cell = init_cell(cell, input_dim, hidden, &mut rng);
        let backward_cell = (cell == CellKind::BiLstm)
            .then(|| init_cell(cell, input_dim, hidden, &mut rng));
        let readout_width = hidden * cell.directions();
        let scale = 1.0 / (readout_width as f64).sqrt();
        let readout_w =
            Array1::from_iter((0..readout_width).map(|_| (rng.random::<f64>() - 0.5) * scale));
        RecurrentModel {
            cell,
            input_dim,
            hidden,
            seq_len,
            forward_cell,
            backward_cell,
            readout_w,
            readout_b: 0.0,
            head,
            use_biases,
        }
    }

    pub fn param_count(&self) -> usize {
        self.to_flat().len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        let mut push_cell = |cell: &CellParams| {
            for gate in &cell.gates {
                flat.extend(gate.u.iter());
                flat.extend(gate.w.iter());
                flat.extend(gate.b.iter());
            }
        };
        push_cell(&self.forward_cell);
        if let Some(back) = &self.backward_cell {
            push_cell(back);
        }
        flat.extend(self.readout_w.iter());
        flat.push(self.readout_b);
        flat
    }

    pub fn from_flat(
        cell: CellKind,
        input_dim: usize,
        hidden: usize,
        seq_len: usize,
        head: Head,
        use_biases: bool,
        flat: &[f64],
    ) -> Result<Self> {
        let mut model =
            RecurrentModel::init(cell, input_dim, hidden, seq_len, head, use_biases, 0);
        let expected = model.param_count();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        let mut fill = |params: &mut CellParams| {
            for gate in &mut params.gates {
                for v in gate.u.iter_mut() {
                    *v = it.next().unwrap();
                }
                for v in gate.w.iter_mut() {
                    *v = it.next().unwrap();
                }
                for v in gate.b.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
        };
        fill(&mut model.forward_cell);
        if let Some(back) = &mut model.backward_cell {
            fill(back);
        }
        for v in model.readout_w.iter_mut() {
            *v = it.next().unwrap();
        }
        model.readout_b = it.next().unwrap();
        Ok(model)
    }

    /// Pre-head score for one window.
    pub fn score(&self, window: &[Vec<f64>]) -> Result<f64> {
        if window.len() != self.seq_len {
            return Err(Error::DimensionMismatch {
                expected: self.seq_len,
                actual: window.len(),
            });
        }
        let batch = windows_to_steps(std::slice::from_ref(&window.to_vec()), self.input_dim)?;
        let fwd = run_direction(self.cell, &self.forward_cell, &batch);
        let mut final_h = fwd.final_h.row(0).to_vec();
        if let Some(back) = &self.backward_cell {
            let mut reversed = batch.clone();
            reversed.reverse();
            let bwd = run_direction(self.cell, back, &reversed);
            final_h.extend(bwd.final_h.row(0).iter());
        }
        Ok(self
            .readout_w
            .iter()
            .zip(&final_h)
            .map(|(w, h)| w * h)
            .sum::<f64>()
            + self.readout_b)
    }

    pub fn predict(&self, window: &[Vec<f64>]) -> Result<f64> {
        let z = self.score(window)?;
        Ok(match self.head {
            Head::Logistic => sigmoid(z),
            Head::Affine => z,
        })
    }

    pub fn predict_label(&self, window: &[Vec<f64>]) -> Result<f64> {
        Ok(f64::from(self.predict(window)? >= 0.5))
    }
}

/// One step of the recurrence. For LSTM both states evolve; for GRU the
/// hidden state is the only state and is returned in both slots.
pub fn cell_step(
    kind: CellKind,
    params: &CellParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let x = Array1::from_vec(x.to_vec());
    let h = Array1::from_vec(h_prev.to_vec());
    let pre = |gate: &GateBlock, hin: &Array1<f64>| x.dot(&gate.u) + hin.dot(&gate.w) + &gate.b;
    match kind {
        CellKind::Lstm | CellKind::BiLstm => {
            let c = Array1::from_vec(c_prev.to_vec());
            let f = pre(&params.gates[0], &h).mapv(sigmoid);
            let i = pre(&params.gates[1], &h).mapv(sigmoid);
            let cand = pre(&params.gates[2], &h).mapv(f64::tanh);
            let c_next = &f * &c + &i * &cand;
            let o = pre(&params.gates[3], &h).mapv(sigmoid);
            let h_next = c_next.mapv(f64::tanh) * &o;
            (h_next.to_vec(), c_next.to_vec())
        }
        CellKind::Gru => {
            let z = pre(&params.gates[0], &h).mapv(sigmoid);
            let r = pre(&params.gates[1], &h).mapv(sigmoid);
            let gated = &r * &h;
            let cand = (x.dot(&params.gates[2].u) + gated.dot(&params.gates[2].w)
                + &params.gates[2].b)
                .mapv(f64::tanh);
            let h_next = (1.0 - &z) * &h + &z * &cand;
            (h_next.to_vec(), h_next.to_vec())
        }
    }
}

/// Time-major batch: one (B × d) matrix per timestep.
fn windows_to_steps(windows: &[Vec<Vec<f64>>], d: usize) -> Result<Vec<Array2<f64>>> {
    let b = windows.len();
    let l = windows.first().map_or(0, Vec::len);
    let mut steps = Vec::with_capacity(l);
    for t in 0..l {
        let mut m = Array2::zeros((b, d));
        for (w, window) in windows.iter().enumerate() {
            if window.len() != l || window[t].len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: window[t].len(),
                });
            }
            for (f, &v) in window[t].iter().enumerate() {
                m[[w, f]] = v;
            }
        }
        steps.push(m);
    }
    Ok(steps)
}

/// Cached activations of one direction over a batch.
struct DirectionTrace {
    /// Per timestep, per gate: the post-nonlinearity activation (B × H).
    gates: Vec<Vec<Array2<f64>>>,
    /// Hidden states h_0..h_L (index 0 is the zero initial state).
    hs: Vec<Array2<f64>>,
    /// Cell states c_0..c_L (LSTM only; empty for GRU).
    cs: Vec<Array2<f64>>,
    final_h: Array2<f64>,
}

fn run_direction(kind: CellKind, params: &CellParams, steps: &[Array2<f64>]) -> DirectionTrace {
    let b = steps[0].nrows();
    let h_dim = params.gates[0].w.nrows();
    let mut hs = vec![Array2::zeros((b, h_dim))];
    let mut cs = vec![Array2::zeros((b, h_dim))];
    let mut gates = Vec::with_capacity(steps.len());
    for x in steps {
        let h_prev = hs.last().unwrap().clone();
        let pre = |g: &GateBlock, hin: &Array2<f64>| x.dot(&g.u) + hin.dot(&g.w) + &g.b;
        match kind {
            CellKind::Lstm | CellKind::BiLstm => {
                let c_prev = cs.last().unwrap().clone();
                let f = pre(&params.gates[0], &h_prev).mapv(sigmoid);
                let i = pre(&params.gates[1], &h_prev).mapv(sigmoid);
                let cand = pre(&params.gates[2], &h_prev).mapv(f64::tanh);
                let o = pre(&params.gates[3], &h_prev).mapv(sigmoid);
                let c = &f * &c_prev + &i * &cand;
                let h = c.mapv(f64::tanh) * &o;
                gates.push(vec![f, i, cand, o]);
                cs.push(c);
                hs.push(h);
            }
            CellKind::Gru => {
                let z = pre(&params.gates[0], &h_prev).mapv(sigmoid);
                let r = pre(&params.gates[1], &h_prev).mapv(sigmoid);
                let gated = &r * &h_prev;
                let cand = (x.dot(&params.gates[2].u) + gated.dot(&params.gates[2].w)
                    + &params.gates[2].b)
                    .mapv(f64::tanh);
                let h = (1.0 - &z) * &h_prev + &z * &cand;
                gates.push(vec![z, r, cand]);
                hs.push(h);
            }
        }
    }
    DirectionTrace {
        final_h: hs.last().unwrap().clone(),
        gates,
        hs,
        cs,
    }
}

struct CellGrads {
    gates: Vec<(Array2<f64>, Array2<f64>, Array1<f64>)>, // (dU, dW, db)
}

/// BPTT through one direction. `d_final` is the loss gradient w.r.t. the
/// direction's final hidden state.
fn backward_direction(
    kind: CellKind,
    params: &CellParams,
    steps: &[Array2<f64>],
    trace: &DirectionTrace,
    d_final: &Array2<f64>,
) -> CellGrads {
    let h_dim = params.gates[0].w.nrows();
    let d = steps[0].ncols();
    let mut grads: Vec<(Array2<f64>, Array2<f64>, Array1<f64>)> = (0..kind.gate_count())
        .map(|_| {
            (
                Array2::zeros((d, h_dim)),
                Array2::zeros((h_dim, h_dim)),
                Array1::zeros(h_dim),
            )
        })
        .collect();

    let mut dh = d_final.clone();
    let mut dc: Array2<f64> = Array2::zeros(d_final.raw_dim());
    for t in (0..steps.len()).rev() {
        let x = &steps[t];
        let h_prev = &trace.hs[t];
        match kind {
            CellKind::Lstm | CellKind::BiLstm => {
                let [f, i, cand, o] = &trace.gates[t][..] else {
                    unreachable!()
                };
                let c = &trace.cs[t + 1];
                let c_prev = &trace.cs[t];
                let tanh_c = c.mapv(f64::tanh);
                let d_o = &dh * &tanh_c;
                dc = dc + &dh * o * tanh_c.mapv(|v| 1.0 - v * v);
                let d_f = &dc * c_prev;
                let d_i = &dc * cand;
                let d_cand = &dc * i;
                let dz_f = d_f * f * &f.mapv(|v| 1.0 - v);
                let dz_i = d_i * i * &i.mapv(|v| 1.0 - v);
                let dz_c = d_cand * &cand.mapv(|v| 1.0 - v * v);
                let dz_o = d_o * o * &o.mapv(|v| 1.0 - v);
                let mut dh_prev: Array2<f64> = Array2::zeros(dh.raw_dim());
                for (g, dz) in [&dz_f, &dz_i, &dz_c, &dz_o].into_iter().enumerate() {
                    grads[g].0 = &grads[g].0 + x.t().dot(dz);
                    grads[g].1 = &grads[g].1 + h_prev.t().dot(dz);
                    grads[g].2 = &grads[g].2 + dz.sum_axis(Axis(0));
                    dh_prev = dh_prev + dz.dot(&params.gates[g].w.t());
                }
                dc = &dc * f;
                dh = dh_prev;
            }
            CellKind::Gru => {
                let [z, r, cand] = &trace.gates[t][..] else {
                    unreachable!()
                };
                let d_z = &dh * &(cand - h_prev);
                let d_cand = &dh * z;
                let mut dh_prev = &dh * &z.mapv(|v| 1.0 - v);
                let dz_c = d_cand * &cand.mapv(|v| 1.0 - v * v);
                let gated = r * h_prev;
                grads[2].0 = &grads[2].0 + x.t().dot(&dz_c);
                grads[2].1 = &grads[2].1 + gated.t().dot(&dz_c);
                grads[2].2 = &grads[2].2 + dz_c.sum_axis(Axis(0));
                let d_gated = dz_c.dot(&params.gates[2].w.t());
                let d_r = &d_gated * h_prev;
                dh_prev = dh_prev + &d_gated * r;
                let dz_z = d_z * z * &z.mapv(|v| 1.0 - v);
                let dz_r = d_r * r * &r.mapv(|v| 1.0 - v);
                for (g, dz) in [(0usize, &dz_z), (1, &dz_r)] {
                    grads[g].0 = &grads[g].0 + x.t().dot(dz);
                    grads[g].1 = &grads[g].1 + h_prev.t().dot(dz);
                    grads[g].2 = &grads[g].2 + dz.sum_axis(Axis(0));
                    dh_prev = dh_prev + dz.dot(&params.gates[g].w.t());
                }
                dh = dh_prev;
            }
        }
    }
    CellGrads { gates: grads }
}

/// Batch scores and the traces needed for the backward pass.
fn forward_batch(
    model: &RecurrentModel,
    steps: &[Array2<f64>],
) -> (Array1<f64>, DirectionTrace, Option<DirectionTrace>) {
    let fwd = run_direction(model.cell, &model.forward_cell, steps);
    let bwd = model.backward_cell.as_ref().map(|back| {
        let mut reversed: Vec<Array2<f64>> = steps.to_vec();
        reversed.reverse();
        run_direction(model.cell, back, &reversed)
    });
    let b = steps[0].nrows();
    let h = model.hidden;
    let mut z = Array1::zeros(b);
    for row in 0..b {
        let mut acc = model.readout_b;
        for k in 0..h {
            acc += model.readout_w[k] * fwd.final_h[[row, k]];
        }
        if let Some(back) = &bwd {
            for k in 0..h {
                acc += model.readout_w[h + k] * back.final_h[[row, k]];
            }
        }
        z[row] = acc;
    }
    (z, fwd, bwd)
}

/// Mean loss over windows under the model's head.
pub fn seq_loss(model: &RecurrentModel, windows: &[Vec<Vec<f64>>], ys: &[f64]) -> Result<f64> {
    let steps = windows_to_steps(windows, model.input_dim)?;
    let (z, _, _) = forward_batch(model, &steps);
    let n = ys.len() as f64;
    Ok(match model.head {
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
    })
}

fn backward_batch(
    model: &RecurrentModel,
    windows: &[Vec<Vec<f64>>],
    ys: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let steps = windows_to_steps(windows, model.input_dim)?;
    let (z, fwd, bwd) = forward_batch(model, &steps);
    let n = ys.len() as f64;
    let (delta, loss): (Vec<f64>, f64) = match model.head {
        Head::Logistic => {
            let probs: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
            let loss = probs
                .iter()
                .zip(ys)
                .map(|(&p, &y)| {
                    let p = p.clamp(1e-12, 1.0 - 1e-12);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n;
            (probs.iter().zip(ys).map(|(&p, &y)| (p - y) / n).collect(), loss)
        }
        Head::Affine => {
            let loss = z
                .iter()
                .zip(ys)
                .map(|(&z, &y)| 0.5 * (z - y) * (z - y))
                .sum::<f64>()
                / n;
            (z.iter().zip(ys).map(|(&z, &y)| (z - y) / n).collect(), loss)
        }
    };

    let b = windows.len();
    let h = model.hidden;
    // readout gradients
    let mut grad_w = Array1::<f64>::zeros(model.readout_w.len());
    let mut grad_b = 0.0;
    for (row, &e) in delta.iter().enumerate() {
        grad_b += e;
        for k in 0..h {
            grad_w[k] += e * fwd.final_h[[row, k]];
        }
        if let Some(back) = &bwd {
            for k in 0..h {
                grad_w[h + k] += e * back.final_h[[row, k]];
            }
        }
    }

    // gradient flowing into each direction's final hidden state
    let mut d_final_f = Array2::zeros((b, h));
    for (row, &e) in delta.iter().enumerate() {
        for k in 0..h {
            d_final_f[[row, k]] = e * model.readout_w[k];
        }
    }
    let fwd_grads = backward_direction(model.cell, &model.forward_cell, &steps, &fwd, &d_final_f);

    let bwd_grads = model.backward_cell.as_ref().map(|back| {
        let mut reversed: Vec<Array2<f64>> = steps.clone();
        reversed.reverse();
        let mut d_final_b = Array2::zeros((b, h));
        for (row, &e) in delta.iter().enumerate() {
            for k in 0..h {
                d_final_b[[row, k]] = e * model.readout_w[h + k];
            }
        }
        backward_direction(model.cell, back, &reversed, bwd.as_ref().unwrap(), &d_final_b)
    });

    let mut flat = Vec::new();
    let mut push_grads = |g: &CellGrads| {
        for (du, dw, db) in &g.gates {
            flat.extend(du.iter());
            flat.extend(dw.iter());
            flat.extend(db.iter());
        }
    };
    push_grads(&fwd_grads);
    if let Some(g) = &bwd_grads {
        push_grads(g);
    }
    flat.extend(grad_w.iter());
    flat.push(grad_b);
    Ok((flat, loss))
}

/// Analytic gradient of `seq_loss` in `to_flat` order.
pub fn seq_gradient_flat(
    model: &RecurrentModel,
    windows: &[Vec<Vec<f64>>],
    ys: &[f64],
) -> Result<Vec<f64>> {
    Ok(backward_batch(model, windows, ys)?.0)
}

#[derive(Debug, Clone)]
pub struct RecurrentFit {
    pub model: RecurrentModel,
    pub loss_trace: Vec<f64>,
}

/// Full-batch BPTT over the training windows.
#[allow(clippy::too_many_arguments)]
pub fn fit_recurrent(
    sequences: &[(Vec<Vec<f64>>, f64)],
    cell: CellKind,
    hidden: usize,
    epochs: usize,
    lr: f64,
    init_seed: u64,
    head: Head,
    use_biases: bool,
) -> Result<RecurrentFit> {
    if sequences.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    let seq_len = sequences[0].0.len();
    let input_dim = sequences[0].0[0].len();
    if head == Head::Logistic {
        for (_, y) in sequences {
            if *y != 0.0 && *y != 1.0 {
                return Err(Error::NonBinaryLabels(*y));
            }
        }
    }
    let windows: Vec<Vec<Vec<f64>>> = sequences.iter().map(|(w, _)| w.clone()).collect();
    let ys: Vec<f64> = sequences.iter().map(|(_, y)| *y).collect();

    let mut model =
        RecurrentModel::init(cell, input_dim, hidden, seq_len, head, use_biases, init_seed);
    let mut loss_trace = Vec::with_capacity(epochs);
    let mut prev_loss = f64::INFINITY;
    for _ in 0..epochs {
        let (grad, loss) = backward_batch(&model, &windows, &ys)?;
        apply_step(&mut model, &grad, lr);
        loss_trace.push(loss);
        if (prev_loss - loss).abs() < EARLY_STOP_TOL {
            break;
        }
        prev_loss = loss;
    }
    Ok(RecurrentFit { model, loss_trace })
}

fn apply_step(model: &mut RecurrentModel, grad: &[f64], lr: f64) {
    let use_biases = model.use_biases;
    let mut it = grad.iter();
    let mut step_cell = |params: &mut CellParams| {
        for gate in &mut params.gates {
            for v in gate.u.iter_mut() {
                *v -= lr * it.next().unwrap();
            }
            for v in gate.w.iter_mut() {
                *v -= lr * it.next().unwrap();
            }
            for v in gate.b.iter_mut() {
                let g = it.next().unwrap();
                if use_biases {
                    *v -= lr * g;
                }
            }
        }
    };
    step_cell(&mut model.forward_cell);
    if let Some(back) = &mut model.backward_cell {
        step_cell(back);
    }
    for v in model.readout_w.iter_mut() {
        *v -= lr * it.next().unwrap();
    }
    model.readout_b -= lr * it.next().unwrap();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::matrix_dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_count_and_overlap() {
        let mut ds = matrix_dataset(&(0..10).map(|i| vec![i as f64]).collect::<Vec<_>>());
        ds.targets = Some((0..10).map(|i| i as f64 * 0.1).collect());
        let seqs = make_sequences(&ds, 3).unwrap();
        assert_eq!(seqs.len(), 8);
        // window i ends at row i+L-1 and takes that row's target
        assert_eq!(seqs[0].0, vec![vec![0.0], vec![1.0], vec![2.0]]);
        assert!((seqs[0].1 - 0.2).abs() < 1e-12);
        // consecutive windows share L-1 rows
        assert_eq!(seqs[0].0[1..], seqs[1].0[..2]);
    }

    #[test]
    fn length_one_windows_are_per_row() {
        let mut ds = matrix_dataset(&[vec![5.0], vec![6.0]]);
        ds.targets = Some(vec![0.5, 0.6]);
        let seqs = make_sequences(&ds, 1).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[1].0, vec![vec![6.0]]);
    }

    #[test]
    fn short_dataset_is_rejected() {
        let mut ds = matrix_dataset(&[vec![1.0], vec![2.0]]);
        ds.targets = Some(vec![0.0, 1.0]);
        assert!(make_sequences(&ds, 5).is_err());
    }

    #[test]
    fn zero_parameter_lstm_step() {
        let params = zero_cell(CellKind::Lstm, 2, 3);
        let (h, c) = cell_step(CellKind::Lstm, &params, &[1.0, -2.0], &[0.0; 3], &[0.0; 3]);
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn forget_gate_halves_carried_cell() {
        let params = zero_cell(CellKind::Lstm, 2, 3);
        let prev_c = [0.4, -1.0, 2.0];
        let (_, c) = cell_step(CellKind::Lstm, &params, &[1.0, 1.0], &[0.0; 3], &prev_c);
        for (got, want) in c.iter().zip(prev_c.iter().map(|v| 0.5 * v)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_single_unit_lstm_trace() {
        let mut params = zero_cell(CellKind::Lstm, 1, 1);
        let vals = [
            (0.3, 0.1, 0.05), // forget: u, w, b
            (0.5, -0.2, 0.0), // input
            (0.9, 0.4, -0.1), // candidate
            (0.7, 0.2, 0.1),  // output
        ];
        for (gate, (u, w, b)) in params.gates.iter_mut().zip(vals) {
            gate.u[[0, 0]] = u;
            gate.w[[0, 0]] = w;
            gate.b[0] = b;
        }
        let x = 0.8;
        let h0 = 0.2;
        let c0 = -0.3;
        let f = sigmoid(0.3 * x + 0.1 * h0 + 0.05);
        let i = sigmoid(0.5 * x - 0.2 * h0);
        let cand = (0.9 * x + 0.4 * h0 - 0.1).tanh();
        let c1 = f * c0 + i * cand;
        let o = sigmoid(0.7 * x + 0.2 * h0 + 0.1);
        let h1 = c1.tanh() * o;
        let (h, c) = cell_step(CellKind::Lstm, &params, &[x], &[h0], &[c0]);
        assert!((h[0] - h1).abs() < 1e-12);
        assert!((c[0] - c1).abs() < 1e-12);
    }

    #[test]
    fn gru_has_fewer_parameters_than_lstm() {
        let lstm = RecurrentModel::init(CellKind::Lstm, 5, 4, 3, Head::Affine, true, 0);
        let gru = RecurrentModel::init(CellKind::Gru, 5, 4, 3, Head::Affine, true, 0);
        assert!(gru.param_count() < lstm.param_count());
    }

    #[test]
    fn fixed_seed_reproduces_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seqs: Vec<(Vec<Vec<f64>>, f64)> = (0..10)
            .map(|_| {
                let w: Vec<Vec<f64>> = (0..3)
                    .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
                    .collect();
                (w, rng.random::<f64>())
            })
            .collect();
        let a = fit_recurrent(&seqs, CellKind::Gru, 3, 20, 0.05, 46, Head::Affine, true).unwrap();
        let b = fit_recurrent(&seqs, CellKind::Gru, 3, 20, 0.05, 46, Head::Affine, true).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn flat_round_trip() {
        for cell in [CellKind::Lstm, CellKind::Gru, CellKind::BiLstm] {
            let m = RecurrentModel::init(cell, 3, 2, 4, Head::Logistic, true, 5);
            let back =
                RecurrentModel::from_flat(cell, 3, 2, 4, Head::Logistic, true, &m.to_flat())
                    .unwrap();
            assert_eq!(m, back);
        }
    }

    fn fd_check(cell: CellKind, head: Head, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, l, n) = (2usize, 2usize, 3usize, 4usize);
        let windows: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| {
                (0..l)
                    .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                    .collect()
            })
            .collect();
        let ys: Vec<f64> = (0..n)
            .map(|_| match head {
                Head::Logistic => f64::from(rng.random::<f64>() > 0.5),
                Head::Affine => rng.random::<f64>() * 2.0 - 1.0,
            })
            .collect();
        let model = RecurrentModel::init(cell, d, h, l, head, true, seed ^ 0x55);
        let analytic = seq_gradient_flat(&model, &windows, &ys).unwrap();
        let flat = model.to_flat();
        let step = 1e-5;
        let mut max_rel = 0.0f64;
        for p in 0..flat.len() {
            let mut plus = flat.clone();
            plus[p] += step;
            let mut minus = flat.clone();
            minus[p] -= step;
            let lp = seq_loss(
                &RecurrentModel::from_flat(cell, d, h, l, head, true, &plus).unwrap(),
                &windows,
                &ys,
            )
            .unwrap();
            let lm = seq_loss(
                &RecurrentModel::from_flat(cell, d, h, l, head, true, &minus).unwrap(),
                &windows,
                &ys,
            )
            .unwrap();
            let numeric = (lp - lm) / (2.0 * step);
            let rel = (numeric - analytic[p]).abs() / (numeric.abs() + analytic[p].abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        max_rel
    }

    #[test]
    fn bptt_gradients_match_finite_differences() {
        for (cell, head, seed) in [
            (CellKind::Lstm, Head::Logistic, 2u64),
            (CellKind::Lstm, Head::Affine, 3),
            (CellKind::Gru, Head::Logistic, 4),
            (CellKind::Gru, Head::Affine, 5),
            (CellKind::BiLstm, Head::Affine, 6),
        ] {
            let err = fd_check(cell, head, seed);
            assert!(err < 1e-4, "{cell} rel err {err}");
        }
    }

    #[test]
    fn gates_stay_in_open_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = init_cell(CellKind::Lstm, 3, 4, &mut rng);
        let steps =
            windows_to_steps(&[(0..5).map(|_| vec![2.0, -3.0, 0.5]).collect()], 3).unwrap();
        let trace = run_direction(CellKind::Lstm, &params, &steps);
        for step_gates in &trace.gates {
            for (g, act) in step_gates.iter().enumerate() {
                for &v in act.iter() {
                    if g == 2 {
                        assert!(v > -1.0 && v < 1.0); // candidate
                    } else {
                        assert!(v > 0.0 && v < 1.0); // sigmoid gates
                    }
                }
            }
        }
        for h in &trace.hs {
            for &v in h.iter() {
                assert!(v > -1.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn palindrome_with_tied_directions_is_symmetric() {
        let mut model = RecurrentModel::init(CellKind::BiLstm, 2, 3, 3, Head::Affine, true, 9);
        model.backward_cell = Some(model.forward_cell.clone());
        let palindrome = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![1.0, 2.0]];
        let steps = windows_to_steps(&[palindrome.clone()], 2).unwrap();
        let fwd = run_direction(model.cell, &model.forward_cell, &steps);
        let mut reversed = steps.clone();
        reversed.reverse();
        let bwd = run_direction(model.cell, model.backward_cell.as_ref().unwrap(), &reversed);
        for (a, b) in fwd.final_h.iter().zip(bwd.final_h.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn small_lr_loss_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seqs: Vec<(Vec<Vec<f64>>, f64)> = (0..20)
            .map(|_| {
                let w: Vec<Vec<f64>> = (0..4)
                    .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
                    .collect();
                let y = w.iter().map(|r| r[0]).sum::<f64>() / 4.0;
                (w, y)
            })
            .collect();
        let fit =
            fit_recurrent(&seqs, CellKind::Lstm, 2, 150, 1e-3, 7, Head::Affine, true).unwrap();
        for pair in fit.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss increased: {pair:?}");
        }
    }
}
