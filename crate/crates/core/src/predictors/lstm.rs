//! Single-layer LSTM over the stress curve, one scalar per time step.
//!
//! Gate blocks are ordered input, forget, cell, output along the `4H`
//! columns. The final hidden state, joined with any non-sequence input
//! columns, feeds a dense head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetTraining, PredictorError};
use crate::nnet::matrix::gemm;
use crate::nnet::{CustomOp, Forward, Matrix, Mode, Model, NnError, ParamStore, Tape, Var};

const SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub hidden: usize,
    pub head_widths: Vec<usize>,
    pub training: NetTraining,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            head_widths: vec![32],
            training: NetTraining {
                epochs: 60,
                patience: 10,
                ..NetTraining::default()
            },
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Per-step activations kept for backpropagation through time.
struct StepCache {
    /// Activated gates (B x 4H).
    gates: Matrix,
    /// Cell state after the step (B x H).
    c: Matrix,
    /// Hidden state after the step (B x H).
    h: Matrix,
}

/// Whole-sequence recurrence. Inputs: `x` (B x T), `wx` (1 x 4H),
/// `wh` (H x 4H), `b` (1 x 4H). Output: final hidden state (B x H).
pub struct LstmOp {
    hidden: usize,
    cache: Vec<StepCache>,
}

impl LstmOp {
    pub fn forward(hidden: usize, x: &Matrix, wx: &Matrix, wh: &Matrix, b: &Matrix) -> (Matrix, LstmOp) {
        let (bsz, steps) = x.shape();
        let h4 = 4 * hidden;
        let mut h = Matrix::zeros(bsz, hidden);
        let mut c = Matrix::zeros(bsz, hidden);
        let mut cache = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut z = Matrix::zeros(bsz, h4);
            for r in 0..bsz {
                let xt = x.get(r, t);
                for ((zv, w), bias) in z.row_mut(r).iter_mut().zip(wx.data()).zip(b.data()) {
                    *zv = xt * w + bias;
                }
            }
            gemm(&h, false, wh, false, &mut z, 1.0, 1.0);
            let mut c_new = Matrix::zeros(bsz, hidden);
            let mut h_new = Matrix::zeros(bsz, hidden);
            for r in 0..bsz {
                let zr = z.row_mut(r);
                for (j, v) in zr.iter_mut().enumerate() {
                    *v = if j / hidden == 2 { v.tanh() } else { sigmoid(*v) };
                }
                for j in 0..hidden {
                    let (i, f, g, o) = (zr[j], zr[hidden + j], zr[2 * hidden + j], zr[3 * hidden + j]);
                    let cv = f * c.get(r, j) + i * g;
                    c_new.set(r, j, cv);
                    h_new.set(r, j, o * cv.tanh());
                }
            }
            c = c_new.clone();
            h = h_new.clone();
            cache.push(StepCache {
                gates: z,
                c: c_new,
                h: h_new,
            });
        }
        let op = LstmOp {
            hidden,
            cache,
        };
        (h, op)
    }
}

impl CustomOp for LstmOp {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, grad: &Matrix) -> Vec<Option<Matrix>> {
        let (x, wx, wh) = (inputs[0], inputs[1], inputs[2]);
        let hd = self.hidden;
        let (bsz, steps) = x.shape();
        let cache = &self.cache;
        let mut dx = Matrix::zeros(bsz, steps);
        let mut dwx = Matrix::zeros(1, 4 * hd);
        let mut dwh = Matrix::zeros(hd, 4 * hd);
        let mut db = Matrix::zeros(1, 4 * hd);
        let mut dh = grad.clone();
        let mut dc = Matrix::zeros(bsz, hd);
        let zeros = Matrix::zeros(bsz, hd);
        let mut dz = Matrix::zeros(bsz, 4 * hd);
        for t in (0..steps).rev() {
            let step = &cache[t];
            let (c_prev, h_prev) = if t == 0 {
                (&zeros, &zeros)
            } else {
                (&cache[t - 1].c, &cache[t - 1].h)
            };
            for r in 0..bsz {
                let gr = step.gates.row(r);
                let dzr = dz.row_mut(r);
                for j in 0..hd {
                    let (i, f, g, o) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
                    let tc = step.c.get(r, j).tanh();
                    let dhv = dh.get(r, j);
                    let dcv = dc.get(r, j) + dhv * o * (1.0 - tc * tc);
                    dzr[j] = dcv * g * i * (1.0 - i);
                    dzr[hd + j] = dcv * c_prev.get(r, j) * f * (1.0 - f);
                    dzr[2 * hd + j] = dcv * i * (1.0 - g * g);
                    dzr[3 * hd + j] = dhv * tc * o * (1.0 - o);
                    dc.set(r, j, dcv * f);
                }
                let xt = x.get(r, t);
                let mut dxt = 0.0;
                for (k, &v) in dzr.iter().enumerate() {
                    dwx.data_mut()[k] += xt * v;
                    db.data_mut()[k] += v;
                    dxt += v * wx.data()[k];
                }
                dx.set(r, t, dxt);
            }
            gemm(h_prev, true, &dz, false, &mut dwh, 1.0, 1.0);
            gemm(&dz, false, wh, true, &mut dh, 1.0, 0.0);
        }
        vec![Some(dx), Some(dwx), Some(dwh), Some(db)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    seq_len: usize,
    n_extra: usize,
    hidden: usize,
    wx: usize,
    wh: usize,
    b: usize,
    head: Vec<(usize, usize)>,
    params: ParamStore,
    output_width: usize,
}

impl LstmModel {
    /// Recurrent weights are `U(-1/sqrt(H), 1/sqrt(H))`; biases are zero
    /// except the forget gate's, which start at one.
    pub fn new(
        seq_len: usize,
        n_extra: usize,
        output_width: usize,
        config: &LstmConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, PredictorError> {
        let hd = config.hidden;
        if hd == 0 || seq_len == 0 {
            return Err(PredictorError::Config("lstm: hidden size and sequence length must be positive".into()));
        }
        let bound = 1.0 / (hd as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let mut params = ParamStore::new();
        let wx = params.push(Matrix::from_vec(1, 4 * hd, draw(4 * hd))?);
        let wh = params.push(Matrix::from_vec(hd, 4 * hd, draw(hd * 4 * hd))?);
        let mut bias = vec![0.0; 4 * hd];
        bias[hd..2 * hd].iter_mut().for_each(|v| *v = 1.0);
        let b = params.push(Matrix::row_vector(bias));
        let mut width = hd + n_extra;
        let mut head = Vec::new();
        for &out in config.head_widths.iter().chain(std::iter::once(&output_width)) {
            if out == 0 {
                return Err(PredictorError::Config("lstm: head widths must be positive".into()));
            }
            let hb = (6.0 / width as f64).sqrt();
            let data = (0..width * out).map(|_| rng.random_range(-hb..hb)).collect();
            let w = params.push(Matrix::from_vec(width, out, data)?);
            let bb = params.push(Matrix::zeros(1, out));
            head.push((w, bb));
            width = out;
        }
        Ok(Self {
            seq_len,
            n_extra,
            hidden: hd,
            wx,
            wh,
            b,
            head,
            params,
            output_width,
        })
    }
}

impl Model for LstmModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn input_width(&self) -> usize {
        self.seq_len + self.n_extra
    }

    fn output_width(&self) -> usize {
        self.output_width
    }

    fn forward_tape(&self, tape: &mut Tape, x: Var, _mode: Mode, _rng: &mut ChaCha8Rng) -> Result<Forward, NnError> {
        let seq = tape.slice_cols(x, 0, self.seq_len)?;
        let wx = tape.param(&self.params, self.wx);
        let wh = tape.param(&self.params, self.wh);
        let b = tape.param(&self.params, self.b);
        let (value, op) = LstmOp::forward(self.hidden, tape.value(seq), tape.value(wx), tape.value(wh), tape.value(b));
        let mut h = tape.custom(&[seq, wx, wh, b], value, Box::new(op));
        if self.n_extra > 0 {
            let extra = tape.slice_cols(x, self.seq_len, self.seq_len + self.n_extra)?;
            h = tape.concat_cols(h, extra)?;
        }
        for (i, &(w, b)) in self.head.iter().enumerate() {
            let (w, b) = (tape.param(&self.params, w), tape.param(&self.params, b));
            h = tape.linear(h, w, b)?;
            if i + 1 < self.head.len() {
                h = tape.leaky_relu(h, SLOPE);
            }
        }
        Ok(Forward {
            output: h,
            batch_stats: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn single_step_hand_example() {
        // H = 1, all weights zero, biases zero: i = f = o = 0.5, g = 0,
        // so c = 0 and h = 0.
        let x = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        let (h, _) = LstmOp::forward(1, &x, &Matrix::zeros(1, 4), &Matrix::zeros(1, 4), &Matrix::zeros(1, 4));
        assert_eq!(h.item(), 0.0);
        // Cell-gate weight 1: g = tanh(3), c = 0.5 tanh(3), h = 0.5 tanh(c).
        let wx = Matrix::row_vector(vec![0.0, 0.0, 1.0, 0.0]);
        let (h, _) = LstmOp::forward(1, &x, &wx, &Matrix::zeros(1, 4), &Matrix::zeros(1, 4));
        let c = 0.5 * 3f64.tanh();
        assert!((h.item() - 0.5 * c.tanh()).abs() < 1e-15);
    }

    #[test]
    fn model_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = LstmConfig {
            hidden: 4,
            ..LstmConfig::default()
        };
        let m = LstmModel::new(10, 2, 4, &cfg, &mut rng).unwrap();
        assert_eq!(crate::nnet::predict(&m, &Matrix::zeros(5, 12)).unwrap().shape(), (5, 4));
    }
}
