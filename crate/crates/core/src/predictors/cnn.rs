//! One-dimensional convolutional regressor over the stress curve.
//!
//! Activations of a convolutional stage are stored channel-major per row:
//! column `c * len + t` holds channel `c` at position `t`. Input columns
//! past the sequence (strength feature, auxiliary features) bypass the
//! convolutions and join the flattened features before the dense head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetTraining, PredictorError};
use crate::nnet::matrix::gemm;
use crate::nnet::{CustomOp, Forward, Matrix, Mode, Model, NnError, ParamStore, Tape, Var};

const SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pool: usize,
    pub head_widths: Vec<usize>,
    pub training: NetTraining,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16],
            kernels: vec![7, 5],
            pool: 2,
            head_widths: vec![64],
            training: NetTraining::default(),
        }
    }
}

/// Valid (unpadded) stride-1 convolution. Inputs: `x` (B x cin*len),
/// `w` (cout x cin*k), `b` (1 x cout).
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub len: usize,
    pub k: usize,
}

impl Conv1d {
    pub fn out_len(&self) -> usize {
        self.len + 1 - self.k
    }

    /// Column matrix (cin*k x out_len) of one input row.
    fn columns(&self, row: &[f64]) -> Matrix {
        let lo = self.out_len();
        let mut cols = Matrix::zeros(self.cin * self.k, lo);
        for ci in 0..self.cin {
            for j in 0..self.k {
                let src = &row[ci * self.len + j..ci * self.len + j + lo];
                cols.row_mut(ci * self.k + j).copy_from_slice(src);
            }
        }
        cols
    }

    pub fn forward(&self, x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
        let lo = self.out_len();
        let mut out = Matrix::zeros(x.rows(), self.cout * lo);
        let mut y = Matrix::zeros(self.cout, lo);
        for r in 0..x.rows() {
            let cols = self.columns(x.row(r));
            gemm(w, false, &cols, false, &mut y, 1.0, 0.0);
            let dst = out.row_mut(r);
            for co in 0..self.cout {
                let bias = b.data()[co];
                for (d, v) in dst[co * lo..(co + 1) * lo].iter_mut().zip(y.row(co)) {
                    *d = v + bias;
                }
            }
        }
        out
    }
}

impl CustomOp for Conv1d {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, grad: &Matrix) -> Vec<Option<Matrix>> {
        let (x, w) = (inputs[0], inputs[1]);
        let lo = self.out_len();
        let mut dx = Matrix::zeros(x.rows(), x.cols());
        let mut dw = Matrix::zeros(w.rows(), w.cols());
        let mut db = Matrix::zeros(1, self.cout);
        let mut dcols = Matrix::zeros(self.cin * self.k, lo);
        for r in 0..x.rows() {
            let g = Matrix::from_vec(self.cout, lo, grad.row(r).to_vec()).expect("gradient row shape");
            let cols = self.columns(x.row(r));
            gemm(&g, false, &cols, true, &mut dw, 1.0, 1.0);
            for co in 0..self.cout {
                db.data_mut()[co] += g.row(co).iter().sum::<f64>();
            }
            gemm(w, true, &g, false, &mut dcols, 1.0, 0.0);
            let dst = dx.row_mut(r);
            for ci in 0..self.cin {
                for j in 0..self.k {
                    let base = ci * self.len + j;
                    for (d, v) in dst[base..base + lo].iter_mut().zip(dcols.row(ci * self.k + j)) {
                        *d += v;
                    }
                }
            }
        }
        vec![Some(dx), Some(dw), Some(db)]
    }
}

/// Non-overlapping max pooling per channel; a trailing partial window is
/// dropped and equal values resolve to the first position.
#[derive(Clone, Debug)]
pub struct MaxPool {
    pub channels: usize,
    pub len: usize,
    pub size: usize,
    argmax: Vec<usize>,
}

impl MaxPool {
    pub fn out_len(&self) -> usize {
        self.len / self.size
    }

    pub fn apply(channels: usize, len: usize, size: usize, x: &Matrix) -> (Matrix, MaxPool) {
        let lo = len / size;
        let mut out = Matrix::zeros(x.rows(), channels * lo);
        let mut argmax = Vec::with_capacity(x.rows() * channels * lo);
        for r in 0..x.rows() {
            let row = x.row(r);
            for c in 0..channels {
                for t in 0..lo {
                    let start = c * len + t * size;
                    let mut best = start;
                    for k in start + 1..start + size {
                        if row[k] > row[best] {
                            best = k;
                        }
                    }
                    out.set(r, c * lo + t, row[best]);
                    argmax.push(best);
                }
            }
        }
        let op = MaxPool {
            channels,
            len,
            size,
            argmax,
        };
        (out, op)
    }
}

impl CustomOp for MaxPool {
    fn name(&self) -> &'static str {
        "max_pool"
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, grad: &Matrix) -> Vec<Option<Matrix>> {
        let x = inputs[0];
        let mut dx = Matrix::zeros(x.rows(), x.cols());
        let per_row = grad.cols();
        for r in 0..grad.rows() {
            for (k, g) in grad.row(r).iter().enumerate() {
                let src = self.argmax[r * per_row + k];
                let v = dx.get(r, src);
                dx.set(r, src, v + g);
            }
        }
        vec![Some(dx)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ConvStage {
    cin: usize,
    cout: usize,
    len: usize,
    k: usize,
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    seq_len: usize,
    n_extra: usize,
    pool: usize,
    stages: Vec<ConvStage>,
    /// (weight, bias) ids of the dense head, output layer last.
    head: Vec<(usize, usize)>,
    params: ParamStore,
    output_width: usize,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = (6.0 / fan_in as f64).sqrt();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect()).expect("shape")
}

impl CnnModel {
    pub fn new(
        seq_len: usize,
        n_extra: usize,
        output_width: usize,
        config: &CnnConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, PredictorError> {
        if config.channels.len() != config.kernels.len() || config.channels.is_empty() {
            return Err(PredictorError::Config("cnn: channels and kernels must be non-empty and of equal length".into()));
        }
        if config.pool == 0 {
            return Err(PredictorError::Config("cnn: pool size must be at least 1".into()));
        }
        let mut params = ParamStore::new();
        let mut stages = Vec::new();
        let (mut cin, mut len) = (1, seq_len);
        for (&cout, &k) in config.channels.iter().zip(&config.kernels) {
            if cout == 0 || k == 0 || k > len || (len + 1 - k) / config.pool == 0 {
                return Err(PredictorError::Config(format!(
                    "cnn: stage with {cout} channels and kernel {k} does not fit a sequence of length {len}"
                )));
            }
            let w = params.push(uniform(rng, cout, cin * k, cin * k));
            let b = params.push(Matrix::zeros(1, cout));
            stages.push(ConvStage { cin, cout, len, k, w, b });
            cin = cout;
            len = (len + 1 - k) / config.pool;
        }
        let mut width = cin * len + n_extra;
        let mut head = Vec::new();
        for &out in config.head_widths.iter().chain(std::iter::once(&output_width)) {
            if out == 0 {
                return Err(PredictorError::Config("cnn: head widths must be positive".into()));
            }
            let w = params.push(uniform(rng, width, out, width));
            let b = params.push(Matrix::zeros(1, out));
            head.push((w, b));
            width = out;
        }
        Ok(Self {
            seq_len,
            n_extra,
            pool: config.pool,
            stages,
            head,
            params,
            output_width,
        })
    }
}

impl Model for CnnModel {
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
        let mut h = tape.slice_cols(x, 0, self.seq_len)?;
        for s in &self.stages {
            let w = tape.param(&self.params, s.w);
            let b = tape.param(&self.params, s.b);
            let conv = Conv1d {
                cin: s.cin,
                cout: s.cout,
                len: s.len,
                k: s.k,
            };
            let value = conv.forward(tape.value(h), tape.value(w), tape.value(b));
            h = tape.custom(&[h, w, b], value, Box::new(conv));
            h = tape.leaky_relu(h, SLOPE);
            let (value, pool) = MaxPool::apply(s.cout, conv.out_len(), self.pool, tape.value(h));
            h = tape.custom(&[h], value, Box::new(pool));
        }
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
    fn conv_hand_example() {
        let conv = Conv1d {
            cin: 1,
            cout: 1,
            len: 4,
            k: 2,
        };
        let x = Matrix::row_vector(vec![1.0, 2.0, 3.0, 4.0]);
        let w = Matrix::row_vector(vec![1.0, -1.0]);
        let b = Matrix::scalar(0.5);
        assert_eq!(conv.forward(&x, &w, &b).data(), &[-0.5, -0.5, -0.5]);
    }

    #[test]
    fn pooling_takes_the_first_maximum() {
        let x = Matrix::row_vector(vec![1.0, 1.0, 0.0, 3.0, 9.0]);
        let (out, op) = MaxPool::apply(1, 5, 2, &x);
        assert_eq!(out.data(), &[1.0, 3.0]);
        assert_eq!(op.argmax, vec![0, 3]);
    }

    #[test]
    fn model_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = CnnModel::new(100, 1, 4, &CnnConfig::default(), &mut rng).unwrap();
        assert_eq!(m.input_width(), 101);
        let x = Matrix::zeros(3, 101);
        assert_eq!(crate::nnet::predict(&m, &x).unwrap().shape(), (3, 4));
        assert!(CnnModel::new(6, 0, 4, &CnnConfig::default(), &mut rng).is_err());
    }
}
