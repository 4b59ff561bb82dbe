//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive appends a node holding its forward value and whatever it
//! needs for the backward pass. Nodes only reference earlier nodes, so the
//! tape is topologically ordered by construction and `backward` is a single
//! reverse sweep.

use super::matrix::{gemm, Matrix};
use super::params::{Gradients, ParamStore};
use super::NnError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Extension point for primitives defined outside this module
/// (convolutions, recurrences). The op computes its own forward value and
/// keeps whatever cache its backward pass needs.
pub trait CustomOp: Send {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, in input order. `None` means the
    /// input receives no gradient.
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad: &Matrix) -> Vec<Option<Matrix>>;
}

#[derive(Clone, Copy, Debug)]
enum NormAxis {
    /// Statistics per row (layer normalization).
    Row,
    /// Batch statistics per column (batch normalization, training).
    Column,
    /// Fixed per-column statistics (batch normalization, inference).
    Fixed,
}

enum Op {
    Constant,
    Param(usize),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Elu {
        x: Var,
        alpha: f64,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
        axis: NormAxis,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Matrix,
    },
    LinearConsistency {
        pred: Var,
        weights: Vec<f64>,
        residual: Vec<f64>,
    },
    Concat(Var, Var),
    Slice {
        x: Var,
        start: usize,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Per-column statistics of one batch-normalization call in training mode.
#[derive(Clone, Debug)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub n: usize,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records parameter `id` of `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// `x * w + b` with `w` of shape in x out and `b` of shape 1 x out.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() || bv.shape() != (1, wv.cols()) {
            return Err(NnError::Shape(format!(
                "linear: input {}x{}, weight {}x{}, bias {}x{}",
                xv.rows(),
                xv.cols(),
                wv.rows(),
                wv.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let mut out = Matrix::zeros(xv.rows(), wv.cols());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(bv.data());
        }
        gemm(xv, false, wv, false, &mut out, 1.0, 1.0);
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::Shape(format!(
                "add: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self
            .value(x)
            .map(|v| if v >= 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        let out = self
            .value(x)
            .map(|v| if v >= 0.0 { v } else { alpha * v.exp_m1() });
        self.push(out, Op::Elu { x, alpha })
    }

    /// Row-wise normalization followed by a per-column affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NnError> {
        let xv = self.value(x);
        check_affine(xv, self.value(gamma), self.value(beta), "layer_norm")?;
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (h, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let out = self.affine(&xhat, gamma, beta);
        Ok(self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                axis: NormAxis::Row,
            },
        ))
    }

    /// Column-wise normalization with batch statistics; returns the
    /// statistics so the caller can update running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, ColumnStats), NnError> {
        let xv = self.value(x);
        check_affine(xv, self.value(gamma), self.value(beta), "batch_norm")?;
        let (rows, cols) = xv.shape();
        if rows < 2 {
            return Err(NnError::Config(
                "batch normalization in training mode needs at least 2 rows".into(),
            ));
        }
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat = normalize_columns(xv, &mean, &inv_std);
        let out = self.affine(&xhat, gamma, beta);
        let node = self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                axis: NormAxis::Column,
            },
        );
        Ok((node, ColumnStats { mean, var, n: rows }))
    }

    /// Column-wise normalization with fixed (running) statistics.
    pub fn batch_norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var, NnError> {
        let xv = self.value(x);
        check_affine(xv, self.value(gamma), self.value(beta), "batch_norm")?;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat = normalize_columns(xv, mean, &inv_std);
        let out = self.affine(&xhat, gamma, beta);
        Ok(self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                axis: NormAxis::Fixed,
            },
        ))
    }

    fn affine(&self, xhat: &Matrix, gamma: Var, beta: Var) -> Matrix {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for ((o, gj), bj) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gj + bj;
            }
        }
        out
    }

    /// Multiplies `x` elementwise by a fixed mask (already scaled for
    /// inverted dropout).
    pub fn dropout_mask(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = self.value(x);
        debug_assert_eq!(xv.len(), mask.len());
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Matrix::from_vec(xv.rows(), xv.cols(), data).expect("same shape");
        self.push(out, Op::Dropout { x, mask })
    }

    /// Mean squared error against a constant target; a 1x1 node.
    pub fn mse(&mut self, pred: Var, target: &Matrix) -> Result<Var, NnError> {
        let loss = super::mse_loss(self.value(pred), target)?;
        Ok(self.push(
            Matrix::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// `mean_i (pred_i . weights + offsets_i)^2`, a 1x1 node. This is the
    /// squared residual of a log-linear law evaluated on predicted rows.
    pub fn linear_consistency(
        &mut self,
        pred: Var,
        weights: &[f64],
        offsets: &[f64],
    ) -> Result<Var, NnError> {
        let pv = self.value(pred);
        if pv.cols() != weights.len() || pv.rows() != offsets.len() {
            return Err(NnError::Shape(format!(
                "consistency: prediction {}x{}, {} weights, {} offsets",
                pv.rows(),
                pv.cols(),
                weights.len(),
                offsets.len()
            )));
        }
        let residual: Vec<f64> = (0..pv.rows())
            .map(|r| {
                pv.row(r)
                    .iter()
                    .zip(weights)
                    .map(|(p, w)| p * w)
                    .sum::<f64>()
                    + offsets[r]
            })
            .collect();
        let loss = residual.iter().map(|e| e * e).sum::<f64>() / residual.len().max(1) as f64;
        Ok(self.push(
            Matrix::scalar(loss),
            Op::LinearConsistency {
                pred,
                weights: weights.to_vec(),
                residual,
            },
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.value(a).hcat(self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(NnError::Shape(format!(
                "slice {start}..{end} of {} columns",
                xv.cols()
            )));
        }
        let out = xv.slice_cols(start, end);
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Matrix, op: Box<dyn CustomOp>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse sweep from a scalar node. Parameters never reached get zero
    /// gradients. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var, store: &ParamStore) -> Result<Gradients, NnError> {
        if self.consumed {
            return Err(NnError::Usage("tape already consumed by backward".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(NnError::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut out = Gradients::zeros_like(store);
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g)?,
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    gemm(&g, false, wv, true, &mut dx, 1.0, 0.0);
                    let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                    gemm(xv, true, &g, false, &mut dw, 1.0, 0.0);
                    let db = g.column_sums();
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, g.map(|v| v * c)),
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x);
                    let d = zip_map(&g, xv, |gv, v| if v >= 0.0 { gv } else { gv * slope });
                    accumulate(&mut grads, *x, d);
                }
                Op::Elu { x, alpha } => {
                    let xv = self.value(*x);
                    let d = zip_map(&g, xv, |gv, v| {
                        if v >= 0.0 {
                            gv
                        } else {
                            gv * alpha * v.exp()
                        }
                    });
                    accumulate(&mut grads, *x, d);
                }
                Op::Norm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    axis,
                } => {
                    let gam = self.value(*gamma).data();
                    let (dx, dgamma, dbeta) = norm_backward(&g, xhat, inv_std, gam, *axis);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::Dropout { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                    let d = Matrix::from_vec(g.rows(), g.cols(), data)?;
                    accumulate(&mut grads, *x, d);
                }
                Op::Mse { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g.item() / pv.len() as f64;
                    let d = zip_map(pv, target, |p, t| scale * (p - t));
                    accumulate(&mut grads, *pred, d);
                }
                Op::LinearConsistency {
                    pred,
                    weights,
                    residual,
                } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g.item() / residual.len().max(1) as f64;
                    let mut d = Matrix::zeros(pv.rows(), pv.cols());
                    for (r, e) in residual.iter().enumerate() {
                        for (o, w) in d.row_mut(r).iter_mut().zip(weights) {
                            *o = scale * e * w;
                        }
                    }
                    accumulate(&mut grads, *pred, d);
                }
                Op::Concat(a, b) => {
                    let ac = self.value(*a).cols();
                    let da = g.slice_cols(0, ac);
                    let db = g.slice_cols(ac, g.cols());
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Slice { x, start } => {
                    let xv = self.value(*x);
                    let mut d = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Custom { inputs, op } => {
                    let vals: Vec<&Matrix> = inputs.iter().map(|v| self.value(*v)).collect();
                    let ds = op.backward(&vals, &node.value, &g);
                    if ds.len() != inputs.len() {
                        return Err(NnError::Usage(format!(
                            "custom op {} returned {} gradients for {} inputs",
                            op.name(),
                            ds.len(),
                            inputs.len()
                        )));
                    }
                    for (v, d) in inputs.iter().zip(ds) {
                        if let Some(d) = d {
                            accumulate(&mut grads, *v, d);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn check_affine(x: &Matrix, gamma: &Matrix, beta: &Matrix, what: &str) -> Result<(), NnError> {
    if gamma.shape() != (1, x.cols()) || beta.shape() != (1, x.cols()) {
        return Err(NnError::Shape(format!(
            "{what}: input width {} but gamma {:?}, beta {:?}",
            x.cols(),
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

fn normalize_columns(x: &Matrix, mean: &[f64], inv_std: &[f64]) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((o, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(inv_std) {
            *o = (*o - m) * s;
        }
    }
    out
}

#[allow(clippy::needless_range_loop)]
fn norm_backward(
    g: &Matrix,
    xhat: &Matrix,
    inv_std: &[f64],
    gamma: &[f64],
    axis: NormAxis,
) -> (Matrix, Matrix, Matrix) {
    let (rows, cols) = g.shape();
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            let gv = g.get(r, c);
            dgamma[c] += gv * xhat.get(r, c);
            dbeta[c] += gv;
        }
    }
    let mut dx = Matrix::zeros(rows, cols);
    match axis {
        NormAxis::Row => {
            let n = cols as f64;
            for r in 0..rows {
                let (mut s1, mut s2) = (0.0, 0.0);
                for c in 0..cols {
                    let dh = g.get(r, c) * gamma[c];
                    s1 += dh;
                    s2 += dh * xhat.get(r, c);
                }
                for c in 0..cols {
                    let dh = g.get(r, c) * gamma[c];
                    dx.set(r, c, inv_std[r] / n * (n * dh - s1 - xhat.get(r, c) * s2));
                }
            }
        }
        NormAxis::Column => {
            let n = rows as f64;
            let mut s1 = vec![0.0; cols];
            let mut s2 = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    let dh = g.get(r, c) * gamma[c];
                    s1[c] += dh;
                    s2[c] += dh * xhat.get(r, c);
                }
            }
            for r in 0..rows {
                for c in 0..cols {
                    let dh = g.get(r, c) * gamma[c];
                    dx.set(r, c, inv_std[c] / n * (n * dh - s1[c] - xhat.get(r, c) * s2[c]));
                }
            }
        }
        NormAxis::Fixed => {
            for r in 0..rows {
                for c in 0..cols {
                    dx.set(r, c, g.get(r, c) * gamma[c] * inv_std[c]);
                }
            }
        }
    }
    (dx, Matrix::row_vector(dgamma), Matrix::row_vector(dbeta))
}
