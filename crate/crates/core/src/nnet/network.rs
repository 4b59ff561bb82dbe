//! Sequential networks assembled from [`LayerSpec`]s.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{ColumnStats, Tape, Var};
use super::NnError;

pub const DEFAULT_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// One layer of a sequential network.
///
/// Residual blocks are written flat: `ResidualBegin` saves the current
/// activation, the main path follows, `ResidualBranch` switches to the
/// projection path (starting again from the saved activation) and
/// `ResidualEnd` adds the two. Without a `ResidualBranch` the projection
/// is the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear { width: usize },
    LayerNorm { epsilon: f64 },
    BatchNorm { epsilon: f64, momentum: f64 },
    Dropout { p: f64 },
    LeakyRelu { slope: f64 },
    Elu { alpha: f64 },
    ResidualBegin,
    ResidualBranch,
    ResidualEnd,
}

impl LayerSpec {
    pub fn linear(width: usize) -> Self {
        Self::Linear { width }
    }

    pub fn layer_norm() -> Self {
        Self::LayerNorm {
            epsilon: DEFAULT_NORM_EPS,
        }
    }

    pub fn batch_norm() -> Self {
        Self::BatchNorm {
            epsilon: DEFAULT_NORM_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "slot", rename_all = "snake_case")]
enum Slot {
    None,
    Linear { w: usize, b: usize },
    Norm { gamma: usize, beta: usize },
    Batch { gamma: usize, beta: usize, stats: usize },
}

/// Running mean and (unbiased) variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch statistics produced by one training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub slot: usize,
    pub stats: ColumnStats,
}

pub struct Forward {
    pub output: Var,
    pub batch_stats: Vec<BatchStats>,
}

/// Anything the training loop can fit.
pub trait Model {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn input_width(&self) -> usize;
    fn output_width(&self) -> usize;
    fn forward_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward, NnError>;
    /// Folds training-mode batch statistics into running estimates.
    fn apply_batch_stats(&mut self, _stats: &[BatchStats]) {}
}

/// Eval-mode inference in row chunks.
pub fn predict<M: Model + ?Sized>(model: &M, x: &Matrix) -> Result<Matrix, NnError> {
    use rand::SeedableRng;
    const CHUNK: usize = 256;
    if x.cols() != model.input_width() {
        return Err(NnError::Config(format!(
            "input has {} columns, model expects {}",
            x.cols(),
            model.input_width()
        )));
    }
    // Eval mode never draws from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(x.rows() * model.output_width());
    let idx: Vec<usize> = (0..x.rows()).collect();
    for chunk in idx.chunks(CHUNK) {
        let mut tape = Tape::new();
        let input = tape.constant(x.select_rows(chunk));
        let fwd = model.forward_tape(&mut tape, input, Mode::Eval, &mut rng)?;
        out.extend_from_slice(tape.value(fwd.output).data());
    }
    Matrix::from_vec(x.rows(), model.output_width(), out)
}

/// Fully connected sequential network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_width: usize,
    output_width: usize,
    layers: Vec<LayerSpec>,
    slots: Vec<Slot>,
    params: ParamStore,
    running: Vec<RunningStats>,
}

impl Network {
    /// Builds and initializes a network. Linear weights are He-uniform
    /// (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), biases zero, norm scales one
    /// and shifts zero.
    pub fn new(input_width: usize, layers: Vec<LayerSpec>, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        if input_width == 0 {
            return Err(NnError::Config("input width must be positive".into()));
        }
        let mut params = ParamStore::new();
        let mut slots = Vec::with_capacity(layers.len());
        let mut running = Vec::new();
        // (saved width, main-path width once the branch starts)
        let mut stack: Vec<(usize, Option<usize>)> = Vec::new();
        let mut width = input_width;
        for (i, layer) in layers.iter().enumerate() {
            let slot = match *layer {
                LayerSpec::Linear { width: out } => {
                    if out == 0 {
                        return Err(NnError::Config(format!("layer {i}: linear width must be positive")));
                    }
                    let bound = (6.0 / width as f64).sqrt();
                    let data = (0..width * out)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    let w = params.push(Matrix::from_vec(width, out, data)?);
                    let b = params.push(Matrix::zeros(1, out));
                    width = out;
                    Slot::Linear { w, b }
                }
                LayerSpec::LayerNorm { epsilon } => {
                    check_eps(i, epsilon)?;
                    let gamma = params.push(Matrix::filled(1, width, 1.0));
                    let beta = params.push(Matrix::zeros(1, width));
                    Slot::Norm { gamma, beta }
                }
                LayerSpec::BatchNorm { epsilon, momentum } => {
                    check_eps(i, epsilon)?;
                    if !(momentum > 0.0 && momentum <= 1.0) {
                        return Err(NnError::Config(format!("layer {i}: batch-norm momentum must lie in (0, 1]")));
                    }
                    let gamma = params.push(Matrix::filled(1, width, 1.0));
                    let beta = params.push(Matrix::zeros(1, width));
                    running.push(RunningStats {
                        mean: vec![0.0; width],
                        var: vec![1.0; width],
                    });
                    Slot::Batch {
                        gamma,
                        beta,
                        stats: running.len() - 1,
                    }
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(NnError::Config(format!("layer {i}: dropout probability {p} outside [0, 1)")));
                    }
                    Slot::None
                }
                LayerSpec::LeakyRelu { slope } => {
                    if !slope.is_finite() {
                        return Err(NnError::Config(format!("layer {i}: leaky slope must be finite")));
                    }
                    Slot::None
                }
                LayerSpec::Elu { alpha } => {
                    if !(alpha > 0.0 && alpha.is_finite()) {
                        return Err(NnError::Config(format!("layer {i}: elu alpha must be positive")));
                    }
                    Slot::None
                }
                LayerSpec::ResidualBegin => {
                    stack.push((width, None));
                    Slot::None
                }
                LayerSpec::ResidualBranch => {
                    let top = stack.last_mut().ok_or_else(|| {
                        NnError::Config(format!("layer {i}: residual branch outside a block"))
                    })?;
                    if top.1.is_some() {
                        return Err(NnError::Config(format!("layer {i}: second branch in one residual block")));
                    }
                    top.1 = Some(width);
                    width = top.0;
                    Slot::None
                }
                LayerSpec::ResidualEnd => {
                    let (saved, main) = stack.pop().ok_or_else(|| {
                        NnError::Config(format!("layer {i}: residual end without a begin"))
                    })?;
                    let main = main.unwrap_or(saved);
                    if main != width {
                        return Err(NnError::Config(format!(
                            "layer {i}: residual paths have widths {main} and {width}"
                        )));
                    }
                    Slot::None
                }
            };
            slots.push(slot);
        }
        if !stack.is_empty() {
            return Err(NnError::Config("unterminated residual block".into()));
        }
        Ok(Self {
            input_width,
            output_width: width,
            layers,
            slots,
            params,
            running,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    /// Parameter ids `(weight, bias)` of the linear layer at `layer`.
    pub fn linear_params(&self, layer: usize) -> Option<(usize, usize)> {
        match self.slots.get(layer)? {
            Slot::Linear { w, b } => Some((*w, *b)),
            _ => None,
        }
    }

    /// Records a forward pass on a fresh tape.
    pub fn forward(
        &self,
        batch: &Matrix,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Matrix, Tape, Forward), NnError> {
        if batch.cols() != self.input_width {
            return Err(NnError::Config(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_width
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let fwd = self.forward_tape(&mut tape, x, mode, rng)?;
        Ok((tape.value(fwd.output).clone(), tape, fwd))
    }

    pub(crate) fn from_parts(
        input_width: usize,
        layers: Vec<LayerSpec>,
        params: ParamStore,
        running: Vec<RunningStats>,
    ) -> Result<Self, NnError> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Self::new(input_width, layers, &mut rng)?;
        if net.params.len() != params.len()
            || net
                .params
                .iter()
                .zip(params.iter())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(NnError::Config("parameter shapes do not match the layer specs".into()));
        }
        if running.len() != net.running.len()
            || running
                .iter()
                .zip(&net.running)
                .any(|(a, b)| a.mean.len() != b.mean.len() || a.var.len() != b.var.len())
        {
            return Err(NnError::Config("running statistics do not match the layer specs".into()));
        }
        net.params = params;
        net.running = running;
        Ok(net)
    }
}

fn check_eps(i: usize, eps: f64) -> Result<(), NnError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(NnError::Config(format!("layer {i}: norm epsilon must be positive")))
    }
}

impl Model for Network {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn input_width(&self) -> usize {
        self.input_width
    }

    fn output_width(&self) -> usize {
        self.output_width
    }

    fn forward_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward, NnError> {
        if tape.value(x).cols() != self.input_width {
            return Err(NnError::Config(format!(
                "batch has {} columns, network expects {}",
                tape.value(x).cols(),
                self.input_width
            )));
        }
        let mut cur = x;
        let mut stack: Vec<(Var, Option<Var>)> = Vec::new();
        let mut batch_stats = Vec::new();
        for (i, (layer, slot)) in self.layers.iter().zip(&self.slots).enumerate() {
            cur = match (layer, slot) {
                (LayerSpec::Linear { .. }, Slot::Linear { w, b }) => {
                    let (w, b) = (tape.param(&self.params, *w), tape.param(&self.params, *b));
                    tape.linear(cur, w, b)?
                }
                (LayerSpec::LayerNorm { epsilon }, Slot::Norm { gamma, beta }) => {
                    let g = tape.param(&self.params, *gamma);
                    let b = tape.param(&self.params, *beta);
                    tape.layer_norm(cur, g, b, *epsilon)?
                }
                (LayerSpec::BatchNorm { epsilon, .. }, Slot::Batch { gamma, beta, stats }) => {
                    let g = tape.param(&self.params, *gamma);
                    let b = tape.param(&self.params, *beta);
                    match mode {
                        Mode::Train => {
                            let (out, s) = tape.batch_norm_train(cur, g, b, *epsilon)?;
                            batch_stats.push(BatchStats {
                                slot: *stats,
                                stats: s,
                            });
                            out
                        }
                        Mode::Eval => {
                            let rs = &self.running[*stats];
                            tape.batch_norm_fixed(cur, g, b, &rs.mean, &rs.var, *epsilon)?
                        }
                    }
                }
                (LayerSpec::Dropout { p }, _) => dropout(tape, cur, *p, mode, rng),
                (LayerSpec::LeakyRelu { slope }, _) => tape.leaky_relu(cur, *slope),
                (LayerSpec::Elu { alpha }, _) => tape.elu(cur, *alpha),
                (LayerSpec::ResidualBegin, _) => {
                    stack.push((cur, None));
                    cur
                }
                (LayerSpec::ResidualBranch, _) => {
                    let top = stack.last_mut().expect("validated at construction");
                    top.1 = Some(cur);
                    top.0
                }
                (LayerSpec::ResidualEnd, _) => {
                    let (saved, main) = stack.pop().expect("validated at construction");
                    match main {
                        Some(main) => tape.add(main, cur)?,
                        None => tape.add(cur, saved)?,
                    }
                }
                _ => unreachable!("slot kinds are assigned at construction"),
            };
            if !tape.value(cur).is_finite() {
                return Err(NnError::NonFinite { layer: i });
            }
        }
        Ok(Forward {
            output: cur,
            batch_stats,
        })
    }

    fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        for bs in stats {
            let momentum = self
                .layers
                .iter()
                .zip(&self.slots)
                .find_map(|(l, s)| match (l, s) {
                    (LayerSpec::BatchNorm { momentum, .. }, Slot::Batch { stats, .. })
                        if *stats == bs.slot =>
                    {
                        Some(*momentum)
                    }
                    _ => None,
                })
                .unwrap_or(DEFAULT_BN_MOMENTUM);
            let n = bs.stats.n as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let rs = &mut self.running[bs.slot];
            for (r, m) in rs.mean.iter_mut().zip(&bs.stats.mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            for (r, v) in rs.var.iter_mut().zip(&bs.stats.var) {
                *r = (1.0 - momentum) * *r + momentum * v * unbias;
            }
        }
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` so eval mode is the
/// identity.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Var {
    if mode == Mode::Eval || p == 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - p);
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    tape.dropout_mask(x, mask)
}
