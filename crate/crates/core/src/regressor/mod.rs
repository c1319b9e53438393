//! Small convolutional pose regressor with built-in reverse-mode
//! differentiation.
//!
//! Architecture: `len(channels)` blocks of `conv → batch-norm → ReLU`, each
//! followed by 2×2 max pooling except the last, then
//! `flatten → linear(hidden) → ReLU → linear(9)`. The nine outputs are a
//! [`crate::pose_algebra::PoseVector9`]. Convolutions carry no bias since
//! batch normalization follows them.
//!
//! Differentiation is hand-written per layer: [`forward`] records every
//! intermediate needed by [`backward`] in a [`Tape`], which is consumed by
//! the first backward call.

pub mod checkpoint;
mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use layers::{ConvGeom, BN_EPS, BN_MOMENTUM};
pub use gradcheck::{gradient_check, GradCheckEntry, LAYER_KINDS};
pub use optim::{adamw_step, AdamWHyper, AdamWState};
pub use tensor::Tensor;

/// Width of the network output: position (3) + 6D rotation (6).
pub const OUTPUT_DIM: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum RegressorError {
    #[error("invalid model config: {0}")]
    ConfigInvalid(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub hidden: usize,
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: vec![8, 8, 16, 32],
            kernel_size: 3,
            stride: 1,
            hidden: 64,
            input_size: 64,
        }
    }
}

impl ModelConfig {
    /// Full-size network on 160×160 input (≈6.7M parameters).
    pub fn full_scale() -> Self {
        ModelConfig {
            channels: vec![32, 32, 64, 128],
            kernel_size: 3,
            stride: 1,
            hidden: 128,
            input_size: 160,
        }
    }

    pub fn layout(&self) -> Result<Layout, RegressorError> {
        Layout::new(self)
    }
}

/// Convolutional block slots inside the flat parameter vector.
#[derive(Clone, Debug)]
pub struct BlockLayout {
    pub geom: ConvGeom,
    pub pool: bool,
    pub weight: Range<usize>,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
    pub running_mean: Range<usize>,
    pub running_var: Range<usize>,
}

impl BlockLayout {
    pub fn out_hw(&self) -> (usize, usize) {
        let (h, w) = (self.geom.out_h(), self.geom.out_w());
        if self.pool {
            (h / 2, w / 2)
        } else {
            (h, w)
        }
    }
}

/// Named contiguous parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub range: Range<usize>,
    pub fan_in: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub blocks: Vec<BlockLayout>,
    pub flat_dim: usize,
    pub hidden: usize,
    pub hidden_w: Range<usize>,
    pub hidden_b: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub n_params: usize,
    pub n_running: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Result<Self, RegressorError> {
        let bad = |m: &str| Err(RegressorError::ConfigInvalid(m.to_string()));
        if cfg.channels.is_empty() || cfg.channels.contains(&0) {
            return bad("channel list must be non-empty with positive entries");
        }
        if cfg.kernel_size == 0 || cfg.kernel_size.is_multiple_of(2) {
            return bad("kernel size must be odd and positive");
        }
        if cfg.stride == 0 || cfg.hidden == 0 || cfg.input_size == 0 {
            return bad("stride, hidden width and input size must be positive");
        }
        let mut off = 0usize;
        let mut roff = 0usize;
        let take = |n: usize, off: &mut usize| {
            let r = *off..*off + n;
            *off += n;
            r
        };
        let (mut h, mut w, mut cin) = (cfg.input_size, cfg.input_size, 1usize);
        let mut blocks = Vec::new();
        let nb = cfg.channels.len();
        for (i, &cout) in cfg.channels.iter().enumerate() {
            let geom = ConvGeom {
                cin,
                cout,
                h,
                w,
                k: cfg.kernel_size,
                stride: cfg.stride,
                pad: cfg.kernel_size / 2,
            };
            let pool = i + 1 < nb;
            let (oh, ow) = (geom.out_h(), geom.out_w());
            if oh == 0 || ow == 0 || (pool && (oh < 2 || ow < 2)) {
                return bad("input resolution too small for the block stack");
            }
            let block = BlockLayout {
                geom,
                pool,
                weight: take(cout * geom.col_rows(), &mut off),
                gamma: take(cout, &mut off),
                beta: take(cout, &mut off),
                running_mean: take(cout, &mut roff),
                running_var: take(cout, &mut roff),
            };
            (h, w) = block.out_hw();
            cin = cout;
            blocks.push(block);
        }
        let flat_dim = cin * h * w;
        let hidden_w = take(cfg.hidden * flat_dim, &mut off);
        let hidden_b = take(cfg.hidden, &mut off);
        let out_w = take(OUTPUT_DIM * cfg.hidden, &mut off);
        let out_b = take(OUTPUT_DIM, &mut off);
        Ok(Layout {
            blocks,
            flat_dim,
            hidden: cfg.hidden,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
            n_params: off,
            n_running: roff,
        })
    }

    /// Parameter tensors in storage order.
    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let fan_in = b.geom.col_rows();
            g.push(ParamGroup { name: format!("conv{i}.weight"), range: b.weight.clone(), fan_in: Some(fan_in) });
            g.push(ParamGroup { name: format!("bn{i}.gamma"), range: b.gamma.clone(), fan_in: None });
            g.push(ParamGroup { name: format!("bn{i}.beta"), range: b.beta.clone(), fan_in: None });
        }
        g.push(ParamGroup { name: "hidden.weight".into(), range: self.hidden_w.clone(), fan_in: Some(self.flat_dim) });
        g.push(ParamGroup { name: "hidden.bias".into(), range: self.hidden_b.clone(), fan_in: None });
        g.push(ParamGroup { name: "out.weight".into(), range: self.out_w.clone(), fan_in: Some(self.hidden) });
        g.push(ParamGroup { name: "out.bias".into(), range: self.out_b.clone(), fan_in: None });
        g
    }
}

/// Flat learnable parameters plus batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
    running: Vec<f64>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values && self.running == other.running
    }
}

impl ModelParams {
    pub fn from_parts(config: ModelConfig, values: Vec<f64>, running: Vec<f64>) -> Result<Self, RegressorError> {
        let layout = config.layout()?;
        if values.len() != layout.n_params || running.len() != layout.n_running {
            return Err(RegressorError::ShapeMismatch {
                expected: format!("{} params / {} running stats", layout.n_params, layout.n_running),
                got: format!("{} / {}", values.len(), running.len()),
            });
        }
        Ok(ModelParams { config, layout, values, running })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn running(&self) -> &[f64] {
        &self.running
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        self.layout.groups()
    }

    /// Folds train-mode batch statistics into the running estimates
    /// (momentum update, unbiased variance).
    pub fn apply_batch_stats(&mut self, stats: &BatchStats) {
        for (b, (mean, var)) in self.layout.blocks.iter().zip(stats.per_block.iter()) {
            let count = stats.samples_per_channel(b) as f64;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for (k, idx) in b.running_mean.clone().enumerate() {
                self.running[idx] = (1.0 - BN_MOMENTUM) * self.running[idx] + BN_MOMENTUM * mean[k];
            }
            for (k, idx) in b.running_var.clone().enumerate() {
                self.running[idx] =
                    (1.0 - BN_MOMENTUM) * self.running[idx] + BN_MOMENTUM * var[k] * unbias;
            }
        }
    }
}

/// Kaiming-uniform fan-in weights, zero biases, unit batch-norm scale.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelParams, RegressorError> {
    let layout = cfg.layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.n_params];
    for g in layout.groups() {
        if let Some(fan_in) = g.fan_in {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut values[g.range] {
                *v = rng.random_range(-bound..bound);
            }
        } else if g.name.ends_with("gamma") {
            values[g.range].fill(1.0);
        }
    }
    let mut running = vec![0.0; layout.n_running];
    for b in &layout.blocks {
        running[b.running_var.clone()].fill(1.0);
    }
    Ok(ModelParams { config: cfg.clone(), layout, values, running })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are reported.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Per-block batch mean and biased variance from a train-mode pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub per_block: Vec<(Vec<f64>, Vec<f64>)>,
    batch: usize,
}

impl BatchStats {
    fn samples_per_channel(&self, b: &BlockLayout) -> usize {
        self.batch * b.geom.out_plane()
    }
}

struct BlockCache {
    cols: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    act: Vec<f64>,
    argmax: Option<Vec<u32>>,
}

/// Intermediates of one forward pass.
pub struct Tape<'a> {
    params: &'a ModelParams,
    mode: Mode,
    n: usize,
    consumed: bool,
    blocks: Vec<BlockCache>,
    flat_in: Vec<f64>,
    hidden_act: Vec<f64>,
}

impl Tape<'_> {
    pub fn batch_size(&self) -> usize {
        self.n
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

pub struct ForwardPass<'a> {
    /// `[N, 9]` pose vectors.
    pub output: Tensor,
    /// `[N, hidden]` post-ReLU penultimate activations.
    pub features: Tensor,
    pub tape: Tape<'a>,
    /// Present in train mode.
    pub batch_stats: Option<BatchStats>,
}

/// Runs the network on a `[N, 1, S, S]` batch.
pub fn forward<'a>(params: &'a ModelParams, batch: &Tensor, mode: Mode) -> Result<ForwardPass<'a>, RegressorError> {
    let s = params.config.input_size;
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != s || shape[3] != s || shape[0] == 0 {
        return Err(RegressorError::ShapeMismatch {
            expected: format!("[N>0, 1, {s}, {s}]"),
            got: format!("{shape:?}"),
        });
    }
    let n = shape[0];
    let layout = &params.layout;
    let vals = &params.values;
    let mut x = batch.data().to_vec();
    let mut caches = Vec::with_capacity(layout.blocks.len());
    let mut stats = Vec::new();
    for b in &layout.blocks {
        let g = &b.geom;
        let plane = g.out_plane();
        let (mut y, cols) = layers::conv_forward(&x, n, &vals[b.weight.clone()], g);
        let (mean, var) = match mode {
            Mode::Train => {
                let (m, v) = layers::channel_stats(&y, n, g.cout, plane);
                stats.push((m.clone(), v.clone()));
                (m, v)
            }
            Mode::Eval => (
                params.running[b.running_mean.clone()].to_vec(),
                params.running[b.running_var.clone()].to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut act = layers::bn_apply(
            &mut y,
            n,
            g.cout,
            plane,
            &mean,
            &inv_std,
            &vals[b.gamma.clone()],
            &vals[b.beta.clone()],
        );
        layers::relu_inplace(&mut act);
        let argmax = if b.pool {
            let (pooled, arg) = layers::maxpool_forward(&act, n * g.cout, g.out_h(), g.out_w());
            x = pooled;
            Some(arg)
        } else {
            x = act.clone();
            None
        };
        caches.push(BlockCache { cols, xhat: y, inv_std, act, argmax });
    }
    let mut hidden = layers::linear_forward(&x, n, layout.flat_dim, &vals[layout.hidden_w.clone()], &vals[layout.hidden_b.clone()]);
    layers::relu_inplace(&mut hidden);
    let out = layers::linear_forward(&hidden, n, layout.hidden, &vals[layout.out_w.clone()], &vals[layout.out_b.clone()]);
    let batch_stats = (mode == Mode::Train).then_some(BatchStats {
        per_block: stats,
        batch: n,
    });
    Ok(ForwardPass {
        output: Tensor::new(vec![n, OUTPUT_DIM], out)?,
        features: Tensor::new(vec![n, layout.hidden], hidden.clone())?,
        tape: Tape {
            params,
            mode,
            n,
            consumed: false,
            blocks: caches,
            flat_in: x,
            hidden_act: hidden,
        },
        batch_stats,
    })
}

/// Reverse pass: gradient of `Σ out_grad·output + Σ feature_grad·features`
/// with respect to every learnable parameter.
pub fn backward(tape: &mut Tape<'_>, out_grad: &Tensor, feature_grad: Option<&Tensor>) -> Result<Vec<f64>, RegressorError> {
    if tape.consumed {
        return Err(RegressorError::TapeConsumed);
    }
    let n = tape.n;
    if out_grad.shape() != [n, OUTPUT_DIM] {
        return Err(RegressorError::ShapeMismatch {
            expected: format!("[{n}, {OUTPUT_DIM}]"),
            got: format!("{:?}", out_grad.shape()),
        });
    }
    let params = tape.params;
    let layout = &params.layout;
    if let Some(fg) = feature_grad {
        if fg.shape() != [n, layout.hidden] {
            return Err(RegressorError::ShapeMismatch {
                expected: format!("[{n}, {}]", layout.hidden),
                got: format!("{:?}", fg.shape()),
            });
        }
    }
    tape.consumed = true;
    let blocks = std::mem::take(&mut tape.blocks);
    let flat_in = std::mem::take(&mut tape.flat_in);
    let hidden_act = std::mem::take(&mut tape.hidden_act);
    let vals = &params.values;
    let mut grads = vec![0.0; layout.n_params];

    let (dw, db, mut dh) = layers::linear_backward(out_grad.data(), &hidden_act, n, layout.hidden, &vals[layout.out_w.clone()], OUTPUT_DIM);
    grads[layout.out_w.clone()].copy_from_slice(&dw);
    grads[layout.out_b.clone()].copy_from_slice(&db);
    if let Some(fg) = feature_grad {
        for (a, b) in dh.iter_mut().zip(fg.data().iter()) {
            *a += b;
        }
    }
    layers::relu_backward_inplace(&mut dh, &hidden_act);
    let (dw, db, mut dx) = layers::linear_backward(&dh, &flat_in, n, layout.flat_dim, &vals[layout.hidden_w.clone()], layout.hidden);
    grads[layout.hidden_w.clone()].copy_from_slice(&dw);
    grads[layout.hidden_b.clone()].copy_from_slice(&db);

    for (i, (b, cache)) in layout.blocks.iter().zip(blocks).enumerate().rev() {
        let g = &b.geom;
        let mut dact = match &cache.argmax {
            Some(arg) => layers::maxpool_backward(&dx, arg, cache.act.len()),
            None => dx,
        };
        layers::relu_backward_inplace(&mut dact, &cache.act);
        let (dy, dgamma, dbeta) = layers::bn_backward(
            &dact,
            &cache.xhat,
            n,
            g.cout,
            g.out_plane(),
            &cache.inv_std,
            &vals[b.gamma.clone()],
            tape.mode == Mode::Train,
        );
        grads[b.gamma.clone()].copy_from_slice(&dgamma);
        grads[b.beta.clone()].copy_from_slice(&dbeta);
        let (dw, dprev) = layers::conv_backward(&dy, &cache.cols, n, &vals[b.weight.clone()], g, i > 0);
        grads[b.weight.clone()].copy_from_slice(&dw);
        dx = dprev.unwrap_or_default();
    }
    Ok(grads)
}

/// Batches `[S×S]` images into a `[N, 1, S, S]` tensor.
pub fn stack_images<'a, I>(images: I, size: usize) -> Result<Tensor, RegressorError>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        if img.len() != size * size {
            return Err(RegressorError::ShapeMismatch {
                expected: format!("{} pixels", size * size),
                got: format!("{}", img.len()),
            });
        }
        data.extend(img.iter().map(|&p| p as f64));
        n += 1;
    }
    Tensor::new(vec![n, 1, size, size], data)
}
