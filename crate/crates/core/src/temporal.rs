//! Segment-level sequence model: dilated temporal convolutions, a
//! transformer encoder restricted to the segment, and a per-task head.
//!
//! Every stage maps `[w×·] → [w×·]`; the time axis is never resampled.

use thiserror::Error;

use crate::labels::Task;
use crate::nn::{join, sinusoidal_positions, uniform_param, Linear, Mlp, Module, TransformerStack};
use crate::tensor::{Tensor, TensorError};
use crate::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TemporalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcnLayer {
    pub kernel: usize,
    pub dilation: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnConfig {
    pub layers: Vec<TcnLayer>,
    pub dropout: f64,
    pub residual: bool,
    /// Use a learned 1×1 projection on the skip path when channel counts
    /// change. Without it a channel change under `residual` is an error.
    pub project: bool,
}

impl TcnConfig {
    /// One residual block per dilation, all with the same kernel width.
    pub fn uniform(kernel: usize, dilations: &[usize], channels: usize, dropout: f64) -> Self {
        TcnConfig {
            layers: dilations
                .iter()
                .map(|&dilation| TcnLayer {
                    kernel,
                    dilation,
                    channels,
                })
                .collect(),
            dropout,
            residual: true,
            project: true,
        }
    }

    /// `1 + Σ (k − 1)·d`
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| (l.kernel - 1) * l.dilation)
            .sum::<usize>()
    }

    pub fn out_channels(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, |l| l.channels)
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        let mut c_in = input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel % 2 == 0 || l.kernel == 0 {
                return Err(TemporalError::Config(format!(
                    "TCN layer {i}: kernel {} must be odd",
                    l.kernel
                )));
            }
            if l.dilation == 0 || l.channels == 0 {
                return Err(TemporalError::Config(format!(
                    "TCN layer {i}: dilation and channels must be positive"
                )));
            }
            if self.residual && l.channels != c_in && !self.project {
                return Err(TemporalError::Config(format!(
                    "TCN layer {i}: residual from {c_in} to {} channels needs a projection",
                    l.channels
                )));
            }
            c_in = l.channels;
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TemporalError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TcnBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
    pub residual: bool,
    pub projection: Option<Tensor>,
}

/// Residual stack of same-length dilated convolutions (non-causal).
#[derive(Debug, Clone)]
pub struct Tcn {
    pub blocks: Vec<TcnBlock>,
    pub dropout: f64,
}

impl Tcn {
    pub fn new(input_dim: usize, cfg: &TcnConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate(input_dim)?;
        let mut c_in = input_dim;
        let mut blocks = Vec::with_capacity(cfg.layers.len());
        for l in &cfg.layers {
            let bound = 1.0 / ((c_in * l.kernel) as f64).sqrt();
            let projection = (cfg.residual && l.channels != c_in)
                .then(|| uniform_param(&[l.channels, c_in, 1], 1.0 / (c_in as f64).sqrt(), rng));
            blocks.push(TcnBlock {
                weight: uniform_param(&[l.channels, c_in, l.kernel], bound, rng),
                bias: uniform_param(&[l.channels], bound, rng),
                dilation: l.dilation,
                residual: cfg.residual,
                projection,
            });
            c_in = l.channels;
        }
        Ok(Tcn {
            blocks,
            dropout: cfg.dropout,
        })
    }

    /// `[w×d] → [w×c_last]`
    pub fn forward(&self, x: &Tensor, mut rng: Option<&mut Rng>) -> Result<Tensor> {
        let mut h = x.t()?;
        for b in &self.blocks {
            let y = h
                .conv1d_dilated(&b.weight, Some(&b.bias), b.dilation)?
                .gelu()
                .dropout(self.dropout, rng.as_deref_mut())?;
            h = if b.residual {
                let skip = match &b.projection {
                    Some(p) => h.conv1d_dilated(p, None, 1)?,
                    None => h,
                };
                y.add(&skip)?
            } else {
                y
            };
        }
        Ok(h.t()?)
    }
}

impl Module for Tcn {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((join(prefix, &format!("tcn.{i}.weight")), b.weight.clone()));
            out.push((join(prefix, &format!("tcn.{i}.bias")), b.bias.clone()));
            if let Some(p) = &b.projection {
                out.push((join(prefix, &format!("tcn.{i}.projection")), p.clone()));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub depth: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(TemporalError::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(TemporalError::Config("ffn_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Transformer over the frames of one segment. Padded frames are masked out
/// as attention keys, so no frame attends to padding.
#[derive(Debug, Clone)]
pub struct TemporalEncoder {
    pub input_proj: Option<Linear>,
    pub stack: TransformerStack,
    pub model_dim: usize,
}

impl TemporalEncoder {
    pub fn new(input_dim: usize, cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let input_proj = (input_dim != cfg.model_dim).then(|| Linear::new(input_dim, cfg.model_dim, rng));
        let stack = TransformerStack::new(cfg.model_dim, cfg.depth, cfg.heads, cfg.ffn_dim, cfg.dropout, rng)?;
        Ok(TemporalEncoder {
            input_proj,
            stack,
            model_dim: cfg.model_dim,
        })
    }

    pub fn forward(&self, g: &Tensor, pad_mask: Option<&[bool]>, rng: Option<&mut Rng>) -> Result<Tensor> {
        let x = match &self.input_proj {
            Some(p) => p.forward(g)?,
            None => g.clone(),
        };
        let pos = sinusoidal_positions(x.shape()[0], self.model_dim)?;
        Ok(self.stack.forward(&x.add(&pos)?, pad_mask, rng)?)
    }
}

impl Module for TemporalEncoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        if let Some(p) = &self.input_proj {
            p.collect_params(&join(prefix, "encoder.input_proj"), out);
        }
        self.stack.collect_params(&join(prefix, "encoder"), out);
    }
}

/// Per-frame prediction head. VA outputs are squashed into [−1, 1]; Expr
/// and AU heads return raw logits.
#[derive(Debug, Clone)]
pub struct TaskHead {
    pub task: Task,
    pub mlp: Mlp,
}

impl TaskHead {
    pub fn new(task: Task, input: usize, hidden: usize, dropout: f64, rng: &mut Rng) -> Self {
        TaskHead {
            task,
            mlp: Mlp::new(input, hidden, task.out_dim(), dropout, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.output.out_dim()
    }

    pub fn forward(&self, h: &Tensor, rng: Option<&mut Rng>) -> Result<Tensor> {
        let y = self.mlp.forward(h, rng)?;
        Ok(match self.task {
            Task::Va => y.tanh(),
            Task::Expr | Task::Au => y,
        })
    }
}

impl Module for TaskHead {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.mlp.collect_params(&join(prefix, "head"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub input_dim: usize,
    pub tcn: TcnConfig,
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    pub head_dropout: f64,
}

impl ModelConfig {
    /// Small defaults: 4 residual blocks with k = 3 and dilations 1/2/4/8,
    /// a depth-4, 4-head pre-norm encoder with ffn = 4 × width, and a
    /// one-hidden-layer head with dropout 0.3.
    pub fn desk(task: Task, input_dim: usize, model_dim: usize) -> Self {
        ModelConfig {
            task,
            input_dim,
            tcn: TcnConfig::uniform(3, &[1, 2, 4, 8], model_dim, 0.1),
            encoder: EncoderConfig {
                depth: 4,
                heads: 4,
                model_dim,
                ffn_dim: 4 * model_dim,
                dropout: 0.1,
            },
            head_hidden: model_dim,
            head_dropout: 0.3,
        }
    }
}

/// features → TCN → transformer encoder → head, for one segment.
#[derive(Debug, Clone)]
pub struct TemporalModel {
    pub config: ModelConfig,
    pub tcn: Tcn,
    pub encoder: TemporalEncoder,
    pub head: TaskHead,
}

impl TemporalModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let tcn = Tcn::new(config.input_dim, &config.tcn, rng)?;
        let c = config.tcn.out_channels(config.input_dim);
        let encoder = TemporalEncoder::new(c, &config.encoder, rng)?;
        let head = TaskHead::new(
            config.task,
            config.encoder.model_dim,
            config.head_hidden,
            config.head_dropout,
            rng,
        );
        Ok(TemporalModel {
            config,
            tcn,
            encoder,
            head,
        })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    /// `[w×d] → [w×out_dim]`. `rng = None` is evaluation mode.
    pub fn forward(&self, frames: &Tensor, pad_mask: &[bool], mut rng: Option<&mut Rng>) -> Result<Tensor> {
        let g = self.tcn.forward(frames, rng.as_deref_mut())?;
        let h = self.encoder.forward(&g, Some(pad_mask), rng.as_deref_mut())?;
        self.head.forward(&h, rng)
    }
}

impl Module for TemporalModel {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.tcn.collect_params(prefix, out);
        self.encoder.collect_params(prefix, out);
        self.head.collect_params(prefix, out);
    }
}
