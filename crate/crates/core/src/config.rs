//! Run configuration as a flat `key = value` text file.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown keys are errors. [`Config::default`] holds the published
//! training settings; `configs/desk.txt` overrides them for laptop-scale
//! runs. Layering is built-in < config file < command-line flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::data::SyntheticSpec;
use crate::labels::Task;
use crate::mae::{MaeConfig, MaeTrainConfig};
use crate::segmentation::SegmentationConfig;
use crate::temporal::{EncoderConfig, ModelConfig, TcnConfig};
use crate::trainer::optim::OptimConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Syntax {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config key '{key}': cannot parse '{value}' ({expected})")]
    Value {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// How CCC is aggregated over an evaluation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CccAggregation {
    /// One CCC over the concatenation of all frames.
    Pooled,
    /// Mean of per-video CCCs.
    PerVideo,
}

impl fmt::Display for CccAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CccAggregation::Pooled => "pooled",
            CccAggregation::PerVideo => "per_video",
        })
    }
}

impl FromStr for CccAggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(CccAggregation::Pooled),
            "per_video" => Ok(CccAggregation::PerVideo),
            _ => Err(format!("expected pooled or per_video, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,

    pub optim: OptimConfig,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub window: usize,
    pub stride: usize,

    pub model_dim: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
    pub tcn_dropout: f64,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub ffn_dim: usize,
    pub enc_dropout: f64,
    pub head_hidden: usize,

    pub au_threshold: f64,
    pub ccc_aggregation: CccAggregation,
    pub folds: usize,

    pub synthetic: SyntheticSpec,

    pub mae: MaeConfig,
    pub mae_pretrain_epochs: usize,
    pub mae_pretrain_batch: usize,
    pub mae_pretrain_lr: f64,
    pub mae_finetune_epochs: usize,
    pub mae_finetune_batch: usize,
    pub mae_finetune_lr: f64,
    pub mae_weight_decay: f64,
    pub mae_fc_hidden: usize,
    pub mae_fc_dropout: f64,
    /// Use every n-th frame when fine-tuning on rendered video frames.
    pub mae_frame_step: usize,
}

impl Default for Config {
    /// Published settings where they exist (task lr 3e-5, weight decay
    /// 1e-5, dropout 0.3, batch 32, window 300, stride 200; MAE lr 5e-4 at
    /// batch 1024 for 500 epochs, fine-tuning lr 1e-4 at batch 256), small
    /// architecture dimensions elsewhere.
    fn default() -> Self {
        Config {
            seed: 0,
            optim: OptimConfig::default(),
            grad_clip: Some(1.0),
            window: 300,
            stride: 200,
            model_dim: 64,
            tcn_kernel: 3,
            tcn_dilations: vec![1, 2, 4, 8],
            tcn_dropout: 0.1,
            enc_depth: 4,
            enc_heads: 4,
            ffn_dim: 256,
            enc_dropout: 0.1,
            head_hidden: 64,
            au_threshold: 0.5,
            ccc_aggregation: CccAggregation::Pooled,
            folds: 5,
            synthetic: SyntheticSpec::default(),
            mae: MaeConfig::default(),
            mae_pretrain_epochs: 500,
            mae_pretrain_batch: 1024,
            mae_pretrain_lr: 5e-4,
            mae_finetune_epochs: 10,
            mae_finetune_batch: 256,
            mae_finetune_lr: 1e-4,
            mae_weight_decay: 0.05,
            mae_fc_hidden: 64,
            mae_fc_dropout: 0.3,
            mae_frame_step: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|v| parse(key, v.trim(), "comma-separated positive integers"))
        .collect()
}

impl Config {
    /// Laptop-scale settings: short windows, a larger learning rate and
    /// small batches, so the synthetic tasks train in minutes.
    pub fn desk() -> Self {
        let mut c = Config::default();
        for (k, v) in DESK_OVERRIDES {
            c.set(k, v).expect("built-in desk overrides are valid");
        }
        c
    }

    /// Set one key. Values are validated only as a whole by [`Config::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        const F: &str = "a number";
        const U: &str = "a non-negative integer";
        match key {
            "seed" => self.seed = parse(key, v, U)?,
            "lr" => self.optim.lr_peak = parse(key, v, F)?,
            "weight_decay" => self.optim.weight_decay = parse(key, v, F)?,
            "beta1" => self.optim.beta1 = parse(key, v, F)?,
            "beta2" => self.optim.beta2 = parse(key, v, F)?,
            "eps" => self.optim.eps = parse(key, v, F)?,
            "batch_size" => self.optim.batch_size = parse(key, v, U)?,
            "dropout" => self.optim.dropout = parse(key, v, F)?,
            "epochs" => self.optim.epochs = parse(key, v, U)?,
            "grad_clip" => {
                let c: f64 = parse(key, v, F)?;
                self.grad_clip = (c > 0.0).then_some(c);
            }
            "window" => self.window = parse(key, v, U)?,
            "stride" => self.stride = parse(key, v, U)?,
            "model_dim" => self.model_dim = parse(key, v, U)?,
            "tcn_kernel" => self.tcn_kernel = parse(key, v, U)?,
            "tcn_dilations" => self.tcn_dilations = parse_list(key, v)?,
            "tcn_dropout" => self.tcn_dropout = parse(key, v, F)?,
            "enc_depth" => self.enc_depth = parse(key, v, U)?,
            "enc_heads" => self.enc_heads = parse(key, v, U)?,
            "ffn_dim" => self.ffn_dim = parse(key, v, U)?,
            "enc_dropout" => self.enc_dropout = parse(key, v, F)?,
            "head_hidden" => self.head_hidden = parse(key, v, U)?,
            "au_threshold" => self.au_threshold = parse(key, v, F)?,
            "ccc_aggregation" => {
                self.ccc_aggregation = v.parse().map_err(|_| ConfigError::Value {
                    key: key.into(),
                    value: v.into(),
                    expected: "pooled or per_video",
                })?
            }
            "folds" => self.folds = parse(key, v, U)?,
            "num_videos" => self.synthetic.num_videos = parse(key, v, U)?,
            "frames_per_video" => self.synthetic.frames_per_video = parse(key, v, U)?,
            "latent_dim" => self.synthetic.latent_dim = parse(key, v, U)?,
            "feature_dim" => self.synthetic.feature_dim = parse(key, v, U)?,
            "noise_std" => self.synthetic.noise_std = parse(key, v, F)?,
            "mae_image_height" => self.mae.image_height = parse(key, v, U)?,
            "mae_image_width" => self.mae.image_width = parse(key, v, U)?,
            "mae_channels" => self.mae.channels = parse(key, v, U)?,
            "mae_patch" => self.mae.patch_size = parse(key, v, U)?,
            "mae_mask_ratio" => self.mae.mask_ratio = parse(key, v, F)?,
            "mae_enc_width" => self.mae.enc_width = parse(key, v, U)?,
            "mae_enc_depth" => self.mae.enc_depth = parse(key, v, U)?,
            "mae_enc_heads" => self.mae.enc_heads = parse(key, v, U)?,
            "mae_dec_width" => self.mae.dec_width = parse(key, v, U)?,
            "mae_dec_depth" => self.mae.dec_depth = parse(key, v, U)?,
            "mae_dec_heads" => self.mae.dec_heads = parse(key, v, U)?,
            "mae_mlp_ratio" => self.mae.mlp_ratio = parse(key, v, U)?,
            "mae_pretrain_epochs" => self.mae_pretrain_epochs = parse(key, v, U)?,
            "mae_pretrain_batch" => self.mae_pretrain_batch = parse(key, v, U)?,
            "mae_pretrain_lr" => self.mae_pretrain_lr = parse(key, v, F)?,
            "mae_finetune_epochs" => self.mae_finetune_epochs = parse(key, v, U)?,
            "mae_finetune_batch" => self.mae_finetune_batch = parse(key, v, U)?,
            "mae_finetune_lr" => self.mae_finetune_lr = parse(key, v, F)?,
            "mae_weight_decay" => self.mae_weight_decay = parse(key, v, F)?,
            "mae_fc_hidden" => self.mae_fc_hidden = parse(key, v, U)?,
            "mae_fc_dropout" => self.mae_fc_dropout = parse(key, v, F)?,
            "mae_frame_step" => self.mae_frame_step = parse(key, v, U)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order. Feeding these
    /// back through [`Config::set`] reproduces `self`.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let dil: Vec<String> = self.tcn_dilations.iter().map(|d| d.to_string()).collect();
        vec![
            ("seed", self.seed.to_string()),
            ("lr", self.optim.lr_peak.to_string()),
            ("weight_decay", self.optim.weight_decay.to_string()),
            ("beta1", self.optim.beta1.to_string()),
            ("beta2", self.optim.beta2.to_string()),
            ("eps", self.optim.eps.to_string()),
            ("batch_size", self.optim.batch_size.to_string()),
            ("dropout", self.optim.dropout.to_string()),
            ("epochs", self.optim.epochs.to_string()),
            ("grad_clip", self.grad_clip.unwrap_or(0.0).to_string()),
            ("window", self.window.to_string()),
            ("stride", self.stride.to_string()),
            ("model_dim", self.model_dim.to_string()),
            ("tcn_kernel", self.tcn_kernel.to_string()),
            ("tcn_dilations", dil.join(",")),
            ("tcn_dropout", self.tcn_dropout.to_string()),
            ("enc_depth", self.enc_depth.to_string()),
            ("enc_heads", self.enc_heads.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("enc_dropout", self.enc_dropout.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("au_threshold", self.au_threshold.to_string()),
            ("ccc_aggregation", self.ccc_aggregation.to_string()),
            ("folds", self.folds.to_string()),
            ("num_videos", self.synthetic.num_videos.to_string()),
            ("frames_per_video", self.synthetic.frames_per_video.to_string()),
            ("latent_dim", self.synthetic.latent_dim.to_string()),
            ("feature_dim", self.synthetic.feature_dim.to_string()),
            ("noise_std", self.synthetic.noise_std.to_string()),
            ("mae_image_height", self.mae.image_height.to_string()),
            ("mae_image_width", self.mae.image_width.to_string()),
            ("mae_channels", self.mae.channels.to_string()),
            ("mae_patch", self.mae.patch_size.to_string()),
            ("mae_mask_ratio", self.mae.mask_ratio.to_string()),
            ("mae_enc_width", self.mae.enc_width.to_string()),
            ("mae_enc_depth", self.mae.enc_depth.to_string()),
            ("mae_enc_heads", self.mae.enc_heads.to_string()),
            ("mae_dec_width", self.mae.dec_width.to_string()),
            ("mae_dec_depth", self.mae.dec_depth.to_string()),
            ("mae_dec_heads", self.mae.dec_heads.to_string()),
            ("mae_mlp_ratio", self.mae.mlp_ratio.to_string()),
            ("mae_pretrain_epochs", self.mae_pretrain_epochs.to_string()),
            ("mae_pretrain_batch", self.mae_pretrain_batch.to_string()),
            ("mae_pretrain_lr", self.mae_pretrain_lr.to_string()),
            ("mae_finetune_epochs", self.mae_finetune_epochs.to_string()),
            ("mae_finetune_batch", self.mae_finetune_batch.to_string()),
            ("mae_finetune_lr", self.mae_finetune_lr.to_string()),
            ("mae_weight_decay", self.mae_weight_decay.to_string()),
            ("mae_fc_hidden", self.mae_fc_hidden.to_string()),
            ("mae_fc_dropout", self.mae_fc_dropout.to_string()),
            ("mae_frame_step", self.mae_frame_step.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Apply `key = value` lines from `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    source_name: source_name.to_string(),
                    line: i + 1,
                    message: format!("expected 'key = value', got '{line}'"),
                });
            };
            self.set(key.trim(), value).map_err(|e| ConfigError::Syntax {
                source_name: source_name.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.optim.validate().map_err(invalid)?;
        self.segmentation().map_err(|e| invalid(e.to_string()))?;
        self.model_config(Task::Va, self.model_dim.max(1))
            .tcn
            .validate(self.model_dim)
            .map_err(|e| invalid(e.to_string()))?;
        EncoderConfig {
            depth: self.enc_depth,
            heads: self.enc_heads,
            model_dim: self.model_dim,
            ffn_dim: self.ffn_dim,
            dropout: self.enc_dropout,
        }
        .validate()
        .map_err(|e| invalid(e.to_string()))?;
        for (name, p) in [
            ("tcn_dropout", self.tcn_dropout),
            ("enc_dropout", self.enc_dropout),
            ("mae_fc_dropout", self.mae_fc_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if self.head_hidden == 0 {
            return Err(invalid("head_hidden must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.au_threshold) {
            return Err(invalid(format!("au_threshold must lie in [0, 1], got {}", self.au_threshold)));
        }
        if self.folds < 2 {
            return Err(invalid(format!("folds must be >= 2, got {}", self.folds)));
        }
        self.synthetic_spec().validate().map_err(|e| invalid(e.to_string()))?;
        self.mae.validate().map_err(|e| invalid(e.to_string()))?;
        for (name, v) in [
            ("mae_pretrain_epochs", self.mae_pretrain_epochs),
            ("mae_pretrain_batch", self.mae_pretrain_batch),
            ("mae_finetune_epochs", self.mae_finetune_epochs),
            ("mae_finetune_batch", self.mae_finetune_batch),
            ("mae_fc_hidden", self.mae_fc_hidden),
            ("mae_frame_step", self.mae_frame_step),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [("mae_pretrain_lr", self.mae_pretrain_lr), ("mae_finetune_lr", self.mae_finetune_lr)] {
            if !(v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn segmentation(&self) -> Result<SegmentationConfig, crate::segmentation::SegmentationError> {
        SegmentationConfig::new(self.window, self.stride)
    }

    pub fn model_config(&self, task: Task, input_dim: usize) -> ModelConfig {
        ModelConfig {
            task,
            input_dim,
            tcn: TcnConfig::uniform(self.tcn_kernel, &self.tcn_dilations, self.model_dim, self.tcn_dropout),
            encoder: EncoderConfig {
                depth: self.enc_depth,
                heads: self.enc_heads,
                model_dim: self.model_dim,
                ffn_dim: self.ffn_dim,
                dropout: self.enc_dropout,
            },
            head_hidden: self.head_hidden,
            head_dropout: self.optim.dropout,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.seed,
            ..self.synthetic
        }
    }

    /// Pre-training settings for `images` images; the batch is capped at
    /// the image count.
    pub fn mae_pretrain(&self, images: usize) -> MaeTrainConfig {
        let batch = self.mae_pretrain_batch.min(images.max(1));
        MaeTrainConfig {
            steps: self.mae_pretrain_epochs * images.max(1).div_ceil(batch),
            batch_size: batch,
            lr: self.mae_pretrain_lr,
            weight_decay: self.mae_weight_decay,
            grad_clip: self.grad_clip,
            seed: self.seed,
        }
    }

    pub fn mae_finetune(&self, images: usize) -> MaeTrainConfig {
        let batch = self.mae_finetune_batch.min(images.max(1));
        MaeTrainConfig {
            steps: self.mae_finetune_epochs * images.max(1).div_ceil(batch),
            batch_size: batch,
            lr: self.mae_finetune_lr,
            weight_decay: self.mae_weight_decay,
            grad_clip: self.grad_clip,
            seed: self.seed,
        }
    }
}

/// Overrides applied by [`Config::desk`]; `configs/desk.txt` holds the
/// same values.
pub const DESK_OVERRIDES: &[(&str, &str)] = &[
    ("lr", "1e-3"),
    ("batch_size", "8"),
    ("epochs", "20"),
    ("window", "64"),
    ("stride", "32"),
    ("model_dim", "32"),
    ("ffn_dim", "128"),
    ("head_hidden", "32"),
    ("mae_pretrain_epochs", "13"),
    ("mae_pretrain_batch", "16"),
    ("mae_finetune_epochs", "5"),
    ("mae_finetune_batch", "16"),
    ("mae_finetune_lr", "5e-4"),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip_through_text() {
        let mut c = Config::desk();
        c.seed = 42;
        c.grad_clip = None;
        c.tcn_dilations = vec![1, 3];
        c.ccc_aggregation = CccAggregation::PerVideo;
        let mut back = Config::default();
        back.apply_text(&c.to_text(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_blank_lines_and_errors() {
        let mut c = Config::default();
        c.apply_text("# header\n\nlr = 0.01  # peak\n", "t").unwrap();
        assert_eq!(c.optim.lr_peak, 0.01);
        let err = c.apply_text("epochs = 3\nbogus = 1\n", "t").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }), "{err}");
        assert!(c.apply_text("epochs three", "t").is_err());
        assert!(c.apply_text("epochs = three", "t").is_err());
    }

    #[test]
    fn defaults_carry_published_values_and_validate() {
        let c = Config::default();
        assert_eq!(
            (c.optim.lr_peak, c.optim.weight_decay, c.optim.dropout, c.optim.batch_size),
            (3e-5, 1e-5, 0.3, 32)
        );
        assert_eq!((c.window, c.stride), (300, 200));
        c.validate().unwrap();
        Config::desk().validate().unwrap();
    }

    #[test]
    fn invalid_combinations_are_caught() {
        let mut c = Config::desk();
        c.stride = c.window + 1;
        assert!(c.validate().is_err());
        let mut c = Config::desk();
        c.enc_heads = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mae_batch_is_capped_by_image_count() {
        let c = Config::default();
        let t = c.mae_pretrain(64);
        assert_eq!((t.batch_size, t.steps), (64, 500));
    }
}
