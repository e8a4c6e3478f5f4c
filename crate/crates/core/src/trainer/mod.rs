//! The optimisation loop over segment batches, per-epoch validation on
//! reassembled frame predictions, and prediction export.

pub mod folds;
pub mod optim;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use thiserror::Error;

pub use folds::{run_folds, split_by_fold, FoldRow, FoldTable};
use optim::{clip_grad_norm, lr_at, AdamW, OptimConfig, OptimError, ScheduleState};

use crate::config::{CccAggregation, Config};
use crate::data::annotations::{prediction_labels, VideoPrediction};
use crate::data::DataError;
use crate::labels::{Task, TaskLabels, NUM_AU};
use crate::nn::Module;
use crate::objectives::{au_loss, expr_loss, score_labels, va_loss, MetricError, MetricReport};
use crate::segmentation::{reassemble, split, split_features, FrameSequence, Segment, SegmentationConfig, SegmentationError};
use crate::temporal::{TemporalError, TemporalModel};
use crate::tensor::{Tensor, TensorError};
use crate::Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}; parameters restored to epoch {restored:?}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        restored: Option<usize>,
    },
    #[error("validation and training folds share videos: {0:?}")]
    Leak(Vec<String>),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub segmentation: SegmentationConfig,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub au_threshold: f64,
    pub ccc_aggregation: CccAggregation,
}

impl TrainConfig {
    pub fn from_config(cfg: &Config) -> Result<Self, TrainError> {
        Ok(TrainConfig {
            optim: cfg.optim,
            segmentation: cfg.segmentation()?,
            grad_clip: cfg.grad_clip,
            seed: cfg.seed,
            au_threshold: cfg.au_threshold,
            ccc_aggregation: cfg.ccc_aggregation,
        })
    }
}

/// One optimiser step, or an epoch-end validation record when
/// `val_primary` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_primary: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochSummary>,
    /// 1-based epoch whose parameters the model holds on return.
    pub best_epoch: usize,
    pub best_report: MetricReport,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.loss).collect()
    }
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,step,lr,loss,val_primary")?;
    for r in rows {
        let val = r.val_primary.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.epoch, r.step, r.lr, r.loss, val)?;
    }
    w.flush()
}

/// A training window with its labels padded to the window length.
struct LabelledSegment {
    segment: Segment,
    labels: TaskLabels,
    /// Real and validly annotated rows.
    mask: Vec<bool>,
}

fn labelled_segments(seqs: &[FrameSequence], cfg: &SegmentationConfig) -> Result<Vec<LabelledSegment>, TrainError> {
    let mut out = Vec::new();
    for seq in seqs {
        for segment in split(seq, cfg)? {
            let range = segment.frame_range();
            let w = segment.window();
            let pad = w - range.len();
            let mut mask = seq.valid[range.clone()].to_vec();
            mask.resize(w, false);
            let labels = match seq.labels.slice(range) {
                TaskLabels::Va(mut v) => {
                    v.resize(w, [0.0; 2]);
                    TaskLabels::Va(v)
                }
                TaskLabels::Expr(mut v) => {
                    v.resize(w, -1);
                    TaskLabels::Expr(v)
                }
                TaskLabels::Au(mut v) => {
                    v.resize(w, [0; NUM_AU]);
                    TaskLabels::Au(v)
                }
            };
            debug_assert_eq!(labels.len(), w, "{pad} padded rows");
            // a window needs two valid frames to carry any CCC signal
            if mask.iter().filter(|&&m| m).count() >= 2 {
                out.push(LabelledSegment { segment, labels, mask });
            }
        }
    }
    Ok(out)
}

fn batch_loss(
    model: &TemporalModel,
    batch: &[&LabelledSegment],
    mut rng: Option<&mut Rng>,
) -> Result<Tensor, TrainError> {
    let outputs = batch
        .iter()
        .map(|s| model.forward(&s.segment.frames, &s.segment.pad_mask, rng.as_deref_mut()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = Tensor::concat(&outputs, 0)?;
    let mask: Vec<bool> = batch.iter().flat_map(|s| s.mask.iter().copied()).collect();
    let loss = match model.task() {
        Task::Va => {
            let targets: Vec<[f64; 2]> = batch
                .iter()
                .flat_map(|s| match &s.labels {
                    TaskLabels::Va(v) => v.clone(),
                    _ => unreachable!("labels match the model task"),
                })
                .collect();
            va_loss(&out, &targets, &mask)?
        }
        Task::Expr => {
            let ids: Vec<i64> = batch
                .iter()
                .flat_map(|s| match &s.labels {
                    TaskLabels::Expr(v) => v.clone(),
                    _ => unreachable!("labels match the model task"),
                })
                .collect();
            expr_loss(&out, &ids, &mask)?
        }
        Task::Au => {
            let targets: Vec<f64> = batch
                .iter()
                .flat_map(|s| match &s.labels {
                    TaskLabels::Au(v) => v.iter().flatten().map(|&a| a.max(0) as f64).collect::<Vec<_>>(),
                    _ => unreachable!("labels match the model task"),
                })
                .collect();
            let entry_mask: Vec<bool> = mask.iter().flat_map(|&m| std::iter::repeat_n(m, NUM_AU)).collect();
            au_loss(&out, &targets, &entry_mask)?
        }
    };
    Ok(loss)
}

fn snapshot(params: &[(String, Tensor)]) -> Vec<Vec<f64>> {
    params.iter().map(|(_, p)| p.to_vec()).collect()
}

fn restore(params: &[(String, Tensor)], values: &[Vec<f64>]) {
    for ((_, p), v) in params.iter().zip(values) {
        p.set_data(v.clone()).expect("snapshot matches parameter shapes");
    }
}

/// Train `model` on `train`, validating on `val` after every epoch. On
/// return the model holds the parameters of the best validation epoch.
pub fn train_task(
    task: Task,
    model: &TemporalModel,
    train: &[FrameSequence],
    val: &[FrameSequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if model.task() != task {
        return Err(TrainError::Config(format!("model predicts {}, asked to train {task}", model.task())));
    }
    if cfg.optim.lr_peak < 0.0 {
        return Err(TrainError::Config("learning rate must be >= 0".into()));
    }
    if cfg.optim.batch_size == 0 || cfg.optim.epochs == 0 {
        return Err(TrainError::Config("batch_size and epochs must be >= 1".into()));
    }
    if val.is_empty() {
        return Err(TrainError::Config("validation split is empty".into()));
    }
    for seq in train.iter().chain(val) {
        if seq.labels.task() != task {
            return Err(TrainError::Config(format!("'{}' carries {} labels", seq.video_id, seq.labels.task())));
        }
    }
    let segments = labelled_segments(train, &cfg.segmentation)?;
    if segments.is_empty() {
        return Err(TrainError::Config("no training segment has annotated frames".into()));
    }
    let params = model.named_parameters();
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&cfg.optim);
    let steps_per_epoch = segments.len().div_ceil(cfg.optim.batch_size);
    let mut sched = ScheduleState::for_epochs(steps_per_epoch, cfg.optim.epochs);
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut log = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, MetricReport, Vec<Vec<f64>>)> = None;

    for epoch in 1..=cfg.optim.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.optim.batch_size) {
            let batch: Vec<&LabelledSegment> = chunk.iter().map(|&i| &segments[i]).collect();
            let loss = batch_loss(model, &batch, Some(&mut rng))?;
            let value = loss.item();
            let step = sched.step + 1;
            let diverged = |reason: String, best: &Option<(usize, MetricReport, Vec<Vec<f64>>)>| {
                if let Some((_, _, values)) = best {
                    restore(&params, values);
                }
                TrainError::Diverged {
                    epoch,
                    step,
                    reason,
                    restored: best.as_ref().map(|b| b.0),
                }
            };
            if !value.is_finite() {
                return Err(diverged(format!("loss is {value}"), &best));
            }
            params.iter().for_each(|(_, p)| p.zero_grad());
            loss.backward()?;
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(&params, max);
            }
            sched.step += 1;
            let lr = lr_at(&sched, cfg.optim.lr_peak);
            if let Err(e @ OptimError::NonFiniteGradient { .. }) = opt.step(&params, lr) {
                return Err(diverged(e.to_string(), &best));
            }
            epoch_loss += value;
            log.push(LogRow {
                epoch,
                step: sched.step,
                lr,
                loss: value,
                val_primary: None,
            });
        }
        let (report, _) = evaluate(model, val, cfg)?;
        let primary = report.primary();
        if let Some(last) = log.last_mut() {
            last.val_primary = Some(primary);
        }
        let mean_loss = epoch_loss / steps_per_epoch as f64;
        log::info!("{task} epoch {epoch}/{}: loss {mean_loss:.5}, val {primary:.4}", cfg.optim.epochs);
        let improved = match &best {
            None => true,
            Some((_, r, _)) => primary > r.primary() || (r.primary().is_nan() && !primary.is_nan()),
        };
        if improved {
            best = Some((epoch, report.clone(), snapshot(&params)));
        }
        epochs.push(EpochSummary {
            epoch,
            mean_loss,
            report,
        });
    }
    let (best_epoch, best_report, values) = best.expect("at least one epoch ran");
    restore(&params, &values);
    Ok(TrainOutcome {
        epochs,
        best_epoch,
        best_report,
        log,
    })
}

/// Eval-mode outputs `[n×out_dim]` for one video: window, predict, and
/// average overlapping windows back onto frames.
pub fn predict_video(
    model: &TemporalModel,
    video_id: &str,
    features: &Tensor,
    seg: &SegmentationConfig,
) -> Result<Tensor, TrainError> {
    let n = features.shape().first().copied().unwrap_or(0);
    let preds = split_features(video_id, features, seg)?
        .into_iter()
        .map(|s| {
            let out = model.forward(&s.frames, &s.pad_mask, None)?.detach();
            Ok((s, out))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(reassemble(n, &preds)?)
}

pub fn predict(
    model: &TemporalModel,
    videos: &[(String, Tensor)],
    seg: &SegmentationConfig,
) -> Result<Vec<VideoPrediction>, TrainError> {
    videos
        .iter()
        .map(|(id, f)| {
            Ok(VideoPrediction {
                video_id: id.clone(),
                outputs: predict_video(model, id, f, seg)?,
            })
        })
        .collect()
}

/// Score already-reassembled outputs against the sequences' labels.
pub fn score_predictions(
    task: Task,
    preds: &[VideoPrediction],
    seqs: &[FrameSequence],
    au_threshold: f64,
    aggregation: CccAggregation,
) -> Result<MetricReport, TrainError> {
    let labels = preds
        .iter()
        .map(|p| Ok(prediction_labels(task, &p.outputs, au_threshold)?))
        .collect::<Result<Vec<_>, TrainError>>()?;
    let pairs: Vec<(&TaskLabels, &TaskLabels)> = labels.iter().zip(seqs.iter().map(|s| &s.labels)).collect();
    let mut report = score_labels(task, &pairs)?;
    if task == Task::Va && aggregation == CccAggregation::PerVideo {
        let per_video: Vec<MetricReport> = pairs
            .iter()
            .filter_map(|pair| score_labels(task, std::slice::from_ref(pair)).ok())
            .collect();
        if per_video.is_empty() {
            return Err(MetricError::EmptyBatch.into());
        }
        let mean = |f: fn(&MetricReport) -> Option<f64>| {
            per_video.iter().filter_map(f).sum::<f64>() / per_video.len() as f64
        };
        report.ccc_v = Some(mean(|r| r.ccc_v));
        report.ccc_a = Some(mean(|r| r.ccc_a));
    }
    Ok(report)
}

/// Predict every sequence and score the pooled frames.
pub fn evaluate(
    model: &TemporalModel,
    seqs: &[FrameSequence],
    cfg: &TrainConfig,
) -> Result<(MetricReport, Vec<VideoPrediction>), TrainError> {
    let preds = seqs
        .iter()
        .map(|s| {
            Ok(VideoPrediction {
                video_id: s.video_id.clone(),
                outputs: predict_video(model, &s.video_id, &s.features, &cfg.segmentation)?,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let report = score_predictions(model.task(), &preds, seqs, cfg.au_threshold, cfg.ccc_aggregation)?;
    Ok((report, preds))
}
