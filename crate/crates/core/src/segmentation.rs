//! Overlapping fixed-length windows over a video's frame features, and the
//! inverse step that folds per-window predictions back onto frames.
//!
//! Window `i` (1-based) starts at frame `(i − 1)·s + 1` and spans `w`
//! frames. A video of `n` frames nominally yields `⌊n/s⌋ + 1` windows;
//! windows whose start lies past frame `n` hold no real frames and are
//! dropped. The last kept window is zero-padded to `w` rows, with its pad
//! mask marking which rows are real.

use thiserror::Error;

use crate::labels::TaskLabels;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("invalid segmentation config: window {window}, stride {stride} (need 1 <= stride <= window)")]
    Config { window: usize, stride: usize },
    #[error("sequence '{0}' has no frames")]
    Empty(String),
    #[error("frame {0} is not covered by any segment")]
    Uncovered(usize),
    #[error("sequence '{video}': {what} has length {got}, expected {expected}")]
    Length {
        video: String,
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, SegmentationError>;

/// One video: features `[n×d]`, its label track and per-frame validity.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub video_id: String,
    pub features: Tensor,
    pub labels: TaskLabels,
    pub valid: Vec<bool>,
}

impl FrameSequence {
    pub fn new(video_id: impl Into<String>, features: Tensor, labels: TaskLabels, valid: Vec<bool>) -> Result<Self> {
        let video_id = video_id.into();
        if features.rank() != 2 {
            return Err(SegmentationError::Tensor(TensorError::Unsupported(format!(
                "features must be [frames×dim], got {:?}",
                features.shape()
            ))));
        }
        let n = features.shape()[0];
        for (what, got) in [("labels", labels.len()), ("valid mask", valid.len())] {
            if got != n {
                return Err(SegmentationError::Length {
                    video: video_id,
                    what,
                    got,
                    expected: n,
                });
            }
        }
        Ok(FrameSequence {
            video_id,
            features,
            labels,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentationConfig {
    pub window: usize,
    pub stride: usize,
}

impl SegmentationConfig {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        let cfg = SegmentationConfig { window, stride };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.stride > self.window {
            return Err(SegmentationError::Config {
                window: self.window,
                stride: self.stride,
            });
        }
        Ok(())
    }

    /// Frames shared by consecutive windows.
    pub fn overlap(&self) -> usize {
        self.window - self.stride
    }
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub video_id: String,
    /// 1-based window index.
    pub index: usize,
    /// 1-based first frame, `(index − 1)·stride + 1`.
    pub start: usize,
    /// `[window×d]`; rows past the end of the video are zero.
    pub frames: Tensor,
    /// `true` where the row is a real frame.
    pub pad_mask: Vec<bool>,
}

impl Segment {
    pub fn window(&self) -> usize {
        self.pad_mask.len()
    }

    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    /// 0-based source frame range of the real rows.
    pub fn frame_range(&self) -> std::ops::Range<usize> {
        self.start - 1..self.start - 1 + self.real_len()
    }
}

/// 1-based start frames of the kept windows for a video of `n` frames.
pub fn segment_starts(n: usize, cfg: &SegmentationConfig) -> Vec<usize> {
    let nominal = n / cfg.stride + 1;
    (1..=nominal)
        .map(|i| (i - 1) * cfg.stride + 1)
        .take_while(|&start| start <= n)
        .collect()
}

pub fn split(seq: &FrameSequence, cfg: &SegmentationConfig) -> Result<Vec<Segment>> {
    split_features(&seq.video_id, &seq.features, cfg)
}

/// [`split`] for unlabelled `[n×d]` features.
pub fn split_features(video_id: &str, features: &Tensor, cfg: &SegmentationConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let (n, d) = match *features.shape() {
        [n, d] => (n, d),
        _ => {
            return Err(SegmentationError::Tensor(TensorError::Unsupported(format!(
                "features must be [frames×dim], got {:?}",
                features.shape()
            ))))
        }
    };
    if n == 0 {
        return Err(SegmentationError::Empty(video_id.to_string()));
    }
    let feats = features.data();
    segment_starts(n, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, start)| {
            let first = start - 1;
            let real = cfg.window.min(n - first);
            let mut rows = vec![0.0; cfg.window * d];
            rows[..real * d].copy_from_slice(&feats[first * d..(first + real) * d]);
            let pad_mask = (0..cfg.window).map(|p| p < real).collect();
            Ok(Segment {
                video_id: video_id.to_string(),
                index: i + 1,
                start,
                frames: Tensor::new(rows, &[cfg.window, d])?,
                pad_mask,
            })
        })
        .collect()
}

/// Average the per-window predictions `[window×out]` of every real frame
/// over all windows covering it. Padded rows are ignored.
pub fn reassemble(n: usize, preds: &[(Segment, Tensor)]) -> Result<Tensor> {
    let out_dim = match preds.first() {
        Some((_, p)) => *p.shape().last().unwrap_or(&1),
        None => return Err(SegmentationError::Uncovered(1)),
    };
    let mut sum = vec![0.0; n * out_dim];
    let mut count = vec![0usize; n];
    for (seg, pred) in preds {
        if pred.shape() != [seg.window(), out_dim] {
            return Err(SegmentationError::Tensor(TensorError::Shape {
                op: "reassemble",
                lhs: vec![seg.window(), out_dim],
                rhs: pred.shape().to_vec(),
            }));
        }
        let p = pred.data();
        for (row, frame) in seg.frame_range().enumerate() {
            if frame >= n {
                return Err(SegmentationError::Length {
                    video: seg.video_id.clone(),
                    what: "segment span",
                    got: frame + 1,
                    expected: n,
                });
            }
            count[frame] += 1;
            for c in 0..out_dim {
                sum[frame * out_dim + c] += p[row * out_dim + c];
            }
        }
    }
    if let Some(frame) = count.iter().position(|&c| c == 0) {
        return Err(SegmentationError::Uncovered(frame + 1));
    }
    for (frame, &c) in count.iter().enumerate() {
        for v in &mut sum[frame * out_dim..(frame + 1) * out_dim] {
            *v /= c as f64;
        }
    }
    Ok(Tensor::new(sum, &[n, out_dim])?)
}
