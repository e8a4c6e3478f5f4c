//! Dataset directories, annotation files, the synthetic generator and
//! image ingestion.
//!
//! On-disk layout of a dataset root:
//!
//! ```text
//! annotations/VA/<video>.txt
//! annotations/EXPR/<video>.txt
//! annotations/AU/<video>.txt
//! features/<video>.bin        f32 tensor blob, [frames×dim]
//! frames/<video>/<n>.pgm      optional rendered frames
//! folds.txt                   <video>,<fold> per line
//! ```

pub mod annotations;
pub mod pnm;
pub mod synthetic;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use thiserror::Error;

pub use annotations::{load_annotations, write_predictions, AnnotationFile, VideoPrediction};
pub use synthetic::{generate_synthetic, OracleScores, SyntheticDataset, SyntheticSpec};

use crate::labels::{Task, TaskLabels};
use crate::objectives::MetricError;
use crate::segmentation::{FrameSequence, SegmentationError};
use crate::tensor::{read_blob, write_blob, Tensor, TensorError};
use crate::Rng;

pub const ANNOTATIONS_DIR: &str = "annotations";
pub const FEATURES_DIR: &str = "features";
pub const FRAMES_DIR: &str = "frames";
pub const FOLDS_FILE: &str = "folds.txt";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("missing {0}")]
    Missing(PathBuf),
    #[error("{0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the failure is bad input (as opposed to an I/O fault).
    pub fn is_validation(&self) -> bool {
        !matches!(self, DataError::Io { .. })
    }
}

/// One video: its frame features and whichever label tracks exist.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub video_id: String,
    pub features: Tensor,
    pub va: Option<TaskLabels>,
    pub expr: Option<TaskLabels>,
    pub au: Option<TaskLabels>,
}

impl VideoRecord {
    pub fn num_frames(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn labels(&self, task: Task) -> Option<&TaskLabels> {
        match task {
            Task::Va => self.va.as_ref(),
            Task::Expr => self.expr.as_ref(),
            Task::Au => self.au.as_ref(),
        }
    }

    fn labels_mut(&mut self, task: Task) -> &mut Option<TaskLabels> {
        match task {
            Task::Va => &mut self.va,
            Task::Expr => &mut self.expr,
            Task::Au => &mut self.au,
        }
    }

    pub fn sequence(&self, task: Task) -> Result<Option<FrameSequence>, DataError> {
        let Some(labels) = self.labels(task) else {
            return Ok(None);
        };
        Ok(Some(FrameSequence::new(
            self.video_id.clone(),
            self.features.clone(),
            labels.clone(),
            labels.validity(),
        )?))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn video_ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.video_id.clone()).collect()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.features.shape()[1])
    }

    pub fn index_of(&self, video_id: &str) -> Option<usize> {
        self.videos.iter().position(|v| v.video_id == video_id)
    }

    /// Sequences of the videos at `indices` that carry `task` labels.
    pub fn sequences(&self, task: Task, indices: &[usize]) -> Result<Vec<FrameSequence>, DataError> {
        let mut out = Vec::new();
        for &i in indices {
            if let Some(seq) = self.videos[i].sequence(task)? {
                out.push(seq);
            }
        }
        Ok(out)
    }

    pub fn all_sequences(&self, task: Task) -> Result<Vec<FrameSequence>, DataError> {
        let all: Vec<usize> = (0..self.videos.len()).collect();
        self.sequences(task, &all)
    }

    /// Read `features/*.bin` and every annotation directory present.
    pub fn load(root: &Path) -> Result<Dataset, DataError> {
        let feat_dir = root.join(FEATURES_DIR);
        if !feat_dir.is_dir() {
            return Err(DataError::Missing(feat_dir));
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&feat_dir)
            .map_err(|e| DataError::io(&feat_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        paths.sort();
        let mut videos = Vec::with_capacity(paths.len());
        for path in paths {
            let file = fs::File::open(&path).map_err(|e| DataError::io(&path, e))?;
            let features = read_blob(&mut io::BufReader::new(file)).map_err(|e| DataError::io(&path, e))?;
            if features.rank() != 2 {
                return Err(DataError::Mismatch(format!(
                    "{}: features must be [frames×dim], got {:?}",
                    path.display(),
                    features.shape()
                )));
            }
            let video_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            videos.push(VideoRecord {
                video_id,
                features,
                va: None,
                expr: None,
                au: None,
            });
        }
        let mut data = Dataset { videos };
        let ann = root.join(ANNOTATIONS_DIR);
        for task in Task::ALL {
            if !ann.join(task.dir_name()).is_dir() {
                continue;
            }
            for file in load_annotations(&ann, task)? {
                data.attach(file)?;
            }
        }
        Ok(data)
    }

    /// Attach an annotation track to its video, checking the frame count.
    pub fn attach(&mut self, file: AnnotationFile) -> Result<(), DataError> {
        let i = self.index_of(&file.video_id).ok_or_else(|| {
            DataError::Mismatch(format!(
                "{} annotation for '{}' has no feature file",
                file.task, file.video_id
            ))
        })?;
        let video = &mut self.videos[i];
        if file.len() != video.num_frames() {
            return Err(DataError::Mismatch(format!(
                "'{}': {} annotation has {} frames, features have {}",
                file.video_id,
                file.task,
                file.len(),
                video.num_frames()
            )));
        }
        *video.labels_mut(file.task) = Some(file.labels);
        Ok(())
    }

    pub fn save(&self, root: &Path) -> Result<(), DataError> {
        let feat_dir = root.join(FEATURES_DIR);
        fs::create_dir_all(&feat_dir).map_err(|e| DataError::io(&feat_dir, e))?;
        let ann = root.join(ANNOTATIONS_DIR);
        for v in &self.videos {
            write_features(&feat_dir.join(format!("{}.bin", v.video_id)), &v.features)?;
            for task in Task::ALL {
                if let Some(labels) = v.labels(task) {
                    annotations::write_annotation(
                        &ann,
                        &AnnotationFile {
                            task,
                            video_id: v.video_id.clone(),
                            labels: labels.clone(),
                        },
                    )?;
                }
            }
        }
        Ok(())
    }
}

pub fn write_features(path: &Path, features: &Tensor) -> Result<(), DataError> {
    let mut file = io::BufWriter::new(fs::File::create(path).map_err(|e| DataError::io(path, e))?);
    write_blob(&mut file, features).map_err(|e| DataError::io(path, e))?;
    io::Write::flush(&mut file).map_err(|e| DataError::io(path, e))
}

/// Video-level fold assignment: a seeded shuffle dealt round-robin, so
/// fold sizes differ by at most one.
pub fn assign_folds(num_videos: usize, k: usize, seed: u64) -> Result<Vec<usize>, DataError> {
    if k < 2 {
        return Err(DataError::Config(format!("need at least 2 folds, got {k}")));
    }
    if num_videos < k {
        return Err(DataError::Config(format!("{num_videos} videos cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..num_videos).collect();
    order.shuffle(&mut Rng::seed_from_u64(seed));
    let mut folds = vec![0; num_videos];
    for (rank, &video) in order.iter().enumerate() {
        folds[video] = rank % k;
    }
    Ok(folds)
}

pub fn write_folds(path: &Path, ids: &[String], folds: &[usize]) -> Result<(), DataError> {
    let text: String = ids.iter().zip(folds).map(|(id, f)| format!("{id},{f}\n")).collect();
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

pub fn read_folds(path: &Path) -> Result<Vec<(String, usize)>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let bad = |m: &str| DataError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: m.to_string(),
            };
            let (id, fold) = l.split_once(',').ok_or_else(|| bad("expected '<video>,<fold>'"))?;
            let fold = fold.trim().parse().map_err(|_| bad("fold is not a non-negative integer"))?;
            Ok((id.trim().to_string(), fold))
        })
        .collect()
}

/// Fold of every video in `data`, from `folds.txt` entries.
pub fn folds_for(data: &Dataset, entries: &[(String, usize)]) -> Result<Vec<usize>, DataError> {
    data.videos
        .iter()
        .map(|v| {
            entries
                .iter()
                .find(|(id, _)| *id == v.video_id)
                .map(|&(_, f)| f)
                .ok_or_else(|| DataError::Mismatch(format!("video '{}' has no fold assignment", v.video_id)))
        })
        .collect()
}
