//! Per-frame annotation files: `<root>/<VA|EXPR|AU>/<video_id>.txt`, one
//! header line, then one comma-separated record per frame.
//!
//! | task | record            | invalid frame                 |
//! |------|-------------------|-------------------------------|
//! | VA   | `valence,arousal` | either value equal to `-5`    |
//! | EXPR | one id in `0..=7` | `-1`                          |
//! | AU   | 12 values in 0/1  | any value `-1`                |
//!
//! VA keeps `-5` as its sentinel because `-1` is a legal valence.

use std::fs;
use std::path::{Path, PathBuf};

use super::DataError;
use crate::labels::{Task, TaskLabels, NUM_AU, NUM_EXPR};
use crate::objectives::argmax_rows;
use crate::tensor::{sigmoid, Tensor};

pub const VA_INVALID: f64 = -5.0;

/// File extension of per-unit AU probability sidecars.
pub const PROB_SIDECAR_EXT: &str = "prob.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationFile {
    pub task: Task,
    pub video_id: String,
    pub labels: TaskLabels,
}

impl AnnotationFile {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn valid(&self) -> Vec<bool> {
        self.labels.validity()
    }

    pub fn to_text(&self) -> String {
        let mut out = self.task.header();
        out.push('\n');
        match &self.labels {
            TaskLabels::Va(v) => v.iter().for_each(|[a, b]| out.push_str(&format!("{a},{b}\n"))),
            TaskLabels::Expr(v) => v.iter().for_each(|c| out.push_str(&format!("{c}\n"))),
            TaskLabels::Au(v) => v.iter().for_each(|row| {
                let fields: Vec<String> = row.iter().map(|a| a.to_string()).collect();
                out.push_str(&fields.join(","));
                out.push('\n');
            }),
        }
        out
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parse one annotation file. `path` is used only in error messages;
/// reported line numbers are 1-based and count the header.
pub fn parse_annotation(text: &str, task: Task, video_id: &str, path: &Path) -> Result<AnnotationFile, DataError> {
    let mut lines: Vec<&str> = text.lines().collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(parse_error(path, 1, "missing header line"));
    }
    let records = &lines[1..];
    let arity = match task {
        Task::Va => 2,
        Task::Expr => 1,
        Task::Au => NUM_AU,
    };
    let mut va = Vec::new();
    let mut expr = Vec::new();
    let mut au = Vec::new();
    for (i, raw) in records.iter().enumerate() {
        let line = i + 2;
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != arity {
            return Err(parse_error(
                path,
                line,
                format!("expected {arity} field(s), found {}", fields.len()),
            ));
        }
        match task {
            Task::Va => {
                let mut pair = [0.0; 2];
                for (slot, f) in pair.iter_mut().zip(&fields) {
                    let v: f64 = f
                        .parse()
                        .map_err(|_| parse_error(path, line, format!("'{f}' is not a number")))?;
                    if v != VA_INVALID && !(-1.0..=1.0).contains(&v) {
                        return Err(parse_error(path, line, format!("value {v} outside [-1, 1]")));
                    }
                    *slot = v;
                }
                va.push(pair);
            }
            Task::Expr => {
                let c: i64 = fields[0]
                    .parse()
                    .map_err(|_| parse_error(path, line, format!("'{}' is not an integer", fields[0])))?;
                if !(-1..NUM_EXPR as i64).contains(&c) {
                    return Err(parse_error(path, line, format!("class {c} outside -1..=7")));
                }
                expr.push(c);
            }
            Task::Au => {
                let mut row = [0i8; NUM_AU];
                for (slot, f) in row.iter_mut().zip(&fields) {
                    *slot = match *f {
                        "0" => 0,
                        "1" => 1,
                        "-1" => -1,
                        other => return Err(parse_error(path, line, format!("AU value '{other}' is not 0, 1 or -1"))),
                    };
                }
                au.push(row);
            }
        }
    }
    let labels = match task {
        Task::Va => TaskLabels::Va(va),
        Task::Expr => TaskLabels::Expr(expr),
        Task::Au => TaskLabels::Au(au),
    };
    Ok(AnnotationFile {
        task,
        video_id: video_id.to_string(),
        labels,
    })
}

pub fn read_annotation(path: &Path, task: Task) -> Result<AnnotationFile, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let video_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| parse_error(path, 0, "file name is not valid UTF-8"))?;
    parse_annotation(&text, task, video_id, path)
}

/// Every `<dir>/<TASK>/*.txt`, sorted by video id.
pub fn load_annotations(dir: &Path, task: Task) -> Result<Vec<AnnotationFile>, DataError> {
    let task_dir = dir.join(task.dir_name());
    if !task_dir.is_dir() {
        return Err(DataError::Missing(task_dir));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&task_dir)
        .map_err(|e| DataError::io(&task_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_annotation(p, task)).collect()
}

pub fn write_annotation(dir: &Path, file: &AnnotationFile) -> Result<PathBuf, DataError> {
    let task_dir = dir.join(file.task.dir_name());
    fs::create_dir_all(&task_dir).map_err(|e| DataError::io(&task_dir, e))?;
    let path = task_dir.join(format!("{}.txt", file.video_id));
    fs::write(&path, file.to_text()).map_err(|e| DataError::io(&path, e))?;
    Ok(path)
}

/// Reassembled per-frame model outputs for one video: VA values, Expr
/// logits or AU logits, `[n×out_dim]`.
#[derive(Debug, Clone)]
pub struct VideoPrediction {
    pub video_id: String,
    pub outputs: Tensor,
}

/// Convert raw outputs to an annotation track: argmax ids for Expr,
/// `σ(x) ≥ threshold` for AU.
pub fn prediction_labels(task: Task, outputs: &Tensor, au_threshold: f64) -> Result<TaskLabels, DataError> {
    let width = task.out_dim();
    if outputs.rank() != 2 || outputs.shape()[1] != width {
        return Err(DataError::Mismatch(format!(
            "{task} predictions must be [n×{width}], got {:?}",
            outputs.shape()
        )));
    }
    let data = outputs.data();
    Ok(match task {
        Task::Va => TaskLabels::Va(data.chunks(2).map(|r| [r[0], r[1]]).collect()),
        Task::Expr => TaskLabels::Expr(argmax_rows(&data, width).into_iter().map(|c| c as i64).collect()),
        Task::Au => TaskLabels::Au(
            data.chunks(width)
                .map(|r| {
                    let mut row = [0i8; NUM_AU];
                    for (slot, &x) in row.iter_mut().zip(r) {
                        *slot = (sigmoid(x) >= au_threshold) as i8;
                    }
                    row
                })
                .collect(),
        ),
    })
}

/// Write predictions in the annotation layout under `dir`. AU predictions
/// also get a `<video>.prob.csv` sidecar with per-unit probabilities.
pub fn write_predictions(
    dir: &Path,
    task: Task,
    preds: &[VideoPrediction],
    au_threshold: f64,
) -> Result<Vec<PathBuf>, DataError> {
    let mut written = Vec::new();
    for p in preds {
        let file = AnnotationFile {
            task,
            video_id: p.video_id.clone(),
            labels: prediction_labels(task, &p.outputs, au_threshold)?,
        };
        written.push(write_annotation(dir, &file)?);
        if task == Task::Au {
            let path = dir
                .join(task.dir_name())
                .join(format!("{}.{PROB_SIDECAR_EXT}", p.video_id));
            let mut text = task.header();
            text.push('\n');
            for row in p.outputs.data().chunks(NUM_AU) {
                let probs: Vec<String> = row.iter().map(|&x| sigmoid(x).to_string()).collect();
                text.push_str(&probs.join(","));
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| DataError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
