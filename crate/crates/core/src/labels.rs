//! Task identities and per-frame label tracks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Valence and arousal regression.
    Va,
    /// Eight-way expression classification.
    Expr,
    /// Twelve facial action units, multi-label.
    Au,
}

pub const EXPR_CLASSES: [&str; 8] = [
    "Neutral",
    "Anger",
    "Disgust",
    "Fear",
    "Happiness",
    "Sadness",
    "Surprise",
    "Other",
];

pub const AU_NAMES: [&str; 12] = [
    "AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26",
];

pub const NUM_EXPR: usize = EXPR_CLASSES.len();
pub const NUM_AU: usize = AU_NAMES.len();

impl Task {
    pub const ALL: [Task; 3] = [Task::Va, Task::Expr, Task::Au];

    pub fn out_dim(self) -> usize {
        match self {
            Task::Va => 2,
            Task::Expr => NUM_EXPR,
            Task::Au => NUM_AU,
        }
    }

    /// Annotation sub-directory name.
    pub fn dir_name(self) -> &'static str {
        match self {
            Task::Va => "VA",
            Task::Expr => "EXPR",
            Task::Au => "AU",
        }
    }

    pub fn header(self) -> String {
        match self {
            Task::Va => "valence,arousal".to_string(),
            Task::Expr => EXPR_CLASSES.join(","),
            Task::Au => AU_NAMES.join(","),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Va => "va",
            Task::Expr => "expr",
            Task::Au => "au",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "va" => Ok(Task::Va),
            "expr" => Ok(Task::Expr),
            "au" => Ok(Task::Au),
            other => Err(format!("unknown task '{other}' (expected va, expr or au)")),
        }
    }
}

/// One label track, aligned per frame. Invalid frames keep their sentinel
/// values here; validity lives in the owning sequence's mask.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskLabels {
    Va(Vec<[f64; 2]>),
    Expr(Vec<i64>),
    Au(Vec<[i8; NUM_AU]>),
}

impl TaskLabels {
    pub fn task(&self) -> Task {
        match self {
            TaskLabels::Va(_) => Task::Va,
            TaskLabels::Expr(_) => Task::Expr,
            TaskLabels::Au(_) => Task::Au,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TaskLabels::Va(v) => v.len(),
            TaskLabels::Expr(v) => v.len(),
            TaskLabels::Au(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labels for frames `range` (0-based, half-open).
    pub fn slice(&self, range: std::ops::Range<usize>) -> TaskLabels {
        match self {
            TaskLabels::Va(v) => TaskLabels::Va(v[range].to_vec()),
            TaskLabels::Expr(v) => TaskLabels::Expr(v[range].to_vec()),
            TaskLabels::Au(v) => TaskLabels::Au(v[range].to_vec()),
        }
    }

    /// Default validity: VA frames are valid when both values lie in
    /// [−1, 1]; Expr and AU frames when no −1 sentinel is present.
    pub fn validity(&self) -> Vec<bool> {
        match self {
            TaskLabels::Va(v) => v
                .iter()
                .map(|p| p.iter().all(|x| (-1.0..=1.0).contains(x)))
                .collect(),
            TaskLabels::Expr(v) => v.iter().map(|&c| (0..NUM_EXPR as i64).contains(&c)).collect(),
            TaskLabels::Au(v) => v.iter().map(|r| r.iter().all(|&a| a == 0 || a == 1)).collect(),
        }
    }
}
