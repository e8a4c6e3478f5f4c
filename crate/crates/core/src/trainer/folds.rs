//! Video-level k-fold cross-validation and the per-fold results table.

use std::collections::BTreeSet;

use rand::SeedableRng;
use serde::Serialize;

use super::{train_task, TrainConfig, TrainError};
use crate::config::Config;
use crate::data::{Dataset, SyntheticDataset};
use crate::labels::Task;
use crate::objectives::MetricReport;
use crate::temporal::TemporalModel;
use crate::Rng;

/// Training and validation video indices for `fold`.
pub fn split_by_fold(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != fold)
}

/// One table line: a metric of one task under one method, per fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldRow {
    pub task: String,
    pub metric: String,
    pub method: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldTable {
    pub k: usize,
    /// `(video_id, fold)` for every video.
    pub assignment: Vec<(String, usize)>,
    pub rows: Vec<FoldRow>,
    pub reports: Vec<MetricReport>,
}

const MODEL_METHOD: &str = "Ours";

fn task_rows(task: Task) -> Vec<(&'static str, &'static str)> {
    match task {
        Task::Va => vec![("Valence", "CCC"), ("Arousal", "CCC")],
        Task::Expr => vec![("Expr", "F1-score")],
        Task::Au => vec![("AU", "F1-score")],
    }
}

fn report_values(report: &MetricReport) -> Vec<f64> {
    match report.task {
        Task::Va => vec![report.ccc_v.unwrap_or(f64::NAN), report.ccc_a.unwrap_or(f64::NAN)],
        _ => vec![report.macro_f1.unwrap_or(f64::NAN)],
    }
}

impl FoldTable {
    /// Values of the model rows for `task`'s first metric, by fold.
    pub fn values(&self, task: &str) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.method == MODEL_METHOD)
            .map(|r| r.values.as_slice())
    }

    /// Add the generator's Bayes-optimal scores on every validation fold
    /// as reference rows.
    pub fn add_oracle(&mut self, synth: &SyntheticDataset, tasks: &[Task]) -> Result<(), TrainError> {
        let folds: Vec<usize> = self.assignment.iter().map(|&(_, f)| f).collect();
        let scores = (0..self.k)
            .map(|f| synth.oracle_scores_for(&split_by_fold(&folds, f).1))
            .collect::<Result<Vec<_>, _>>()?;
        for &task in tasks {
            let columns: Vec<Vec<f64>> = scores
                .iter()
                .map(|s| match task {
                    Task::Va => vec![s.ccc_v, s.ccc_a],
                    Task::Expr => vec![s.expr_f1],
                    Task::Au => vec![s.au_f1],
                })
                .collect();
            for (j, (name, metric)) in task_rows(task).into_iter().enumerate() {
                self.rows.push(FoldRow {
                    task: name.into(),
                    metric: metric.into(),
                    method: "Oracle".into(),
                    values: columns.iter().map(|c| c[j]).collect(),
                });
            }
        }
        // keep each task's rows together
        let order = ["Valence", "Arousal", "Expr", "AU"];
        self.rows.sort_by_key(|r| order.iter().position(|&t| t == r.task));
        Ok(())
    }

    /// Markdown table, one column per fold.
    pub fn to_text(&self) -> String {
        let mut s = String::from("| Task | Evaluation Metric | Method |");
        for f in 0..self.k {
            s.push_str(&format!(" Fold {f} |"));
        }
        s.push_str("\n|---|---|---|");
        s.push_str(&"---|".repeat(self.k));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("| {} | {} | {} |", r.task, r.metric, r.method));
            for v in &r.values {
                s.push_str(&format!(" {v:.3} |"));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold table serialises")
    }
}

/// Seed for the model of `task` on `fold`, distinct across both.
fn model_seed(seed: u64, task: Task, fold: usize) -> u64 {
    let t = Task::ALL.iter().position(|&x| x == task).expect("task listed") as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (t << 32 | fold as u64)
}

/// Train a fresh model per task and fold, validating on the held-out
/// videos. `assignment[i]` is the fold of `data.videos[i]`.
pub fn run_folds(data: &Dataset, tasks: &[Task], cfg: &Config, assignment: &[usize]) -> Result<FoldTable, TrainError> {
    let k = cfg.folds;
    if assignment.len() != data.videos.len() {
        return Err(TrainError::Config(format!(
            "{} fold entries for {} videos",
            assignment.len(),
            data.videos.len()
        )));
    }
    if let Some(&bad) = assignment.iter().find(|&&f| f >= k) {
        return Err(TrainError::Config(format!("fold {bad} out of range for k = {k}")));
    }
    let input_dim = data
        .feature_dim()
        .ok_or_else(|| TrainError::Config("dataset has no videos".into()))?;
    let base = TrainConfig::from_config(cfg)?;
    let ids = data.video_ids();
    let mut table = FoldTable {
        k,
        assignment: ids.iter().cloned().zip(assignment.iter().copied()).collect(),
        rows: Vec::new(),
        reports: Vec::new(),
    };
    for &task in tasks {
        let mut columns = Vec::with_capacity(k);
        for fold in 0..k {
            let (train_idx, val_idx) = split_by_fold(assignment, fold);
            let train_ids: BTreeSet<&str> = train_idx.iter().map(|&i| ids[i].as_str()).collect();
            let shared: Vec<String> = val_idx
                .iter()
                .filter(|&&i| train_ids.contains(ids[i].as_str()))
                .map(|&i| ids[i].clone())
                .collect();
            if !shared.is_empty() {
                return Err(TrainError::Leak(shared));
            }
            let train = data.sequences(task, &train_idx)?;
            let val = data.sequences(task, &val_idx)?;
            let seed = model_seed(cfg.seed, task, fold);
            let model = TemporalModel::new(cfg.model_config(task, input_dim), &mut Rng::seed_from_u64(seed))?;
            let tc = TrainConfig { seed, ..base.clone() };
            log::info!("{task} fold {fold}: {} train / {} val videos", train.len(), val.len());
            let mut report = train_task(task, &model, &train, &val, &tc)?.best_report;
            report.fold = Some(fold);
            columns.push(report_values(&report));
            table.reports.push(report);
        }
        for (j, (name, metric)) in task_rows(task).into_iter().enumerate() {
            table.rows.push(FoldRow {
                task: name.into(),
                metric: metric.into(),
                method: MODEL_METHOD.into(),
                values: columns.iter().map(|c| c[j]).collect(),
            });
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_split_into_disjoint_covers() {
        let assignment = [0, 1, 2, 0, 1, 2, 0];
        for f in 0..3 {
            let (train, val) = split_by_fold(&assignment, f);
            assert_eq!(train.len() + val.len(), 7);
            assert!(val.iter().all(|&i| assignment[i] == f));
            assert!(train.iter().all(|&i| assignment[i] != f));
        }
    }

    #[test]
    fn seeds_differ_per_task_and_fold() {
        let mut seen = BTreeSet::new();
        for task in Task::ALL {
            for fold in 0..5 {
                assert!(seen.insert(model_seed(0, task, fold)));
            }
        }
    }

    #[test]
    fn table_text_has_one_column_per_fold() {
        let table = FoldTable {
            k: 2,
            assignment: vec![("a".into(), 0), ("b".into(), 1)],
            rows: vec![FoldRow {
                task: "Expr".into(),
                metric: "F1-score".into(),
                method: "Ours".into(),
                values: vec![0.5, 0.25],
            }],
            reports: vec![],
        };
        let text = table.to_text();
        assert!(text.starts_with("| Task | Evaluation Metric | Method | Fold 0 | Fold 1 |"));
        assert!(text.contains("| Expr | F1-score | Ours | 0.500 | 0.250 |"));
        assert_eq!(table.values("Expr"), Some(&[0.5, 0.25][..]));
    }
}
