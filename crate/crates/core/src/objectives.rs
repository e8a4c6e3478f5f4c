//! Training objectives and evaluation metrics for the three tasks.
//!
//! * concordance correlation coefficient (CCC) and the VA loss `1 − CCC`
//! * categorical cross-entropy over the eight expression classes
//! * binary cross-entropy on logits over the twelve action units
//! * per-class and macro F1
//!
//! Every loss and metric excludes masked (invalid or padded) frames from
//! its normaliser `N`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{Task, TaskLabels, NUM_AU, NUM_EXPR};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("series lengths differ: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("CCC undefined: both series constant with equal means")]
    Undefined,
    #[error("every entry is masked out")]
    EmptyBatch,
    #[error("label {label} outside 0..{classes}")]
    LabelRange { label: i64, classes: usize },
    #[error("expected {expected} labels, got {got}")]
    TaskMismatch { expected: Task, got: Task },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Paired prediction / ground-truth series restricted to valid frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SeriesPair {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(MetricError::Length(x.len(), y.len()));
        }
        if x.len() < 2 {
            return Err(MetricError::TooShort(x.len()));
        }
        Ok(SeriesPair { x, y })
    }

    pub fn masked(x: &[f64], y: &[f64], mask: &[bool]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(MetricError::Length(x.len(), y.len()));
        }
        if mask.len() != x.len() {
            return Err(MetricError::Length(x.len(), mask.len()));
        }
        let keep = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(mask).filter(|(_, &m)| m).map(|(a, _)| *a).collect()
        };
        Self::new(keep(x), keep(y))
    }

    pub fn ccc(&self) -> Result<f64> {
        ccc(&self.x, &self.y)
    }
}

/// Concordance correlation coefficient.
///
/// `2·cov(x,y) / (σx² + σy² + (μx − μy)²)` with covariance and variances all
/// normalised by `1/N`. With an unnormalised covariance sum the statistic
/// would not satisfy `CCC(x, x) = 1`.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(MetricError::Length(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(MetricError::TooShort(n));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    let denom = vx / nf + vy / nf + (mx - my) * (mx - my);
    if denom == 0.0 {
        return Err(MetricError::Undefined);
    }
    Ok(2.0 * (cov / nf) / denom)
}

/// Differentiable CCC between a prediction column `[N]`/`[N×1]` and a
/// constant target.
pub fn ccc_tensor(pred: &Tensor, target: &[f64]) -> Result<Tensor> {
    let n = pred.numel();
    if n != target.len() {
        return Err(MetricError::Length(n, target.len()));
    }
    if n < 2 {
        return Err(MetricError::TooShort(n));
    }
    let x = pred.reshape(&[n])?;
    let y = Tensor::new(target.to_vec(), &[n])?;
    let mx = x.mean();
    let my = y.mean();
    let xc = x.sub(&mx)?;
    let yc = y.sub(&my)?;
    let vx = xc.square().mean();
    let vy = yc.square().mean();
    let cov = xc.mul(&yc)?.mean();
    let denom = vx.add(&vy)?.add(&mx.sub(&my)?.square())?;
    if denom.item() == 0.0 {
        return Err(MetricError::Undefined);
    }
    Ok(cov.scale(2.0).div(&denom)?)
}

fn valid_rows(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

fn check_rows(rows: usize, len: usize) -> Result<()> {
    if rows != len {
        return Err(MetricError::Length(rows, len));
    }
    Ok(())
}

/// Mean over valence and arousal of `1 − CCC` on the masked rows of
/// `pred: [N×2]`.
pub fn va_loss(pred: &Tensor, target: &[[f64; 2]], mask: &[bool]) -> Result<Tensor> {
    let rows = pred.shape()[0];
    check_rows(rows, target.len())?;
    check_rows(rows, mask.len())?;
    let keep = valid_rows(mask);
    if keep.is_empty() {
        return Err(MetricError::EmptyBatch);
    }
    let p = pred.gather_rows(&keep)?;
    let mut total: Option<Tensor> = None;
    for dim in 0..2 {
        let col = p.narrow(1, dim, 1)?;
        let tgt: Vec<f64> = keep.iter().map(|&i| target[i][dim]).collect();
        let term = ccc_tensor(&col, &tgt)?.neg().add_scalar(1.0);
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    Ok(total.expect("two dimensions").scale(0.5))
}

/// Cross-entropy `−(1/N) Σ log p(true class)` over valid rows of
/// `logits: [N×M]`. Rows with class id −1 are skipped like masked rows.
pub fn expr_loss(logits: &Tensor, class_ids: &[i64], mask: &[bool]) -> Result<Tensor> {
    let (rows, classes) = (logits.shape()[0], logits.shape()[1]);
    check_rows(rows, class_ids.len())?;
    check_rows(rows, mask.len())?;
    let mut keep = Vec::new();
    let mut onehot = Vec::new();
    for (i, (&c, &m)) in class_ids.iter().zip(mask).enumerate() {
        if !m || c == -1 {
            continue;
        }
        if c < 0 || c as usize >= classes {
            return Err(MetricError::LabelRange { label: c, classes });
        }
        keep.push(i);
        let mut row = vec![0.0; classes];
        row[c as usize] = 1.0;
        onehot.extend(row);
    }
    if keep.is_empty() {
        return Err(MetricError::EmptyBatch);
    }
    let n = keep.len();
    let logp = logits.gather_rows(&keep)?.log_softmax(1)?;
    let picked = logp.mul(&Tensor::new(onehot, &[n, classes])?)?;
    Ok(picked.sum().scale(-1.0 / n as f64))
}

/// Binary cross-entropy on logits averaged over unmasked entries.
/// `targets` and `mask` are flattened `[N×U]` row-major like `logits`.
pub fn au_loss(logits: &Tensor, targets: &[f64], mask: &[bool]) -> Result<Tensor> {
    let n = logits.numel();
    check_rows(n, targets.len())?;
    check_rows(n, mask.len())?;
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(MetricError::EmptyBatch);
    }
    // masked entries get a dummy target; their loss is zeroed below
    let safe: Vec<f64> = targets
        .iter()
        .zip(mask)
        .map(|(&t, &m)| if m { t } else { 0.0 })
        .collect();
    let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let per_entry = logits.bce_with_logits(&safe)?;
    let weighted = per_entry.mul(&Tensor::new(weights, logits.shape())?)?;
    Ok(weighted.sum().scale(1.0 / count as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Unweighted mean of per-class F1. A class absent from both truth and
/// prediction scores 0 and still counts towards the mean.
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<F1Report> {
    if pred.len() != truth.len() {
        return Err(MetricError::Length(pred.len(), truth.len()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        for label in [p, t] {
            if label >= num_classes {
                return Err(MetricError::LabelRange {
                    label: label as i64,
                    classes: num_classes,
                });
            }
        }
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| f1_from_counts(tp[c], fp[c], fn_[c]))
        .collect();
    let macro_f1 = per_class.iter().sum::<f64>() / num_classes.max(1) as f64;
    Ok(F1Report {
        macro_f1,
        per_class,
    })
}

/// Per-unit binary F1 of `σ(logit) ≥ threshold` against 0/1 targets,
/// macro-averaged over units. Inputs are flattened `[N×units]`.
pub fn au_f1(
    logits: &[f64],
    targets: &[f64],
    mask: &[bool],
    units: usize,
    threshold: f64,
) -> Result<F1Report> {
    check_rows(logits.len(), targets.len())?;
    let predicted: Vec<bool> = logits.iter().map(|&x| crate::tensor::sigmoid(x) >= threshold).collect();
    let actual: Vec<bool> = targets.iter().map(|&y| y >= 0.5).collect();
    binary_f1(&predicted, &actual, mask, units)
}

/// Per-unit F1 of binary decisions, macro-averaged over units. Inputs are
/// flattened `[N×units]`; masked-out entries are skipped.
pub fn binary_f1(predicted: &[bool], actual: &[bool], mask: &[bool], units: usize) -> Result<F1Report> {
    check_rows(predicted.len(), actual.len())?;
    check_rows(predicted.len(), mask.len())?;
    if units == 0 || predicted.len() % units != 0 {
        return Err(MetricError::Length(predicted.len(), units));
    }
    let mut tp = vec![0usize; units];
    let mut fp = vec![0usize; units];
    let mut fn_ = vec![0usize; units];
    for (i, ((&p, &a), &m)) in predicted.iter().zip(actual).zip(mask).enumerate() {
        if !m {
            continue;
        }
        let u = i % units;
        match (p, a) {
            (true, true) => tp[u] += 1,
            (true, false) => fp[u] += 1,
            (false, true) => fn_[u] += 1,
            (false, false) => {}
        }
    }
    let per_class: Vec<f64> = (0..units).map(|u| f1_from_counts(tp[u], fp[u], fn_[u])).collect();
    let macro_f1 = per_class.iter().sum::<f64>() / units as f64;
    Ok(F1Report {
        macro_f1,
        per_class,
    })
}

/// Index of the largest value in each row of a flattened `[N×width]`.
pub fn argmax_rows(values: &[f64], width: usize) -> Vec<usize> {
    values
        .chunks(width)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// One row of a fold table: the scores of one task on one validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub fold: Option<usize>,
    pub ccc_v: Option<f64>,
    pub ccc_a: Option<f64>,
    pub macro_f1: Option<f64>,
    pub per_class: Vec<f64>,
}

impl MetricReport {
    /// The model-selection score: mean CCC for VA, macro F1 otherwise.
    pub fn primary(&self) -> f64 {
        match self.task {
            Task::Va => (self.ccc_v.unwrap_or(f64::NAN) + self.ccc_a.unwrap_or(f64::NAN)) / 2.0,
            _ => self.macro_f1.unwrap_or(f64::NAN),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

/// Score predicted label tracks against gold tracks, pooling all videos.
/// Frames invalid in the gold track are skipped.
pub fn score_labels(task: Task, pairs: &[(&TaskLabels, &TaskLabels)]) -> Result<MetricReport> {
    let mut report = MetricReport {
        task,
        fold: None,
        ccc_v: None,
        ccc_a: None,
        macro_f1: None,
        per_class: Vec::new(),
    };
    let mut valid = Vec::new();
    for (pred, gold) in pairs {
        for t in [pred.task(), gold.task()] {
            if t != task {
                return Err(MetricError::TaskMismatch { expected: task, got: t });
            }
        }
        check_rows(pred.len(), gold.len())?;
        valid.extend(gold.validity());
    }
    match task {
        Task::Va => {
            let (mut p, mut g) = (Vec::new(), Vec::new());
            for (pred, gold) in pairs {
                if let (TaskLabels::Va(a), TaskLabels::Va(b)) = (pred, gold) {
                    p.extend_from_slice(a);
                    g.extend_from_slice(b);
                }
            }
            let rows = valid_rows(&valid);
            if rows.is_empty() {
                return Err(MetricError::EmptyBatch);
            }
            let col = |v: &[[f64; 2]], c: usize| rows.iter().map(|&i| v[i][c]).collect::<Vec<f64>>();
            report.ccc_v = Some(ccc(&col(&p, 0), &col(&g, 0))?);
            report.ccc_a = Some(ccc(&col(&p, 1), &col(&g, 1))?);
        }
        Task::Expr => {
            let (mut p, mut g) = (Vec::new(), Vec::new());
            for (pred, gold) in pairs {
                if let (TaskLabels::Expr(a), TaskLabels::Expr(b)) = (pred, gold) {
                    p.extend_from_slice(a);
                    g.extend_from_slice(b);
                }
            }
            let rows = valid_rows(&valid);
            if rows.is_empty() {
                return Err(MetricError::EmptyBatch);
            }
            let to_class = |c: i64| {
                usize::try_from(c).map_err(|_| MetricError::LabelRange {
                    label: c,
                    classes: NUM_EXPR,
                })
            };
            let pc = rows.iter().map(|&i| to_class(p[i])).collect::<Result<Vec<_>>>()?;
            let gc = rows.iter().map(|&i| to_class(g[i])).collect::<Result<Vec<_>>>()?;
            let f1 = macro_f1(&pc, &gc, NUM_EXPR)?;
            report.macro_f1 = Some(f1.macro_f1);
            report.per_class = f1.per_class;
        }
        Task::Au => {
            let (mut p, mut g, mut m) = (Vec::new(), Vec::new(), Vec::new());
            for (pred, gold) in pairs {
                if let (TaskLabels::Au(a), TaskLabels::Au(b)) = (pred, gold) {
                    p.extend(a.iter().flatten().map(|&x| x == 1));
                    g.extend(b.iter().flatten().map(|&x| x == 1));
                }
            }
            for &v in &valid {
                m.extend(std::iter::repeat_n(v, NUM_AU));
            }
            if !valid.iter().any(|&v| v) {
                return Err(MetricError::EmptyBatch);
            }
            let f1 = binary_f1(&p, &g, &m, NUM_AU)?;
            report.macro_f1 = Some(f1.macro_f1);
            report.per_class = f1.per_class;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ccc_hand_values() {
        assert_eq!(ccc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!((ccc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((ccc(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap() - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn ccc_errors() {
        assert_eq!(ccc(&[1.0, 1.0], &[1.0, 1.0]), Err(MetricError::Undefined));
        assert_eq!(ccc(&[1.0], &[1.0]), Err(MetricError::TooShort(1)));
        assert_eq!(ccc(&[1.0, 2.0], &[1.0]), Err(MetricError::Length(2, 1)));
        // constant but with different means is defined (and zero)
        assert_eq!(ccc(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn tensor_ccc_matches_scalar_ccc() {
        let x = [0.1, 0.5, -0.3, 0.9, 0.2];
        let y = [0.0, 0.4, -0.1, 0.7, 0.5];
        let t = Tensor::new(x.to_vec(), &[5, 1]).unwrap();
        let a = ccc_tensor(&t, &y).unwrap().item();
        assert!((a - ccc(&x, &y).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn va_loss_cases() {
        let target = [[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let mask = [true; 3];
        let perfect = Tensor::new(vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0], &[3, 2]).unwrap();
        assert!(va_loss(&perfect, &target, &mask).unwrap().item().abs() < 1e-12);
        // valence anti-correlated (1 − (−1) = 2), arousal perfect (0)
        let anti = Tensor::new(vec![3.0, 1.0, 2.0, 2.0, 1.0, 3.0], &[3, 2]).unwrap();
        assert!((va_loss(&anti, &target, &mask).unwrap().item() - 1.0).abs() < 1e-12);
        assert_eq!(
            va_loss(&perfect, &target, &[false; 3]).unwrap_err(),
            MetricError::EmptyBatch
        );
    }

    #[test]
    fn va_loss_ignores_masked_rows() {
        let target = [[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [0.0, 0.0]];
        let pred = Tensor::new(vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 9.0, -9.0], &[4, 2]).unwrap();
        let l = va_loss(&pred, &target, &[true, true, true, false]).unwrap();
        assert!(l.item().abs() < 1e-12);
    }

    #[test]
    fn expr_loss_cases() {
        let uniform = Tensor::zeros(&[4, 8]).unwrap();
        let l = expr_loss(&uniform, &[0, 3, 5, 7], &[true; 4]).unwrap().item();
        assert!((l - 8f64.ln()).abs() < 1e-12);
        let p = Tensor::new(vec![0.25f64.ln(), 0.25f64.ln(), 0.5f64.ln()], &[1, 3]).unwrap();
        let l = expr_loss(&p, &[2], &[true]).unwrap().item();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let sure = Tensor::new(vec![50.0, 0.0, 0.0], &[1, 3]).unwrap();
        assert!(expr_loss(&sure, &[0], &[true]).unwrap().item() < 1e-20);
        assert_eq!(
            expr_loss(&uniform, &[-1, -1, 0, 0], &[true, true, false, false]).unwrap_err(),
            MetricError::EmptyBatch
        );
        assert!(matches!(
            expr_loss(&uniform, &[8, 0, 0, 0], &[true; 4]),
            Err(MetricError::LabelRange { .. })
        ));
    }

    #[test]
    fn au_loss_cases() {
        let x = Tensor::new(vec![0.0], &[1, 1]).unwrap();
        assert!((au_loss(&x, &[1.0], &[true]).unwrap().item() - 2f64.ln()).abs() < 1e-12);
        let x = Tensor::new(vec![2.0, -2.0], &[1, 2]).unwrap();
        let l = au_loss(&x, &[1.0, 0.0], &[true, true]).unwrap().item();
        assert!((l - 0.126_928).abs() < 1e-6);
        assert_eq!(
            au_loss(&x, &[1.0, 0.0], &[false, false]).unwrap_err(),
            MetricError::EmptyBatch
        );
        // masked entry contributes nothing, including to N
        let l2 = au_loss(&x, &[1.0, 1.0], &[true, false]).unwrap().item();
        assert!((l2 - 0.126_928).abs() < 1e-6);
    }

    #[test]
    fn macro_f1_hand_count() {
        let r = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((r.per_class[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[1] - 0.8).abs() < 1e-12);
        assert!((r.macro_f1 - 0.733_333_333_333).abs() < 1e-9);
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap().macro_f1, 1.0);
    }

    #[test]
    fn absent_class_scores_zero_and_is_averaged() {
        let r = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.per_class, vec![1.0, 1.0, 0.0]);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn au_f1_mirrors_binary_counts() {
        // one unit: truth [0,0,1,1], predicted positive for [0,1,1,1]
        let logits = [-3.0, 2.0, 1.0, 0.5];
        let targets = [0.0, 0.0, 1.0, 1.0];
        let r = au_f1(&logits, &targets, &[true; 4], 1, 0.5).unwrap();
        assert!((r.macro_f1 - 0.8).abs() < 1e-12);
        // two units, second all-negative truth and prediction → 0
        let logits = [1.0, -1.0, -1.0, -1.0];
        let targets = [1.0, 0.0, 0.0, 0.0];
        let r = au_f1(&logits, &targets, &[true; 4], 2, 0.5).unwrap();
        assert_eq!(r.per_class, vec![1.0, 0.0]);
    }

    #[test]
    fn report_json_shape() {
        let r = MetricReport {
            task: Task::Va,
            fold: Some(0),
            ccc_v: Some(0.5),
            ccc_a: Some(0.7),
            macro_f1: None,
            per_class: vec![],
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["task", "fold", "ccc_v", "ccc_a", "macro_f1", "per_class"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["task"], "va");
        assert!((r.primary() - 0.6).abs() < 1e-12);
    }
}
