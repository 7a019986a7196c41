//! Confusion matrix and accuracy measures.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::raster::{LabelRaster, Mask};

/// `counts[i * n + j]` = cells of true class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n: usize,
    pub counts: Vec<u64>,
    pub names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(n: usize, counts: Vec<u64>) -> Result<Self> {
        if n < 2 {
            return invalid("ConfusionMatrix", "need at least two classes");
        }
        if counts.len() != n * n {
            return invalid("ConfusionMatrix", format!("{n}×{n} matrix needs {} counts", n * n));
        }
        Ok(Self {
            n,
            counts,
            names: (0..n).map(|k| k.to_string()).collect(),
        })
    }

    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return invalid("ConfusionMatrix", "rows must be square");
        }
        Self::new(n, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn with_names(mut self, names: &[&str]) -> Self {
        if names.len() == self.n {
            self.names = names.iter().map(|s| s.to_string()).collect();
        }
        self
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|k| self.get(k, k)).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.n).map(|j| self.get(k, j)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, k)).sum()
    }

    /// One-vs-rest `(tp, fp, fn)` for class `k`.
    pub fn tp_fp_fn(&self, k: usize) -> (u64, u64, u64) {
        let tp = self.get(k, k);
        (tp, self.col_sum(k) - tp, self.row_sum(k) - tp)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return invalid("ConfusionMatrix::add", "class counts differ");
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Count `(truth, pred)` pairs over cells inside `mask` (all cells if none).
pub fn build_cm(truth: &LabelRaster, pred: &LabelRaster, n: usize, mask: Option<&Mask>) -> Result<ConfusionMatrix> {
    truth.ensure_aligned(pred, "build_cm")?;
    if let Some(m) = mask {
        truth.ensure_aligned(m, "build_cm")?;
    }
    let mut cm = ConfusionMatrix::new(n, vec![0; n * n])?;
    for (i, (&t, &p)) in truth.cells().iter().zip(pred.cells()).enumerate() {
        if mask.is_some_and(|m| m.cells()[i] == 0) {
            continue;
        }
        for v in [t, p] {
            if v as usize >= n {
                return Err(CoreError::LabelOutOfRange {
                    op: "build_cm",
                    label: v as u32,
                    n,
                });
            }
        }
        cm.counts[t as usize * n + p as usize] += 1;
    }
    Ok(cm)
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(pre: f64, rec: f64) -> f64 {
    ratio(2.0 * pre * rec, pre + rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

pub fn per_class_prf(cm: &ConfusionMatrix, k: usize) -> Prf {
    let (tp, fp, fn_) = cm.tp_fp_fn(k);
    let pre = ratio(tp as f64, (tp + fp) as f64);
    let rec = ratio(tp as f64, (tp + fn_) as f64);
    Prf {
        pre,
        rec,
        f1: f1_score(pre, rec),
    }
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.trace() as f64, cm.total() as f64)
}

/// Expected chance agreement `Σ_k rowsum_k · colsum_k / N²`.
pub fn chance_agreement(cm: &ConfusionMatrix) -> f64 {
    let n = cm.total() as f64;
    let s: u128 = (0..cm.n)
        .map(|k| cm.row_sum(k) as u128 * cm.col_sum(k) as u128)
        .sum();
    s as f64 / (n * n)
}

/// Cohen's kappa; 0 when chance agreement is 1.
pub fn kappa(cm: &ConfusionMatrix) -> f64 {
    let n = cm.total() as u128;
    let s: u128 = (0..cm.n)
        .map(|k| cm.row_sum(k) as u128 * cm.col_sum(k) as u128)
        .sum();
    let denom = n * n - s;
    if denom == 0 {
        return 0.0;
    }
    // (OA − R)/(1 − R) scaled by N² to stay in integers
    let num = (n * cm.trace() as u128) as f64 - s as f64;
    num / denom as f64
}

/// Per-class IoU; `None` when the class never occurs in truth or prediction.
pub fn class_iou(cm: &ConfusionMatrix, k: usize) -> Option<f64> {
    let (tp, fp, fn_) = cm.tp_fp_fn(k);
    let d = tp + fp + fn_;
    (d > 0).then(|| tp as f64 / d as f64)
}

pub fn miou(cm: &ConfusionMatrix) -> f64 {
    let ious: Vec<f64> = (0..cm.n).filter_map(|k| class_iou(cm, k)).collect();
    ratio(ious.iter().sum(), ious.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
    pub iou: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallReport {
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
    pub kc: f64,
    pub oa: f64,
    pub miou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub detailed: Vec<ClassReport>,
    pub overall: OverallReport,
}

pub fn class_reports(cm: &ConfusionMatrix) -> Vec<ClassReport> {
    (0..cm.n)
        .map(|k| {
            let p = per_class_prf(cm, k);
            ClassReport {
                name: cm.names[k].clone(),
                pre: p.pre,
                rec: p.rec,
                f1: p.f1,
                iou: class_iou(cm, k),
            }
        })
        .collect()
}

/// Macro averages of precision, recall and F1 over all classes, with KC, OA
/// and mIoU.
pub fn overall_report(cm: &ConfusionMatrix) -> OverallReport {
    let per: Vec<Prf> = (0..cm.n).map(|k| per_class_prf(cm, k)).collect();
    let mean = |f: fn(&Prf) -> f64| per.iter().map(f).sum::<f64>() / cm.n as f64;
    OverallReport {
        pre: mean(|p| p.pre),
        rec: mean(|p| p.rec),
        f1: mean(|p| p.f1),
        kc: kappa(cm),
        oa: overall_accuracy(cm),
        miou: miou(cm),
    }
}

pub fn report(cm: &ConfusionMatrix) -> Report {
    Report {
        detailed: class_reports(cm),
        overall: overall_report(cm),
    }
}
