//! Threshold-sweep classification metrics for candidate-edge scores.
//!
//! A prediction counts as positive iff `ŷ ≥ τ`. The sweep visits every
//! distinct score plus a `+∞` sentinel, so the ROC curve runs from (0, 0)
//! to (1, 1).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("all labels are identical")]
    DegenerateLabels,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.fn_;
        (self.tp + self.tn) as f64 / n as f64
    }

    pub fn tpr(&self) -> f64 {
        self.recall()
    }

    pub fn fpr(&self) -> f64 {
        if self.fp + self.tn == 0 {
            0.0
        } else {
            self.fp as f64 / (self.fp + self.tn) as f64
        }
    }
}

/// Counts at threshold `tau`; a score is positive iff `score >= tau`.
pub fn confusion_at(y_hat: &[f64], y: &[f64], tau: f64) -> Confusion {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &l) in y_hat.iter().zip(y) {
        match (p >= tau, l >= 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub n_positive: usize,
    /// At the Youden threshold.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub youden_threshold: f64,
    pub youden_j: f64,
    pub best_f1: f64,
    pub best_f1_threshold: f64,
    pub best_f1_precision: f64,
    pub best_f1_recall: f64,
    /// `(fpr, tpr)` from (0, 0) to (1, 1).
    pub roc_points: Vec<(f64, f64)>,
    /// `(recall, precision)`, same order as `roc_points`.
    pub pr_points: Vec<(f64, f64)>,
    /// Threshold of each curve point; the first is `+∞`.
    #[serde(skip)]
    pub thresholds: Vec<f64>,
}

/// Sweeps every distinct score as a threshold.
///
/// Youden's J and F1 ties go to the lower threshold.
pub fn sweep(y_hat: &[f64], y: &[f64]) -> Result<EvalReport, MetricsError> {
    if y_hat.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            scores: y_hat.len(),
            labels: y.len(),
        });
    }
    let pos = y.iter().filter(|&&l| l >= 0.5).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..y_hat.len()).collect();
    order.sort_by(|&a, &b| y_hat[b].total_cmp(&y_hat[a]));

    let mut confs = vec![Confusion {
        tp: 0,
        fp: 0,
        tn: neg,
        fn_: pos,
    }];
    let mut thresholds = vec![f64::INFINITY];
    let mut k = 0;
    while k < order.len() {
        let tau = y_hat[order[k]];
        let mut c = *confs.last().expect("non-empty");
        while k < order.len() && y_hat[order[k]] == tau {
            if y[order[k]] >= 0.5 {
                c.tp += 1;
                c.fn_ -= 1;
            } else {
                c.fp += 1;
                c.tn -= 1;
            }
            k += 1;
        }
        confs.push(c);
        thresholds.push(tau);
    }

    let roc_points: Vec<(f64, f64)> = confs.iter().map(|c| (c.fpr(), c.tpr())).collect();
    let pr_points: Vec<(f64, f64)> = confs.iter().map(|c| (c.recall(), c.precision())).collect();

    let mut dedup = roc_points.clone();
    dedup.dedup();
    let auc = dedup
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum::<f64>();

    // Thresholds decrease along the sweep, so `>=` prefers the lower one.
    let mut yi = 0;
    let mut fi = 0;
    for i in 0..confs.len() {
        let j = confs[i].tpr() - confs[i].fpr();
        if j >= confs[yi].tpr() - confs[yi].fpr() {
            yi = i;
        }
        if confs[i].f1() >= confs[fi].f1() {
            fi = i;
        }
    }
    let (cy, cf) = (confs[yi], confs[fi]);
    Ok(EvalReport {
        n: y.len(),
        n_positive: pos,
        accuracy: cy.accuracy(),
        precision: cy.precision(),
        recall: cy.recall(),
        f1: cy.f1(),
        auc,
        youden_threshold: thresholds[yi],
        youden_j: cy.tpr() - cy.fpr(),
        best_f1: cf.f1(),
        best_f1_threshold: thresholds[fi],
        best_f1_precision: cf.precision(),
        best_f1_recall: cf.recall(),
        roc_points,
        pr_points,
        thresholds,
    })
}

impl EvalReport {
    /// `threshold,fpr,tpr` rows.
    pub fn roc_csv(&self) -> String {
        curve_csv("fpr,tpr", &self.thresholds, &self.roc_points)
    }

    /// `threshold,recall,precision` rows.
    pub fn pr_csv(&self) -> String {
        curve_csv("recall,precision", &self.thresholds, &self.pr_points)
    }
}

fn curve_csv(cols: &str, thresholds: &[f64], pts: &[(f64, f64)]) -> String {
    let mut s = format!("threshold,{cols}\n");
    for (t, (x, y)) in thresholds.iter().zip(pts) {
        s.push_str(&format!("{t},{x},{y}\n"));
    }
    s
}
