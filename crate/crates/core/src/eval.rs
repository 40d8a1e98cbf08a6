//! Confusion matrices, per-class and macro metrics, one-vs-rest AUCs and
//! report rendering.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_labels: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, class_labels: Vec<String>) -> Result<Self> {
        let c = class_labels.len();
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Shape(format!(
                "confusion counts must be {c}x{c} to match the class labels"
            )));
        }
        Ok(Self {
            counts,
            class_labels,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Trace over total.
    pub fn micro_accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

pub fn confusion_matrix(
    true_labels: &[usize],
    predicted: &[usize],
    class_labels: &[String],
) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::DimMismatch {
            context: "predictions vs true labels".into(),
            expected: true_labels.len(),
            actual: predicted.len(),
        });
    }
    let c = class_labels.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&t, &p) in true_labels.iter().zip(predicted) {
        for label in [t, p] {
            if label >= c {
                return Err(Error::LabelOutOfRange {
                    label,
                    n_classes: c,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_labels: class_labels.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// (TP + TN) / total.
    pub accuracy: f64,
    pub support: u64,
    /// Set when the class was never predicted, so precision is 0/0.
    pub precision_undefined: bool,
    /// Set when the class never occurs, so recall is 0/0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub micro_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: MacroMetrics,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let c = cm.n_classes();
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = cm.counts[k][k];
            let row: u64 = cm.counts[k].iter().sum();
            let col: u64 = (0..c).map(|i| cm.counts[i][k]).sum();
            let fp = col - tp;
            let fn_ = row - tp;
            let tn = total - tp - fp - fn_;
            let (precision, precision_undefined) = ratio(tp, col);
            let (recall, recall_undefined) = ratio(tp, row);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                label: cm.class_labels[k].clone(),
                precision,
                recall,
                f1,
                accuracy: (tp + tn) as f64 / total as f64,
                support: row,
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    let macro_avg = MacroMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        accuracy: mean(|m| m.accuracy),
        micro_accuracy: cm.micro_accuracy(),
    };
    Ok(ClassificationMetrics {
        per_class,
        macro_avg,
    })
}

/// Macro one-vs-rest area. Classes without positives or negatives among the
/// true labels have `None` in `per_class` and are left out of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucScore {
    pub value: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

impl AucScore {
    pub fn skipped(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_scores(scores: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if scores.nrows() != labels.len() {
        return Err(Error::DimMismatch {
            context: "score rows vs labels".into(),
            expected: labels.len(),
            actual: scores.nrows(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= scores.ncols()) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: scores.ncols(),
        });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    Ok(())
}

fn macro_auc(
    scores: &Array2<f64>,
    labels: &[usize],
    binary: fn(&[f64], &[bool]) -> Option<f64>,
) -> Result<AucScore> {
    check_scores(scores, labels)?;
    let per_class: Vec<Option<f64>> = (0..scores.ncols())
        .map(|c| {
            let s: Vec<f64> = scores.column(c).to_vec();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            binary(&s, &pos)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let value = if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    };
    Ok(AucScore { value, per_class })
}

/// Binary ROC area from average ranks: the fraction of positive/negative
/// pairs ordered correctly, ties counting one half.
pub fn binary_auc_roc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Binary average precision: sum over distinct thresholds, from the highest
/// down, of the recall gain times the precision at that threshold.
pub fn binary_auc_prc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == positive.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let gained = order[i..=j].iter().filter(|&&k| positive[k]).count();
        tp += gained;
        seen += j - i + 1;
        area += (gained as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        i = j + 1;
    }
    Some(area)
}

pub fn auc_roc(scores: &Array2<f64>, labels: &[usize]) -> Result<AucScore> {
    macro_auc(scores, labels, binary_auc_roc)
}

pub fn auc_prc(scores: &Array2<f64>, labels: &[usize]) -> Result<AucScore> {
    macro_auc(scores, labels, binary_auc_prc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub preset: String,
    pub seed: u64,
    pub averaging: String,
    /// Zero-division and skipped-class notes.
    pub flags: Vec<String>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub auc_roc: AucScore,
    pub auc_prc: AucScore,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    /// Builds the full report from true labels and probability rows.
    pub fn from_scores(
        true_labels: &[usize],
        probs: &Array2<f64>,
        class_labels: &[String],
        preset: &str,
        seed: u64,
        config: serde_json::Value,
    ) -> Result<Self> {
        if probs.ncols() != class_labels.len() {
            return Err(Error::DimMismatch {
                context: "probability columns vs classes".into(),
                expected: class_labels.len(),
                actual: probs.ncols(),
            });
        }
        let predicted: Vec<usize> = probs.rows().into_iter().map(crate::train::argmax).collect();
        let cm = confusion_matrix(true_labels, &predicted, class_labels)?;
        let metrics = classification_metrics(&cm)?;
        let roc = auc_roc(probs, true_labels)?;
        let prc = auc_prc(probs, true_labels)?;

        let mut flags = Vec::new();
        for m in &metrics.per_class {
            if m.precision_undefined {
                flags.push(format!("{}: never predicted, precision set to 0", m.label));
            }
            if m.recall_undefined {
                flags.push(format!("{}: absent from labels, recall set to 0", m.label));
            }
        }
        for c in roc.skipped() {
            flags.push(format!("{}: skipped in AUC averages", class_labels[c]));
        }
        Ok(Self {
            confusion: cm,
            per_class: metrics.per_class,
            macro_avg: metrics.macro_avg,
            auc_roc: roc,
            auc_prc: prc,
            metadata: ReportMetadata {
                preset: preset.to_string(),
                seed,
                averaging: "macro one-vs-rest".into(),
                flags,
                config,
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Per-class rows plus an Average row, values in percent.
    pub fn render_text(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|m| m.label.len())
            .chain(["Average".len(), "Class".len()])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "Class", "Precision", "Recall", "F1-Score", "Accuracy"
        );
        let row = |out: &mut String, name: &str, p: f64, r: f64, f: f64, a: f64| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9.2}",
                name,
                100.0 * p,
                100.0 * r,
                100.0 * f,
                100.0 * a
            );
        };
        for m in &self.per_class {
            row(&mut out, &m.label, m.precision, m.recall, m.f1, m.accuracy);
        }
        let a = &self.macro_avg;
        row(&mut out, "Average", a.precision, a.recall, a.f1, a.accuracy);
        let _ = writeln!(out);
        let _ = writeln!(out, "AUC ROC {}", fmt_pct(self.auc_roc.value));
        let _ = writeln!(out, "AUC PRC {}", fmt_pct(self.auc_prc.value));
        let _ = writeln!(out);
        let _ = writeln!(out, "Confusion (rows true, columns predicted)");
        for (label, counts) in self.confusion.class_labels.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = counts.iter().map(|c| format!("{c:>6}")).collect();
            let _ = writeln!(out, "{:<width$}  {}", label, cells.join(""));
        }
        for flag in &self.metadata.flags {
            let _ = writeln!(out, "note: {flag}");
        }
        out
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// One row of the preset comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: String,
    pub model: String,
    pub f1: f64,
    pub auc_roc: Option<f64>,
    pub auc_prc: Option<f64>,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub convergence_epoch: usize,
}

impl AblationRow {
    pub fn from_report(model: &str, report: &EvalReport, convergence_epoch: usize) -> Self {
        Self {
            preset: report.metadata.preset.clone(),
            model: model.to_string(),
            f1: report.macro_avg.f1,
            auc_roc: report.auc_roc.value,
            auc_prc: report.auc_prc.value,
            recall: report.macro_avg.recall,
            precision: report.macro_avg.precision,
            accuracy: report.macro_avg.accuracy,
            convergence_epoch,
        }
    }
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.model.len())
        .chain(["Model".len()])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}  {:>8}  {:>6}",
        "Model", "F1", "AUC ROC", "AUC PRC", "Recall", "Precision", "Accuracy", "Epoch"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.2}  {:>8}  {:>8}  {:>8.2}  {:>9.2}  {:>8.2}  {:>6}",
            r.model,
            100.0 * r.f1,
            fmt_pct(r.auc_roc),
            fmt_pct(r.auc_prc),
            100.0 * r.recall,
            100.0 * r.precision,
            100.0 * r.accuracy,
            r.convergence_epoch
        );
    }
    out
}
