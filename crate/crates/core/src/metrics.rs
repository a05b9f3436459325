//! Token-level classification metrics in the layout of a per-class report:
//! precision, recall, F1 and support per class, then macro, micro and
//! support-weighted aggregates and accuracy.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class confusion tallies. Positions whose gold label is the ignore id
/// are never counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub support: Vec<u64>,
}

impl ClassCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
            support: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Number of scored tokens.
    pub fn evaluated(&self) -> u64 {
        self.support.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        self.tp.iter().sum()
    }

    /// Adds the tallies of `other` (same class count) into `self`.
    pub fn merge(&mut self, other: &ClassCounts) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::Contract(format!(
                "cannot merge counts over {} and {} classes",
                self.num_classes(),
                other.num_classes()
            )));
        }
        for c in 0..self.num_classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
            self.support[c] += other.support[c];
        }
        Ok(())
    }

    /// Adds one (prediction, gold) pair.
    pub fn add(&mut self, pred: i64, gold: i64, ignore_id: i64) -> Result<()> {
        if gold == ignore_id {
            return Ok(());
        }
        let n = self.num_classes() as i64;
        if !(0..n).contains(&gold) {
            return Err(Error::Contract(format!("gold label {gold} outside 0..{n}")));
        }
        if !(0..n).contains(&pred) {
            return Err(Error::Contract(format!("predicted label {pred} outside 0..{n}")));
        }
        let (p, g) = (pred as usize, gold as usize);
        self.support[g] += 1;
        if p == g {
            self.tp[g] += 1;
        } else {
            self.fp[p] += 1;
            self.fn_[g] += 1;
        }
        Ok(())
    }
}

/// Tallies `preds` against `golds`, skipping positions where the gold label
/// is `ignore_id`.
pub fn count(preds: &[i64], golds: &[i64], ignore_id: i64, num_classes: usize) -> Result<ClassCounts> {
    if preds.len() != golds.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let mut counts = ClassCounts::new(num_classes);
    for (&p, &g) in preds.iter().zip(golds) {
        counts.add(p, g, ignore_id)?;
    }
    Ok(counts)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    #[serde(rename = "class")]
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "f1_score")]
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub evaluated: u64,
    pub loss: Option<f64>,
}

/// Builds the report. Classes with neither gold nor predicted tokens are
/// listed but left out of the macro average.
pub fn report(counts: &ClassCounts, names: &[String]) -> Result<MetricsReport> {
    if names.len() != counts.num_classes() {
        return Err(Error::Contract(format!(
            "{} class names for {} classes",
            names.len(),
            counts.num_classes()
        )));
    }
    let per_class: Vec<ClassMetrics> = names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let tp = counts.tp[c];
            let precision = ratio(tp, tp + counts.fp[c]);
            let recall = ratio(tp, tp + counts.fn_[c]);
            // 2PR/(P+R) written over counts, which is exact for integers
            let f1 = ratio(2 * tp, 2 * tp + counts.fp[c] + counts.fn_[c]);
            ClassMetrics {
                name: name.clone(),
                precision,
                recall,
                f1,
                support: counts.support[c],
            }
        })
        .collect();

    let active: Vec<usize> = (0..counts.num_classes())
        .filter(|&c| counts.support[c] + counts.fp[c] > 0)
        .collect();
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| {
        if active.is_empty() {
            0.0
        } else {
            active.iter().map(|&c| f(&per_class[c])).sum::<f64>() / active.len() as f64
        }
    };
    let total = counts.evaluated();
    let weighted = |f: &dyn Fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        }
    };
    let correct = counts.correct();
    // Pooled over classes, FP and FN both total the misclassified tokens, so
    // micro F1 = 2c / (2c + 2(n - c)) = c / n.
    let pooled_fp: u64 = counts.fp.iter().sum();
    let pooled_fn: u64 = counts.fn_.iter().sum();
    Ok(MetricsReport {
        macro_precision: mean(&|m| m.precision),
        macro_recall: mean(&|m| m.recall),
        macro_f1: mean(&|m| m.f1),
        micro_f1: ratio(2 * correct, 2 * correct + pooled_fp + pooled_fn),
        weighted_precision: weighted(&|m| m.precision),
        weighted_recall: weighted(&|m| m.recall),
        weighted_f1: weighted(&|m| m.f1),
        accuracy: ratio(correct, total),
        evaluated: total,
        loss: None,
        per_class,
    })
}

/// Macro and support-weighted F1 from published per-class `(f1, support)`
/// rows, for cross-checking a report's aggregate block.
pub fn aggregate(rows: &[(f64, u64)]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let macro_f1 = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let total: u64 = rows.iter().map(|r| r.1).sum();
    let weighted = if total == 0 {
        0.0
    } else {
        rows.iter().map(|&(f, s)| f * s as f64).sum::<f64>() / total as f64
    };
    (macro_f1, weighted)
}

#[derive(Serialize, Deserialize)]
struct Overall {
    loss: Option<f64>,
    accuracy: f64,
    f1_macro: f64,
    f1_micro: f64,
    f1_weighted: f64,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    overall: Overall,
    per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn with_loss(mut self, loss: f64) -> Self {
        self.loss = Some(loss);
        self
    }

    fn summary_rows(&self) -> [ClassMetrics; 2] {
        [
            ClassMetrics {
                name: "Macro Avg".into(),
                precision: self.macro_precision,
                recall: self.macro_recall,
                f1: self.macro_f1,
                support: self.evaluated,
            },
            ClassMetrics {
                name: "Weighted Avg".into(),
                precision: self.weighted_precision,
                recall: self.weighted_recall,
                f1: self.weighted_f1,
                support: self.evaluated,
            },
        ]
    }

    /// JSON with an `overall` block and a `per_class` block whose last two
    /// rows are the macro and weighted averages.
    pub fn to_json(&self) -> Result<String> {
        let mut per_class = self.per_class.clone();
        per_class.extend(self.summary_rows());
        let file = ReportFile {
            overall: Overall {
                loss: self.loss,
                accuracy: self.accuracy,
                f1_macro: self.macro_f1,
                f1_micro: self.micro_f1,
                f1_weighted: self.weighted_f1,
            },
            per_class,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    /// Plain-text table: classes in lexicographic order, then the averages,
    /// then the overall block.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<&ClassMetrics> = self.per_class.iter().collect();
        rows.sort_by(|a, b| a.name.cmp(&b.name));
        let summary = self.summary_rows();
        let width = rows
            .iter()
            .chain(summary.iter().collect::<Vec<_>>().iter())
            .map(|r| r.name.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>8}",
            "Class", "Precision", "Recall", "F1-Score", "Support"
        );
        let line = |out: &mut String, r: &ClassMetrics| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>8}",
                r.name, r.precision, r.recall, r.f1, r.support
            );
        };
        for r in rows {
            line(&mut out, r);
        }
        out.push('\n');
        for r in &summary {
            line(&mut out, r);
        }
        out.push('\n');
        if let Some(loss) = self.loss {
            let _ = writeln!(out, "Test Loss           {loss:.4}");
        }
        let _ = writeln!(out, "Test Accuracy       {:.4}", self.accuracy);
        let _ = writeln!(out, "Test F1 (Macro)     {:.4}", self.macro_f1);
        let _ = writeln!(out, "Test F1 (Micro)     {:.4}", self.micro_f1);
        let _ = writeln!(out, "Test F1 (Weighted)  {:.4}", self.weighted_f1);
        out
    }

    /// Writes `<stem>.json` and `<stem>.txt` next to each other.
    pub fn save(&self, json_path: impl AsRef<Path>) -> Result<()> {
        let json_path = json_path.as_ref();
        crate::io::write_text(json_path, &self.to_json()?)?;
        crate::io::write_text(json_path.with_extension("txt"), &self.to_text())
    }
}
