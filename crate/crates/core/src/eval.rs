//! Evaluation protocol: Top-n accuracy, macro-F1, grouped reports, and the
//! arithmetic for relative error reduction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_aligned(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::invalid("nothing to evaluate"));
    }
    Ok(())
}

/// Fraction of items whose ground truth is among the first `n` ranked labels.
pub fn top_n_accuracy<P: AsRef<[u32]>>(predictions: &[P], truth: &[u32], n: usize) -> Result<f64> {
    check_aligned(predictions.len(), truth.len())?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(p, gt)| p.as_ref().iter().take(n).any(|l| l == *gt))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Ground-truth count.
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    /// Mean F1 over classes present in the ground truth.
    pub macro_f1: f64,
    pub per_class: BTreeMap<u32, ClassScores>,
    /// Classes that were predicted but never occur in the ground truth; they
    /// are listed in `per_class` but left out of the mean.
    pub predicted_only: Vec<u32>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-averaged F1 over head-label predictions.
pub fn macro_f1(predictions: &[u32], truth: &[u32]) -> Result<F1Report> {
    check_aligned(predictions.len(), truth.len())?;
    let mut counts: BTreeMap<u32, [usize; 3]> = BTreeMap::new();
    for (&p, &gt) in predictions.iter().zip(truth) {
        if p == gt {
            counts.entry(p).or_default()[0] += 1;
        } else {
            counts.entry(p).or_default()[1] += 1;
            counts.entry(gt).or_default()[2] += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    let mut predicted_only = Vec::new();
    let mut f1_sum = 0.0;
    let mut gt_classes = 0usize;
    for (label, [tp, fp, fn_]) in counts {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let support = tp + fn_;
        if support > 0 {
            f1_sum += f1;
            gt_classes += 1;
        } else {
            predicted_only.push(label);
        }
        per_class.insert(
            label,
            ClassScores {
                true_positives: tp,
                false_positives: fp,
                false_negatives: fn_,
                support,
                precision,
                recall,
                f1,
            },
        );
    }
    Ok(F1Report {
        macro_f1: f1_sum / gt_classes as f64,
        per_class,
        predicted_only,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub count: usize,
    pub top1: f64,
    pub top3: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricBlock,
    pub per_class: BTreeMap<u32, ClassScores>,
    pub predicted_only: Vec<u32>,
    pub groups: BTreeMap<String, MetricBlock>,
    /// Optional id-to-name map used when rendering the table.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_names: BTreeMap<u32, String>,
}

fn metric_block<P: AsRef<[u32]>>(predictions: &[P], truth: &[u32]) -> Result<MetricBlock> {
    let heads = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.as_ref()
                .first()
                .copied()
                .ok_or_else(|| Error::invalid(format!("prediction {i} has an empty ranking")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricBlock {
        count: truth.len(),
        top1: top_n_accuracy(predictions, truth, 1)?,
        top3: top_n_accuracy(predictions, truth, 3)?,
        macro_f1: macro_f1(&heads, truth)?.macro_f1,
    })
}

/// Overall metrics plus one block per distinct group key (e.g. `cis`/`trans`
/// or a location id).
pub fn grouped_report<P: AsRef<[u32]>, G: AsRef<str>>(
    predictions: &[P],
    truth: &[u32],
    groups: &[G],
) -> Result<EvalReport> {
    check_aligned(predictions.len(), truth.len())?;
    if groups.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: groups.len(),
            right: truth.len(),
        });
    }
    let overall = metric_block(predictions, truth)?;
    let heads: Vec<u32> = predictions.iter().map(|p| p.as_ref()[0]).collect();
    let f1 = macro_f1(&heads, truth)?;

    let keys: BTreeSet<&str> = groups.iter().map(AsRef::as_ref).collect();
    let mut blocks = BTreeMap::new();
    for key in keys {
        let idx: Vec<usize> = (0..truth.len()).filter(|&i| groups[i].as_ref() == key).collect();
        let p: Vec<&[u32]> = idx.iter().map(|&i| predictions[i].as_ref()).collect();
        let t: Vec<u32> = idx.iter().map(|&i| truth[i]).collect();
        blocks.insert(key.to_string(), metric_block(&p, &t)?);
    }
    Ok(EvalReport {
        overall,
        per_class: f1.per_class,
        predicted_only: f1.predicted_only,
        groups: blocks,
        label_names: BTreeMap::new(),
    })
}

/// Percent with one decimal, the precision the reported tables use.
pub fn percent(value: f64) -> String {
    format!("{:.1}", value * 100.0)
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>7} {:>7} {:>7} {:>7}",
            "group", "n", "top1", "top3", "F1_m"
        )?;
        let mut row = |name: &str, b: &MetricBlock| {
            writeln!(
                f,
                "{:<16} {:>7} {:>7} {:>7} {:>7}",
                name,
                b.count,
                percent(b.top1),
                percent(b.top3),
                percent(b.macro_f1)
            )
        };
        row("overall", &self.overall)?;
        for (name, block) in &self.groups {
            row(name, block)?;
        }
        writeln!(f)?;
        writeln!(f, "{:<24} {:>7} {:>7} {:>7} {:>7}", "class", "support", "P", "R", "F1")?;
        for (label, s) in &self.per_class {
            let name = self
                .label_names
                .get(label)
                .cloned()
                .unwrap_or_else(|| label.to_string());
            let marker = if s.support == 0 { " *" } else { "" };
            writeln!(
                f,
                "{:<24} {:>7} {:>7} {:>7} {:>7}{}",
                name,
                s.support,
                percent(s.precision),
                percent(s.recall),
                percent(s.f1),
                marker
            )?;
        }
        if !self.predicted_only.is_empty() {
            writeln!(f, "* predicted but absent from ground truth; excluded from F1_m")?;
        }
        Ok(())
    }
}

/// Relative reduction of the error rate when accuracy (in percent) moves from
/// `base` to `new`: `((100 - base) - (100 - new)) / (100 - base)`.
pub fn relative_error_reduction(base: f64, new: f64) -> Result<f64> {
    for v in [base, new] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::invalid(format!("accuracy {v} outside [0, 100]")));
        }
    }
    if base >= 100.0 {
        return Err(Error::invalid("baseline accuracy of 100% leaves no error to reduce"));
    }
    let base_err = 100.0 - base;
    let new_err = 100.0 - new;
    Ok((base_err - new_err) / base_err)
}
