//! Classification metrics: rank-based AUROC, confusion counts, and the
//! per-label and macro report.

mod tables;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use tables::{metric_table, overall_table, PerLabelMetric};

use crate::error::{Error, Result};

fn check_binary(labels: &[u8]) -> Result<()> {
    match labels.iter().position(|&l| l > 1) {
        Some(i) => Err(Error::Config(format!(
            "label at index {i} is {}, expected 0 or 1",
            labels[i]
        ))),
        None => Ok(()),
    }
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half. `None` when either class is absent.
///
/// Computed from average ranks in O(n log n).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::Length {
            left: scores.len(),
            right: labels.len(),
        });
    }
    check_binary(labels)?;
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidScore { index, value });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based average ranks of the positives; doubled to stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let positives = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        // Ranks i+1..=j average to (i + 1 + j) / 2.
        rank_sum2 += positives * (i as u128 + 1 + j as u128);
        i = j;
    }
    let p = n_pos as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Ok(Some(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(preds: &[u8], targets: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != targets.len() {
        return Err(Error::Length {
            left: preds.len(),
            right: targets.len(),
        });
    }
    check_binary(preds)?;
    check_binary(targets)?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(targets) {
        match (p, t) {
            (1, 1) => cm.tp += 1,
            (1, _) => cm.fp += 1,
            (_, 1) => cm.fn_ += 1,
            _ => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// (precision, recall, f1); each is 0 when its denominator is 0.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> (f64, f64, f64) {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Overall fraction of matching cells and the per-column fractions.
pub fn accuracy(preds: ArrayView2<u8>, targets: ArrayView2<u8>) -> Result<(f64, Vec<f64>)> {
    if preds.dim() != targets.dim() {
        return Err(Error::shape(
            format!("{:?}", targets.dim()),
            format!("{:?}", preds.dim()),
        ));
    }
    let (rows, cols) = preds.dim();
    let per_label: Vec<f64> = (0..cols)
        .map(|k| {
            let hits = preds
                .column(k)
                .iter()
                .zip(targets.column(k))
                .filter(|(a, b)| a == b)
                .count();
            ratio(hits, rows)
        })
        .collect();
    let hits = preds
        .iter()
        .zip(targets.iter())
        .filter(|(a, b)| a == b)
        .count();
    Ok((ratio(hits, rows * cols), per_label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    /// `None` when the label has a single class in the targets.
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
}

/// Macro means over labels; AUROC averages only labels where it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_name: String,
    pub n_samples: usize,
    pub overall: OverallMetrics,
    pub per_label: Vec<LabelMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn column_u8(a: ArrayView2<u8>, k: usize) -> Vec<u8> {
    a.index_axis(Axis(1), k).to_vec()
}

fn column_f64(a: ArrayView2<f64>, k: usize) -> Vec<f64> {
    let col: ArrayView1<f64> = a.index_axis(Axis(1), k);
    col.to_vec()
}

/// Assembles per-label and macro metrics. All matrices are
/// (samples, labels) with one column per entry of `label_names`.
pub fn build_report(
    model_name: &str,
    probs: ArrayView2<f64>,
    preds: ArrayView2<u8>,
    targets: ArrayView2<u8>,
    label_names: &[String],
) -> Result<MetricsReport> {
    let dim = targets.dim();
    if probs.dim() != dim || preds.dim() != dim || dim.1 != label_names.len() {
        return Err(Error::shape(
            format!(
                "({}, {}) for probs, preds and targets",
                dim.0,
                label_names.len()
            ),
            format!("{:?}, {:?}, {:?}", probs.dim(), preds.dim(), dim),
        ));
    }
    let mut per_label = Vec::with_capacity(dim.1);
    for (k, name) in label_names.iter().enumerate() {
        let t = column_u8(targets, k);
        let cm = confusion(&column_u8(preds, k), &t)?;
        let (precision, recall, f1) = precision_recall_f1(&cm);
        per_label.push(LabelMetrics {
            label: name.clone(),
            auroc: auroc(&column_f64(probs, k), &t)?,
            accuracy: cm.accuracy(),
            precision,
            recall,
            f1,
            confusion: cm,
        });
    }
    let overall = OverallMetrics {
        auroc: mean(per_label.iter().filter_map(|m| m.auroc)),
        accuracy: mean(per_label.iter().map(|m| m.accuracy)).unwrap_or(0.0),
        precision: mean(per_label.iter().map(|m| m.precision)).unwrap_or(0.0),
        recall: mean(per_label.iter().map(|m| m.recall)).unwrap_or(0.0),
        f1: mean(per_label.iter().map(|m| m.f1)).unwrap_or(0.0),
    };
    Ok(MetricsReport {
        model_name: model_name.to_string(),
        n_samples: dim.0,
        overall,
        per_label,
    })
}

/// Binary decisions `prob > threshold`.
pub fn threshold_probs(probs: ArrayView2<f64>, threshold: f64) -> ndarray::Array2<u8> {
    probs.mapv(|p| u8::from(p > threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn brute(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (pairs > 0.0).then(|| num / pairs)
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(
            auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(),
            Some(0.75)
        );
        assert_eq!(
            auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(),
            Some(1.0)
        );
        assert_eq!(auroc(&[0.3; 4], &[0, 1, 0, 1]).unwrap(), Some(0.5));
        assert_eq!(auroc(&[0.1, 0.2], &[0, 0]).unwrap(), None);
        assert!(matches!(auroc(&[0.1], &[0, 1]), Err(Error::Length { .. })));
        assert!(matches!(
            auroc(&[f64::NAN, 0.1], &[0, 1]),
            Err(Error::InvalidScore { index: 0, .. })
        ));
        assert!(auroc(&[0.1, 0.2], &[0, 2]).is_err());
    }

    #[test]
    fn auroc_ties_match_pair_count() {
        let s = [0.5, 0.5, 0.2, 0.9, 0.5, 0.2, 0.9];
        let l = [1, 0, 0, 1, 1, 1, 0];
        assert!((auroc(&s, &l).unwrap().unwrap() - brute(&s, &l).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn confusion_and_prf() {
        let cm = confusion(&[1, 1, 0], &[1, 1, 0]).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 2,
                fp: 0,
                tn: 1,
                fn_: 0
            }
        );
        let cm = confusion(&[0, 0, 1], &[1, 1, 0]).unwrap();
        assert_eq!((cm.tp, cm.tn), (0, 0));
        let (p, r, f) = precision_recall_f1(&ConfusionMatrix {
            tp: 3,
            fp: 1,
            tn: 0,
            fn_: 1,
        });
        assert_eq!((p, r, f), (0.75, 0.75, 0.75));
        assert_eq!(
            precision_recall_f1(&ConfusionMatrix {
                tp: 0,
                fp: 0,
                tn: 2,
                fn_: 5
            }),
            (0.0, 0.0, 0.0)
        );
        let (p, r, f) = precision_recall_f1(&ConfusionMatrix {
            tp: 8,
            fp: 2,
            tn: 0,
            fn_: 4,
        });
        assert!((p - 0.8).abs() < 1e-12 && (r - 2.0 / 3.0).abs() < 1e-12);
        assert!((f - 0.727_272_727_272_727_3).abs() < 1e-12);
    }

    #[test]
    fn accuracy_identity() {
        let t = array![[1u8, 0], [0, 0], [1, 0]];
        let (all, per) = accuracy(t.view(), t.view()).unwrap();
        assert_eq!(all, 1.0);
        assert_eq!(per, vec![1.0, 1.0]);
        let p = Array2::zeros((3, 2));
        let (all, per) = accuracy(p.view(), t.view()).unwrap();
        assert!((all - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(per, vec![1.0 / 3.0, 1.0]);
        assert!(accuracy(Array2::zeros((2, 2)).view(), t.view()).is_err());
    }

    #[test]
    fn undefined_label_excluded_from_macro() {
        let names = vec!["a".to_string(), "b".to_string()];
        let targets = array![[1u8, 0], [0, 0], [1, 0], [0, 0]];
        let probs = array![[0.9, 0.1], [0.2, 0.3], [0.6, 0.2], [0.4, 0.1]];
        let preds = threshold_probs(probs.view(), 0.5);
        let r = build_report("m", probs.view(), preds.view(), targets.view(), &names).unwrap();
        assert_eq!(r.per_label[1].auroc, None);
        assert_eq!(r.per_label[1].accuracy, 1.0);
        assert_eq!(r.overall.auroc, Some(1.0));
        assert!(r.to_json().unwrap().contains("\"auroc\": null"));
        assert_eq!(MetricsReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn strict_threshold() {
        let p = array![[0.5, 0.51, 0.49]];
        assert_eq!(threshold_probs(p.view(), 0.5), array![[0u8, 1, 0]]);
    }
}
