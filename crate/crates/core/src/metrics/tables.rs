use std::collections::BTreeSet;

use super::{LabelMetrics, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerLabelMetric {
    Auroc,
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl PerLabelMetric {
    pub fn title(self) -> &'static str {
        match self {
            PerLabelMetric::Auroc => "AUROC",
            PerLabelMetric::Accuracy => "Accuracy",
            PerLabelMetric::Precision => "Precision",
            PerLabelMetric::Recall => "Recall",
            PerLabelMetric::F1 => "F1 Score",
        }
    }

    fn get(self, m: &LabelMetrics) -> Option<f64> {
        match self {
            PerLabelMetric::Auroc => m.auroc,
            PerLabelMetric::Accuracy => Some(m.accuracy),
            PerLabelMetric::Precision => Some(m.precision),
            PerLabelMetric::Recall => Some(m.recall),
            PerLabelMetric::F1 => Some(m.f1),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => "NaN".to_string(),
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per model, in the given order.
pub fn overall_table(reports: &[MetricsReport]) -> String {
    let mut out = String::from("Model Name,AUROC,Accuracy,F1 Score,Precision,Recall\n");
    for r in reports {
        let o = &r.overall;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            quote(&r.model_name),
            cell(o.auroc),
            cell(Some(o.accuracy)),
            cell(Some(o.f1)),
            cell(Some(o.precision)),
            cell(Some(o.recall)),
        ));
    }
    out
}

/// Labels down, models across; both sorted by name. Undefined values
/// render as `NaN`.
pub fn metric_table(reports: &[MetricsReport], metric: PerLabelMetric) -> String {
    let mut models: Vec<&MetricsReport> = reports.iter().collect();
    models.sort_by(|a, b| a.model_name.cmp(&b.model_name));
    let labels: BTreeSet<&str> = reports
        .iter()
        .flat_map(|r| r.per_label.iter().map(|m| m.label.as_str()))
        .collect();
    let mut out = String::from("Label");
    for m in &models {
        out.push(',');
        out.push_str(&quote(&m.model_name));
    }
    out.push('\n');
    for label in labels {
        out.push_str(&quote(label));
        for m in &models {
            let v = m
                .per_label
                .iter()
                .find(|x| x.label == label)
                .and_then(|x| metric.get(x));
            out.push(',');
            out.push_str(&cell(v));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ConfusionMatrix, OverallMetrics};

    fn report(name: &str, aurocs: &[(&str, Option<f64>)]) -> MetricsReport {
        MetricsReport {
            model_name: name.into(),
            n_samples: 4,
            overall: OverallMetrics {
                auroc: Some(0.75),
                accuracy: 0.5,
                precision: 0.25,
                recall: 0.125,
                f1: 1.0 / 6.0,
            },
            per_label: aurocs
                .iter()
                .map(|(l, a)| LabelMetrics {
                    label: l.to_string(),
                    auroc: *a,
                    accuracy: 1.0,
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                    confusion: ConfusionMatrix::default(),
                })
                .collect(),
        }
    }

    #[test]
    fn overall_layout() {
        let t = overall_table(&[report("CustomNet", &[])]);
        assert_eq!(
            t,
            "Model Name,AUROC,Accuracy,F1 Score,Precision,Recall\nCustomNet,0.750000,0.500000,0.166667,0.250000,0.125000\n"
        );
    }

    #[test]
    fn pivot_sorted_with_nan() {
        let a = report("Vgg16", &[("Fracture", None), ("Edema", Some(0.5))]);
        let b = report("CustomNet", &[("Fracture", None), ("Edema", Some(0.25))]);
        let t = metric_table(&[a, b], PerLabelMetric::Auroc);
        assert_eq!(
            t,
            "Label,CustomNet,Vgg16\nEdema,0.250000,0.500000\nFracture,NaN,NaN\n"
        );
    }
}
