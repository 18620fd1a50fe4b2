//! Confusion counts, the five evaluation metrics, ROC-AUC and report rendering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default decision threshold; a score equal to it counts as positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(n: usize, labels: &[u8]) -> Result<()> {
    if n != labels.len() {
        return Err(Error::param(format!("{n} predictions for {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::param("no samples to evaluate"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::param("labels must be 0 or 1"));
    }
    Ok(())
}

/// Threshold scores (`score >= threshold` is positive) and count outcomes.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    let predicted: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    confusion_from_labels(&predicted, labels)
}

/// Count outcomes of hard 0/1 predictions.
pub fn confusion_from_labels(predicted: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    check_lengths(predicted.len(), labels)?;
    let mut c = ConfusionCounts::default();
    for (&p, &y) in predicted.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Precision, recall, F1 and accuracy. Metrics whose denominator is zero
/// are reported as 0 and named in `degenerate`.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub degenerate: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn summarize(c: &ConfusionCounts) -> Summary {
    let mut degenerate = Vec::new();
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut degenerate);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut degenerate);
    let f1 = f1_score(precision, recall).unwrap_or_else(|| {
        degenerate.push("f1".into());
        0.0
    });
    let accuracy = ratio(c.tp + c.tn, c.total(), "accuracy", &mut degenerate);
    Summary {
        precision,
        recall,
        f1,
        accuracy,
        degenerate,
    }
}

/// Harmonic mean; `None` when both inputs are zero.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let den = precision + recall;
    (den > 0.0).then(|| 2.0 * precision * recall / den)
}

/// Area under the ROC curve, ties counting one half.
///
/// Sorts once and sweeps groups of equal scores, which gives the trapezoidal
/// area over all distinct thresholds.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("scores contain NaN"));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {positives} positive and {negatives} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut negatives_below, mut concordant, mut tied) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        concordant += gp * negatives_below;
        tied += gp * gn;
        negatives_below += gn;
        i = j;
    }
    Ok((concordant as f64 + 0.5 * tied as f64) / (positives as f64 * negatives as f64))
}

/// One table row: counts, the four thresholded metrics and an optional AUC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub model: String,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub degenerate_flags: Vec<String>,
}

impl MetricsReport {
    pub fn new(model: impl Into<String>, counts: ConfusionCounts, auc: Option<f64>) -> Self {
        let s = summarize(&counts);
        MetricsReport {
            model: model.into(),
            tp: counts.tp,
            fp: counts.fp,
            tn: counts.tn,
            fn_: counts.fn_,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            accuracy: s.accuracy,
            auc,
            degenerate_flags: s.degenerate,
        }
    }

    /// Report for continuous scores. AUC is omitted (with an `auc` flag)
    /// when only one class is present.
    pub fn from_scores(model: impl Into<String>, scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let counts = confusion(scores, labels, threshold)?;
        let (auc, undefined) = match auc_roc(scores, labels) {
            Ok(a) => (Some(a), false),
            Err(Error::UndefinedMetric(_)) => (None, true),
            Err(e) => return Err(e),
        };
        let mut report = Self::new(model, counts, auc);
        if undefined {
            report.degenerate_flags.push("auc".into());
        }
        Ok(report)
    }

    /// Report for hard labels; AUC is not defined for these.
    pub fn from_labels(model: impl Into<String>, predicted: &[u8], labels: &[u8]) -> Result<Self> {
        Ok(Self::new(model, confusion_from_labels(predicted, labels)?, None))
    }

    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

pub const TABLE_HEADER: &str = "| Models | Precision | Recall | F1 Score | Accuracy | AUC Score |";

/// Markdown table, three decimals, `-` where AUC is absent.
pub fn render_markdown(reports: &[MetricsReport]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push_str("\n|---|---:|---:|---:|---:|---:|\n");
    for r in reports {
        let auc = r.auc.map_or_else(|| "-".to_string(), |a| format!("{a:.3}"));
        out.push_str(&format!(
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {auc} |\n",
            r.model, r.precision, r.recall, r.f1, r.accuracy
        ));
    }
    out
}

/// JSON array of reports at full precision.
pub fn render_json(reports: &[MetricsReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports are plain data")
}

/// Markdown table and JSON document for at least one report.
pub fn render_report(reports: &[MetricsReport]) -> Result<(String, String)> {
    if reports.is_empty() {
        return Err(Error::param("nothing to report"));
    }
    Ok((render_markdown(reports), render_json(reports)))
}

/// Rename repeated model names to `name (2)`, `name (3)`, ...; returns one warning per rename.
pub fn disambiguate_names(reports: &mut [MetricsReport]) -> Vec<String> {
    let mut warnings = Vec::new();
    let mut taken: std::collections::HashSet<String> = std::collections::HashSet::new();
    for r in reports.iter_mut() {
        if taken.insert(r.model.clone()) {
            continue;
        }
        let mut k = 2;
        while taken.contains(&format!("{} ({k})", r.model)) {
            k += 1;
        }
        let renamed = format!("{} ({k})", r.model);
        warnings.push(format!("duplicate model name \"{}\" renamed to \"{renamed}\"", r.model));
        taken.insert(renamed.clone());
        r.model = renamed;
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_case() {
        let c = confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
        let s = summarize(&c);
        assert_eq!((s.precision, s.recall, s.f1, s.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn boundary_is_positive() {
        let c = confusion(&[0.5], &[0], 0.5).unwrap();
        assert_eq!(c.fp, 1);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(confusion(&[0.1], &[0, 1], 0.5), Err(Error::Parameter(_))));
        assert!(confusion(&[], &[], 0.5).is_err());
    }

    #[test]
    fn degenerate_flags() {
        let s = summarize(&ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 0 });
        assert_eq!(s.precision, 0.0);
        assert_eq!(s.degenerate, vec!["precision", "recall", "f1"]);
        assert_eq!(s.accuracy, 1.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc_roc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc_roc(&[0.2, 0.3], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn markdown_dash_for_missing_auc() {
        let r = MetricsReport::from_labels("Majority Vote", &[1, 0, 1], &[1, 0, 0]).unwrap();
        let md = render_markdown(&[r]);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], TABLE_HEADER);
        assert_eq!(lines[2], "| Majority Vote | 0.500 | 1.000 | 0.667 | 0.667 | - |");
    }

    #[test]
    fn single_class_scores_flag_auc() {
        let r = MetricsReport::from_scores("m", &[0.7, 0.2], &[1, 1], 0.5).unwrap();
        assert_eq!(r.auc, None);
        assert!(r.degenerate_flags.contains(&"auc".to_string()));
    }

    #[test]
    fn json_schema_keys() {
        let r = MetricsReport::from_scores("m", &[0.7, 0.2], &[1, 0], 0.5).unwrap();
        let v: serde_json::Value = serde_json::from_str(&render_json(&[r])).unwrap();
        let keys: Vec<&str> = v[0].as_object().unwrap().keys().map(String::as_str).collect();
        for k in ["model", "tp", "fp", "tn", "fn", "precision", "recall", "f1", "accuracy", "auc", "degenerate_flags"] {
            assert!(keys.contains(&k), "{k}");
        }
    }

    #[test]
    fn duplicate_names_get_suffixes() {
        let r = MetricsReport::from_labels("A", &[1], &[1]).unwrap();
        let mut rs = vec![r.clone(), r.clone(), r];
        let w = disambiguate_names(&mut rs);
        assert_eq!(w.len(), 2);
        assert_eq!(rs.iter().map(|r| r.model.as_str()).collect::<Vec<_>>(), ["A", "A (2)", "A (3)"]);
        assert!(render_report(&[]).is_err());
    }
}
