//! Binary classification metrics: accuracy, F1 on the fake class, and
//! rank-based AUC with midrank tie handling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// F1 on the positive (fake) class. An empty denominator means there
    /// were no positives anywhere: a vacuously perfect 1.0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            return 1.0;
        }
        2.0 * self.tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub count: u64,
}

/// Evaluation summary for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub accuracy: f64,
    pub f1: f64,
    /// Absent when the split holds a single class.
    pub auc: Option<f64>,
    pub confusion: ConfusionCounts,
    pub per_domain: BTreeMap<String, DomainMetrics>,
}

impl EvalReport {
    /// Build from per-item records `(domain, label, score)` at the given
    /// decision threshold.
    pub fn from_scores(split: &str, records: &[(String, u8, f64)], threshold: f64) -> Self {
        let mut confusion = ConfusionCounts::default();
        let mut domain_conf: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
        for (domain, label, score) in records {
            let predicted = u8::from(*score >= threshold);
            let cell = domain_conf.entry(domain.clone()).or_default();
            match (label, predicted) {
                (1, 1) => {
                    confusion.tp += 1;
                    cell.tp += 1;
                }
                (0, 1) => {
                    confusion.fp += 1;
                    cell.fp += 1;
                }
                (0, 0) => {
                    confusion.tn += 1;
                    cell.tn += 1;
                }
                _ => {
                    confusion.fn_ += 1;
                    cell.fn_ += 1;
                }
            }
        }
        let scores: Vec<f64> = records.iter().map(|r| r.2).collect();
        let labels: Vec<u8> = records.iter().map(|r| r.1).collect();
        let per_domain = domain_conf
            .into_iter()
            .map(|(d, c)| {
                (
                    d,
                    DomainMetrics {
                        accuracy: c.accuracy(),
                        f1: c.f1(),
                        count: c.total(),
                    },
                )
            })
            .collect();
        EvalReport {
            split: split.to_string(),
            accuracy: confusion.accuracy(),
            f1: confusion.f1(),
            auc: auc_mann_whitney(&scores, &labels),
            confusion,
            per_domain,
        }
    }

    pub fn csv_header() -> &'static str {
        "split,accuracy,f1,auc,tp,fp,tn,fn"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{},{},{},{},{}",
            self.split,
            self.accuracy,
            self.f1,
            self.auc.map_or_else(|| "".into(), |a| format!("{a:.6}")),
            self.confusion.tp,
            self.confusion.fp,
            self.confusion.tn,
            self.confusion.fn_,
        )
    }
}

/// AUC via the rank-sum statistic with midranks for tied scores.
/// `None` when either class is absent.
pub fn auc_mann_whitney(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // midranks over tie groups, then sum the positive ranks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let auc =
        (rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64);
    Some(auc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation_scores_one() {
        let scores = [0.9, 0.8, 0.1, 0.2];
        let labels = [1, 1, 0, 0];
        assert_eq!(auc_mann_whitney(&scores, &labels), Some(1.0));
        let records: Vec<(String, u8, f64)> = scores
            .iter()
            .zip(&labels)
            .map(|(&s, &l)| ("d".to_string(), l, s))
            .collect();
        let report = EvalReport::from_scores("test", &records, 0.5);
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.auc, Some(1.0));
    }

    #[test]
    fn known_auc_from_pair_counting() {
        // pairs: (0.35 > 0.1) 1, (0.35 > 0.4) 0, (0.8 > 0.1) 1, (0.8 > 0.4) 1
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0, 0, 1, 1];
        assert_eq!(auc_mann_whitney(&scores, &labels), Some(0.75));
    }

    #[test]
    fn midranks_handle_ties() {
        // one tied positive/negative pair contributes 0.5
        let scores = [0.5, 0.5];
        let labels = [1, 0];
        assert_eq!(auc_mann_whitney(&scores, &labels), Some(0.5));
    }

    #[test]
    fn single_class_gives_no_auc() {
        let scores = [0.2, 0.6];
        let labels = [1, 1];
        assert_eq!(auc_mann_whitney(&scores, &labels), None);
        let records: Vec<(String, u8, f64)> = scores
            .iter()
            .zip(&labels)
            .map(|(&s, &l)| ("d".to_string(), l, s))
            .collect();
        let report = EvalReport::from_scores("test", &records, 0.5);
        assert_eq!(report.auc, None);
        assert!((report.accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn metrics_rederive_from_confusion_counts() {
        let records = vec![
            ("a".to_string(), 1, 0.9),
            ("a".to_string(), 0, 0.7),
            ("b".to_string(), 1, 0.2),
            ("b".to_string(), 0, 0.1),
            ("b".to_string(), 1, 0.8),
        ];
        let report = EvalReport::from_scores("test", &records, 0.5);
        let c = report.confusion;
        assert_eq!(c.total(), 5);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 1, 1));
        assert!((report.accuracy - (c.tp + c.tn) as f64 / 5.0).abs() < 1e-15);
        let f1 = 2.0 * c.tp as f64 / (2.0 * c.tp as f64 + c.fp as f64 + c.fn_ as f64);
        assert!((report.f1 - f1).abs() < 1e-15);
        // per-domain counts partition the split
        let total: u64 = report.per_domain.values().map(|m| m.count).sum();
        assert_eq!(total, 5);
    }
}
