//! Confusion-matrix metrics and rank-based ROC AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_predictions(num_classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::contract(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(num_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    /// Square matrix from explicit counts.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::dim("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.order();
        if truth >= k || predicted >= k {
            return Err(Error::contract(format!(
                "pair ({truth}, {predicted}) outside a {k}-class matrix"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.order()).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_total(&self, t: usize) -> u64 {
        self.counts[t].iter().sum()
    }

    pub fn column_total(&self, p: usize) -> u64 {
        self.counts.iter().map(|r| r[p]).sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        self.column_total(c) - self.counts[c][c]
    }

    pub fn fn_(&self, c: usize) -> u64 {
        self.row_total(c) - self.counts[c][c]
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(t, r)| r.iter().enumerate().all(|(p, &v)| t == p || v == 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    /// Always "macro": unweighted mean over classes.
    pub averaging: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub kappa: f64,
    /// Descriptions of every 0/0 that was replaced by 0.
    pub zero_division: Vec<String>,
}

fn ratio(num: u64, den: u64, what: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(what.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.total();
    if n == 0 || cm.order() == 0 {
        return Err(Error::contract("confusion matrix is empty"));
    }
    let k = cm.order();
    let mut flags = vec![];
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.tp(c);
            let precision = ratio(tp, tp + cm.fp(c), &format!("precision of class {c}"), &mut flags);
            let recall = ratio(tp, tp + cm.fn_(c), &format!("recall of class {c}"), &mut flags);
            let f1 = if precision + recall == 0.0 {
                flags.push(format!("f1 of class {c}"));
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: cm.row_total(c),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let total = n as f64;
    let p_o = cm.trace() as f64 / total;
    let p_e = (0..k)
        .map(|c| cm.row_total(c) as f64 * cm.column_total(c) as f64)
        .sum::<f64>()
        / (total * total);
    let kappa = if p_e == 1.0 {
        // Only one class appears in truth and prediction alike.
        flags.push("kappa (chance agreement is 1)".into());
        if cm.is_diagonal() {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(Metrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        per_class,
        averaging: "macro".into(),
        accuracy: p_o,
        kappa,
        zero_division: flags,
    })
}

/// Mann–Whitney estimate of P(score of a positive > score of a negative),
/// ties counted one half. `None` unless both groups are non-empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != positive.len() {
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
        // ranks are 1-based; a tie group shares its mean rank
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&s| positive[s]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub value: f64,
    /// One-vs-rest AUC per class; `None` for excluded classes. For two
    /// classes only class 1 is scored.
    pub per_class: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

/// ROC AUC from per-sample class scores (`scores[i][c]`). Two classes use
/// the class-1 score; more use the unweighted mean of one-vs-rest AUCs over
/// classes that have both positives and negatives.
pub fn auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<AucReport> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::contract(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let k = scores[0].len();
    if k < 2 || scores.iter().any(|r| r.len() != k) {
        return Err(Error::dim("score rows must share a width of at least 2"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} outside [0, {k})")));
    }
    let scored: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let mut per_class = vec![None; k];
    let mut excluded = vec![];
    for &c in &scored {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match binary_auc(&s, &pos) {
            Some(a) => per_class[c] = Some(a),
            None => {
                log::warn!("class {c} has no positives or no negatives; excluded from AUC");
                excluded.push(c);
            }
        }
    }
    let values: Vec<f64> = per_class.iter().flatten().copied().collect();
    if values.is_empty() {
        return Err(Error::contract("AUC undefined: every class lacks positives or negatives"));
    }
    Ok(AucReport {
        value: values.iter().sum::<f64>() / values.len() as f64,
        per_class,
        excluded,
    })
}

/// Index of the largest score, ties going to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
