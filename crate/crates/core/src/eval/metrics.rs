use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix; rows are true labels, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Argument("confusion matrix must be square and non-empty".into()));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    /// Same matrix with class `k` renamed to `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.classes();
        let mut counts = vec![vec![0; k]; k];
        for t in 0..k {
            for p in 0..k {
                counts[perm[t]][perm[p]] = self.counts[t][p];
            }
        }
        Self { counts }
    }
}

pub fn confusion(true_labels: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::Dimension {
            op: "confusion",
            left: vec![true_labels.len()],
            right: vec![predicted.len()],
        });
    }
    if true_labels.is_empty() {
        return Err(Error::Argument("confusion: no samples".into()));
    }
    if classes == 0 {
        return Err(Error::Argument("confusion: zero classes".into()));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&t, &p) in true_labels.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::Argument(format!("confusion: label {} out of range for {classes} classes", t.max(p))));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of one class. Zero denominators give 0.
///
/// Panics if `class_id` is out of range.
pub fn precision_recall_f1(cm: &ConfusionMatrix, class_id: usize) -> (f64, f64, f64) {
    let tp = cm.get(class_id, class_id);
    let predicted: u64 = (0..cm.classes()).map(|t| cm.get(t, class_id)).sum();
    let actual: u64 = cm.counts[class_id].iter().sum();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, actual);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let k = cm.classes();
    (0..k).map(|c| precision_recall_f1(cm, c).2).sum::<f64>() / k as f64
}

/// F1 from pooled TP/FP/FN over all classes.
pub fn micro_f1(cm: &ConfusionMatrix) -> f64 {
    let tp = cm.trace();
    let total = cm.total();
    // Pooled FP and FN both equal the off-diagonal mass.
    let off = total - tp;
    let p = ratio(tp, tp + off);
    let r = ratio(tp, tp + off);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.trace(), cm.total())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (the Mann-Whitney statistic).
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Dimension {
            op: "roc_auc",
            left: vec![scores.len()],
            right: vec![positive.len()],
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Argument(format!("roc_auc: non-finite score {s}")));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, using average ranks for ties, kept in integers.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean (i + j + 2) / 2.
        let pos_in_tie = order[i..=j].iter().filter(|&&k| positive[k]).count() as u128;
        twice_rank_sum += pos_in_tie * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub name: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Class whose probability is used as the AUC score.
    pub positive_class: usize,
    /// Absent when the evaluated labels contain a single class.
    pub auc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

/// Full metric set from predictions and positive-class probabilities.
pub fn metrics_report(
    true_labels: &[usize],
    predicted: &[usize],
    positive_scores: &[f64],
    positive_class: usize,
    class_names: &[String],
) -> Result<MetricsReport> {
    let cm = confusion(true_labels, predicted, class_names.len())?;
    let positive: Vec<bool> = true_labels.iter().map(|&l| l == positive_class).collect();
    let auc = match roc_auc(positive_scores, &positive) {
        Ok(a) => Some(a),
        Err(Error::UndefinedAuc(msg)) => {
            log::warn!("AUC undefined: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let per_class = class_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (precision, recall, f1) = precision_recall_f1(&cm, k);
            ClassMetrics {
                class: k,
                name: name.clone(),
                support: cm.counts[k].iter().sum(),
                precision,
                recall,
                f1,
            }
        })
        .collect();
    Ok(MetricsReport {
        per_class,
        accuracy: accuracy(&cm),
        micro_f1: micro_f1(&cm),
        macro_f1: macro_f1(&cm),
        positive_class,
        auc,
        confusion: cm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binary(tp: u64, fn_: u64, fp: u64, tn: u64) -> ConfusionMatrix {
        // Class 0 is the positive class here.
        ConfusionMatrix::from_counts(vec![vec![tp, fn_], vec![fp, tn]]).unwrap()
    }

    #[test]
    fn diagonal_when_all_correct() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn minority_row_from_reported_counts() {
        let truth = vec![1usize; 117];
        let mut pred = vec![0usize; 111];
        pred.extend(vec![1usize; 6]);
        let cm = confusion(&truth, &pred, 2).unwrap();
        assert_eq!(cm.counts()[1], vec![111, 6]);
    }

    #[test]
    fn confusion_errors() {
        assert!(confusion(&[], &[], 2).is_err());
        assert!(matches!(confusion(&[0, 2], &[0, 1], 2), Err(Error::Argument(_))));
    }

    #[test]
    fn per_class_values() {
        let cm = binary(50, 50, 10, 890);
        let (p, r, f) = precision_recall_f1(&cm, 0);
        assert!((p - 50.0 / 60.0).abs() < 1e-12);
        assert_eq!(r, 0.5);
        assert!((f - 0.625).abs() < 1e-12);
        assert!((macro_f1(&cm) - 0.796196).abs() < 1e-6);

        let perfect = binary(5, 0, 0, 5);
        assert_eq!(precision_recall_f1(&perfect, 0), (1.0, 1.0, 1.0));
        assert_eq!(macro_f1(&perfect), 1.0);

        let absent = ConfusionMatrix::from_counts(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 0]]).unwrap();
        assert_eq!(precision_recall_f1(&absent, 2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn all_majority_predictor() {
        let cm = ConfusionMatrix::from_counts(vec![vec![6509, 0], vec![117, 0]]).unwrap();
        let maj = precision_recall_f1(&cm, 0).2;
        assert!((macro_f1(&cm) - maj / 2.0).abs() < 1e-15);
        assert!((macro_f1(&cm) - 0.4955).abs() < 1e-3);
    }

    #[test]
    fn auc_examples() {
        let scores = [0.9, 0.4, 0.8, 0.3, 0.1];
        let pos = [true, true, false, false, false];
        assert!((roc_auc(&scores, &pos).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, false]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[false, false]), Err(Error::UndefinedAuc(_))));
    }

    fn pair_count_auc(scores: &[f64], pos: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 11.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, p)| p.iter().any(|&b| b) && p.iter().any(|&b| !b))
    }

    fn matrices() -> impl Strategy<Value = ConfusionMatrix> {
        (2usize..5)
            .prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0u64..50, k), k))
            .prop_filter("non-empty", |m| m.iter().flatten().sum::<u64>() > 0)
            .prop_map(|m| ConfusionMatrix::from_counts(m).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn auc_matches_pair_counting((scores, pos) in scored()) {
            let a = roc_auc(&scores, &pos).unwrap();
            prop_assert!((a - pair_count_auc(&scores, &pos)).abs() < 1e-12);
        }

        #[test]
        fn auc_is_monotone_invariant((scores, pos) in scored()) {
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&scores, &pos).unwrap(), roc_auc(&t, &pos).unwrap());
        }

        #[test]
        fn auc_flip_complements((scores, pos) in scored()) {
            // Break ties so the identity holds exactly.
            let distinct: Vec<f64> = scores.iter().enumerate().map(|(i, s)| s + i as f64 * 1e-6).collect();
            let flipped: Vec<bool> = pos.iter().map(|p| !p).collect();
            let sum = roc_auc(&distinct, &pos).unwrap() + roc_auc(&distinct, &flipped).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn micro_f1_is_accuracy(cm in matrices()) {
            prop_assert!((micro_f1(&cm) - accuracy(&cm)).abs() < 1e-15);
        }

        #[test]
        fn macro_f1_relabeling_invariant(cm in matrices(), shift in 0usize..4) {
            let k = cm.classes();
            let perm: Vec<usize> = (0..k).map(|c| (c + shift) % k).collect();
            prop_assert!((macro_f1(&cm) - macro_f1(&cm.permuted(&perm))).abs() < 1e-12);
        }

        #[test]
        fn metrics_stay_in_unit_range(cm in matrices()) {
            for c in 0..cm.classes() {
                let (p, r, f) = precision_recall_f1(&cm, c);
                for v in [p, r, f] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
