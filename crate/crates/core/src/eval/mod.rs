//! Classification metrics, embedding diagnostics and run reports.

mod metrics;
mod pca;
mod report;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelStack;
use crate::numeric::Tensor;

pub use metrics::{
    accuracy, confusion, macro_f1, metrics_report, micro_f1, precision_recall_f1, roc_auc, ClassMetrics,
    ConfusionMatrix, MetricsReport,
};
pub use pca::{project_2d, Pca};
pub use report::{
    write_confusion_csv, write_curves_csv, write_embeddings_csv, write_metrics_json, write_run_artifacts, RunReport,
    CONFUSION_FILE, CURVES_FILE, EMBEDDINGS_FILE, METRICS_FILE,
};

/// Mean pairwise cosine similarity within and across classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSeparation {
    pub intra: f64,
    pub inter: f64,
    /// `intra - inter`.
    pub gap: f64,
}

/// Averages cosine similarity over all unordered pairs of distinct rows.
/// Zero rows count as orthogonal to everything.
pub fn cosine_separation(z: &Tensor, labels: &[usize]) -> Result<CosineSeparation> {
    if z.rank() != 2 || z.rows() != labels.len() {
        return Err(Error::Dimension {
            op: "cosine_separation",
            left: z.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let d = z.row_len();
    let mut unit = Vec::with_capacity(z.numel());
    for i in 0..z.rows() {
        let row = z.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        // a zero row has cosine 0 with everything
        unit.extend(row.iter().map(|v| if norm == 0.0 { 0.0 } else { v / norm }));
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0u64, 0.0, 0u64);
    for i in 0..labels.len() {
        let a = &unit[i * d..(i + 1) * d];
        for j in i + 1..labels.len() {
            let b = &unit[j * d..(j + 1) * d];
            let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            if labels[i] == labels[j] {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        return Err(Error::DegenerateInput(
            "cosine_separation: need both same-class and cross-class pairs".into(),
        ));
    }
    let (intra, inter) = (intra / n_intra as f64, inter / n_inter as f64);
    Ok(CosineSeparation {
        intra,
        inter,
        gap: intra - inter,
    })
}

/// Per-sample outputs kept for export.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub labels: Vec<usize>,
    pub rep: Tensor,
    /// Mapping-module outputs; absent when the stack has no projection.
    pub z: Option<Tensor>,
    /// PCA of `rep`; absent when the representations are degenerate.
    pub projection: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub separation: Option<CosineSeparation>,
    pub embeddings: Embeddings,
}

/// Row-wise softmax probabilities and arg-max predictions (lowest index on ties).
pub fn predict(logits: &Tensor) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut probs = Vec::with_capacity(logits.rows());
    let mut preds = Vec::with_capacity(logits.rows());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / s).collect();
        let arg = (0..p.len()).fold(0, |best, k| if p[k] > p[best] { k } else { best });
        probs.push(p);
        preds.push(arg);
    }
    (probs, preds)
}

fn optional<T>(what: &str, r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::DegenerateInput(_) | Error::Argument(_))) => {
            log::warn!("{what} skipped: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs `stack` on `data` and computes every metric, with the probability of
/// `positive_class` as the AUC score.
pub fn evaluate_model(stack: &ModelStack, data: &Dataset, positive_class: usize) -> Result<Evaluation> {
    let rep = stack.features(data.samples())?;
    let logits = stack.logits(&rep)?;
    let (probs, preds) = predict(&logits);
    let scores: Vec<f64> = probs.iter().map(|p| p[positive_class]).collect();
    let metrics = metrics_report(data.labels(), &preds, &scores, positive_class, data.class_names())?;
    let z = optional("embedding", stack.embed(&rep))?;
    let separation = match &z {
        Some(z) => optional("cosine separation", cosine_separation(z, data.labels()))?,
        None => None,
    };
    let projection = optional("projection", project_2d(&rep))?;
    Ok(Evaluation {
        metrics,
        separation,
        embeddings: Embeddings {
            labels: data.labels().to_vec(),
            rep,
            z,
            projection,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation_of_clustered_directions() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let s = cosine_separation(&z, &[0, 0, 1, 1]).unwrap();
        assert_eq!(s.intra, 1.0);
        assert_eq!(s.inter, 0.0);
        assert_eq!(s.gap, 1.0);
        assert!(cosine_separation(&z, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn predictions_prefer_lowest_index_on_ties() {
        let l = Tensor::from_rows(&[vec![0.0, 0.0], vec![-1.0, 2.0]]).unwrap();
        let (p, pred) = predict(&l);
        assert_eq!(pred, vec![0, 1]);
        assert_eq!(p[0], vec![0.5, 0.5]);
    }
}
