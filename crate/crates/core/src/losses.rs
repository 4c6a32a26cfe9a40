//! Training objectives: supervised contrastive loss over a multiview batch,
//! focal loss and plain cross-entropy.
//!
//! Each loss computes its value and its gradient with respect to the input
//! in one pass and records both on the graph as a single fused node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};

/// Which batch entries make up the denominator of each anchor term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorVariant {
    /// Every entry other than the anchor itself.
    AllNonAnchor,
    /// Only entries whose label differs from the anchor's.
    NegativesOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorReduction {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupConConfig {
    pub temperature: f64,
    pub denominator: DenominatorVariant,
    pub anchor_reduction: AnchorReduction,
}

impl Default for SupConConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            denominator: DenominatorVariant::AllNonAnchor,
            anchor_reduction: AnchorReduction::Mean,
        }
    }
}

impl SupConConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "supcon.temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalConfig {
    /// Weight of the minority class; every other class gets `1 - alpha`.
    pub alpha: f64,
    pub gamma: f64,
    /// Resolved from the training data when absent.
    pub minority_class: Option<usize>,
    /// Replaces the class weights with 1 for every class.
    pub alpha_off: bool,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 5.0,
            minority_class: None,
            alpha_off: false,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("focal.alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("focal.gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    fn class_weight(&self, label: usize) -> Result<f64> {
        if self.alpha_off {
            return Ok(1.0);
        }
        let minority = self
            .minority_class
            .ok_or_else(|| Error::Config("focal.minority_class is unresolved".into()))?;
        Ok(if label == minority { self.alpha } else { 1.0 - self.alpha })
    }
}

/// Per-sample focal term `-alpha_t * (1 - p)^gamma * ln p` for a true-class
/// probability `p` in (0, 1].
pub fn focal_term(p: f64, alpha_t: f64, gamma: f64) -> f64 {
    -alpha_t * (1.0 - p).powf(gamma) * p.ln()
}

/// Supervised contrastive loss over rows of `z`, which must be unit-norm
/// or exactly zero.
pub fn supcon_loss(g: &mut Graph, z: Var, labels: &[usize], cfg: &SupConConfig) -> Result<Var> {
    let zt = g.value(z);
    if zt.rank() != 2 {
        return Err(Error::Dimension {
            op: "supcon_loss",
            left: zt.shape().to_vec(),
            right: vec![labels.len(), 0],
        });
    }
    for i in 0..zt.rows() {
        let norm = zt.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        // zero rows come from dead lanes clamped by l2_normalize
        if norm != 0.0 && (norm - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateInput(format!(
                "supcon_loss: row {i} has norm {norm}, expected unit rows"
            )));
        }
    }
    supcon_loss_raw(g, z, labels, cfg)
}

/// The same objective as [`supcon_loss`] without the unit-row precondition:
/// similarities are plain dot products of whatever rows `z` holds.
pub fn supcon_loss_raw(g: &mut Graph, z: Var, labels: &[usize], cfg: &SupConConfig) -> Result<Var> {
    let (value, grad) = supcon_value_and_grad(g.value(z), labels, cfg)?;
    g.fused_scalar("supcon_loss", z, value, grad)
}

fn supcon_value_and_grad(z: &Tensor, labels: &[usize], cfg: &SupConConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if z.rank() != 2 || z.rows() != labels.len() {
        return Err(Error::Dimension {
            op: "supcon_loss",
            left: z.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let n = z.rows();
    if n < 2 {
        return Err(Error::DegenerateBatch(format!("supcon_loss needs at least 2 rows, got {n}")));
    }
    let d = z.row_len();
    let zd = z.data();
    let inv_t = 1.0 / cfg.temperature;

    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for a in i..n {
            let s = z.row(i).iter().zip(z.row(a)).map(|(x, y)| x * y).sum::<f64>() * inv_t;
            sim[i * n + a] = s;
            sim[a * n + i] = s;
        }
    }

    let mut total = 0.0;
    let mut contributing = 0usize;
    // d(loss)/d(sim[i][a]), before the anchor reduction.
    let mut dsim = vec![0.0; n * n];
    let mut in_denominator = vec![false; n];
    for i in 0..n {
        let positives = (0..n).filter(|&a| a != i && labels[a] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        for a in 0..n {
            in_denominator[a] = a != i
                && match cfg.denominator {
                    DenominatorVariant::AllNonAnchor => true,
                    DenominatorVariant::NegativesOnly => labels[a] != labels[i],
                };
        }
        if !in_denominator.iter().any(|&b| b) {
            return Err(Error::DegenerateBatch(format!(
                "anchor {i} (class {}) has no negatives in the batch",
                labels[i]
            )));
        }
        let row = &sim[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&a| in_denominator[a])
            .map(|a| row[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&a| in_denominator[a]).map(|a| (row[a] - max).exp()).sum();
        let log_denom = max + denom.ln();
        let inv_p = 1.0 / positives as f64;
        let mut positive_mean = 0.0;
        for a in 0..n {
            if a != i && labels[a] == labels[i] {
                positive_mean += row[a] * inv_p;
                dsim[i * n + a] -= inv_p;
            }
            if in_denominator[a] {
                dsim[i * n + a] += (row[a] - max).exp() / denom;
            }
        }
        total += log_denom - positive_mean;
        contributing += 1;
    }
    if contributing == 0 {
        return Err(Error::DegenerateBatch(
            "no anchor in the batch has a positive".into(),
        ));
    }
    let scale = match cfg.anchor_reduction {
        AnchorReduction::Mean => 1.0 / contributing as f64,
        AnchorReduction::Sum => 1.0,
    };

    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        for a in 0..n {
            let w = dsim[i * n + a];
            if w == 0.0 {
                continue;
            }
            let w = w * inv_t * scale;
            for k in 0..d {
                grad[i * d + k] += w * zd[a * d + k];
                grad[a * d + k] += w * zd[i * d + k];
            }
        }
    }
    Ok((total * scale, grad))
}

struct LogSoftmaxRow {
    log_probs: Vec<f64>,
}

fn log_softmax_rows(logits: &Tensor, labels: &[usize], op: &'static str) -> Result<Vec<LogSoftmaxRow>> {
    if logits.rank() != 2 || logits.rows() != labels.len() {
        return Err(Error::Dimension {
            op,
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let classes = logits.row_len();
    if classes < 2 {
        return Err(Error::Argument(format!("{op} needs at least 2 classes, got {classes}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Argument(format!("{op}: label {bad} out of range for {classes} classes")));
    }
    if let Some(v) = logits.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Evaluation(format!("{op}: non-finite logit {v}")));
    }
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            LogSoftmaxRow {
                log_probs: row.iter().map(|v| v - lse).collect(),
            }
        })
        .collect())
}

/// Batch-mean focal loss of `(batch, classes)` logits.
pub fn focal_loss(g: &mut Graph, logits: Var, labels: &[usize], cfg: &FocalConfig) -> Result<Var> {
    cfg.validate()?;
    let lt = g.value(logits);
    let rows = log_softmax_rows(lt, labels, "focal_loss")?;
    let (b, classes) = (lt.rows(), lt.row_len());
    let inv_b = 1.0 / b as f64;
    let gamma = cfg.gamma;
    let mut total = 0.0;
    let mut grad = vec![0.0; b * classes];
    for (i, (row, &y)) in rows.iter().zip(labels).enumerate() {
        let alpha_t = cfg.class_weight(y)?;
        let log_pt = row.log_probs[y];
        let pt = log_pt.exp();
        // 1 - pt without cancellation near pt = 1.
        let one_minus = -log_pt.exp_m1();
        let modulator = one_minus.powf(gamma);
        total += -alpha_t * modulator * log_pt;
        let slope = if gamma == 0.0 || one_minus == 0.0 {
            0.0
        } else {
            gamma * one_minus.powf(gamma - 1.0) * pt * log_pt
        };
        let coef = -alpha_t * (modulator - slope) * inv_b;
        for k in 0..classes {
            let indicator = if k == y { 1.0 } else { 0.0 };
            grad[i * classes + k] = coef * (indicator - row.log_probs[k].exp());
        }
    }
    g.fused_scalar("focal_loss", logits, total * inv_b, grad)
}

/// Batch-mean negative log-likelihood of `(batch, classes)` logits.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let lt = g.value(logits);
    let rows = log_softmax_rows(lt, labels, "cross_entropy")?;
    let (b, classes) = (lt.rows(), lt.row_len());
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; b * classes];
    for (i, (row, &y)) in rows.iter().zip(labels).enumerate() {
        total -= row.log_probs[y];
        for k in 0..classes {
            let indicator = if k == y { 1.0 } else { 0.0 };
            grad[i * classes + k] = (row.log_probs[k].exp() - indicator) * inv_b;
        }
    }
    g.fused_scalar("cross_entropy", logits, total * inv_b, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, LN_2};

    fn orthogonal_batch() -> (Tensor, Vec<usize>) {
        let z = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        (z, vec![0, 0, 1, 1])
    }

    fn supcon_value(z: &Tensor, labels: &[usize], cfg: &SupConConfig) -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(z.clone());
        let l = supcon_loss(&mut g, v, labels, cfg)?;
        g.value(l).item()
    }

    #[test]
    fn orthogonal_golden_values() {
        let (z, labels) = orthogonal_batch();
        let mut cfg = SupConConfig {
            temperature: 1.0,
            ..Default::default()
        };
        let all = supcon_value(&z, &labels, &cfg).unwrap();
        assert!((all - (1.0 + 2.0 / E).ln()).abs() < 1e-9, "{all}");
        cfg.denominator = DenominatorVariant::NegativesOnly;
        let neg = supcon_value(&z, &labels, &cfg).unwrap();
        assert!((neg - (LN_2 - 1.0)).abs() < 1e-9, "{neg}");
    }

    #[test]
    fn collapsed_classes_at_low_temperature_approach_zero() {
        let (z, labels) = orthogonal_batch();
        let cfg = SupConConfig {
            temperature: 0.01,
            ..Default::default()
        };
        let v = supcon_value(&z, &labels, &cfg).unwrap();
        assert!((0.0..1e-40).contains(&v), "{v}");
    }

    #[test]
    fn non_unit_rows_are_rejected() {
        let z = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let err = supcon_value(&z, &[0, 0], &SupConConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn negatives_only_without_negatives_is_degenerate() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cfg = SupConConfig {
            denominator: DenominatorVariant::NegativesOnly,
            ..Default::default()
        };
        let err = supcon_value(&z, &[3, 3], &cfg).unwrap_err();
        assert!(matches!(err, Error::DegenerateBatch(_)));
        // The default variant is fine on a single-class batch.
        assert!(supcon_value(&z, &[3, 3], &SupConConfig::default()).is_ok());
    }

    #[test]
    fn all_anchors_skipped_is_degenerate() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let err = supcon_value(&z, &[0, 1], &SupConConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateBatch(_)));
    }

    #[test]
    fn sum_reduction_scales_with_contributing_anchors() {
        let (z, labels) = orthogonal_batch();
        let mean = SupConConfig {
            temperature: 0.5,
            ..Default::default()
        };
        let sum = SupConConfig {
            anchor_reduction: AnchorReduction::Sum,
            ..mean.clone()
        };
        let a = supcon_value(&z, &labels, &mean).unwrap();
        let b = supcon_value(&z, &labels, &sum).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    fn focal_value(logits: &[Vec<f64>], labels: &[usize], cfg: &FocalConfig) -> f64 {
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_rows(logits).unwrap());
        let l = focal_loss(&mut g, v, labels, cfg).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn focal_reduces_to_cross_entropy() {
        let cfg = FocalConfig {
            gamma: 0.0,
            alpha_off: true,
            ..Default::default()
        };
        let v = focal_value(&[vec![0.3, 0.3]], &[1], &cfg);
        assert!((v - LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        let cfg = FocalConfig {
            minority_class: Some(1),
            ..Default::default()
        };
        let v = focal_value(&[vec![0.0, 800.0]], &[1], &cfg);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn focal_golden_term() {
        // alpha_t = 0.25, gamma = 2, p = 0.9
        let v = focal_term(0.9, 0.25, 2.0);
        assert!((v - 2.6340e-4).abs() < 1e-8, "{v}");
        // Same value through the batch loss: p = 0.9 for the minority label.
        let cfg = FocalConfig {
            alpha: 0.25,
            gamma: 2.0,
            minority_class: Some(0),
            alpha_off: false,
        };
        let logit = (0.9f64 / 0.1).ln();
        let b = focal_value(&[vec![logit, 0.0]], &[0], &cfg);
        assert!((b - v).abs() < 1e-15);
    }

    #[test]
    fn unresolved_minority_is_a_config_error() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap());
        assert!(matches!(
            focal_loss(&mut g, v, &[0], &FocalConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn label_out_of_range() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap());
        assert!(matches!(cross_entropy(&mut g, v, &[2]), Err(Error::Argument(_))));
    }

    #[test]
    fn cross_entropy_uniform_and_confident() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_rows(&[vec![1.5, 1.5], vec![-2.0, -2.0]]).unwrap());
        let l = cross_entropy(&mut g, v, &[0, 1]).unwrap();
        assert!((g.value(l).item().unwrap() - LN_2).abs() < 1e-15);

        let v = g.constant(Tensor::from_rows(&[vec![50.0, -50.0]]).unwrap());
        let l = cross_entropy(&mut g, v, &[0]).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-40);
    }

    #[test]
    fn config_validation() {
        assert!(FocalConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
        assert!(FocalConfig { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(FocalConfig { gamma: -1.0, ..Default::default() }.validate().is_err());
        assert!(SupConConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
    }
}
