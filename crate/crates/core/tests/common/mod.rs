#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supercon::losses::DenominatorVariant;
use supercon::numeric::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Rows drawn uniformly on the unit sphere (normalized Gaussians).
pub fn unit_rows(b: usize, d: usize, rng: &mut impl Rng) -> Tensor {
    let mut data = Vec::with_capacity(b * d);
    for _ in 0..b {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.iter().map(|x| x / n));
    }
    Tensor::new(vec![b, d], data).unwrap()
}

/// Labels over `classes` ids with at least two distinct values and at least
/// one repeated value, so every supervised contrastive variant is defined.
pub fn contrastive_labels(b: usize, classes: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(b >= 3 && classes >= 2);
    loop {
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let distinct = (0..classes).filter(|c| y.contains(c)).count();
        if distinct >= 2 && distinct < b {
            return y;
        }
    }
}

/// Per-anchor double loop over positives and the denominator set, averaged
/// over anchors that have at least one positive.
pub fn naive_supcon(z: &Tensor, labels: &[usize], tau: f64, variant: DenominatorVariant) -> f64 {
    let n = labels.len();
    let dot = |i: usize, j: usize| -> f64 { z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum() };
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for a in 0..n {
            let include = match variant {
                DenominatorVariant::AllNonAnchor => a != i,
                DenominatorVariant::NegativesOnly => labels[a] != labels[i],
            };
            if include {
                denom += (dot(i, a) / tau).exp();
            }
        }
        let mut term = 0.0;
        for &p in &positives {
            term += ((dot(i, p) / tau).exp() / denom).ln();
        }
        total += -term / positives.len() as f64;
        anchors += 1;
    }
    total / anchors as f64
}

/// Cyclic Jacobi rotations on a symmetric matrix. Returns eigenvalues in
/// descending order with matching unit eigenvectors.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}
