use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Top principal directions of a `(N, d)` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit directions, in descending eigenvalue order.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues matching `components`.
    pub variances: Vec<f64>,
}

impl Pca {
    /// Fits `k` components. The sign of each direction is chosen so its
    /// largest-magnitude entry is positive (the first one on ties).
    pub fn fit(features: &Tensor, k: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Argument(format!("pca: expected (N, d) features, got {:?}", features.shape())));
        }
        let (n, d) = (features.rows(), features.row_len());
        if n < 3 || d < k.max(2) {
            return Err(Error::Argument(format!("pca: need N >= 3 and d >= {}, got ({n}, {d})", k.max(2))));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let row = features.row(i);
            for a in 0..d {
                let ca = row[a] - mean[a];
                for b in a..d {
                    cov[(a, b)] += ca * (row[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / (n - 1) as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }

        let scale = cov.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]];
        if !(top > 1e-12 * scale.max(f64::MIN_POSITIVE)) || scale == 0.0 {
            return Err(Error::DegenerateInput("pca: features have rank 0".into()));
        }

        let mut components = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for &j in order.iter().take(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            let lead = (0..d).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            variances.push(eig.eigenvalues[j].max(0.0));
        }
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    pub fn transform(&self, features: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if features.rank() != 2 || features.row_len() != d {
            return Err(Error::Dimension {
                op: "pca_transform",
                left: features.shape().to_vec(),
                right: vec![0, d],
            });
        }
        let k = self.components.len();
        let mut out = Vec::with_capacity(features.rows() * k);
        for i in 0..features.rows() {
            let row = features.row(i);
            for c in &self.components {
                out.push((0..d).map(|a| (row[a] - self.mean[a]) * c[a]).sum());
            }
        }
        Tensor::new(vec![features.rows(), k], out)
    }
}

/// Mean-centered projection onto the two leading principal directions.
pub fn project_2d(features: &Tensor) -> Result<Tensor> {
    Pca::fit(features, 2)?.transform(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_points_have_flat_second_axis() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0, -(i as f64)]).collect();
        let p = project_2d(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for i in 0..10 {
            assert!(p.row(i)[1].abs() <= 1e-9, "{}", p.row(i)[1]);
        }
    }

    #[test]
    fn planar_data_keeps_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                vec![a + b, a - b, 0.5 * a, 2.0]
            })
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let p = project_2d(&x).unwrap();
        let dist = |t: &Tensor, i: usize, j: usize| -> f64 {
            t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        for i in 0..20 {
            for j in 0..20 {
                assert!((dist(&x, i, j) - dist(&p, i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_features_are_degenerate() {
        let x = Tensor::new(vec![5, 3], vec![1.5; 15]).unwrap();
        assert!(matches!(project_2d(&x), Err(Error::DegenerateInput(_))));
        assert!(matches!(project_2d(&Tensor::zeros(vec![2, 3])), Err(Error::Argument(_))));
    }

    #[test]
    fn sign_convention() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![-(i as f64), 0.1 * ((i * 7) % 3) as f64]).collect();
        let pca = Pca::fit(&Tensor::from_rows(&rows).unwrap(), 2).unwrap();
        for c in &pca.components {
            let lead = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(lead > 0.0);
        }
    }
}
