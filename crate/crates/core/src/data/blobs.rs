use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataMode, Dataset};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Extra minority samples drawn around a displaced center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionShift {
    pub count: usize,
    /// Displacement of the shifted center along the last feature axis.
    pub offset: f64,
}

/// Gaussian clusters, one per class.
///
/// Vector mode: class 0 is centered at the origin and class `k >= 1` at
/// `separation * (1 + (k-1) / dims)` along axis `(k-1) % dims`, so the
/// first `dims + 1` classes sit pairwise at least `separation` apart.
///
/// Image mode (`image_shape` set): each class has a fixed template image
/// `0.5 + 0.5 * separation * u` with `u` uniform in `[-1, 1]` per pixel,
/// drawn from a generator keyed only by the class id; samples add
/// `N(0, spread)` noise and are clamped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub counts: Vec<usize>,
    #[serde(default = "default_dims")]
    pub dims: usize,
    pub separation: f64,
    pub spread: f64,
    pub seed: u64,
    #[serde(default)]
    pub image_shape: Option<[usize; 3]>,
    #[serde(default)]
    pub shift: Option<DistributionShift>,
}

fn default_dims() -> usize {
    2
}

impl BlobSpec {
    pub fn vector(counts: &[usize], dims: usize, separation: f64, spread: f64, seed: u64) -> Self {
        Self {
            counts: counts.to_vec(),
            dims,
            separation,
            spread,
            seed,
            image_shape: None,
            shift: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.counts.len() < 2 {
            return Err(Error::Argument("at least 2 class counts are required".into()));
        }
        if let Some(k) = self.counts.iter().position(|&c| c == 0) {
            return Err(Error::Argument(format!("class {k} has a zero count")));
        }
        if !(self.separation > 0.0) || !(self.spread > 0.0) {
            return Err(Error::Argument("separation and spread must be positive".into()));
        }
        if self.image_shape.is_none() && self.dims == 0 {
            return Err(Error::Argument("dims must be positive".into()));
        }
        if let Some([c, h, w]) = self.image_shape {
            if (c != 1 && c != 3) || h == 0 || w == 0 {
                return Err(Error::Argument(format!("unsupported image shape {c}x{h}x{w}")));
            }
        }
        Ok(())
    }
}

fn vector_center(class: usize, dims: usize, separation: f64) -> Vec<f64> {
    let mut c = vec![0.0; dims];
    if class > 0 {
        let k = class - 1;
        c[k % dims] = separation * (1 + k / dims) as f64;
    }
    c
}

fn image_template(class: usize, pixels: usize, separation: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + class as u64);
    (0..pixels)
        .map(|_| (0.5 + 0.5 * separation * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0))
        .collect()
}

pub fn generate_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.spread).expect("spread validated");
    let num_classes = spec.counts.len();
    let minority = (0..num_classes).min_by_key(|&k| (spec.counts[k], k)).unwrap();

    let (mode, sample_shape, centers): (DataMode, Vec<usize>, Vec<Vec<f64>>) = match spec.image_shape {
        None => (
            DataMode::Vector,
            vec![spec.dims],
            (0..num_classes).map(|k| vector_center(k, spec.dims, spec.separation)).collect(),
        ),
        Some([c, h, w]) => (
            DataMode::Image,
            vec![c, h, w],
            (0..num_classes).map(|k| image_template(k, c * h * w, spec.separation)).collect(),
        ),
    };
    let clamp = mode == DataMode::Image;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut draw = |center: &[f64], class: usize, rng: &mut ChaCha8Rng| {
        for &m in center {
            let v = m + noise.sample(rng);
            data.push(if clamp { v.clamp(0.0, 1.0) } else { v });
        }
        labels.push(class);
    };
    for (class, &count) in spec.counts.iter().enumerate() {
        for _ in 0..count {
            draw(&centers[class], class, &mut rng);
        }
    }
    if let Some(shift) = &spec.shift {
        let mut center = centers[minority].clone();
        let last = center.len() - 1;
        center[last] += shift.offset;
        for _ in 0..shift.count {
            draw(&center, minority, &mut rng);
        }
    }

    let mut shape = vec![labels.len()];
    shape.extend_from_slice(&sample_shape);
    Dataset::new(Tensor::new(shape, data)?, labels, num_classes, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::cross_entropy;
    use crate::numeric::{sgd_step, Graph};

    #[test]
    fn requested_counts_and_ratios() {
        let d = generate_blobs(&BlobSpec::vector(&[5570, 100], 2, 3.0, 1.0, 7)).unwrap();
        assert_eq!(d.class_counts(), vec![5570, 100]);
        assert!((d.imbalance_ratio().unwrap() - 55.7).abs() < 1e-12);
        let d = generate_blobs(&BlobSpec::vector(&[520, 100], 2, 3.0, 1.0, 7)).unwrap();
        assert!((d.imbalance_ratio().unwrap() - 5.2).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = BlobSpec::vector(&[20, 5], 3, 2.0, 0.5, 11);
        assert_eq!(generate_blobs(&spec).unwrap(), generate_blobs(&spec).unwrap());
        let other = BlobSpec { seed: 12, ..spec };
        assert_ne!(generate_blobs(&BlobSpec::vector(&[20, 5], 3, 2.0, 0.5, 11)).unwrap(), generate_blobs(&other).unwrap());
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(matches!(
            generate_blobs(&BlobSpec::vector(&[10, 0], 2, 1.0, 1.0, 0)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn well_separated_blobs_are_linearly_separable() {
        let d = generate_blobs(&BlobSpec::vector(&[10, 10], 2, 20.0, 0.5, 3)).unwrap();
        let mut w = Tensor::zeros(vec![2, 2]).with_requires_grad(true);
        let mut b = Tensor::zeros(vec![2]).with_requires_grad(true);
        for _ in 0..200 {
            let mut g = Graph::new();
            let (wv, bv) = (g.leaf(&w), g.leaf(&b));
            let x = g.constant(d.samples().clone());
            let h = g.matmul(x, wv).unwrap();
            let logits = g.add_row(h, bv).unwrap();
            let loss = cross_entropy(&mut g, logits, d.labels()).unwrap();
            let grads = g.backward(loss).unwrap();
            w.accumulate_grad(grads.get(wv).unwrap()).unwrap();
            b.accumulate_grad(grads.get(bv).unwrap()).unwrap();
            sgd_step(&mut [&mut w, &mut b], 0.05).unwrap();
        }
        let mut g = Graph::new();
        let (wv, bv) = (g.leaf(&w), g.leaf(&b));
        let x = g.constant(d.samples().clone());
        let h = g.matmul(x, wv).unwrap();
        let logits = g.add_row(h, bv).unwrap();
        let l = g.value(logits);
        let correct = (0..d.len())
            .filter(|&i| {
                let r = l.row(i);
                let pred = usize::from(r[1] > r[0]);
                pred == d.labels()[i]
            })
            .count();
        assert_eq!(correct, d.len());
    }

    #[test]
    fn shift_adds_minority_samples() {
        let spec = BlobSpec {
            shift: Some(DistributionShift { count: 30, offset: 4.0 }),
            ..BlobSpec::vector(&[200, 50], 2, 3.0, 1.0, 1)
        };
        let d = generate_blobs(&spec).unwrap();
        assert_eq!(d.class_counts(), vec![200, 80]);
        let shifted_mean: f64 = (250..280).map(|i| d.samples().row(i)[1]).sum::<f64>() / 30.0;
        assert!(shifted_mean > 3.0, "{shifted_mean}");
    }

    #[test]
    fn image_blobs_are_in_range() {
        let spec = BlobSpec {
            image_shape: Some([3, 6, 6]),
            ..BlobSpec::vector(&[6, 4], 0, 0.8, 0.1, 2)
        };
        let d = generate_blobs(&spec).unwrap();
        assert_eq!(d.mode(), DataMode::Image);
        assert_eq!(d.samples().shape(), &[10, 3, 6, 6]);
        assert!(d.samples().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
