//! Labeled datasets, synthetic generators, stratified splitting and the
//! random over/under-sampling baselines.

mod blobs;
mod store;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub use blobs::{generate_blobs, BlobSpec, DistributionShift};
pub use store::{load_dataset, save_dataset, DatasetManifest, MANIFEST_FILE, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    Vector,
    Image,
}

/// Samples stacked along axis 0 with one class id per sample.
///
/// Classes may be empty here; [`Dataset::check_invariants`] and
/// [`Dataset::imbalance_ratio`] report that as a violation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    mode: DataMode,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, num_classes: usize, mode: DataMode) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "dataset",
                left: samples.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let expected_rank = match mode {
            DataMode::Vector => 2,
            DataMode::Image => 4,
        };
        if samples.rank() != expected_rank {
            return Err(Error::Argument(format!(
                "{mode:?} datasets need rank-{expected_rank} sample tensors, got shape {:?}",
                samples.shape()
            )));
        }
        if mode == DataMode::Image {
            if let Some(c) = Some(samples.shape()[1]).filter(|c| *c != 1 && *c != 3) {
                return Err(Error::Argument(format!("image datasets need 1 or 3 channels, got {c}")));
            }
            if let Some(v) = samples.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Argument(format!("image value {v} outside [0, 1]")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Argument(format!("label {bad} out of range for {num_classes} classes")));
        }
        let class_names = (0..num_classes).map(|k| format!("class{k}")).collect();
        Ok(Self {
            samples,
            labels,
            num_classes,
            mode,
            class_names,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::Argument(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn mode(&self) -> DataMode {
        self.mode
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Shape of one sample (everything after axis 0).
    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Every class must be present.
    pub fn check_invariants(&self) -> Result<()> {
        let empty: Vec<usize> = self
            .class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(k, _)| k)
            .collect();
        if !empty.is_empty() {
            return Err(Error::Invariant(format!("classes {empty:?} have no samples")));
        }
        Ok(())
    }

    /// Largest class count divided by the smallest.
    pub fn imbalance_ratio(&self) -> Result<f64> {
        self.check_invariants()?;
        let counts = self.class_counts();
        let max = *counts.iter().max().expect("at least one class");
        let min = *counts.iter().min().expect("at least one class");
        Ok(max as f64 / min as f64)
    }

    /// Class with the fewest samples; the lowest id wins ties.
    pub fn minority_class(&self) -> usize {
        let counts = self.class_counts();
        (0..counts.len()).min_by_key(|&k| (counts[k], k)).unwrap_or(0)
    }

    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = self.samples.gather_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Self {
            samples,
            labels,
            num_classes: self.num_classes,
            mode: self.mode,
            class_names: self.class_names.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Fraction of every class that goes to the training side.
    pub train_fraction: f64,
    pub seed: u64,
}

/// Per-class split: `floor(fraction * count)` samples of each class go to
/// train, the rest to test. Both sides keep the original sample order.
pub fn stratified_split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in d.class_indices().into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Split(format!(
                "class {class} has {} sample(s); stratified splitting needs at least 2",
                idx.len()
            )));
        }
        let n_train = (spec.train_fraction * idx.len() as f64).floor() as usize;
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() {
        return Err(Error::Split("train side would be empty".into()));
    }
    Ok((d.subset(&train)?, d.subset(&test)?))
}

fn require_all_classes(d: &Dataset, op: &str) -> Result<()> {
    if d.num_classes() < 2 {
        return Err(Error::Argument(format!("{op} needs at least 2 classes")));
    }
    d.check_invariants()
}

/// Random over-sampling: every smaller class is topped up with copies drawn
/// uniformly with replacement from its own samples until it matches the
/// largest class. Copies are appended after the original samples.
pub fn ros_resample(train: &Dataset, seed: u64) -> Result<Dataset> {
    require_all_classes(train, "ros_resample")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = train.class_indices();
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for idx in &by_class {
        for _ in idx.len()..target {
            order.push(idx[rng.random_range(0..idx.len())]);
        }
    }
    train.subset(&order)
}

/// Random under-sampling: every larger class is reduced, without
/// replacement, to the size of the smallest class.
pub fn rus_subsample(train: &Dataset, seed: u64) -> Result<Dataset> {
    require_all_classes(train, "rus_subsample")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = train.class_indices();
    let target = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut keep = Vec::with_capacity(target * by_class.len());
    for idx in &by_class {
        if idx.len() == target {
            keep.extend_from_slice(idx);
        } else {
            keep.extend(index::sample(&mut rng, idx.len(), target).into_iter().map(|j| idx[j]));
        }
    }
    keep.sort_unstable();
    train.subset(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// Dataset with `counts[k]` samples of class k; sample value = its index.
    fn counted(counts: &[usize]) -> Dataset {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &c)| vec![k; c]).collect();
        let n = labels.len();
        let samples = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(samples, labels, counts.len(), DataMode::Vector).unwrap()
    }

    fn multiset(d: &Dataset) -> BTreeMap<(u64, usize), usize> {
        let mut m = BTreeMap::new();
        for i in 0..d.len() {
            *m.entry((d.samples().row(i)[0].to_bits(), d.labels()[i])).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn ratio_and_minority() {
        let d = counted(&[52, 10]);
        assert!((d.imbalance_ratio().unwrap() - 5.2).abs() < 1e-12);
        assert_eq!(d.minority_class(), 1);
        let empty = Dataset::new(Tensor::zeros(vec![2, 1]), vec![0, 1], 3, DataMode::Vector).unwrap();
        assert!(matches!(empty.imbalance_ratio(), Err(Error::Invariant(_))));
    }

    #[test]
    fn split_counts_follow_the_floor_rule() {
        let d = counted(&[100, 10]);
        let (train, test) = stratified_split(&d, &SplitSpec { train_fraction: 0.8, seed: 1 }).unwrap();
        assert_eq!(train.class_counts(), vec![80, 8]);
        assert_eq!(test.class_counts(), vec![20, 2]);

        let mut union = multiset(&train);
        for (k, v) in multiset(&test) {
            *union.entry(k).or_insert(0) += v;
        }
        assert_eq!(union, multiset(&d));
    }

    #[test]
    fn split_mirrors_reported_minority_counts() {
        let d = counted(&[50, 584]);
        let (train, test) = stratified_split(&d, &SplitSpec { train_fraction: 0.8, seed: 3 }).unwrap();
        assert_eq!(train.class_counts()[1], 467);
        assert_eq!(test.class_counts()[1], 117);
    }

    #[test]
    fn split_is_seeded() {
        let d = counted(&[40, 12]);
        let spec = SplitSpec { train_fraction: 0.7, seed: 9 };
        assert_eq!(stratified_split(&d, &spec).unwrap(), stratified_split(&d, &spec).unwrap());
    }

    #[test]
    fn singleton_class_cannot_be_split() {
        let d = counted(&[10, 1]);
        let err = stratified_split(&d, &SplitSpec { train_fraction: 0.8, seed: 0 }).unwrap_err();
        assert!(matches!(err, Error::Split(_)));
    }

    #[test]
    fn ros_balances_with_copies() {
        let d = counted(&[100, 10]);
        let r = ros_resample(&d, 4).unwrap();
        assert_eq!(r.class_counts(), vec![100, 100]);
        assert_eq!(r.imbalance_ratio().unwrap(), 1.0);
        let originals: Vec<u64> = (100..110).map(|i| (i as f64).to_bits()).collect();
        for i in 0..r.len() {
            if r.labels()[i] == 1 {
                assert!(originals.contains(&r.samples().row(i)[0].to_bits()));
            }
        }
        // Every original minority sample is still present.
        let m = multiset(&r);
        for v in 100..110 {
            assert!(m.contains_key(&((v as f64).to_bits(), 1)));
        }
        let balanced = counted(&[7, 7]);
        assert_eq!(ros_resample(&balanced, 1).unwrap(), balanced);
    }

    #[test]
    fn rus_subsamples_majority() {
        let d = counted(&[100, 10]);
        let r = rus_subsample(&d, 4).unwrap();
        assert_eq!(r.class_counts(), vec![10, 10]);
        let full = multiset(&d);
        for (k, v) in multiset(&r) {
            assert!(full.get(&k).copied().unwrap_or(0) >= v);
        }
        let extreme = counted(&[5570, 100]);
        assert_eq!(rus_subsample(&extreme, 0).unwrap().len(), 200);
    }

    #[test]
    fn image_values_must_be_in_unit_range() {
        let bad = Tensor::new(vec![1, 1, 1, 2], vec![0.5, 1.5]).unwrap();
        assert!(Dataset::new(bad, vec![0], 2, DataMode::Image).is_err());
    }
}
