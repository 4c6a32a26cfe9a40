//! Random views of training samples and multiview batch construction.
//!
//! Image samples are `C x H x W` tensors with values in `[0, 1]` and one or
//! three channels. Vector samples (rank 1) only support additive noise and
//! per-feature scaling; the image transforms are ignored for them.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggle {
    pub enabled: bool,
    pub probability: f64,
}

impl Default for Toggle {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorDistortion {
    pub enabled: bool,
    pub probability: f64,
    /// Brightness, contrast and saturation factors are drawn from
    /// `[1 - strength, 1 + strength]`.
    pub strength: f64,
}

impl Default for ColorDistortion {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            strength: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianBlur {
    pub enabled: bool,
    pub probability: f64,
    pub radius: usize,
    pub sigma: f64,
}

impl Default for GaussianBlur {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            radius: 1,
            sigma: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianNoise {
    pub enabled: bool,
    pub probability: f64,
    pub sigma: f64,
}

impl Default for GaussianNoise {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            sigma: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureScaling {
    pub enabled: bool,
    pub probability: f64,
    /// Each feature is multiplied by a factor from `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            jitter: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub horizontal_flip: Toggle,
    pub grayscale: Toggle,
    pub color_distortion: ColorDistortion,
    pub gaussian_blur: GaussianBlur,
    pub gaussian_noise: GaussianNoise,
    pub feature_scaling: FeatureScaling,
}

impl AugmentConfig {
    /// Every transform switched off: views equal their originals.
    pub fn disabled() -> Self {
        let mut cfg = Self::default();
        cfg.horizontal_flip.enabled = false;
        cfg.grayscale.enabled = false;
        cfg.color_distortion.enabled = false;
        cfg.gaussian_blur.enabled = false;
        cfg.gaussian_noise.enabled = false;
        cfg.feature_scaling.enabled = false;
        cfg
    }

    pub fn any_enabled(&self) -> bool {
        self.horizontal_flip.enabled
            || self.grayscale.enabled
            || self.color_distortion.enabled
            || self.gaussian_blur.enabled
            || self.gaussian_noise.enabled
            || self.feature_scaling.enabled
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("horizontal_flip", self.horizontal_flip.probability),
            ("grayscale", self.grayscale.probability),
            ("color_distortion", self.color_distortion.probability),
            ("gaussian_blur", self.gaussian_blur.probability),
            ("gaussian_noise", self.gaussian_noise.probability),
            ("feature_scaling", self.feature_scaling.probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{name}.probability must lie in [0, 1], got {p}")));
            }
        }
        let checks = [
            (self.color_distortion.strength >= 0.0, "augment.color_distortion.strength must be >= 0"),
            (self.gaussian_blur.radius >= 1, "augment.gaussian_blur.radius must be >= 1"),
            (self.gaussian_blur.sigma > 0.0, "augment.gaussian_blur.sigma must be > 0"),
            (self.gaussian_noise.sigma >= 0.0, "augment.gaussian_noise.sigma must be >= 0"),
            (
                (0.0..=1.0).contains(&self.feature_scaling.jitter),
                "augment.feature_scaling.jitter must lie in [0, 1]",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }
}

/// `N` originals followed by one view of each; row `i` and row `i + N` are a pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiviewBatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl MultiviewBatch {
    pub fn originals(&self) -> usize {
        self.labels.len() / 2
    }
}

fn coin<R: Rng + ?Sized>(enabled: bool, p: f64, rng: &mut R) -> bool {
    enabled && rng.random::<f64>() < p
}

fn jitter_factor<R: Rng + ?Sized>(spread: f64, rng: &mut R) -> f64 {
    1.0 + spread * (2.0 * rng.random::<f64>() - 1.0)
}

fn add_noise<R: Rng + ?Sized>(data: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for v in data {
        *v += normal.sample(rng);
    }
}

/// Produces one random view of a single sample.
pub fn augment<R: Rng + ?Sized>(x: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    cfg.validate()?;
    match x.rank() {
        1 => Ok(augment_vector(x, cfg, rng)),
        3 => augment_image(x, cfg, rng),
        r => Err(Error::Config(format!(
            "augment: samples must be vectors (rank 1) or C x H x W images (rank 3), got rank {r}"
        ))),
    }
}

fn augment_vector<R: Rng + ?Sized>(x: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Tensor {
    let mut out = x.clone();
    let data = out.data_mut();
    let fs = &cfg.feature_scaling;
    if coin(fs.enabled, fs.probability, rng) {
        for v in data.iter_mut() {
            *v *= jitter_factor(fs.jitter, rng);
        }
    }
    let gn = &cfg.gaussian_noise;
    if coin(gn.enabled, gn.probability, rng) {
        add_noise(data, gn.sigma, rng);
    }
    out
}

fn augment_image<R: Rng + ?Sized>(x: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if c != 1 && c != 3 {
        return Err(Error::Config(format!("augment: images need 1 or 3 channels, got {c}")));
    }
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Argument(format!("augment: image value {v} outside [0, 1]")));
    }
    let mut img = x.data().to_vec();
    let plane = h * w;

    if coin(cfg.horizontal_flip.enabled, cfg.horizontal_flip.probability, rng) {
        for row in img.chunks_mut(w) {
            row.reverse();
        }
    }

    let cd = &cfg.color_distortion;
    if coin(cd.enabled, cd.probability, rng) {
        let brightness = jitter_factor(cd.strength, rng);
        let contrast = jitter_factor(cd.strength, rng);
        let saturation = jitter_factor(cd.strength, rng);
        img.iter_mut().for_each(|v| *v *= brightness);
        let mean = img.iter().sum::<f64>() / img.len() as f64;
        img.iter_mut().for_each(|v| *v = (*v - mean) * contrast + mean);
        if c == 3 {
            for p in 0..plane {
                let gray = (img[p] + img[plane + p] + img[2 * plane + p]) / 3.0;
                for ch in 0..3 {
                    let v = &mut img[ch * plane + p];
                    *v = gray + (*v - gray) * saturation;
                }
            }
        }
        img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    if coin(cfg.grayscale.enabled, cfg.grayscale.probability, rng) && c == 3 {
        for p in 0..plane {
            let gray = (img[p] + img[plane + p] + img[2 * plane + p]) / 3.0;
            for ch in 0..3 {
                img[ch * plane + p] = gray;
            }
        }
    }

    let gb = &cfg.gaussian_blur;
    if coin(gb.enabled, gb.probability, rng) {
        let kernel = blur_kernel(gb.radius, gb.sigma);
        for ch in 0..c {
            blur_plane(&mut img[ch * plane..(ch + 1) * plane], h, w, &kernel);
        }
    }

    let gn = &cfg.gaussian_noise;
    if coin(gn.enabled, gn.probability, rng) {
        add_noise(&mut img, gn.sigma, rng);
    }

    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::new(x.shape().to_vec(), img)
}

fn blur_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable blur with edge replication.
fn blur_plane(plane: &mut [f64], h: usize, w: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| {
                    let sx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    kv * plane[y * w + sx]
                })
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| {
                    let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                    kv * tmp[sy * w + x]
                })
                .sum();
        }
    }
}

/// Appends one augmented view per original sample.
pub fn build_multiview_batch<R: Rng + ?Sized>(
    samples: &Tensor,
    labels: &[usize],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<MultiviewBatch> {
    if labels.is_empty() {
        return Err(Error::Argument("build_multiview_batch: empty batch".into()));
    }
    if samples.rows() != labels.len() {
        return Err(Error::Dimension {
            op: "build_multiview_batch",
            left: samples.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let sample_shape = samples.shape()[1..].to_vec();
    let mut views = Vec::with_capacity(samples.numel());
    for i in 0..samples.rows() {
        let x = Tensor::new(sample_shape.clone(), samples.row(i).to_vec())?;
        views.extend_from_slice(augment(&x, cfg, rng)?.data());
    }
    let views = Tensor::new(samples.shape().to_vec(), views)?;
    let inputs = samples.concat_rows(&views)?;
    let mut doubled = labels.to_vec();
    doubled.extend_from_slice(labels);
    Ok(MultiviewBatch {
        inputs,
        labels: doubled,
    })
}
