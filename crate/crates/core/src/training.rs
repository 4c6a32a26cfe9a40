//! Two-stage contrastive training and the single-stage comparison strategies.
//!
//! Every random draw in a run comes from a ChaCha8 stream derived from the
//! run seed and a fixed purpose id, so strategies that share a stage (the
//! two contrastive strategies share stage 1) make identical draws in it.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, build_multiview_batch, AugmentConfig};
use crate::data::{ros_resample, rus_subsample, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, Embeddings, RunReport};
use crate::losses::{cross_entropy, focal_loss, supcon_loss, FocalConfig, SupConConfig};
use crate::model::{Component, ModelConfig, ModelStack};
use crate::numeric::{sgd_step, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Vanilla,
    FocalLoss,
    #[serde(rename = "ROS")]
    Ros,
    #[serde(rename = "RUS")]
    Rus,
    #[serde(rename = "SuperConCE", alias = "SuperCon-CE")]
    SuperConCe,
    SuperCon,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Vanilla,
        Strategy::FocalLoss,
        Strategy::Ros,
        Strategy::Rus,
        Strategy::SuperConCe,
        Strategy::SuperCon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Vanilla => "Vanilla",
            Strategy::FocalLoss => "FocalLoss",
            Strategy::Ros => "ROS",
            Strategy::Rus => "RUS",
            Strategy::SuperConCe => "SuperConCE",
            Strategy::SuperCon => "SuperCon",
        }
    }

    /// Contrastive stage 1 followed by classifier fine-tuning.
    pub fn is_two_stage(self) -> bool {
        matches!(self, Strategy::SuperConCe | Strategy::SuperCon)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().to_ascii_lowercase() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
                Error::Argument(format!("unknown strategy {s:?}, expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub seed: u64,
    pub batch_size: usize,
    /// Required by the contrastive strategies; there is no default.
    pub stage1_epochs: Option<usize>,
    pub stage2_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    /// Learning rate of the single-stage strategies; `stage1_lr` when absent.
    pub baseline_lr: Option<f64>,
    /// Epochs of the single-stage strategies; `stage2_epochs` when absent.
    pub baseline_epochs: Option<usize>,
    /// Epochs on the under-sampled set before retraining; `stage2_epochs` when absent.
    pub rus_phase1_epochs: Option<usize>,
    /// Augment inputs during classifier fine-tuning too.
    pub stage2_augment: bool,
    pub supcon: SupConConfig,
    pub focal: FocalConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::SuperCon,
            seed: 0,
            batch_size: 128,
            stage1_epochs: None,
            stage2_epochs: 10,
            stage1_lr: 0.01,
            stage2_lr: 5e-4,
            baseline_lr: None,
            baseline_epochs: None,
            rus_phase1_epochs: None,
            stage2_augment: false,
            supcon: SupConConfig::default(),
            focal: FocalConfig::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

fn positive_lr(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be a positive finite number, got {v}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        positive_lr("stage1_lr", self.stage1_lr)?;
        positive_lr("stage2_lr", self.stage2_lr)?;
        if let Some(lr) = self.baseline_lr {
            positive_lr("baseline_lr", lr)?;
        }
        if self.strategy.is_two_stage() {
            match self.stage1_epochs {
                None => {
                    return Err(Error::Config(format!(
                        "stage1_epochs is required for strategy {}",
                        self.strategy
                    )))
                }
                Some(0) => return Err(Error::Config("stage1_epochs must be >= 1".into())),
                Some(_) => {}
            }
        }
        let checks = [
            ("stage2_epochs", Some(self.stage2_epochs)),
            ("baseline_epochs", self.baseline_epochs),
            ("rus_phase1_epochs", self.rus_phase1_epochs),
        ];
        for (name, v) in checks {
            if v == Some(0) {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        self.supcon.validate()?;
        self.focal.validate()?;
        self.augment.validate()?;
        self.model.validate()
    }

    pub fn baseline_lr(&self) -> f64 {
        self.baseline_lr.unwrap_or(self.stage1_lr)
    }

    pub fn baseline_epochs(&self) -> usize {
        self.baseline_epochs.unwrap_or(self.stage2_epochs)
    }

    pub fn rus_phase1_epochs(&self) -> usize {
        self.rus_phase1_epochs.unwrap_or(self.stage2_epochs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// Contrastive training of extractor and mapping module.
    Representation,
    /// Classifier fine-tuning on a frozen extractor.
    Classifier,
    /// End-to-end supervised training of extractor and classifier.
    Supervised,
    /// RUS phase 1: supervised training on the under-sampled set.
    RusPretrain,
    /// RUS phase 2: supervised retraining on the original set.
    RusRetrain,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Representation => "representation",
            StageKind::Classifier => "classifier",
            StageKind::Supervised => "supervised",
            StageKind::RusPretrain => "rus_pretrain",
            StageKind::RusRetrain => "rus_retrain",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Original,
    Oversampled,
    Subsampled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksums {
    pub extractor: String,
    pub projection: String,
    pub classifier: String,
}

impl Checksums {
    pub fn of(stack: &ModelStack) -> Self {
        Self {
            extractor: stack.checksum(Component::Extractor),
            projection: stack.checksum(Component::Projection),
            classifier: stack.checksum(Component::Classifier),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: StageKind,
    pub data: DataSource,
    pub samples: usize,
    pub class_counts: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Sample-weighted mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub before: Checksums,
    pub after: Checksums,
}

impl StageTrace {
    pub fn steps(&self) -> usize {
        self.steps_per_epoch * self.epochs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub seed: u64,
    pub stages: Vec<StageTrace>,
    pub final_checksums: Checksums,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Purpose ids of the per-run random streams.
mod stream {
    pub const INIT: u64 = 1;
    pub const STAGE1: u64 = 2;
    pub const STAGE2: u64 = 3;
    pub const RESAMPLE: u64 = 4;
    pub const SUPERVISED: u64 = 5;
}

fn rng_for(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// Fresh model for `cfg`, initialized from the run's init stream.
pub fn init_stack(cfg: &TrainConfig, sample_shape: &[usize], num_classes: usize) -> Result<ModelStack> {
    ModelStack::new(&cfg.model, sample_shape, num_classes, &mut rng_for(cfg.seed, stream::INIT))
}

fn wrap(stage: &'static str, epoch: usize, batch: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Training {
        stage,
        epoch,
        batch,
        source: Box::new(e),
    }
}

fn require_classes(train: &Dataset, what: &str) -> Result<()> {
    let present = train.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::DegenerateInput(format!("{what} needs at least 2 classes in the training set, found {present}")));
    }
    Ok(())
}

fn epoch_batches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

struct StageSetup<'a> {
    data: &'a Dataset,
    stage: StageKind,
    source: DataSource,
    epochs: usize,
    batch_size: usize,
    lr: f64,
}

impl StageSetup<'_> {
    fn trace(self, epoch_losses: Vec<f64>, before: Checksums, after: &ModelStack) -> StageTrace {
        StageTrace {
            stage: self.stage,
            data: self.source,
            samples: self.data.len(),
            class_counts: self.data.class_counts(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            steps_per_epoch: self.data.len().div_ceil(self.batch_size),
            learning_rate: self.lr,
            epoch_losses,
            before,
            after: Checksums::of(after),
        }
    }
}

/// Stage 1: trains extractor and mapping module with the supervised
/// contrastive loss on multiview batches. The classifier is not touched.
pub fn train_representation<R: Rng + ?Sized>(
    stack: &mut ModelStack,
    train: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StageTrace> {
    require_classes(train, "representation training")?;
    let epochs = cfg
        .stage1_epochs
        .ok_or_else(|| Error::Config("stage1_epochs is required for representation training".into()))?;
    let before = Checksums::of(stack);
    stack.set_frozen(Component::Extractor, false);
    stack.set_frozen(Component::Projection, false);

    let mut losses = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut total = 0.0;
        for (b, idx) in epoch_batches(train.len(), cfg.batch_size, rng).into_iter().enumerate() {
            let x = train.samples().gather_rows(&idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels()[i]).collect();
            let mut step = || -> Result<f64> {
                let mv = build_multiview_batch(&x, &labels, &cfg.augment, rng)?;
                let mut g = Graph::new();
                let fe = stack.bind(&mut g, Component::Extractor);
                let pm = stack.bind(&mut g, Component::Projection);
                let xv = g.constant(mv.inputs);
                let rep = stack.forward_features(&mut g, &fe, xv)?;
                let z = stack.project(&mut g, &pm, rep)?;
                let loss = supcon_loss(&mut g, z, &mv.labels, &cfg.supcon)?;
                let value = g.value(loss).item()?;
                let grads = g.backward(loss)?;
                stack.accumulate(&grads, &fe)?;
                stack.accumulate(&grads, &pm)?;
                let mut params = stack.extractor.params_mut();
                params.extend(stack.projection.params_mut());
                sgd_step(&mut params, cfg.stage1_lr)?;
                Ok(value)
            };
            let value = step().map_err(wrap("representation", epoch, b + 1))?;
            total += value * idx.len() as f64;
        }
        losses.push(total / train.len() as f64);
        log::debug!("representation epoch {epoch}: loss {:.6}", losses[epoch - 1]);
    }
    let setup = StageSetup {
        data: train,
        stage: StageKind::Representation,
        source: DataSource::Original,
        epochs,
        batch_size: cfg.batch_size,
        lr: cfg.stage1_lr,
    };
    Ok(setup.trace(losses, before, stack))
}

#[derive(Clone, Debug)]
enum Objective {
    CrossEntropy,
    Focal(FocalConfig),
}

impl Objective {
    fn apply(&self, g: &mut Graph, logits: crate::numeric::Var, labels: &[usize]) -> Result<crate::numeric::Var> {
        match self {
            Objective::CrossEntropy => cross_entropy(g, logits, labels),
            Objective::Focal(cfg) => focal_loss(g, logits, labels, cfg),
        }
    }
}

struct Supervised<'a> {
    stage: StageKind,
    source: DataSource,
    objective: Objective,
    /// Train the extractor alongside the classifier.
    end_to_end: bool,
    augment: Option<&'a AugmentConfig>,
    epochs: usize,
    lr: f64,
}

fn augment_rows<R: Rng + ?Sized>(x: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    let shape = x.shape()[1..].to_vec();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.rows() {
        let s = Tensor::new(shape.clone(), x.row(i).to_vec())?;
        out.extend_from_slice(augment(&s, cfg, rng)?.data());
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn supervised_stage<R: Rng + ?Sized>(
    stack: &mut ModelStack,
    data: &Dataset,
    batch_size: usize,
    spec: Supervised<'_>,
    rng: &mut R,
) -> Result<StageTrace> {
    let name = spec.stage.name();
    let before = Checksums::of(stack);
    // With a frozen extractor and no augmentation the representations never change.
    let cached = if !spec.end_to_end && spec.augment.is_none() {
        Some(stack.features(data.samples())?)
    } else {
        None
    };

    let mut losses = Vec::with_capacity(spec.epochs);
    for epoch in 1..=spec.epochs {
        let mut total = 0.0;
        for (b, idx) in epoch_batches(data.len(), batch_size, rng).into_iter().enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
            let mut step = || -> Result<f64> {
                let mut g = Graph::new();
                let fe = if spec.end_to_end {
                    Some(stack.bind(&mut g, Component::Extractor))
                } else {
                    None
                };
                let rep = match &cached {
                    Some(reps) => g.constant(reps.gather_rows(&idx)?),
                    None => {
                        let mut x = data.samples().gather_rows(&idx)?;
                        if let Some(aug) = spec.augment {
                            x = augment_rows(&x, aug, rng)?;
                        }
                        let xv = g.constant(x);
                        let bound = match &fe {
                            Some(fe) => fe.clone(),
                            None => stack.bind_constant(&mut g, Component::Extractor),
                        };
                        stack.forward_features(&mut g, &bound, xv)?
                    }
                };
                let cl = stack.bind(&mut g, Component::Classifier);
                let logits = stack.classify(&mut g, &cl, rep)?;
                let loss = spec.objective.apply(&mut g, logits, &labels)?;
                let value = g.value(loss).item()?;
                let grads = g.backward(loss)?;
                stack.accumulate(&grads, &cl)?;
                if let Some(fe) = &fe {
                    stack.accumulate(&grads, fe)?;
                }
                let mut params = stack.classifier.params_mut();
                if spec.end_to_end {
                    params.extend(stack.extractor.params_mut());
                }
                sgd_step(&mut params, spec.lr)?;
                Ok(value)
            };
            let value = step().map_err(wrap(name, epoch, b + 1))?;
            total += value * idx.len() as f64;
        }
        losses.push(total / data.len() as f64);
        log::debug!("{name} epoch {epoch}: loss {:.6}", losses[epoch - 1]);
    }
    let setup = StageSetup {
        data,
        stage: spec.stage,
        source: spec.source,
        epochs: spec.epochs,
        batch_size,
        lr: spec.lr,
    };
    Ok(setup.trace(losses, before, stack))
}

fn resolved_focal(cfg: &TrainConfig, train: &Dataset) -> FocalConfig {
    let mut focal = cfg.focal.clone();
    focal.minority_class.get_or_insert(train.minority_class());
    focal
}

/// Stage 2: fits only the classifier on frozen extractor representations,
/// with focal loss for `SuperCon` and cross-entropy for `SuperConCE`.
pub fn finetune_classifier<R: Rng + ?Sized>(
    stack: &mut ModelStack,
    train: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StageTrace> {
    let objective = match cfg.strategy {
        Strategy::SuperCon => Objective::Focal(resolved_focal(cfg, train)),
        Strategy::SuperConCe => Objective::CrossEntropy,
        other => {
            return Err(Error::Config(format!(
                "classifier fine-tuning belongs to the two-stage strategies, not {other}"
            )))
        }
    };
    let freeze = stack.freeze_state();
    if !freeze.extractor || !freeze.projection {
        return Err(Error::ContractViolation(
            "extractor and mapping module must be frozen before classifier fine-tuning".into(),
        ));
    }
    stack.set_frozen(Component::Classifier, false);
    let spec = Supervised {
        stage: StageKind::Classifier,
        source: DataSource::Original,
        objective,
        end_to_end: false,
        augment: cfg.stage2_augment.then_some(&cfg.augment),
        epochs: cfg.stage2_epochs,
        lr: cfg.stage2_lr,
    };
    supervised_stage(stack, train, cfg.batch_size, spec, rng)
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub stack: ModelStack,
    pub embeddings: Embeddings,
}

/// Trains the model stack for `cfg.strategy` into `stack`, returning the trace.
pub fn train_strategy(stack: &mut ModelStack, cfg: &TrainConfig, train: &Dataset) -> Result<TrainTrace> {
    cfg.validate()?;
    require_classes(train, "training")?;
    let started = Instant::now();
    let seed = cfg.seed;
    let mut stages = Vec::new();
    let single = |stage, source, objective, epochs| Supervised {
        stage,
        source,
        objective,
        end_to_end: true,
        augment: None,
        epochs,
        lr: cfg.baseline_lr(),
    };
    let mut rng = rng_for(seed, stream::SUPERVISED);
    match cfg.strategy {
        Strategy::Vanilla => {
            let spec = single(StageKind::Supervised, DataSource::Original, Objective::CrossEntropy, cfg.baseline_epochs());
            stages.push(supervised_stage(stack, train, cfg.batch_size, spec, &mut rng)?);
        }
        Strategy::FocalLoss => {
            let objective = Objective::Focal(resolved_focal(cfg, train));
            let spec = single(StageKind::Supervised, DataSource::Original, objective, cfg.baseline_epochs());
            stages.push(supervised_stage(stack, train, cfg.batch_size, spec, &mut rng)?);
        }
        Strategy::Ros => {
            let resampled = ros_resample(train, rng_for(seed, stream::RESAMPLE).random())?;
            let spec = single(StageKind::Supervised, DataSource::Oversampled, Objective::CrossEntropy, cfg.baseline_epochs());
            stages.push(supervised_stage(stack, &resampled, cfg.batch_size, spec, &mut rng)?);
        }
        Strategy::Rus => {
            let minority = train.class_counts().into_iter().min().unwrap_or(0);
            if minority < cfg.batch_size {
                return Err(Error::Infeasible(format!(
                    "RUS: insufficient minority samples ({minority} in the training set, at least \
                     batch_size = {} needed for a balanced under-sampled set)",
                    cfg.batch_size
                )));
            }
            let subsampled = rus_subsample(train, rng_for(seed, stream::RESAMPLE).random())?;
            let spec = single(StageKind::RusPretrain, DataSource::Subsampled, Objective::CrossEntropy, cfg.rus_phase1_epochs());
            stages.push(supervised_stage(stack, &subsampled, cfg.batch_size, spec, &mut rng)?);
            let spec = single(StageKind::RusRetrain, DataSource::Original, Objective::CrossEntropy, cfg.baseline_epochs());
            stages.push(supervised_stage(stack, train, cfg.batch_size, spec, &mut rng)?);
        }
        Strategy::SuperConCe | Strategy::SuperCon => {
            stages.push(train_representation(stack, train, cfg, &mut rng_for(seed, stream::STAGE1))?);
            stack.set_frozen(Component::Extractor, true);
            stack.set_frozen(Component::Projection, true);
            stages.push(finetune_classifier(stack, train, cfg, &mut rng_for(seed, stream::STAGE2))?);
        }
    }
    Ok(TrainTrace {
        seed,
        stages,
        final_checksums: Checksums::of(stack),
        wall_time: started.elapsed(),
    })
}

/// Initializes, trains and evaluates one strategy.
pub fn run_strategy(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunOutcome> {
    cfg.validate()?;
    if train.sample_shape() != test.sample_shape() || train.num_classes() != test.num_classes() {
        return Err(Error::Argument(format!(
            "train {:?}/{} classes and test {:?}/{} classes disagree",
            train.sample_shape(),
            train.num_classes(),
            test.sample_shape(),
            test.num_classes()
        )));
    }
    let mut stack = init_stack(cfg, train.sample_shape(), train.num_classes())?;
    let trace = train_strategy(&mut stack, cfg, train)?;
    let positive = train.minority_class();
    let evaluation = evaluate_model(&stack, test, positive)?;
    let report = RunReport::new(cfg, train, test, evaluation.metrics, evaluation.separation, trace);
    Ok(RunOutcome {
        report,
        stack,
        embeddings: evaluation.embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, stratified_split, BlobSpec, SplitSpec};
    use crate::losses::DenominatorVariant;

    fn small_cfg(strategy: Strategy) -> TrainConfig {
        TrainConfig {
            strategy,
            seed: 3,
            batch_size: 16,
            stage1_epochs: Some(2),
            stage2_epochs: 2,
            stage2_lr: 0.05,
            model: ModelConfig {
                extractor: Some(crate::model::ExtractorArch::Dense {
                    widths: vec![8, 6],
                    final_relu: true,
                }),
                projection_dim: 4,
                projection_hidden: None,
            },
            ..TrainConfig::default()
        }
    }

    fn blobs(counts: &[usize]) -> Dataset {
        generate_blobs(&BlobSpec::vector(counts, 3, 3.0, 1.0, 1)).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Strategy>(&json).unwrap(), s);
        }
        assert_eq!("SuperCon-CE".parse::<Strategy>().unwrap(), Strategy::SuperConCe);
        assert!("Mixup".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(Strategy::SuperCon);
        cfg.stage1_epochs = None;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.strategy = Strategy::Vanilla;
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let err = serde_json::from_str::<TrainConfig>(r#"{"batch_sise": 4}"#).unwrap_err();
        assert!(err.to_string().contains("batch_sise"));
    }

    #[test]
    fn steps_follow_ceiling_rule() {
        let d = blobs(&[30, 7]);
        let cfg = small_cfg(Strategy::SuperCon);
        let mut stack = init_stack(&cfg, d.sample_shape(), 2).unwrap();
        let trace = train_strategy(&mut stack, &cfg, &d).unwrap();
        assert_eq!(trace.stages.len(), 2);
        for s in &trace.stages {
            assert_eq!(s.steps_per_epoch, 3);
            assert_eq!(s.epoch_losses.len(), s.epochs);
        }
    }

    #[test]
    fn stage_one_leaves_classifier_and_stage_two_leaves_extractor() {
        let d = blobs(&[30, 10]);
        let cfg = small_cfg(Strategy::SuperCon);
        let mut stack = init_stack(&cfg, d.sample_shape(), 2).unwrap();
        let trace = train_strategy(&mut stack, &cfg, &d).unwrap();
        let (s1, s2) = (&trace.stages[0], &trace.stages[1]);
        assert_eq!(s1.before.classifier, s1.after.classifier);
        assert_ne!(s1.before.extractor, s1.after.extractor);
        assert_eq!(s1.after.extractor, s2.after.extractor);
        assert_eq!(s1.after.projection, s2.after.projection);
        assert_ne!(s2.before.classifier, s2.after.classifier);
    }

    #[test]
    fn finetune_requires_frozen_extractor() {
        let d = blobs(&[20, 10]);
        let cfg = small_cfg(Strategy::SuperCon);
        let mut stack = init_stack(&cfg, d.sample_shape(), 2).unwrap();
        let err = finetune_classifier(&mut stack, &d, &cfg, &mut rng_for(0, 0)).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn contrastive_strategies_share_stage_one() {
        let d = blobs(&[30, 10]);
        let a = {
            let cfg = small_cfg(Strategy::SuperCon);
            let mut s = init_stack(&cfg, d.sample_shape(), 2).unwrap();
            train_strategy(&mut s, &cfg, &d).unwrap()
        };
        let b = {
            let cfg = small_cfg(Strategy::SuperConCe);
            let mut s = init_stack(&cfg, d.sample_shape(), 2).unwrap();
            train_strategy(&mut s, &cfg, &d).unwrap()
        };
        assert_eq!(a.stages[0], b.stages[0]);
    }

    #[test]
    fn vanilla_equals_unweighted_zero_gamma_focal() {
        let d = blobs(&[30, 10]);
        let vanilla = small_cfg(Strategy::Vanilla);
        let mut focal = small_cfg(Strategy::FocalLoss);
        focal.focal.gamma = 0.0;
        focal.focal.alpha_off = true;
        let mut a = init_stack(&vanilla, d.sample_shape(), 2).unwrap();
        let mut b = init_stack(&focal, d.sample_shape(), 2).unwrap();
        let ta = train_strategy(&mut a, &vanilla, &d).unwrap();
        let tb = train_strategy(&mut b, &focal, &d).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.stages, tb.stages);
    }

    #[test]
    fn rus_guard_and_phase_order() {
        let d = blobs(&[60, 10]);
        let mut cfg = small_cfg(Strategy::Rus);
        let mut s = init_stack(&cfg, d.sample_shape(), 2).unwrap();
        let err = train_strategy(&mut s, &cfg, &d).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));

        cfg.batch_size = 8;
        let trace = train_strategy(&mut s, &cfg, &d).unwrap();
        assert_eq!(trace.stages[0].data, DataSource::Subsampled);
        assert_eq!(trace.stages[0].class_counts, vec![10, 10]);
        assert_eq!(trace.stages[1].data, DataSource::Original);
        assert_eq!(trace.stages[1].samples, 70);
    }

    #[test]
    fn ros_trains_on_balanced_copies() {
        let d = blobs(&[40, 8]);
        let cfg = small_cfg(Strategy::Ros);
        let mut s = init_stack(&cfg, d.sample_shape(), 2).unwrap();
        let trace = train_strategy(&mut s, &cfg, &d).unwrap();
        assert_eq!(trace.stages[0].data, DataSource::Oversampled);
        assert_eq!(trace.stages[0].class_counts, vec![40, 40]);
    }

    #[test]
    fn negatives_only_single_class_batch_reports_position() {
        let d = blobs(&[30, 2]);
        let mut cfg = small_cfg(Strategy::SuperCon);
        cfg.supcon.denominator = DenominatorVariant::NegativesOnly;
        let mut s = init_stack(&cfg, d.sample_shape(), 2).unwrap();
        let err = train_strategy(&mut s, &cfg, &d).unwrap_err();
        match &err {
            Error::Training { stage, epoch, batch, .. } => {
                assert_eq!(*stage, "representation");
                assert!(*epoch >= 1 && *batch >= 1);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(err.root(), Error::DegenerateBatch(_)));
    }

    #[test]
    fn runs_are_reproducible() {
        let d = blobs(&[60, 20]);
        let (train, test) = stratified_split(&d, &SplitSpec { train_fraction: 0.75, seed: 2 }).unwrap();
        let cfg = small_cfg(Strategy::SuperCon);
        let a = run_strategy(&cfg, &train, &test).unwrap();
        let b = run_strategy(&cfg, &train, &test).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.stack, b.stack);
    }
}
