//! Feature extractor, mapping (projection) head and classifier, plus the
//! freezing rules that separate the two training stages.
//!
//! Every component exposes its parameters in a fixed declaration order:
//! weight then bias, layer by layer. Forward passes take the parameters as
//! graph variables produced by [`ModelStack::bind`], so a frozen component
//! (whose tensors do not require gradients) contributes no gradient work.

mod checkpoint;
mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::{Gradients, Graph, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, ParamEntry};
pub use layers::{Conv, Dense};

/// Architecture of the feature extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorArch {
    /// Dense layers with ReLU between them; `final_relu` controls the
    /// activation on the representation itself.
    Dense {
        widths: Vec<usize>,
        #[serde(default = "default_true")]
        final_relu: bool,
    },
    /// Convolutions (ReLU after each) followed by one dense ReLU layer.
    Conv {
        channels: Vec<usize>,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        dense: usize,
    },
}

fn default_true() -> bool {
    true
}
fn default_kernel() -> usize {
    3
}
fn default_stride() -> usize {
    2
}

impl ExtractorArch {
    pub fn default_dense() -> Self {
        ExtractorArch::Dense {
            widths: vec![64, 32],
            final_relu: true,
        }
    }

    pub fn default_conv() -> Self {
        ExtractorArch::Conv {
            channels: vec![8, 16],
            kernel: 3,
            stride: 2,
            dense: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `None` picks the dense default for vectors and the conv default for images.
    pub extractor: Option<ExtractorArch>,
    pub projection_dim: usize,
    /// Hidden width of the mapping module; defaults to the representation width.
    pub projection_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            extractor: None,
            projection_dim: 16,
            projection_hidden: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.projection_dim == 0 || self.projection_hidden == Some(0) {
            return Err(Error::Config("model: projection widths must be positive".into()));
        }
        match &self.extractor {
            Some(ExtractorArch::Dense { widths, .. }) if widths.is_empty() || widths.contains(&0) => Err(
                Error::Config("model.extractor.widths must be a non-empty list of positive widths".into()),
            ),
            Some(ExtractorArch::Conv {
                channels,
                kernel,
                stride,
                dense,
            }) if channels.is_empty() || channels.contains(&0) || *kernel == 0 || *stride == 0 || *dense == 0 => {
                Err(Error::Config("model.extractor: conv sizes must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    fn resolve_arch(&self, input_shape: &[usize]) -> Result<ExtractorArch> {
        match (&self.extractor, input_shape.len()) {
            (Some(arch @ ExtractorArch::Dense { .. }), 1) => Ok(arch.clone()),
            (Some(arch @ ExtractorArch::Conv { .. }), 3) => Ok(arch.clone()),
            (None, 1) => Ok(ExtractorArch::default_dense()),
            (None, 3) => Ok(ExtractorArch::default_conv()),
            (arch, _) => Err(Error::Config(format!(
                "extractor {arch:?} cannot consume samples of shape {input_shape:?}"
            ))),
        }
    }
}

/// Maps `(batch, input...)` samples to `(batch, d_rep)` representations.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    arch: ExtractorArch,
    input_shape: Vec<usize>,
    convs: Vec<Conv>,
    denses: Vec<Dense>,
    final_relu: bool,
}

impl FeatureExtractor {
    pub fn new<R: Rng + ?Sized>(arch: &ExtractorArch, input_shape: &[usize], rng: &mut R) -> Result<Self> {
        let (convs, denses, final_relu) = match arch {
            ExtractorArch::Dense { widths, final_relu } => {
                let [inputs] = input_shape else {
                    return Err(Error::Config(format!("dense extractor needs vector samples, got {input_shape:?}")));
                };
                let mut denses = Vec::new();
                let mut width = *inputs;
                for &w in widths {
                    denses.push(Dense::new(width, w, rng));
                    width = w;
                }
                (Vec::new(), denses, *final_relu)
            }
            ExtractorArch::Conv {
                channels,
                kernel,
                stride,
                dense,
            } => {
                let [c, h, w] = input_shape else {
                    return Err(Error::Config(format!("conv extractor needs C x H x W samples, got {input_shape:?}")));
                };
                let (mut c, mut h, mut w) = (*c, *h, *w);
                let mut convs = Vec::new();
                for &oc in channels {
                    let conv = Conv::new(c, oc, *kernel, *stride, rng);
                    h = conv.output_size(h);
                    w = conv.output_size(w);
                    c = oc;
                    convs.push(conv);
                }
                (convs, vec![Dense::new(c * h * w, *dense, rng)], true)
            }
        };
        Ok(Self {
            arch: arch.clone(),
            input_shape: input_shape.to_vec(),
            convs,
            denses,
            final_relu,
        })
    }

    pub fn arch(&self) -> &ExtractorArch {
        &self.arch
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Width of the representation.
    pub fn d_rep(&self) -> usize {
        self.denses.last().map_or(0, Dense::outputs)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.convs
            .iter()
            .flat_map(|c| [&c.weight, &c.bias])
            .chain(self.denses.iter().flat_map(|d| [&d.weight, &d.bias]))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.convs
            .iter_mut()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .chain(self.denses.iter_mut().flat_map(|d| [&mut d.weight, &mut d.bias]))
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let conv = (0..self.convs.len()).flat_map(|i| [format!("extractor.conv{i}.weight"), format!("extractor.conv{i}.bias")]);
        let dense = (0..self.denses.len()).flat_map(|i| [format!("extractor.dense{i}.weight"), format!("extractor.dense{i}.bias")]);
        conv.chain(dense).collect()
    }

    /// `rep = F(x)` for a batch `x` of shape `(batch, input_shape...)`.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::Dimension {
                op: "forward_features",
                left: shape,
                right: expected,
            });
        }
        let batch = shape[0];
        let mut h = x;
        let mut p = params;
        for conv in &self.convs {
            h = conv.forward(g, &p[..2], h)?;
            h = g.relu(h)?;
            p = &p[2..];
        }
        if !self.convs.is_empty() {
            let flat = g.value(h).numel() / batch;
            h = g.reshape(h, vec![batch, flat])?;
        }
        let last = self.denses.len() - 1;
        for (i, dense) in self.denses.iter().enumerate() {
            h = dense.forward(g, &p[..2], h)?;
            if i < last || self.final_relu {
                h = g.relu(h)?;
            }
            p = &p[2..];
        }
        Ok(h)
    }
}

/// One hidden ReLU layer followed by a linear map to `d_z`.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingModule {
    hidden: Dense,
    output: Dense,
}

impl MappingModule {
    pub fn new<R: Rng + ?Sized>(d_rep: usize, hidden: usize, d_z: usize, rng: &mut R) -> Self {
        Self {
            hidden: Dense::new(d_rep, hidden, rng),
            output: Dense::new(hidden, d_z, rng),
        }
    }

    pub fn d_z(&self) -> usize {
        self.output.outputs()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.hidden.weight, &self.hidden.bias, &self.output.weight, &self.output.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    pub fn param_names(&self) -> Vec<String> {
        ["hidden.weight", "hidden.bias", "output.weight", "output.bias"]
            .iter()
            .map(|s| format!("projection.{s}"))
            .collect()
    }

    /// Unit-norm rows `z = normalize(M(rep))`.
    pub fn forward(&self, g: &mut Graph, params: &[Var], rep: Var) -> Result<Var> {
        let shape = g.value(rep).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.hidden.inputs() {
            return Err(Error::Dimension {
                op: "project",
                left: shape,
                right: vec![0, self.hidden.inputs()],
            });
        }
        let h = self.hidden.forward(g, &params[..2], rep)?;
        let h = g.relu(h)?;
        let out = self.output.forward(g, &params[2..], h)?;
        g.l2_normalize(out, 1)
    }
}

/// Linear map from representations to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    layer: Dense,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(d_rep: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            layer: Dense::new(d_rep, classes, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.layer.outputs()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.layer.weight, &self.layer.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.layer.weight, &mut self.layer.bias]
    }

    pub fn param_names(&self) -> Vec<String> {
        vec!["classifier.weight".into(), "classifier.bias".into()]
    }

    pub fn forward(&self, g: &mut Graph, params: &[Var], rep: Var) -> Result<Var> {
        let shape = g.value(rep).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.layer.inputs() {
            return Err(Error::Dimension {
                op: "classify",
                left: shape,
                right: vec![0, self.layer.inputs()],
            });
        }
        self.layer.forward(g, params, rep)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Extractor,
    Projection,
    Classifier,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Extractor, Component::Projection, Component::Classifier];
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeState {
    pub extractor: bool,
    pub projection: bool,
    pub classifier: bool,
}

impl FreezeState {
    pub fn is_frozen(&self, c: Component) -> bool {
        match c {
            Component::Extractor => self.extractor,
            Component::Projection => self.projection,
            Component::Classifier => self.classifier,
        }
    }
}

/// Graph variables for one component's parameters.
#[derive(Clone, Debug)]
pub struct Bound {
    component: Component,
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// The three trainable components and their freeze state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelStack {
    config: ModelConfig,
    num_classes: usize,
    pub extractor: FeatureExtractor,
    pub projection: MappingModule,
    pub classifier: Classifier,
    freeze: FreezeState,
}

impl ModelStack {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, input_shape: &[usize], num_classes: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        let arch = config.resolve_arch(input_shape)?;
        let extractor = FeatureExtractor::new(&arch, input_shape, rng)?;
        let d_rep = extractor.d_rep();
        let hidden = config.projection_hidden.unwrap_or(d_rep);
        let projection = MappingModule::new(d_rep, hidden, config.projection_dim, rng);
        let classifier = Classifier::new(d_rep, num_classes, rng);
        Ok(Self {
            config: config.clone(),
            num_classes,
            extractor,
            projection,
            classifier,
            freeze: FreezeState::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> &[usize] {
        self.extractor.input_shape()
    }

    pub fn d_rep(&self) -> usize {
        self.extractor.d_rep()
    }

    pub fn d_z(&self) -> usize {
        self.projection.d_z()
    }

    pub fn freeze_state(&self) -> FreezeState {
        self.freeze
    }

    /// Frozen components keep their parameters out of every gradient
    /// computation and every update.
    pub fn set_frozen(&mut self, component: Component, frozen: bool) {
        match component {
            Component::Extractor => self.freeze.extractor = frozen,
            Component::Projection => self.freeze.projection = frozen,
            Component::Classifier => self.freeze.classifier = frozen,
        }
        for p in self.params_mut(component) {
            p.set_requires_grad(!frozen);
        }
    }

    pub fn params(&self, component: Component) -> Vec<&Tensor> {
        match component {
            Component::Extractor => self.extractor.params(),
            Component::Projection => self.projection.params(),
            Component::Classifier => self.classifier.params(),
        }
    }

    pub fn params_mut(&mut self, component: Component) -> Vec<&mut Tensor> {
        match component {
            Component::Extractor => self.extractor.params_mut(),
            Component::Projection => self.projection.params_mut(),
            Component::Classifier => self.classifier.params_mut(),
        }
    }

    pub fn param_names(&self, component: Component) -> Vec<String> {
        match component {
            Component::Extractor => self.extractor.param_names(),
            Component::Projection => self.projection.param_names(),
            Component::Classifier => self.classifier.param_names(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        Component::ALL
            .iter()
            .flat_map(|&c| self.params(c))
            .map(Tensor::numel)
            .sum()
    }

    /// Copies a component's parameters into `g` as leaves.
    pub fn bind(&self, g: &mut Graph, component: Component) -> Bound {
        Bound {
            component,
            vars: self.params(component).into_iter().map(|p| g.leaf(p)).collect(),
        }
    }

    /// Copies a component's parameters into `g` as constants, regardless of
    /// the freeze state.
    pub fn bind_constant(&self, g: &mut Graph, component: Component) -> Bound {
        Bound {
            component,
            vars: self
                .params(component)
                .into_iter()
                .map(|p| g.constant(p.clone().with_requires_grad(false)))
                .collect(),
        }
    }

    /// Adds the gradients held in `grads` into the bound component's
    /// trainable parameters.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound) -> Result<()> {
        for (p, &v) in self.params_mut(bound.component).into_iter().zip(&bound.vars) {
            if !p.requires_grad() {
                continue;
            }
            let g = grads
                .get(v)
                .ok_or_else(|| Error::ContractViolation("bound parameter received no gradient".into()))?;
            p.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn forward_features(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        self.extractor.forward(g, bound.vars(), x)
    }

    pub fn project(&self, g: &mut Graph, bound: &Bound, rep: Var) -> Result<Var> {
        self.projection.forward(g, bound.vars(), rep)
    }

    pub fn classify(&self, g: &mut Graph, bound: &Bound, rep: Var) -> Result<Var> {
        self.classifier.forward(g, bound.vars(), rep)
    }

    /// Representations of `x` without recording gradient work.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind_constant(&mut g, Component::Extractor);
        let xv = g.constant(x.clone());
        let rep = self.forward_features(&mut g, &b, xv)?;
        Ok(g.value(rep).clone())
    }

    /// Unit-norm projections of representations, without gradient work.
    pub fn embed(&self, rep: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind_constant(&mut g, Component::Projection);
        let rv = g.constant(rep.clone());
        let z = self.project(&mut g, &b, rv)?;
        Ok(g.value(z).clone())
    }

    /// Class logits for representations, without gradient work.
    pub fn logits(&self, rep: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind_constant(&mut g, Component::Classifier);
        let rv = g.constant(rep.clone());
        let l = self.classify(&mut g, &b, rv)?;
        Ok(g.value(l).clone())
    }

    /// Hex SHA-256 over a component's parameter bytes in declaration order.
    pub fn checksum(&self, component: Component) -> String {
        let mut h = Sha256::new();
        for p in self.params(component) {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check_params, sgd_step};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn zero_weight_linear_extractor_returns_bias_rows() {
        let arch = ExtractorArch::Dense {
            widths: vec![3],
            final_relu: false,
        };
        let mut f = FeatureExtractor::new(&arch, &[4], &mut rng()).unwrap();
        f.denses[0].weight = Tensor::zeros(vec![4, 3]);
        f.denses[0].bias = Tensor::from_vec(vec![0.5, -1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let vars: Vec<Var> = f.params().into_iter().map(|p| g.leaf(p)).collect();
        let x = g.constant(random_tensor(vec![5, 4], &mut rng()));
        let rep = f.forward(&mut g, &vars, x).unwrap();
        assert_eq!(g.value(rep).shape(), &[5, 3]);
        for i in 0..5 {
            assert_eq!(g.value(rep).row(i), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn shapes_through_the_stack() {
        let stack = ModelStack::new(&ModelConfig::default(), &[8], 2, &mut rng()).unwrap();
        assert_eq!(stack.d_rep(), 32);
        assert_eq!(stack.d_z(), 16);
        let x = random_tensor(vec![7, 8], &mut rng());
        let rep = stack.features(&x).unwrap();
        assert_eq!(rep.shape(), &[7, 32]);
        assert_eq!(stack.logits(&rep).unwrap().shape(), &[7, 2]);
        let single = stack.features(&x.gather_rows(&[0]).unwrap()).unwrap();
        assert_eq!(stack.logits(&single).unwrap().shape(), &[1, 2]);
        let wrong = random_tensor(vec![7, 9], &mut rng());
        assert!(matches!(stack.features(&wrong), Err(Error::Dimension { .. })));
        assert!(matches!(stack.logits(&wrong), Err(Error::Dimension { .. })));
    }

    #[test]
    fn projection_rows_are_unit_norm() {
        let cfg = ModelConfig {
            extractor: Some(ExtractorArch::Dense {
                widths: vec![8],
                final_relu: false,
            }),
            projection_dim: 2,
            projection_hidden: None,
        };
        let stack = ModelStack::new(&cfg, &[5], 2, &mut rng()).unwrap();
        let rep = stack.features(&random_tensor(vec![6, 5], &mut rng())).unwrap();
        let z = stack.embed(&rep).unwrap();
        assert_eq!(z.shape(), &[6, 2]);
        for i in 0..6 {
            let n: f64 = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_mapping_keeps_unit_rows() {
        let mut m = MappingModule::new(2, 2, 2, &mut rng());
        m.hidden.weight = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        m.output.weight = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let vars: Vec<Var> = m.params().into_iter().map(|p| g.leaf(p)).collect();
        let rep = g.constant(Tensor::from_rows(&[vec![0.6, 0.8]]).unwrap());
        let z = m.forward(&mut g, &vars, rep).unwrap();
        assert_eq!(g.value(z).data(), &[0.6, 0.8]);
    }

    #[test]
    fn zero_classifier_gives_uniform_probabilities() {
        let mut c = Classifier::new(4, 3, &mut rng());
        c.layer.weight = Tensor::zeros(vec![4, 3]);
        let mut g = Graph::new();
        let vars: Vec<Var> = c.params().into_iter().map(|p| g.leaf(p)).collect();
        let rep = g.constant(random_tensor(vec![2, 4], &mut rng()));
        let l = c.forward(&mut g, &vars, rep).unwrap();
        let p = g.softmax(l, 1).unwrap();
        for v in g.value(p).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn extractor_gradient_matches_finite_differences() {
        let mut r = rng();
        let stack = ModelStack::new(&ModelConfig::default(), &[4], 2, &mut r).unwrap();
        let x = random_tensor(vec![3, 4], &mut r);
        let names = stack.param_names(Component::Extractor);
        let params: Vec<(&str, Tensor)> = names
            .iter()
            .map(String::as_str)
            .zip(stack.params(Component::Extractor).into_iter().cloned())
            .collect();
        let report = grad_check_params(
            |g, vars| {
                let xv = g.constant(x.clone());
                let rep = stack.extractor.forward(g, vars, xv)?;
                g.sum(rep)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn conv_extractor_shapes() {
        let stack = ModelStack::new(&ModelConfig::default(), &[3, 8, 8], 2, &mut rng()).unwrap();
        // 8x8 -> 4x4 -> 2x2 with 16 channels, then dense 64.
        assert_eq!(stack.extractor.params()[4].shape(), &[64, 64]);
        let x = Tensor::new(vec![2, 3, 8, 8], vec![0.5; 384]).unwrap();
        assert_eq!(stack.features(&x).unwrap().shape(), &[2, 64]);
    }

    #[test]
    fn arch_must_match_sample_rank() {
        let cfg = ModelConfig {
            extractor: Some(ExtractorArch::default_conv()),
            ..Default::default()
        };
        assert!(ModelStack::new(&cfg, &[8], 2, &mut rng()).is_err());
    }

    fn train_step(stack: &mut ModelStack, x: &Tensor, components: &[Component]) {
        let mut g = Graph::new();
        let fb = stack.bind(&mut g, Component::Extractor);
        let cb = stack.bind(&mut g, Component::Classifier);
        let xv = g.constant(x.clone());
        let rep = stack.forward_features(&mut g, &fb, xv).unwrap();
        let logits = stack.classify(&mut g, &cb, rep).unwrap();
        let loss = crate::losses::cross_entropy(&mut g, logits, &[0, 1, 1]).unwrap();
        let grads = g.backward(loss).unwrap();
        stack.accumulate(&grads, &fb).unwrap();
        stack.accumulate(&grads, &cb).unwrap();
        for &c in components {
            sgd_step(&mut stack.params_mut(c), 0.1).unwrap();
        }
    }

    #[test]
    fn freezing_blocks_updates() {
        let mut r = rng();
        let mut stack = ModelStack::new(&ModelConfig::default(), &[4], 2, &mut r).unwrap();
        let x = random_tensor(vec![3, 4], &mut r);
        stack.set_frozen(Component::Extractor, true);
        stack.set_frozen(Component::Projection, true);
        let before = stack.checksum(Component::Extractor);
        let proj = stack.checksum(Component::Projection);
        let cls = stack.checksum(Component::Classifier);
        for _ in 0..10 {
            train_step(&mut stack, &x, &Component::ALL);
        }
        assert_eq!(before, stack.checksum(Component::Extractor));
        assert_eq!(proj, stack.checksum(Component::Projection));
        assert_ne!(cls, stack.checksum(Component::Classifier));

        stack.set_frozen(Component::Extractor, false);
        train_step(&mut stack, &x, &Component::ALL);
        assert_ne!(before, stack.checksum(Component::Extractor));
    }

    #[test]
    fn frozen_forward_records_no_gradient_work() {
        let mut stack = ModelStack::new(&ModelConfig::default(), &[4], 2, &mut rng()).unwrap();
        stack.set_frozen(Component::Extractor, true);
        let mut g = Graph::new();
        let fb = stack.bind(&mut g, Component::Extractor);
        let xv = g.constant(Tensor::zeros(vec![2, 4]));
        let rep = stack.forward_features(&mut g, &fb, xv).unwrap();
        assert!(!g.requires_grad(rep));
    }
}
