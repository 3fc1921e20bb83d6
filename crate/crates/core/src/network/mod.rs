//! The 3+n' module architecture: shared feature extractor, label classifier,
//! gradient-reversed domain discriminator(s), and one known-unknown
//! discriminator per domain with unlabeled data.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("input shape {shape:?} incompatible with {variant}: {reason}")]
    IncompatibleInput { variant: Variant, shape: Vec<usize>, reason: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {reason} (at byte {offset})")]
    Checkpoint { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Two 5x5 conv/relu/maxpool stages over image inputs.
    DigitsConv,
    /// Two 64-unit dense layers over low-dimensional point inputs.
    MlpSynthetic,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::DigitsConv => "digits-conv",
            Variant::MlpSynthetic => "mlp-synthetic",
        })
    }
}

impl FromStr for Variant {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "digits-conv" => Ok(Variant::DigitsConv),
            "mlp-synthetic" => Ok(Variant::MlpSynthetic),
            other => Err(NetworkError::InvalidSpec(format!("unknown variant `{other}`"))),
        }
    }
}

const CONV_KERNEL: usize = 5;
const CONV_CHANNELS: [usize; 2] = [32, 48];
const DIGITS_HEAD_WIDTH: usize = 100;
const MLP_FEATURE_WIDTH: usize = 64;
const MLP_HEAD_WIDTH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    /// Per-sample input shape: `[channels, height, width]` for
    /// `DigitsConv`, `[dim]` for `MlpSynthetic`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub domains: usize,
    /// Number of domains with unlabeled data (one KUD head each).
    pub unlabeled_domains: usize,
    /// One domain discriminator per class instead of a single global one.
    pub mada: bool,
}

/// One step of the forward-shape trace; shapes exclude the batch axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub layer: String,
    pub shape: Vec<usize>,
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::InvalidSpec(m));
        if self.domains < 2 {
            return bad(format!("need at least 2 domains, got {}", self.domains));
        }
        if self.unlabeled_domains > self.domains {
            return bad(format!("{} unlabeled domains exceed {} domains", self.unlabeled_domains, self.domains));
        }
        // One class is accepted so the single-class MADA/DANN reduction can be
        // run; it trains nothing useful.
        if self.classes == 0 {
            return bad("need at least 1 class".into());
        }
        self.shape_trace().map(|_| ())
    }

    /// Per-layer output shapes of the feature extractor.
    pub fn shape_trace(&self) -> Result<Vec<TraceEntry>, NetworkError> {
        let incompatible = |reason: String| NetworkError::IncompatibleInput {
            variant: self.variant,
            shape: self.input_shape.clone(),
            reason,
        };
        let mut trace = Vec::new();
        match self.variant {
            Variant::DigitsConv => {
                let [c, h, w] = self.input_shape[..] else {
                    return Err(incompatible("expected [channels, height, width]".into()));
                };
                if c == 0 {
                    return Err(incompatible("zero channels".into()));
                }
                let (mut h, mut w) = (h, w);
                for (stage, &out) in CONV_CHANNELS.iter().enumerate() {
                    if h < CONV_KERNEL || w < CONV_KERNEL {
                        return Err(incompatible(format!(
                            "stage {stage}: {h}x{w} smaller than the {CONV_KERNEL}x{CONV_KERNEL} kernel"
                        )));
                    }
                    h = h - CONV_KERNEL + 1;
                    w = w - CONV_KERNEL + 1;
                    trace.push(TraceEntry { layer: format!("conv{stage}"), shape: vec![out, h, w] });
                    if h < 2 || w < 2 {
                        return Err(incompatible(format!("stage {stage}: {h}x{w} cannot be pooled")));
                    }
                    h /= 2;
                    w /= 2;
                    trace.push(TraceEntry { layer: format!("pool{stage}"), shape: vec![out, h, w] });
                }
                trace.push(TraceEntry { layer: "flatten".into(), shape: vec![CONV_CHANNELS[1] * h * w] });
            }
            Variant::MlpSynthetic => {
                let [d] = self.input_shape[..] else {
                    return Err(incompatible("expected a flat [dim] input".into()));
                };
                if d == 0 {
                    return Err(incompatible("zero input dimension".into()));
                }
                trace.push(TraceEntry { layer: "fc0".into(), shape: vec![MLP_FEATURE_WIDTH] });
                trace.push(TraceEntry { layer: "fc1".into(), shape: vec![MLP_FEATURE_WIDTH] });
            }
        }
        Ok(trace)
    }

    pub fn feature_dim(&self) -> Result<usize, NetworkError> {
        Ok(self.shape_trace()?.last().map_or(0, |e| e.shape[0]))
    }

    /// Hidden width of classifier and discriminator heads.
    pub fn head_width(&self) -> usize {
        match self.variant {
            Variant::DigitsConv => DIGITS_HEAD_WIDTH,
            Variant::MlpSynthetic => MLP_HEAD_WIDTH,
        }
    }

    /// 1 (sigmoid) for two domains, otherwise one softmax logit per domain.
    pub fn domain_output_width(&self) -> usize {
        if self.domains == 2 {
            1
        } else {
            self.domains
        }
    }

    pub fn discriminator_count(&self) -> usize {
        if self.mada {
            self.classes
        } else {
            1
        }
    }

    pub fn sample_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    /// `[out, in, k, k]`
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Dense stack with relu between layers and none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    /// conv / relu / maxpool per stage, then flatten.
    Conv(Vec<Conv>),
    /// dense / relu per layer.
    Dense(Vec<Dense>),
}

/// All trainable parameters: extractor (theta_f), classifier (theta_c),
/// domain discriminators (theta_d; one, or one per class under MADA) and the
/// KUD heads (theta_u; one per domain with unlabeled data).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: ArchitectureSpec,
    pub extractor: Extractor,
    pub classifier: Mlp,
    pub domain: Vec<Mlp>,
    pub kud: Vec<Mlp>,
}

fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::new(shape, values).expect("shape and value count agree")
}

fn zeros(n: usize) -> Tensor {
    Tensor::zeros(vec![n]).expect("positive width")
}

fn dense(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Dense {
    Dense { weight: glorot(vec![fan_in, fan_out], fan_in, fan_out, rng), bias: zeros(fan_out) }
}

fn mlp(widths: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
    Mlp { layers: widths.windows(2).map(|w| dense(w[0], w[1], rng)).collect() }
}

/// Initializes every parameter from `seed` in canonical order: extractor,
/// classifier, domain discriminators, KUD heads. Weights are Glorot-uniform,
/// biases zero.
pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<NetworkParams, NetworkError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extractor = match spec.variant {
        Variant::DigitsConv => {
            let mut in_ch = spec.input_shape[0];
            let mut convs = Vec::new();
            for &out in &CONV_CHANNELS {
                let k2 = CONV_KERNEL * CONV_KERNEL;
                convs.push(Conv {
                    kernel: glorot(vec![out, in_ch, CONV_KERNEL, CONV_KERNEL], in_ch * k2, out * k2, &mut rng),
                    bias: zeros(out),
                });
                in_ch = out;
            }
            Extractor::Conv(convs)
        }
        Variant::MlpSynthetic => {
            let d = spec.input_shape[0];
            Extractor::Dense(vec![
                dense(d, MLP_FEATURE_WIDTH, &mut rng),
                dense(MLP_FEATURE_WIDTH, MLP_FEATURE_WIDTH, &mut rng),
            ])
        }
    };
    let f = spec.feature_dim()?;
    let hw = spec.head_width();
    let classifier = mlp(&[f, hw, hw, spec.classes], &mut rng);
    let domain = (0..spec.discriminator_count()).map(|_| mlp(&[f, hw, spec.domain_output_width()], &mut rng)).collect();
    let kud = (0..spec.unlabeled_domains).map(|_| mlp(&[f, hw, 1], &mut rng)).collect();
    Ok(NetworkParams { spec: spec.clone(), extractor, classifier, domain, kud })
}

impl NetworkParams {
    /// Parameters with stable names, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match &self.extractor {
            Extractor::Conv(convs) => {
                for (i, c) in convs.iter().enumerate() {
                    out.push((format!("extractor.conv{i}.kernel"), &c.kernel));
                    out.push((format!("extractor.conv{i}.bias"), &c.bias));
                }
            }
            Extractor::Dense(layers) => push_dense(&mut out, "extractor", layers),
        }
        push_dense(&mut out, "classifier", &self.classifier.layers);
        for (k, head) in self.domain.iter().enumerate() {
            push_dense(&mut out, &format!("domain{k}"), &head.layers);
        }
        for (j, head) in self.kud.iter().enumerate() {
            push_dense(&mut out, &format!("kud{j}"), &head.layers);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        match &mut self.extractor {
            Extractor::Conv(convs) => {
                for c in convs {
                    out.push(&mut c.kernel);
                    out.push(&mut c.bias);
                }
            }
            Extractor::Dense(layers) => {
                for l in layers {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
            }
        }
        let heads = std::iter::once(&mut self.classifier).chain(self.domain.iter_mut()).chain(self.kud.iter_mut());
        for head in heads {
            for l in &mut head.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundNetwork {
        self.bind_with(tape, true)
    }

    /// Registers parameters as constants (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundNetwork {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundNetwork {
        let mut leaf = |t: &Tensor| {
            let mut t = t.clone();
            t.set_requires_grad(trainable);
            tape.leaf(t)
        };
        let bind_mlp = |m: &Mlp, leaf: &mut dyn FnMut(&Tensor) -> Var| {
            m.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect::<Vec<_>>()
        };
        let (conv, extractor) = match &self.extractor {
            Extractor::Conv(convs) => (true, convs.iter().map(|c| (leaf(&c.kernel), leaf(&c.bias))).collect()),
            Extractor::Dense(layers) => (false, layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect()),
        };
        let classifier = bind_mlp(&self.classifier, &mut leaf);
        let domain = self.domain.iter().map(|m| bind_mlp(m, &mut leaf)).collect();
        let kud = self.kud.iter().map(|m| bind_mlp(m, &mut leaf)).collect();
        BoundNetwork { sample_shape: self.spec.input_shape.clone(), conv, extractor, classifier, domain, kud }
    }
}

impl Mlp {
    /// A standalone Glorot-initialized stack with the given layer widths.
    pub fn new(widths: &[usize], seed: u64) -> Mlp {
        mlp(widths, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut pair = [l.weight.clone(), l.bias.clone()];
                pair.iter_mut().for_each(|t| t.set_requires_grad(trainable));
                let [w, b] = pair;
                (tape.leaf(w), tape.leaf(b))
            })
            .collect();
        BoundMlp { layers }
    }
}

/// Handles of a standalone [`Mlp`] on one tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: LayerVars,
}

impl BoundMlp {
    /// Same order as [`Mlp::tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        run_mlp(tape, &self.layers, x, false)
    }
}

fn push_dense<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, layers: &'a [Dense]) {
    for (i, l) in layers.iter().enumerate() {
        out.push((format!("{prefix}.fc{i}.weight"), &l.weight));
        out.push((format!("{prefix}.fc{i}.bias"), &l.bias));
    }
}

type LayerVars = Vec<(Var, Var)>;

/// Parameter handles on one tape, mirroring [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    sample_shape: Vec<usize>,
    conv: bool,
    extractor: LayerVars,
    classifier: LayerVars,
    domain: Vec<LayerVars>,
    kud: Vec<LayerVars>,
}

fn run_mlp(tape: &mut Tape, layers: &LayerVars, x: Var, relu_last: bool) -> Result<Var, AutodiffError> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.matmul(h, w)?;
        h = tape.add_bias(h, b)?;
        if relu_last || i + 1 < layers.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

impl BoundNetwork {
    /// Every parameter handle, in the same order as
    /// [`NetworkParams::tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        std::iter::once(&self.extractor)
            .chain(std::iter::once(&self.classifier))
            .chain(self.domain.iter())
            .chain(self.kud.iter())
            .flat_map(|layers| layers.iter().flat_map(|&(w, b)| [w, b]))
            .collect()
    }

    pub fn domain_heads(&self) -> usize {
        self.domain.len()
    }

    pub fn kud_heads(&self) -> usize {
        self.kud.len()
    }

    /// Feature extractor output `[batch, feature_dim]`. `input` is
    /// `[batch, sample_len]` with samples stored row-major.
    pub fn features(&self, tape: &mut Tape, input: Var) -> Result<Var, NetworkError> {
        if !self.conv {
            return Ok(run_mlp(tape, &self.extractor, input, true)?);
        }
        let x = tape.value(input);
        let mut shape = vec![x.rows()];
        shape.extend_from_slice(&self.sample_shape);
        let img = Tensor::new(shape, x.values().to_vec())?;
        // Image batches arrive flat; re-enter them as a 4-D leaf. Inputs are
        // data, never trainable, so no gradient is lost.
        let mut h = tape.leaf(img);
        for &(k, b) in &self.extractor {
            h = tape.conv2d(h, k)?;
            h = tape.add_bias(h, b)?;
            h = tape.relu(h)?;
            h = tape.maxpool2d(h)?;
        }
        Ok(tape.flatten(h)?)
    }

    pub fn class_logits(&self, tape: &mut Tape, features: Var) -> Result<Var, AutodiffError> {
        run_mlp(tape, &self.classifier, features, false)
    }

    /// Domain discriminator `k` applied to (already reversed) features.
    pub fn domain_logits(&self, tape: &mut Tape, k: usize, reversed: Var) -> Result<Var, AutodiffError> {
        run_mlp(tape, &self.domain[k], reversed, false)
    }

    /// KUD head `j`, applied to features without reversal.
    pub fn kud_logits(&self, tape: &mut Tape, j: usize, features: Var) -> Result<Var, AutodiffError> {
        run_mlp(tape, &self.kud[j], features, false)
    }
}

/// Gradient reversal layer: identity forward, gradient times `-lambda` backward.
pub fn grl(tape: &mut Tape, x: Var, lambda: f64) -> Result<Var, AutodiffError> {
    tape.grad_reverse(x, lambda)
}

/// Every head evaluated on one batch.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub features: Tensor,
    pub class_probs: Tensor,
    /// One tensor per domain discriminator (fed reversed features).
    pub domain_logits: Vec<Tensor>,
    /// One tensor per KUD head (fed features directly).
    pub kud_logits: Vec<Tensor>,
}

/// Inference pass of all heads on `batch` (`[batch, sample_len]`).
pub fn forward_all(params: &NetworkParams, batch: &Tensor, lambda: f64) -> Result<ForwardOutputs, NetworkError> {
    check_batch(params, batch)?;
    let mut tape = Tape::new();
    let net = params.bind_frozen(&mut tape);
    let input = tape.leaf(batch.clone());
    let feats = net.features(&mut tape, input)?;
    let logits = net.class_logits(&mut tape, feats)?;
    let probs = tape.softmax(logits)?;
    let reversed = grl(&mut tape, feats, lambda)?;
    let domain_logits = (0..net.domain_heads())
        .map(|k| net.domain_logits(&mut tape, k, reversed).map(|v| tape.value(v).clone()))
        .collect::<Result<_, _>>()?;
    let kud_logits = (0..net.kud_heads())
        .map(|j| net.kud_logits(&mut tape, j, feats).map(|v| tape.value(v).clone()))
        .collect::<Result<_, _>>()?;
    Ok(ForwardOutputs {
        features: tape.value(feats).clone(),
        class_probs: tape.value(probs).clone(),
        domain_logits,
        kud_logits,
    })
}

/// Extracted features for `batch`, evaluated in chunks.
pub fn extract_features(params: &NetworkParams, batch: &Tensor) -> Result<Tensor, NetworkError> {
    map_chunks(params, batch, |tape, net, input| net.features(tape, input))
}

/// Class posteriors for `batch`, evaluated in chunks.
pub fn predict_probs(params: &NetworkParams, batch: &Tensor) -> Result<Tensor, NetworkError> {
    map_chunks(params, batch, |tape, net, input| {
        let f = net.features(tape, input)?;
        let l = net.class_logits(tape, f)?;
        Ok(tape.softmax(l)?)
    })
}

const CHUNK: usize = 256;

fn map_chunks<F>(params: &NetworkParams, batch: &Tensor, f: F) -> Result<Tensor, NetworkError>
where
    F: Fn(&mut Tape, &BoundNetwork, Var) -> Result<Var, NetworkError>,
{
    check_batch(params, batch)?;
    let width = batch.row_width();
    let mut values = Vec::new();
    let mut out_width = 0;
    for chunk in batch.values().chunks(CHUNK * width) {
        let mut tape = Tape::new();
        let net = params.bind_frozen(&mut tape);
        let input = tape.leaf(Tensor::new(vec![chunk.len() / width, width], chunk.to_vec())?);
        let out = f(&mut tape, &net, input)?;
        out_width = tape.value(out).row_width();
        values.extend_from_slice(tape.value(out).values());
    }
    Ok(Tensor::new(vec![batch.rows(), out_width], values)?)
}

fn check_batch(params: &NetworkParams, batch: &Tensor) -> Result<(), NetworkError> {
    let expected = params.spec.sample_len();
    if batch.shape().len() != 2 || batch.row_width() != expected {
        return Err(NetworkError::IncompatibleInput {
            variant: params.spec.variant,
            shape: batch.shape().to_vec(),
            reason: format!("expected [batch, {expected}]"),
        });
    }
    Ok(())
}
