//! Saddle-point training by SGD with momentum, schedules, semi-supervised
//! batching and per-group evaluation.

mod evaluate;
mod optimizer;

pub use evaluate::{accuracy, argmax, evaluate, ClassGroup, Evaluation, GroupAccuracy};
pub use optimizer::{sgd_momentum_step, OptimizerState};

use crate::autodiff::{softmax_rows, AutodiffError, Tape, Tensor, Var};
use crate::data::{DomainDataset, EvalSetting, Role};
use crate::losses::{self, LossBreakdown, LossError, Term};
use crate::network::{self, ArchitectureSpec, NetworkError, NetworkParams, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {what}")]
    NonFinite { step: usize, what: String },
    #[error("parameter {index}: {reason}")]
    Gradient { index: usize, reason: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Classification loss only; no transfer term.
    Baseline,
    Dann,
    Mada,
    Mulann,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Dann => "dann",
            Method::Mada => "mada",
            Method::Mulann => "mulann",
        })
    }
}

impl FromStr for Method {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "dann" => Ok(Method::Dann),
            "mada" => Ok(Method::Mada),
            "mulann" => Ok(Method::Mulann),
            other => Err(TrainError::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// `base * (2 / (1 + exp(-10 t)) - 1)`
    ExpIncreasing,
    /// `base / (1 + 10 t)^0.75`
    ExpDecreasing,
}

impl FromStr for Schedule {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "exp-increasing" => Ok(Schedule::ExpIncreasing),
            "exp-decreasing" => Ok(Schedule::ExpDecreasing),
            other => Err(TrainError::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Value of a schedule at training progress `t` in `[0, 1]` (clamped).
pub fn schedule_value(kind: Schedule, base: f64, t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    match kind {
        Schedule::Constant => base,
        Schedule::ExpIncreasing => base * (2.0 / (1.0 + (-10.0 * t).exp()) - 1.0),
        Schedule::ExpDecreasing => base / (1.0 + 10.0 * t).powf(0.75),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub lr: f64,
    pub lr_schedule: Schedule,
    pub lambda: f64,
    pub lambda_schedule: Schedule,
    pub zeta: f64,
    /// Known-unknown fraction; only MuLANN uses it.
    pub p: f64,
    pub momentum: f64,
    /// Samples drawn from every domain at each step.
    pub batch_size: usize,
    /// Share of each sub-batch drawn from the domain's labeled pool. `None`
    /// draws from the whole training pool, so labeled samples appear in
    /// proportion to their count.
    pub labeled_share: Option<f64>,
    pub steps: usize,
    pub seed: u64,
    pub eval: EvalSetting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Mulann,
            lr: 0.01,
            lr_schedule: Schedule::ExpDecreasing,
            lambda: 0.1,
            lambda_schedule: Schedule::ExpIncreasing,
            zeta: 0.1,
            p: 0.5,
            momentum: 0.9,
            batch_size: 32,
            labeled_share: None,
            steps: 1000,
            seed: 0,
            eval: EvalSetting::Ft,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr={} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum={} outside [0, 1)", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p={} outside [0, 1]", self.p));
        }
        for (name, v) in [("lambda", self.lambda), ("zeta", self.zeta)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name}={v} must be finite and nonnegative"));
            }
        }
        if let Some(s) = self.labeled_share {
            if !(0.0..=1.0).contains(&s) {
                return bad(format!("labeled_share={s} outside [0, 1]"));
            }
        }
        if self.batch_size == 0 || self.steps == 0 {
            return bad("batch_size and steps must be positive".into());
        }
        Ok(())
    }

    /// Selection fraction actually used: zero for every method but MuLANN.
    pub fn effective_p(&self) -> f64 {
        if self.method == Method::Mulann {
            self.p
        } else {
            0.0
        }
    }
}

/// Domains whose training pool has unlabeled samples, in order.
pub fn unlabeled_domains(datasets: &[DomainDataset]) -> Vec<usize> {
    (0..datasets.len()).filter(|&i| datasets[i].roles.contains(&Role::Unlabeled)).collect()
}

/// Architecture for `method` on `datasets`: the MADA method gets one
/// discriminator per class, MuLANN one KUD head per domain with unlabeled
/// data.
pub fn architecture(
    variant: Variant,
    method: Method,
    datasets: &[DomainDataset],
) -> Result<ArchitectureSpec, TrainError> {
    let first = datasets.first().ok_or_else(|| TrainError::Config("no datasets".into()))?;
    if datasets.iter().any(|d| d.sample_shape != first.sample_shape || d.classes != first.classes) {
        return Err(TrainError::Config("datasets differ in sample shape or class count".into()));
    }
    Ok(ArchitectureSpec {
        variant,
        input_shape: first.sample_shape.clone(),
        classes: first.classes,
        domains: datasets.len(),
        unlabeled_domains: if method == Method::Mulann { unlabeled_domains(datasets).len() } else { 0 },
        mada: method == Method::Mada,
    })
}

/// One step of the metric trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// `kud` holds one entry per domain with unlabeled data, zero when no
    /// term was computed.
    pub breakdown: LossBreakdown,
    pub lambda: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub trace: Vec<StepRecord>,
    /// Sample indices drawn into any batch, per domain.
    pub seen: Vec<BTreeSet<usize>>,
}

/// Indices of one domain's sub-batch, drawn with replacement from its
/// labeled and unlabeled samples. Holdout samples are never drawn.
pub fn draw_batch(ds: &DomainDataset, size: usize, labeled_share: Option<f64>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let labeled = ds.indices(Role::Labeled);
    let unlabeled = ds.indices(Role::Unlabeled);
    let pick = |pool: &[usize], n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if pool.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    };
    match labeled_share {
        Some(share) if !labeled.is_empty() && !unlabeled.is_empty() => {
            let nl = ((size as f64 * share).round() as usize).min(size);
            let mut out = pick(&labeled, nl, rng);
            out.extend(pick(&unlabeled, size - nl, rng));
            out
        }
        _ => {
            let pool: Vec<usize> = labeled.iter().chain(&unlabeled).copied().collect();
            pick(&pool, size, rng)
        }
    }
}

fn rows_tensor(ds: &DomainDataset, idx: &[usize]) -> Result<Tensor, AutodiffError> {
    let mut values = Vec::with_capacity(idx.len() * ds.sample_len());
    for &i in idx {
        values.extend_from_slice(ds.sample(i));
    }
    Tensor::new(vec![idx.len(), ds.sample_len()], values)
}

struct StepTerms {
    lc: Vec<Term>,
    ld: Vec<Term>,
    lu: Vec<Term>,
}

/// Builds every loss term of one step on `tape`.
fn step_terms(
    tape: &mut Tape,
    net: &network::BoundNetwork,
    cfg: &TrainConfig,
    datasets: &[DomainDataset],
    batches: &[Vec<usize>],
    kud_domains: &[usize],
    lambda: f64,
) -> Result<StepTerms, TrainError> {
    let n = datasets.len();
    let mut terms = StepTerms { lc: Vec::new(), ld: Vec::new(), lu: vec![Term::zero(); kud_domains.len()] };
    for (i, (ds, batch)) in datasets.iter().zip(batches).enumerate() {
        let input = tape.leaf(rows_tensor(ds, batch)?);
        let feats = net.features(tape, input)?;
        let logits = net.class_logits(tape, feats)?;
        let labeled_rows: Vec<usize> = (0..batch.len()).filter(|&r| ds.roles[batch[r]] == Role::Labeled).collect();
        let unlabeled_rows: Vec<usize> = (0..batch.len()).filter(|&r| ds.roles[batch[r]] == Role::Unlabeled).collect();

        terms.lc.push(if labeled_rows.is_empty() {
            Term::zero()
        } else {
            let sel = tape.gather_rows(logits, &labeled_rows)?;
            let labels: Vec<usize> = labeled_rows.iter().map(|&r| ds.labels[batch[r]]).collect();
            losses::classification_loss(tape, sel, &labels, None)?
        });

        terms.ld.push(match cfg.method {
            Method::Baseline => Term::zero(),
            Method::Dann | Method::Mulann => {
                let reversed = network::grl(tape, feats, lambda)?;
                let z = net.domain_logits(tape, 0, reversed)?;
                losses::domain_discrimination_loss(tape, z, i, n, None)?
            }
            Method::Mada => {
                let reversed = network::grl(tape, feats, lambda)?;
                let width = tape.value(logits).row_width();
                let probs = softmax_rows(tape.value(logits).values(), width);
                let probs = Tensor::new(vec![batch.len(), width], probs)?;
                let heads = (0..net.domain_heads())
                    .map(|k| net.domain_logits(tape, k, reversed))
                    .collect::<Result<Vec<Var>, _>>()?;
                losses::mada_domain_loss(tape, &probs, &heads, i, n)?
            }
        });

        let p = cfg.effective_p();
        let Some(j) = kud_domains.iter().position(|&d| d == i) else { continue };
        if p == 0.0 || unlabeled_rows.is_empty() || labeled_rows.is_empty() {
            continue;
        }
        let width = tape.value(logits).row_width();
        let mut probs = Vec::with_capacity(unlabeled_rows.len() * width);
        for &r in &unlabeled_rows {
            probs.extend(softmax_rows(tape.value(logits).row(r), width));
        }
        let probs = Tensor::new(vec![unlabeled_rows.len(), width], probs)?;
        let selection = losses::select_known_unknowns(i, &probs, &ds.domain_class_mask(), p)?;
        if selection.indices.is_empty() {
            continue;
        }
        let mut rows = labeled_rows.clone();
        rows.extend(selection.indices.iter().map(|&k| unlabeled_rows[k]));
        let sel = tape.gather_rows(feats, &rows)?;
        let z = net.kud_logits(tape, j, sel)?;
        terms.lu[j] = losses::kud_loss(tape, z, labeled_rows.len(), selection.indices.len())?;
    }
    Ok(terms)
}

/// One step's losses on a fresh tape.
pub struct StepLoss {
    pub tape: Tape,
    pub net: network::BoundNetwork,
    /// What backpropagation runs on; `None` when every term is empty.
    pub objective: Option<Var>,
    /// Reported components and total.
    pub breakdown: LossBreakdown,
}

/// Binds `params` and evaluates every loss term of `cfg.method` on the given
/// per-domain `batches` (indices into each dataset).
pub fn step_loss(
    params: &NetworkParams,
    cfg: &TrainConfig,
    datasets: &[DomainDataset],
    batches: &[Vec<usize>],
    lambda: f64,
) -> Result<StepLoss, TrainError> {
    if batches.len() != datasets.len() {
        return Err(TrainError::Config(format!("{} batches for {} domains", batches.len(), datasets.len())));
    }
    let kud_domains = if cfg.method == Method::Mulann { unlabeled_domains(datasets) } else { Vec::new() };
    let mut tape = Tape::new();
    let net = params.bind(&mut tape);
    let terms = step_terms(&mut tape, &net, cfg, datasets, batches, &kud_domains, lambda)?;
    let objective =
        losses::training_objective(&mut tape, &terms.lc, &terms.ld, &terms.lu, kud_domains.len(), cfg.zeta)?;
    let mut kud_values = vec![0.0; unlabeled_domains(datasets).len()];
    for (j, term) in terms.lu.iter().enumerate() {
        kud_values[j] = term.value(&tape);
    }
    let breakdown = losses::composite_loss(
        terms.lc.iter().map(|t| t.value(&tape)).collect(),
        terms.ld.iter().map(|t| t.value(&tape)).collect(),
        kud_values,
        lambda,
        cfg.zeta,
    )?;
    Ok(StepLoss { tape, net, objective, breakdown })
}

/// Trains `params` from scratch on `datasets` under `cfg`. Initialization
/// and batch sampling draw from separate streams of the seed.
pub fn train(cfg: &TrainConfig, variant: Variant, datasets: &[DomainDataset]) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if datasets.len() < 2 {
        return Err(TrainError::Config(format!("need at least 2 domains, got {}", datasets.len())));
    }
    for ds in datasets {
        ds.validate()?;
        if ds.indices(Role::Labeled).is_empty() && ds.indices(Role::Unlabeled).is_empty() {
            return Err(TrainError::Config(format!("domain {} has no training samples", ds.domain)));
        }
    }
    let spec = architecture(variant, cfg.method, datasets)?;
    let mut params = network::build(&spec, cfg.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = OptimizerState::new(&params);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut seen = vec![BTreeSet::new(); datasets.len()];

    for step in 0..cfg.steps {
        let t = step as f64 / cfg.steps as f64;
        let lr = schedule_value(cfg.lr_schedule, cfg.lr, t);
        let lambda = schedule_value(cfg.lambda_schedule, cfg.lambda, t);
        let batches: Vec<Vec<usize>> =
            datasets.iter().map(|ds| draw_batch(ds, cfg.batch_size, cfg.labeled_share, &mut rng)).collect();
        for (s, b) in seen.iter_mut().zip(&batches) {
            s.extend(b.iter().copied());
        }

        let StepLoss { mut tape, net, objective, breakdown } = step_loss(&params, cfg, datasets, &batches, lambda)?;
        if !breakdown.total.is_finite() {
            return Err(TrainError::NonFinite { step, what: format!("{breakdown:?}") });
        }
        trace.push(StepRecord { step, breakdown, lambda, lr });

        let Some(objective) = objective else { continue };
        tape.backward(objective)?;
        let grads: Vec<Option<Vec<f64>>> = net.vars().iter().map(|&v| Some(tape.grad_or_zeros(v))).collect();
        let mut slots = params.tensors_mut();
        sgd_momentum_step(&mut slots, &grads, &mut state, lr, cfg.momentum)?;
        if slots.iter().any(|t| !t.is_finite()) {
            return Err(TrainError::NonFinite { step, what: "parameters".into() });
        }
    }
    Ok(TrainOutcome { params, trace, seen })
}

/// Writes the trace as CSV: step, per-domain classification and domain
/// losses, per-unlabeled-domain KUD losses, total, lambda, lr.
pub fn write_trace_csv<W: Write>(trace: &[StepRecord], kud_domains: &[usize], mut out: W) -> Result<(), TrainError> {
    writeln!(out, "#schema=trace/1")?;
    let n = trace.first().map_or(0, |r| r.breakdown.classification.len());
    let mut header = vec!["step".to_string()];
    header.extend((0..n).map(|i| format!("lc_{i}")));
    header.extend((0..n).map(|i| format!("ld_{i}")));
    header.extend(kud_domains.iter().map(|i| format!("lu_{i}")));
    header.extend(["total".into(), "lambda".into(), "lr".into()]);
    writeln!(out, "{}", header.join(","))?;
    for r in trace {
        let b = &r.breakdown;
        let mut row = vec![r.step.to_string()];
        row.extend(b.classification.iter().chain(&b.domain).chain(&b.kud).map(|v| v.to_string()));
        row.extend([b.total.to_string(), r.lambda.to_string(), r.lr.to_string()]);
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
