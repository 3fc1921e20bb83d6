use super::BoundsError;
use crate::autodiff::{Tape, Tensor};
use crate::network::{ArchitectureSpec, Mlp, Variant};
use crate::trainer::{argmax, sgd_momentum_step, OptimizerState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MIN_PROXY_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyConfig {
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Share of the training half kept aside for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            max_epochs: 100,
            patience: 10,
            batch_size: 32,
            lr: 0.02,
            momentum: 0.9,
            validation_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyEstimate {
    /// `clamp(2 (1 - 2 err), 0, 2)` on the held-out half.
    pub divergence: f64,
    pub test_error: f64,
    pub validation_error: f64,
    pub epochs: usize,
}

struct Split {
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Split {
    fn tensor(&self, idx: &[usize]) -> Result<Tensor, BoundsError> {
        let width = self.rows.first().map_or(0, Vec::len);
        let values = idx.iter().flat_map(|&i| self.rows[i].iter().copied()).collect();
        Tensor::new(vec![idx.len(), width], values).map_err(proxy_err)
    }

    fn error(&self, head: &Mlp) -> Result<f64, BoundsError> {
        let all: Vec<usize> = (0..self.rows.len()).collect();
        let mut tape = Tape::new();
        let net = head.bind(&mut tape, false);
        let input = tape.leaf(self.tensor(&all)?);
        let logits = net.forward(&mut tape, input).map_err(proxy_err)?;
        let logits = tape.value(logits);
        let wrong = (0..logits.rows()).filter(|&r| argmax(logits.row(r)) != self.labels[r]).count();
        Ok(wrong as f64 / self.rows.len() as f64)
    }
}

fn proxy_err(e: impl std::fmt::Display) -> BoundsError {
    BoundsError::Proxy(e.to_string())
}

/// Estimates how separable two feature sets are: a domain classifier is fit
/// on half of each set, early-stopped on a validation slice, and scored on
/// the other half. The classifier has the shape of a synthetic-network
/// domain head. Inputs are standardized with training statistics.
pub fn proxy_divergence(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &ProxyConfig) -> Result<ProxyEstimate, BoundsError> {
    let got = a.len().min(b.len());
    if got < MIN_PROXY_SAMPLES {
        return Err(BoundsError::TooFewSamples { need: MIN_PROXY_SAMPLES, got });
    }
    let width = a[0].len();
    if width == 0 || a.iter().chain(b).any(|r| r.len() != width || r.iter().any(|v| !v.is_finite())) {
        return Err(BoundsError::Proxy("rows must share a positive width and be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train, mut val, mut test) = (
        Split { rows: vec![], labels: vec![] },
        Split { rows: vec![], labels: vec![] },
        Split { rows: vec![], labels: vec![] },
    );
    for (label, side) in [a, b].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..side.len()).collect();
        idx.shuffle(&mut rng);
        let half = side.len() / 2;
        let n_val = ((half as f64 * cfg.validation_fraction).round() as usize).clamp(1, half - 1);
        for (k, &i) in idx.iter().enumerate() {
            let dest = if k < half - n_val {
                &mut train
            } else if k < half {
                &mut val
            } else {
                &mut test
            };
            dest.rows.push(side[i].clone());
            dest.labels.push(label);
        }
    }

    let n = train.rows.len() as f64;
    let mean: Vec<f64> = (0..width).map(|c| train.rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..width)
        .map(|c| {
            let v = train.rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            if v.sqrt() > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for split in [&mut train, &mut val, &mut test] {
        for r in &mut split.rows {
            for c in 0..width {
                r[c] = (r[c] - mean[c]) / sd[c];
            }
        }
    }

    let hidden = ArchitectureSpec {
        variant: Variant::MlpSynthetic,
        input_shape: vec![width],
        classes: 2,
        domains: 2,
        unlabeled_domains: 0,
        mada: false,
    }
    .head_width();
    let mut head = Mlp::new(&[width, hidden, 2], cfg.seed);
    let shapes: Vec<usize> = head.tensors_mut().iter().map(|t| t.numel()).collect();
    let mut state = OptimizerState::for_shapes(&shapes);
    let mut best = (val.error(&head)?, head.clone());
    let mut since_best = 0;
    let mut epochs = 0;
    let mut order: Vec<usize> = (0..train.rows.len()).collect();
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let net = head.bind(&mut tape, true);
            let input = tape.leaf(train.tensor(chunk)?);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let logits = net.forward(&mut tape, input).map_err(proxy_err)?;
            let loss = tape.cross_entropy(logits, &labels, None).map_err(proxy_err)?;
            tape.backward(loss).map_err(proxy_err)?;
            let grads: Vec<Option<Vec<f64>>> = net.vars().iter().map(|&v| Some(tape.grad_or_zeros(v))).collect();
            sgd_momentum_step(&mut head.tensors_mut(), &grads, &mut state, cfg.lr, cfg.momentum).map_err(proxy_err)?;
        }
        let err = val.error(&head)?;
        if err < best.0 {
            best = (err, head.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let test_error = test.error(&best.1)?;
    Ok(ProxyEstimate {
        divergence: (2.0 * (1.0 - 2.0 * test_error)).clamp(0.0, 2.0),
        test_error,
        validation_error: best.0,
        epochs,
    })
}
