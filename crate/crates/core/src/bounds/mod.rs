//! Exact divergences and generalization bounds on discrete instances, by
//! enumeration over axis-threshold hypothesis classes, plus a learned proxy
//! divergence for feature sets.

mod checks;
mod fuzz;
mod proxy;

pub use checks::{
    b_alpha, check_cor3, check_cor4, check_instance, check_prop1, check_prop2, check_theorem1, empirical_minimizer,
    pairwise_terms, BoundId, BoundReport, InstanceCheck, PairwiseTerms, TheoremReport,
};
pub use fuzz::{fuzz_instance, FuzzSpec};
pub use proxy::{proxy_divergence, ProxyConfig, ProxyEstimate, MIN_PROXY_SAMPLES};

use thiserror::Error;

/// Slack allowed when comparing exact bound sides.
pub const BOUND_TOLERANCE: f64 = 1e-12;
const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error("confidence delta={0} outside (0, 1)")]
    Delta(f64),
    #[error("{bound} needs exactly 2 domains, got {got}")]
    TwoDomains { bound: &'static str, got: usize },
    #[error("hypothesis {0} out of range")]
    Hypothesis(usize),
    #[error("proxy divergence needs at least {need} samples per side, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("proxy divergence: {0}")]
    Proxy(String),
}

/// `h(x) = [x[axis] > threshold]`, flipped when `negated`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    pub axis: usize,
    pub threshold: f64,
    pub negated: bool,
}

impl Hypothesis {
    pub fn predict(&self, x: &[f64]) -> bool {
        (x[self.axis] > self.threshold) != self.negated
    }

    pub fn complement(&self) -> Hypothesis {
        Hypothesis { negated: !self.negated, ..*self }
    }
}

/// Axis thresholds with their complements. Enumeration order interleaves
/// each threshold with its complement: `[t0, !t0, t1, !t1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisClass {
    pub thresholds: Vec<(usize, f64)>,
}

impl HypothesisClass {
    /// Thresholds at the midpoints between consecutive distinct coordinates
    /// of `points`, plus one below the minimum (a constant hypothesis), on
    /// each axis.
    pub fn adaptive(points: &[&[f64]], dims: usize) -> HypothesisClass {
        let mut thresholds = Vec::new();
        for axis in 0..dims {
            let mut coords: Vec<f64> = points.iter().map(|p| p[axis]).collect();
            coords.sort_by(f64::total_cmp);
            coords.dedup();
            if let Some(&lo) = coords.first() {
                thresholds.push((axis, lo - 1.0));
            }
            thresholds.extend(coords.windows(2).map(|w| (axis, 0.5 * (w[0] + w[1]))));
        }
        HypothesisClass { thresholds }
    }

    pub fn len(&self) -> usize {
        2 * self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn get(&self, k: usize) -> Hypothesis {
        let (axis, threshold) = self.thresholds[k / 2];
        Hypothesis { axis, threshold, negated: k % 2 == 1 }
    }

    pub fn iter(&self) -> impl Iterator<Item = Hypothesis> + '_ {
        (0..self.len()).map(|k| self.get(k))
    }
}

/// A finitely supported distribution over `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub weights: Vec<f64>,
}

impl DiscreteDistribution {
    /// Mass of `{x : pred(x)}` under the marginal.
    pub fn mass(&self, mut pred: impl FnMut(&[f64]) -> bool) -> f64 {
        self.points.iter().zip(&self.weights).filter(|(x, _)| pred(x)).map(|(_, w)| w).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    pub dims: usize,
    pub domains: Vec<DiscreteDistribution>,
    pub class: HypothesisClass,
    /// Total sample size.
    pub m: usize,
    /// Sample proportions per domain.
    pub gamma: Vec<f64>,
    /// Mixture weights of the empirical objective.
    pub alpha: Vec<f64>,
    pub delta: f64,
    pub vc_dim: usize,
}

fn simplex(name: &str, v: &[f64], n: usize) -> Result<(), BoundsError> {
    if v.len() != n
        || v.iter().any(|x| !(x.is_finite() && *x >= 0.0))
        || (v.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOLERANCE
    {
        return Err(BoundsError::Instance(format!("{name} is not on the {n}-simplex: {v:?}")));
    }
    Ok(())
}

impl DiscreteInstance {
    pub fn n(&self) -> usize {
        self.domains.len()
    }

    pub fn validate(&self) -> Result<(), BoundsError> {
        let bad = |m: String| Err(BoundsError::Instance(m));
        if self.domains.is_empty() || self.class.is_empty() {
            return bad("need at least one domain and one hypothesis".into());
        }
        for (i, d) in self.domains.iter().enumerate() {
            if d.points.is_empty() || d.points.len() != d.labels.len() || d.points.len() != d.weights.len() {
                return bad(format!("domain {i}: inconsistent or empty support"));
            }
            if d.points.iter().any(|p| p.len() != self.dims) {
                return bad(format!("domain {i}: point of wrong dimension"));
            }
            simplex(&format!("domain {i} weights"), &d.weights, d.points.len())?;
        }
        if self.class.thresholds.iter().any(|&(a, t)| a >= self.dims || !t.is_finite()) {
            return bad("threshold axis out of range".into());
        }
        simplex("alpha", &self.alpha, self.n())?;
        simplex("gamma", &self.gamma, self.n())?;
        if self.m == 0 {
            return bad("sample size m must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(BoundsError::Delta(self.delta));
        }
        Ok(())
    }

    /// Per-domain sample counts: `gamma_i m` rounded by largest remainder,
    /// so they sum to `m`.
    pub fn sample_counts(&self) -> Vec<usize> {
        let raw: Vec<f64> = self.gamma.iter().map(|g| g * self.m as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
        let short = self.m - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        counts
    }
}

/// VC dimension of axis thresholds with complements in `dims` dimensions.
pub fn vc_dimension(dims: usize) -> Option<usize> {
    match dims {
        1 => Some(2),
        2 => Some(3),
        _ => None,
    }
}

/// `P_D(h(x) != y)`.
pub fn exact_risk(h: &Hypothesis, d: &DiscreteDistribution) -> f64 {
    d.points.iter().zip(&d.labels).zip(&d.weights).filter(|((x, &y), _)| h.predict(x) != y).map(|(_, w)| w).sum()
}

/// `P_D(h(x) != g(x))` under the marginal.
pub fn disagreement(h: &Hypothesis, g: &Hypothesis, d: &DiscreteDistribution) -> f64 {
    d.mass(|x| h.predict(x) != g.predict(x))
}

/// `2 max_h |P_a(h = 1) - P_b(h = 1)|`.
pub fn exact_h_divergence(a: &DiscreteDistribution, b: &DiscreteDistribution, class: &HypothesisClass) -> f64 {
    let gap = class.iter().map(|h| (a.mass(|x| h.predict(x)) - b.mass(|x| h.predict(x))).abs()).fold(0.0, f64::max);
    2.0 * gap
}

/// `2 max_{h, h'} |P_a(h != h') - P_b(h != h')|`. Only uncomplemented pairs
/// are scanned: complementing one side of a pair maps the disagreement mass
/// `q` to `1 - q` on both distributions, and complementing both leaves it
/// unchanged, so the gap is the same.
pub fn exact_hdh_divergence(a: &DiscreteDistribution, b: &DiscreteDistribution, class: &HypothesisClass) -> f64 {
    let base: Vec<Hypothesis> = (0..class.thresholds.len()).map(|k| class.get(2 * k)).collect();
    let mut gap: f64 = 0.0;
    for (s, h) in base.iter().enumerate() {
        for g in &base[s + 1..] {
            gap = gap.max((disagreement(h, g, a) - disagreement(h, g, b)).abs());
        }
    }
    // Pairs (h, !h) disagree everywhere: gap 0.
    2.0 * gap
}

#[cfg(test)]
mod tests;
