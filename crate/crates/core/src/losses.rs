//! Loss terms of the multi-domain objective and known-unknown selection.
//!
//! Tape-side functions return a [`Term`]: `None` marks a contribution that is
//! defined as zero (empty labeled part, empty selection) and records nothing.

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use std::cmp::Ordering;
use thiserror::Error;

/// Restricted entropies of samples whose masked probability mass falls
/// below this are defined as 0.
pub const MASS_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("label {label} outside the domain's class mask")]
    LabelOutsideMask { label: usize },
    #[error("class mask selects no class")]
    EmptyMask,
    #[error("mask has {mask} entries but probabilities have {classes} columns")]
    MaskWidth { mask: usize, classes: usize },
    #[error("fraction p={0} outside [0, 1]")]
    Fraction(f64),
    #[error("hyperparameter {name}={value} must be finite and nonnegative")]
    Hyperparameter { name: &'static str, value: f64 },
    #[error("domain {domain} out of range for {domains} domains")]
    Domain { domain: usize, domains: usize },
    #[error("{what} lengths differ: {left} vs {right}")]
    Length { what: &'static str, left: usize, right: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// A scalar loss on the tape, or `None` when the term is defined as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub var: Option<Var>,
    /// Set when the term was computed (or skipped) on a degenerate input.
    pub degenerate: bool,
}

impl Term {
    pub fn zero() -> Self {
        Term { var: None, degenerate: true }
    }

    pub fn value(&self, tape: &Tape) -> f64 {
        self.var.and_then(|v| tape.value(v).item()).unwrap_or(0.0)
    }
}

/// Mean cross-entropy of `logits` (`[m, L]`) rows against `labels`.
/// Labels must lie in `mask` when one is given. An empty labeled set yields a
/// degenerate zero term.
pub fn classification_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    mask: Option<&[bool]>,
) -> Result<Term, LossError> {
    if let Some(mask) = mask {
        if let Some(&label) = labels.iter().find(|&&l| !mask.get(l).copied().unwrap_or(false)) {
            return Err(LossError::LabelOutsideMask { label });
        }
    }
    if labels.is_empty() {
        return Ok(Term::zero());
    }
    let var = tape.cross_entropy(logits, labels, None)?;
    Ok(Term { var: Some(var), degenerate: false })
}

/// Mean cross-entropy of classifying every row of `logits` as `domain`.
/// With two domains the head has one output and a sigmoid (target = domain
/// index), otherwise a softmax over `domains` outputs. `weights` scales each
/// row's loss (MADA); the mean still divides by the row count.
pub fn domain_discrimination_loss(
    tape: &mut Tape,
    logits: Var,
    domain: usize,
    domains: usize,
    weights: Option<&[f64]>,
) -> Result<Term, LossError> {
    if domain >= domains {
        return Err(LossError::Domain { domain, domains });
    }
    let rows = tape.value(logits).rows();
    if rows == 0 {
        return Ok(Term::zero());
    }
    let var = if domains == 2 {
        tape.binary_cross_entropy(logits, &vec![domain as f64; rows], weights)?
    } else {
        tape.cross_entropy(logits, &vec![domain; rows], weights)?
    };
    Ok(Term { var: Some(var), degenerate: false })
}

/// True when every sample of a batch comes from one domain, which leaves the
/// adversarial signal without a contrast.
pub fn single_domain(domain_ids: &[usize]) -> bool {
    domain_ids.windows(2).all(|w| w[0] == w[1])
}

/// Per-class discriminator losses for one domain, weighted by the class
/// posteriors `class_probs` (`[m, L]`, treated as constants), summed over
/// classes. With one class this is exactly [`domain_discrimination_loss`].
pub fn mada_domain_loss(
    tape: &mut Tape,
    class_probs: &Tensor,
    per_class_logits: &[Var],
    domain: usize,
    domains: usize,
) -> Result<Term, LossError> {
    let classes = class_probs.row_width();
    if per_class_logits.len() != classes {
        return Err(LossError::Length {
            what: "discriminators and classes",
            left: per_class_logits.len(),
            right: classes,
        });
    }
    let mut terms = Vec::with_capacity(classes);
    let mut degenerate = false;
    for (k, &logits) in per_class_logits.iter().enumerate() {
        let w: Vec<f64> = (0..class_probs.rows()).map(|s| class_probs.row(s)[k]).collect();
        let t = domain_discrimination_loss(tape, logits, domain, domains, Some(&w))?;
        degenerate |= t.degenerate;
        terms.extend(t.var);
    }
    Ok(Term { var: tape.sum_scalars(&terms)?, degenerate })
}

/// Shannon entropy (natural log) of `probs` renormalized over `mask`.
/// Returns `(entropy, degenerate)`; degenerate rows have masked mass below
/// [`MASS_FLOOR`] and entropy 0.
pub fn restricted_entropy(probs: &[f64], mask: &[bool]) -> Result<(f64, bool), LossError> {
    if mask.len() != probs.len() {
        return Err(LossError::MaskWidth { mask: mask.len(), classes: probs.len() });
    }
    if !mask.iter().any(|&m| m) {
        return Err(LossError::EmptyMask);
    }
    let mass: f64 = probs.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| p).sum();
    if mass < MASS_FLOOR {
        return Ok((0.0, true));
    }
    let h = probs
        .iter()
        .zip(mask)
        .filter(|&(&p, &m)| m && p > 0.0)
        .map(|(&p, _)| {
            let q = p / mass;
            -q * q.ln()
        })
        .sum::<f64>();
    Ok((h.max(0.0), false))
}

/// Number of samples selected from `m` at fraction `p`: `ceil(p * m)`.
/// The small slack keeps products such as `0.3 * 10` from rounding up to 4.
pub fn selection_count(p: f64, m: usize) -> usize {
    ((p * m as f64 - 1e-9).ceil().max(0.0) as usize).min(m)
}

/// Indices of the `ceil(p * m)` largest entropies, highest first; ties go to
/// the lower index.
pub fn top_entropy(entropies: &[f64], p: f64) -> Result<Vec<usize>, LossError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(LossError::Fraction(p));
    }
    let mut order: Vec<usize> = (0..entropies.len()).collect();
    order.sort_by(|&a, &b| match entropies[b].total_cmp(&entropies[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order.truncate(selection_count(p, entropies.len()));
    Ok(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KudSelection {
    pub domain: usize,
    pub p: f64,
    /// Rows of the unlabeled batch, highest entropy first.
    pub indices: Vec<usize>,
    /// Entropies of the selected rows, aligned with `indices`.
    pub entropies: Vec<f64>,
}

/// Ranks the unlabeled rows of `class_probs` by entropy restricted to `mask`
/// and keeps the top fraction `p`.
pub fn select_known_unknowns(
    domain: usize,
    class_probs: &Tensor,
    mask: &[bool],
    p: f64,
) -> Result<KudSelection, LossError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(LossError::Fraction(p));
    }
    let m = if class_probs.numel() == 0 { 0 } else { class_probs.rows() };
    let all = (0..m)
        .map(|s| restricted_entropy(class_probs.row(s), mask).map(|(h, _)| h))
        .collect::<Result<Vec<f64>, _>>()?;
    let indices = top_entropy(&all, p)?;
    let entropies = indices.iter().map(|&i| all[i]).collect();
    Ok(KudSelection { domain, p, indices, entropies })
}

/// Binary cross-entropy of a KUD head separating the domain's labeled rows
/// (target 1) from its selected unlabeled rows (target 0), averaged over both
/// groups. `logits` holds the head output on labeled rows followed by the
/// selected unlabeled rows. Zero when either group is empty.
pub fn kud_loss(tape: &mut Tape, logits: Var, labeled: usize, selected: usize) -> Result<Term, LossError> {
    let rows = tape.value(logits).rows();
    if rows != labeled + selected {
        return Err(LossError::Length { what: "kud logits and groups", left: rows, right: labeled + selected });
    }
    if labeled == 0 || selected == 0 {
        return Ok(Term::zero());
    }
    let mut targets = vec![1.0; labeled];
    targets.resize(labeled + selected, 0.0);
    let var = tape.binary_cross_entropy(logits, &targets, None)?;
    Ok(Term { var: Some(var), degenerate: false })
}

/// Component values of the objective and their assembled total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub classification: Vec<f64>,
    pub domain: Vec<f64>,
    pub kud: Vec<f64>,
    pub lambda: f64,
    pub zeta: f64,
    pub total: f64,
}

fn check_hyper(name: &'static str, value: f64) -> Result<(), LossError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(LossError::Hyperparameter { name, value })
    }
}

/// `(1/n) sum_i (Lc_i - lambda Ld_i) + (zeta/n') sum_j Lu_j`, with the KUD
/// term zero when `n' = 0`.
pub fn composite_loss(
    classification: Vec<f64>,
    domain: Vec<f64>,
    kud: Vec<f64>,
    lambda: f64,
    zeta: f64,
) -> Result<LossBreakdown, LossError> {
    check_hyper("lambda", lambda)?;
    check_hyper("zeta", zeta)?;
    if classification.len() != domain.len() {
        return Err(LossError::Length {
            what: "classification and domain terms",
            left: classification.len(),
            right: domain.len(),
        });
    }
    let total = assemble(&classification, &domain, &kud, lambda, zeta);
    Ok(LossBreakdown { classification, domain, kud, lambda, zeta, total })
}

fn assemble(lc: &[f64], ld: &[f64], lu: &[f64], lambda: f64, zeta: f64) -> f64 {
    let n = lc.len().max(1) as f64;
    let adversarial: f64 = lc.iter().zip(ld).map(|(c, d)| c - lambda * d).sum();
    let kud = if lu.is_empty() { 0.0 } else { zeta / lu.len() as f64 * lu.iter().sum::<f64>() };
    adversarial / n + kud
}

impl LossBreakdown {
    /// Recomputes the total from the stored components.
    pub fn recompute(&self) -> f64 {
        assemble(&self.classification, &self.domain, &self.kud, self.lambda, self.zeta)
    }
}

/// The scalar actually differentiated during training:
/// `(1/n) sum_i (Lc_i + Ld_i) + (zeta/n') sum_j Lu_j`.
///
/// The domain terms enter with a plus sign because their discriminators are
/// fed through the reversal layer: the discriminators descend on `Ld` while
/// the extractor receives `-lambda` times that gradient, so every parameter
/// follows the gradient of the reported objective except the discriminators,
/// which follow the opposite of it scaled by `1/lambda`.
/// `kud` lists only the nonzero KUD terms; `kud_domains` is `n'`.
pub fn training_objective(
    tape: &mut Tape,
    classification: &[Term],
    domain: &[Term],
    kud: &[Term],
    kud_domains: usize,
    zeta: f64,
) -> Result<Option<Var>, LossError> {
    check_hyper("zeta", zeta)?;
    let n = classification.len().max(1) as f64;
    let mut parts = Vec::new();
    for (c, d) in classification.iter().zip(domain) {
        parts.extend(c.var);
        parts.extend(d.var);
    }
    let mut total = match tape.sum_scalars(&parts)? {
        Some(s) => Some(tape.scale(s, 1.0 / n)?),
        None => None,
    };
    let kud_vars: Vec<Var> = kud.iter().filter_map(|t| t.var).collect();
    if let (Some(sum), true) = (tape.sum_scalars(&kud_vars)?, kud_domains > 0) {
        let scaled = tape.scale(sum, zeta / kud_domains as f64)?;
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    Ok(total)
}
