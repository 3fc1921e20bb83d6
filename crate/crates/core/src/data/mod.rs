//! Multi-domain datasets: synthetic generators, semi-supervised splits,
//! class-asymmetry cases and digit ingestion.

mod asymmetry;
mod idx;
mod text;

pub use asymmetry::{build_asymmetry_case, subsample_to_p_star, AsymmetryCase, AsymmetryData, ClassRoles};
pub use idx::{colorize_digits, gray_to_rgb, load_idx, parse_idx_images, parse_idx_labels, synth_glyphs};
pub use text::{read_datasets, write_datasets};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("class {class} in domain {domain} has {available} samples, {requested} requested")]
    Insufficient { domain: usize, class: usize, available: usize, requested: usize },
    #[error("{what} at byte {offset}: {reason}")]
    Format { what: String, offset: usize, reason: String },
    #[error("domain {0} has no held-out evaluation pool")]
    NoHoldout(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How a sample takes part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Labeled,
    /// Seen during training without its label.
    Unlabeled,
    /// Never seen during training; evaluation only.
    Holdout,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Labeled => "labeled",
            Role::Unlabeled => "unlabeled",
            Role::Holdout => "holdout",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "labeled" => Some(Role::Labeled),
            "unlabeled" => Some(Role::Unlabeled),
            "holdout" => Some(Role::Holdout),
            _ => None,
        }
    }
}

/// Evaluation regime: fully transductive (evaluate on the training unlabeled
/// pool) or not (evaluate on a disjoint held-out pool).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSetting {
    Ft,
    Nft,
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSetting::Ft => "ft",
            EvalSetting::Nft => "nft",
        })
    }
}

/// One domain's samples. Labels are always stored; `roles` decides which
/// ones training may use.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain: usize,
    /// Size of the global label space.
    pub classes: usize,
    /// Per-sample shape, e.g. `[2]` or `[3, 28, 28]`.
    pub sample_shape: Vec<usize>,
    /// Row-major samples.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub roles: Vec<Role>,
    /// Generator parameters and seed, or source file digest.
    pub provenance: String,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.sample_len();
        &self.inputs[i * w..(i + 1) * w]
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == role).collect()
    }

    pub fn labeled_mask(&self) -> Vec<bool> {
        self.roles.iter().map(|&r| r == Role::Labeled).collect()
    }

    fn classes_with(&self, role: Role) -> BTreeSet<usize> {
        self.labels.iter().zip(&self.roles).filter(|(_, &r)| r == role).map(|(&c, _)| c).collect()
    }

    pub fn labeled_classes(&self) -> BTreeSet<usize> {
        self.classes_with(Role::Labeled)
    }

    pub fn unlabeled_classes(&self) -> BTreeSet<usize> {
        self.classes_with(Role::Unlabeled)
    }

    /// Classes with labeled or unlabeled samples, as a mask over all classes.
    pub fn domain_class_mask(&self) -> Vec<bool> {
        let present: BTreeSet<usize> = self.labeled_classes().union(&self.unlabeled_classes()).copied().collect();
        (0..self.classes).map(|c| present.contains(&c)).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    /// Fraction of unlabeled samples whose class has no labeled sample in this
    /// domain, or `None` without unlabeled samples.
    pub fn p_star(&self) -> Option<f64> {
        let labeled = self.labeled_classes();
        let unl = self.indices(Role::Unlabeled);
        if unl.is_empty() {
            return None;
        }
        let extra = unl.iter().filter(|&&i| !labeled.contains(&self.labels[i])).count();
        Some(extra as f64 / unl.len() as f64)
    }

    /// Samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> DomainDataset {
        let mut inputs = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            inputs.extend_from_slice(self.sample(i));
        }
        DomainDataset {
            domain: self.domain,
            classes: self.classes,
            sample_shape: self.sample_shape.clone(),
            inputs,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            roles: idx.iter().map(|&i| self.roles[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.len();
        if self.roles.len() != n || self.inputs.len() != n * self.sample_len() {
            return Err(DataError::Invalid(format!("domain {}: inconsistent column lengths", self.domain)));
        }
        if let Some(&c) = self.labels.iter().find(|&&c| c >= self.classes) {
            return Err(DataError::Invalid(format!("domain {}: label {c} >= {} classes", self.domain, self.classes)));
        }
        if self.inputs.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("domain {}: non-finite input", self.domain)));
        }
        Ok(())
    }

    /// Sample indices to evaluate on under `setting`. Domains with unlabeled
    /// data use that pool (FT) or their holdout (NFT); other domains always
    /// use their holdout.
    pub fn evaluation_pool(&self, setting: EvalSetting) -> Result<Vec<usize>, DataError> {
        let unlabeled = self.indices(Role::Unlabeled);
        let holdout = self.indices(Role::Holdout);
        if unlabeled.is_empty() {
            return Ok(holdout);
        }
        match setting {
            EvalSetting::Ft => Ok(unlabeled),
            EvalSetting::Nft if holdout.is_empty() => Err(DataError::NoHoldout(self.domain)),
            EvalSetting::Nft => Ok(holdout),
        }
    }
}

/// Parameters of the 2-D Gaussian cluster generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub domains: usize,
    pub classes: usize,
    /// Class means sit on a circle of this radius.
    pub radius: f64,
    /// Isotropic standard deviation of each cluster.
    pub scale: f64,
    /// Translation along x applied per domain index.
    pub shift: f64,
    /// Rotation (radians) applied per domain index.
    pub rotation: f64,
    pub per_class: usize,
    /// Extra input dimensions carrying no class information.
    pub nuisance_dims: usize,
    /// Mean of every nuisance coordinate, per domain index.
    pub offset: f64,
}

impl SynthSpec {
    /// Mean of `class` in `domain`.
    pub fn mean(&self, domain: usize, class: usize) -> [f64; 2] {
        let a = 2.0 * std::f64::consts::PI * class as f64 / self.classes as f64;
        let (x, y) = (self.radius * a.cos(), self.radius * a.sin());
        let r = self.rotation * domain as f64;
        let (s, c) = r.sin_cos();
        [c * x - s * y + self.shift * domain as f64, s * x + c * y]
    }
}

/// Gaussian class clusters in the plane; domain `i` is the base layout
/// rotated by `i * rotation` and translated by `i * shift`. Nuisance
/// coordinates follow the cluster noise around `i * offset`. Samples are
/// grouped by class and all marked labeled.
pub fn synth_domains(spec: &SynthSpec, seed: u64) -> Result<Vec<DomainDataset>, DataError> {
    if spec.classes < 2 || spec.domains == 0 {
        return Err(DataError::Invalid(format!(
            "need >= 2 classes and >= 1 domain, got {} and {}",
            spec.classes, spec.domains
        )));
    }
    if spec.per_class == 0 {
        return Err(DataError::Invalid("per_class must be positive".into()));
    }
    if ![spec.radius, spec.shift, spec.rotation, spec.offset].iter().all(|v| v.is_finite())
        || spec.scale.is_nan()
        || spec.scale <= 0.0
    {
        return Err(DataError::Invalid("radius, shift, rotation, offset must be finite and scale positive".into()));
    }
    let noise = Normal::new(0.0, spec.scale).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let provenance = format!(
        "synth domains={} classes={} radius={} scale={} shift={} rotation={} per_class={} nuisance_dims={} offset={} seed={seed}",
        spec.domains, spec.classes, spec.radius, spec.scale, spec.shift, spec.rotation, spec.per_class, spec.nuisance_dims, spec.offset
    );
    let width = 2 + spec.nuisance_dims;
    let mut out = Vec::with_capacity(spec.domains);
    for d in 0..spec.domains {
        let n = spec.classes * spec.per_class;
        let mut inputs = Vec::with_capacity(width * n);
        let mut labels = Vec::with_capacity(n);
        for c in 0..spec.classes {
            let [mx, my] = spec.mean(d, c);
            for _ in 0..spec.per_class {
                inputs.push(mx + noise.sample(&mut rng));
                inputs.push(my + noise.sample(&mut rng));
                for _ in 0..spec.nuisance_dims {
                    inputs.push(spec.offset * d as f64 + noise.sample(&mut rng));
                }
                labels.push(c);
            }
        }
        out.push(DomainDataset {
            domain: d,
            classes: spec.classes,
            sample_shape: vec![width],
            inputs,
            labels,
            roles: vec![Role::Labeled; n],
            provenance: provenance.clone(),
        });
    }
    Ok(out)
}

/// Semi-supervised split parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    /// Fraction of classes labeled in every domain but the first.
    pub labeled_class_fraction: f64,
    /// Labeled samples per labeled class in those domains.
    pub labeled_per_class: usize,
    /// Per-class fraction of the first domain held out for testing.
    pub test_fraction: f64,
    /// Fraction of each unlabeled pool held out as the NFT evaluation pool.
    pub nft_fraction: f64,
}

fn check_fraction(name: &str, v: f64) -> Result<(), DataError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(DataError::Invalid(format!("{name}={v} outside [0, 1]")))
    }
}

pub(crate) fn by_class(ds: &DomainDataset) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); ds.classes];
    for (i, &c) in ds.labels.iter().enumerate() {
        groups[c].push(i);
    }
    groups
}

/// Rounded share of `n`, at least 0 and at most `n`.
pub(crate) fn share(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

/// The first `holdout` samples of `idx` become `Holdout`, the rest get `rest`.
pub(crate) fn assign(roles: &mut [Role], idx: &[usize], holdout: usize, rest: Role) {
    for (k, &i) in idx.iter().enumerate() {
        roles[i] = if k < holdout { Role::Holdout } else { rest };
    }
}

/// The first domain stays fully labeled apart from a per-class test holdout.
/// Every other domain gets `labeled_per_class` labeled samples on a seeded
/// choice of classes; the rest of its samples are unlabeled, with an
/// `nft_fraction` share of that pool held out.
pub fn semi_supervised_split(
    datasets: &[DomainDataset],
    spec: &SplitSpec,
    seed: u64,
) -> Result<Vec<DomainDataset>, DataError> {
    check_fraction("labeled_class_fraction", spec.labeled_class_fraction)?;
    check_fraction("test_fraction", spec.test_fraction)?;
    check_fraction("nft_fraction", spec.nft_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(datasets.len());
    for (pos, ds) in datasets.iter().enumerate() {
        ds.validate()?;
        let mut ds = ds.clone();
        let groups = by_class(&ds);
        if pos == 0 {
            for (c, idx) in groups.iter().enumerate() {
                let mut idx = idx.clone();
                idx.shuffle(&mut rng);
                let holdout = share(idx.len(), spec.test_fraction);
                if !idx.is_empty() && holdout == idx.len() {
                    return Err(DataError::Insufficient {
                        domain: ds.domain,
                        class: c,
                        available: idx.len(),
                        requested: holdout + 1,
                    });
                }
                assign(&mut ds.roles, &idx, holdout, Role::Labeled);
            }
        } else {
            let present: Vec<usize> = (0..ds.classes).filter(|&c| !groups[c].is_empty()).collect();
            let k = crate::losses::selection_count(spec.labeled_class_fraction, present.len());
            let mut chosen = present.clone();
            chosen.shuffle(&mut rng);
            chosen.truncate(k);
            for &c in &present {
                let mut idx = groups[c].clone();
                idx.shuffle(&mut rng);
                let labeled = if chosen.contains(&c) { spec.labeled_per_class } else { 0 };
                if labeled > idx.len() {
                    return Err(DataError::Insufficient {
                        domain: ds.domain,
                        class: c,
                        available: idx.len(),
                        requested: labeled,
                    });
                }
                for &i in &idx[..labeled] {
                    ds.roles[i] = Role::Labeled;
                }
                let rest = &idx[labeled..];
                assign(&mut ds.roles, rest, share(rest.len(), spec.nft_fraction), Role::Unlabeled);
            }
        }
        out.push(ds);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
