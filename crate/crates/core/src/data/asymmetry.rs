//! Two-domain class-asymmetry cases.
//!
//! Class roles: alpha is labeled in both domains, beta labeled in the first
//! and unlabeled in the second, gamma labeled in the first only, delta
//! unlabeled in the second only.
//!
//! | case | domain 1 labeled | domain 2 labeled | domain 2 unlabeled |
//! |------|------------------|------------------|--------------------|
//! | 1    | alpha, beta      | alpha            | beta               |
//! | 2    | alpha, beta, gamma | alpha          | beta               |
//! | 3    | alpha, beta      | alpha            | beta, delta        |
//! | 4    | alpha, beta, gamma | alpha          | beta, delta        |
//!
//! Alpha samples of domain 2 beyond its labeled quota stay unlabeled, so the
//! true fraction of extra-class unlabeled samples is below one.

use super::{assign, by_class, share, DataError, DomainDataset, Role, SplitSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsymmetryCase {
    One,
    Two,
    Three,
    Four,
}

impl AsymmetryCase {
    pub fn from_id(id: u32) -> Result<Self, DataError> {
        match id {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            4 => Ok(Self::Four),
            other => Err(DataError::Invalid(format!("asymmetry case {other} outside 1-4"))),
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
            Self::Four => 4,
        }
    }

    pub fn labeled_orphans(self) -> bool {
        matches!(self, Self::Two | Self::Four)
    }

    pub fn unlabeled_orphans(self) -> bool {
        matches!(self, Self::Three | Self::Four)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRoles {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    pub gamma: Vec<usize>,
    pub delta: Vec<usize>,
}

impl ClassRoles {
    fn validate(&self, case: AsymmetryCase, classes: usize) -> Result<(), DataError> {
        let all: Vec<usize> =
            [&self.alpha, &self.beta, &self.gamma, &self.delta].into_iter().flatten().copied().collect();
        let unique: BTreeSet<usize> = all.iter().copied().collect();
        if unique.len() != all.len() {
            return Err(DataError::Invalid("class roles overlap".into()));
        }
        if let Some(c) = unique.iter().find(|&&c| c >= classes) {
            return Err(DataError::Invalid(format!("role class {c} >= {classes} classes")));
        }
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(DataError::Invalid(format!("case {} needs at least one {what} class", case.id())))
            }
        };
        need(!self.alpha.is_empty(), "alpha")?;
        need(!self.beta.is_empty(), "beta")?;
        need(!case.labeled_orphans() || !self.gamma.is_empty(), "gamma")?;
        need(!case.unlabeled_orphans() || !self.delta.is_empty(), "delta")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetryData {
    pub case: AsymmetryCase,
    pub roles: ClassRoles,
    pub datasets: Vec<DomainDataset>,
    /// Fraction of domain 2's unlabeled samples from classes it has no
    /// labels for.
    pub p_star: f64,
}

/// Realizes `case` on two raw domains. The first domain keeps its alpha,
/// beta (and gamma) classes, labeled apart from a `test_fraction` holdout;
/// the second keeps alpha, beta (and delta), with `labeled_per_class`
/// labeled alpha samples and everything else unlabeled, an `nft_fraction`
/// share of which is held out. `labeled_class_fraction` is not used.
pub fn build_asymmetry_case(
    base: &[DomainDataset],
    case: AsymmetryCase,
    roles: &ClassRoles,
    split: &SplitSpec,
    seed: u64,
) -> Result<AsymmetryData, DataError> {
    let [d1, d2] = base else {
        return Err(DataError::Invalid(format!("asymmetry cases need 2 domains, got {}", base.len())));
    };
    roles.validate(case, d1.classes.min(d2.classes))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut keep1: Vec<usize> = roles.alpha.iter().chain(&roles.beta).copied().collect();
    if case.labeled_orphans() {
        keep1.extend(&roles.gamma);
    }
    let mut keep2: Vec<usize> = roles.alpha.iter().chain(&roles.beta).copied().collect();
    if case.unlabeled_orphans() {
        keep2.extend(&roles.delta);
    }

    let first = {
        let idx: Vec<usize> = (0..d1.len()).filter(|&i| keep1.contains(&d1.labels[i])).collect();
        let mut ds = d1.subset(&idx);
        for (c, members) in by_class(&ds).iter().enumerate() {
            if !keep1.contains(&c) {
                continue;
            }
            if members.is_empty() {
                return Err(DataError::Insufficient { domain: ds.domain, class: c, available: 0, requested: 1 });
            }
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let holdout = share(members.len(), split.test_fraction).min(members.len() - 1);
            assign(&mut ds.roles, &members, holdout, Role::Labeled);
        }
        ds
    };

    let second = {
        let idx: Vec<usize> = (0..d2.len()).filter(|&i| keep2.contains(&d2.labels[i])).collect();
        let mut ds = d2.subset(&idx);
        for (c, members) in by_class(&ds).iter().enumerate() {
            if !keep2.contains(&c) {
                continue;
            }
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let labeled = if roles.alpha.contains(&c) { split.labeled_per_class } else { 0 };
            if labeled > members.len() {
                return Err(DataError::Insufficient {
                    domain: ds.domain,
                    class: c,
                    available: members.len(),
                    requested: labeled,
                });
            }
            for &i in &members[..labeled] {
                ds.roles[i] = Role::Labeled;
            }
            let rest = &members[labeled..];
            assign(&mut ds.roles, rest, share(rest.len(), split.nft_fraction), Role::Unlabeled);
        }
        ds
    };

    let p_star = second.p_star().unwrap_or(0.0);
    Ok(AsymmetryData { case, roles: roles.clone(), datasets: vec![first, second], p_star })
}

/// Drops unlabeled samples so that the extra-class fraction of the unlabeled
/// pool is as close to `target` as whole samples allow. Labeled and holdout
/// samples are untouched.
pub fn subsample_to_p_star(ds: &DomainDataset, target: f64, seed: u64) -> Result<DomainDataset, DataError> {
    if !(0.0..=1.0).contains(&target) {
        return Err(DataError::Invalid(format!("target p*={target} outside [0, 1]")));
    }
    let labeled = ds.labeled_classes();
    let unl = ds.indices(Role::Unlabeled);
    let (mut extra, mut known): (Vec<usize>, Vec<usize>) = unl.iter().partition(|&&i| !labeled.contains(&ds.labels[i]));
    let (e, k) = (extra.len() as f64, known.len() as f64);
    if e + k == 0.0 {
        return Err(DataError::Invalid(format!("domain {} has no unlabeled samples", ds.domain)));
    }
    let current = e / (e + k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    extra.shuffle(&mut rng);
    known.shuffle(&mut rng);
    if target < current {
        let keep = if target == 0.0 { 0.0 } else { (target * k / (1.0 - target)).round() };
        extra.truncate(keep as usize);
    } else if target > current {
        let keep = if target == 1.0 { 0.0 } else { (e * (1.0 - target) / target).round() };
        known.truncate(keep as usize);
    }
    let kept: BTreeSet<usize> = extra.into_iter().chain(known).collect();
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.roles[i] != Role::Unlabeled || kept.contains(&i)).collect();
    if !idx.iter().any(|&i| ds.roles[i] == Role::Unlabeled) {
        return Err(DataError::Invalid(format!("target p*={target} leaves no unlabeled samples")));
    }
    Ok(ds.subset(&idx))
}
