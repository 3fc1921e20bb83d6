use super::TrainError;
use crate::autodiff::Tensor;
use crate::data::{DomainDataset, EvalSetting};
use crate::network::{predict_probs, NetworkParams};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassGroup {
    /// Classes with labeled samples in the domain.
    Labeled,
    /// Classes present in the domain without any labeled sample.
    Unlabeled,
}

impl fmt::Display for ClassGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassGroup::Labeled => "lab",
            ClassGroup::Unlabeled => "unlab",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAccuracy {
    pub domain: usize,
    pub group: ClassGroup,
    pub correct: usize,
    pub total: usize,
}

impl GroupAccuracy {
    /// `None` for an empty group.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub setting: EvalSetting,
    /// Domain-major, labeled group before unlabeled. Empty groups are kept.
    pub groups: Vec<GroupAccuracy>,
}

impl Evaluation {
    pub fn get(&self, domain: usize, group: ClassGroup) -> Option<&GroupAccuracy> {
        self.groups.iter().find(|g| g.domain == domain && g.group == group)
    }

    pub fn accuracy(&self, domain: usize, group: ClassGroup) -> Option<f64> {
        self.get(domain, group).and_then(GroupAccuracy::accuracy)
    }
}

/// Scores `predict(domain_position, sample_index)` on each domain's
/// evaluation pool, split by class group.
pub fn accuracy<F>(datasets: &[DomainDataset], setting: EvalSetting, mut predict: F) -> Result<Evaluation, TrainError>
where
    F: FnMut(usize, &[usize]) -> Result<Vec<usize>, TrainError>,
{
    let mut groups = Vec::with_capacity(2 * datasets.len());
    for (d, ds) in datasets.iter().enumerate() {
        let pool = ds.evaluation_pool(setting)?;
        let labeled = ds.labeled_classes();
        let predicted = if pool.is_empty() { Vec::new() } else { predict(d, &pool)? };
        let mut acc = [ClassGroup::Labeled, ClassGroup::Unlabeled].map(|group| GroupAccuracy {
            domain: ds.domain,
            group,
            correct: 0,
            total: 0,
        });
        for (&i, &p) in pool.iter().zip(&predicted) {
            let slot = if labeled.contains(&ds.labels[i]) { 0 } else { 1 };
            acc[slot].total += 1;
            acc[slot].correct += usize::from(p == ds.labels[i]);
        }
        groups.extend(acc);
    }
    Ok(Evaluation { setting, groups })
}

/// Argmax accuracy of the classifier head over all classes.
pub fn evaluate(
    params: &NetworkParams,
    datasets: &[DomainDataset],
    setting: EvalSetting,
) -> Result<Evaluation, TrainError> {
    accuracy(datasets, setting, |d, pool| {
        let ds = &datasets[d];
        let mut values = Vec::with_capacity(pool.len() * ds.sample_len());
        for &i in pool {
            values.extend_from_slice(ds.sample(i));
        }
        let probs = predict_probs(params, &Tensor::new(vec![pool.len(), ds.sample_len()], values)?)?;
        Ok((0..probs.rows()).map(|r| argmax(probs.row(r))).collect())
    })
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
