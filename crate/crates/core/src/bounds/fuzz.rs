use super::{vc_dimension, BoundsError, DiscreteDistribution, DiscreteInstance, HypothesisClass};
use rand::Rng;

/// Shape of randomly generated instances.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzSpec {
    pub dims: usize,
    pub min_domains: usize,
    pub max_domains: usize,
    /// Support points summed over all domains.
    pub max_points: usize,
    /// Coordinates are drawn from `{0, 1/grid, ..., 1}`, so supports overlap.
    pub grid: usize,
}

impl Default for FuzzSpec {
    fn default() -> Self {
        FuzzSpec { dims: 1, min_domains: 2, max_domains: 3, max_points: 50, grid: 10 }
    }
}

fn simplex_point<R: Rng>(n: usize, floor: f64, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// A random instance: each domain labels its support with its own noisy
/// threshold rule (or uniformly random labels), with random weights.
pub fn fuzz_instance<R: Rng>(spec: &FuzzSpec, rng: &mut R) -> Result<DiscreteInstance, BoundsError> {
    let vc_dim = vc_dimension(spec.dims)
        .ok_or_else(|| BoundsError::Instance(format!("no VC dimension for {} dims", spec.dims)))?;
    if spec.min_domains == 0
        || spec.min_domains > spec.max_domains
        || spec.max_points < spec.max_domains
        || spec.grid == 0
    {
        return Err(BoundsError::Instance(format!("bad fuzz spec {spec:?}")));
    }
    let n = rng.random_range(spec.min_domains..=spec.max_domains);
    let per_domain = spec.max_points / n;
    let mut domains = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(1..=per_domain);
        let axis = rng.random_range(0..spec.dims);
        let cut = rng.random::<f64>();
        let noise = [0.0, 0.1, 0.3, 0.5][rng.random_range(0..4)];
        let mut points = Vec::with_capacity(k);
        let mut labels = Vec::with_capacity(k);
        for _ in 0..k {
            let x: Vec<f64> =
                (0..spec.dims).map(|_| rng.random_range(0..=spec.grid) as f64 / spec.grid as f64).collect();
            let clean = x[axis] > cut;
            labels.push(if rng.random::<f64>() < noise { !clean } else { clean });
            points.push(x);
        }
        let weights = simplex_point(k, 0.05, rng);
        domains.push(DiscreteDistribution { points, labels, weights });
    }
    let all: Vec<&[f64]> = domains.iter().flat_map(|d| d.points.iter().map(Vec::as_slice)).collect();
    let class = HypothesisClass::adaptive(&all, spec.dims);
    let inst = DiscreteInstance {
        dims: spec.dims,
        m: rng.random_range(10..=100),
        gamma: simplex_point(n, 0.2, rng),
        alpha: simplex_point(n, 0.0, rng),
        delta: rng.random_range(0.01..0.5),
        vc_dim,
        class,
        domains,
    };
    inst.validate()?;
    Ok(inst)
}
