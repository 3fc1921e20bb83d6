use super::{
    disagreement, exact_h_divergence, exact_hdh_divergence, exact_risk, BoundsError, DiscreteInstance, BOUND_TOLERANCE,
};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundId {
    Thm1,
    Thm1PerDomain,
    /// The compound bound with `d_H` replaced by `d_HdH / 2`.
    Thm1Tighter,
    Prop1,
    Prop2,
    Cor3,
    Cor4,
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundId::Thm1 => "thm1",
            BoundId::Thm1PerDomain => "thm1-per-domain-proof-form",
            BoundId::Thm1Tighter => "thm1-tighter",
            BoundId::Prop1 => "prop1",
            BoundId::Prop2 => "prop2",
            BoundId::Cor3 => "cor3",
            BoundId::Cor4 => "cor4",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub id: BoundId,
    /// Domain the bound is about, for per-domain forms.
    pub domain: Option<usize>,
    /// Index of the hypothesis in the class enumeration.
    pub hypothesis: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Named scalar components of the right-hand side.
    pub terms: Vec<(String, f64)>,
    pub pass: bool,
}

impl BoundReport {
    fn new(
        id: BoundId,
        domain: Option<usize>,
        hypothesis: usize,
        lhs: f64,
        rhs: f64,
        terms: Vec<(String, f64)>,
    ) -> Self {
        BoundReport { id, domain, hypothesis, lhs, rhs, terms, pass: lhs <= rhs + BOUND_TOLERANCE }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Exact per-domain and pairwise quantities shared by all checks.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTerms {
    /// Per-domain risk table `risk[i][k] = eps_i(h_k)`.
    pub risk: Vec<Vec<f64>>,
    pub eps_star: Vec<f64>,
    /// First minimizer of each domain's risk.
    pub h_star: Vec<usize>,
    /// `min_h eps_i(h) + eps_j(h)`.
    pub beta: Vec<Vec<f64>>,
    /// `max(E_j |h_i* - h_j*|, E_i |h_i* - h_j*|)`.
    pub delta: Vec<Vec<f64>>,
    pub d_h: Vec<Vec<f64>>,
    pub d_hdh: Vec<Vec<f64>>,
    /// `min_h sum_i eps_i(h)` and its first minimizer.
    pub beta_all: f64,
    pub h_joint: usize,
}

fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, v) in values.enumerate() {
        if v < best.1 {
            best = (k, v);
        }
    }
    best
}

pub fn pairwise_terms(inst: &DiscreteInstance) -> Result<PairwiseTerms, BoundsError> {
    inst.validate()?;
    let n = inst.n();
    let hyps: Vec<_> = inst.class.iter().collect();
    let risk: Vec<Vec<f64>> = inst.domains.iter().map(|d| hyps.iter().map(|h| exact_risk(h, d)).collect()).collect();
    let (h_star, eps_star): (Vec<usize>, Vec<f64>) = risk.iter().map(|r| argmin(r.iter().copied())).unzip();
    let mut beta = vec![vec![0.0; n]; n];
    let mut delta = vec![vec![0.0; n]; n];
    let mut d_h = vec![vec![0.0; n]; n];
    let mut d_hdh = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            beta[i][j] = argmin((0..hyps.len()).map(|k| risk[i][k] + risk[j][k])).1;
            let (hi, hj) = (&hyps[h_star[i]], &hyps[h_star[j]]);
            delta[i][j] = disagreement(hi, hj, &inst.domains[j]).max(disagreement(hi, hj, &inst.domains[i]));
            if i < j {
                d_h[i][j] = exact_h_divergence(&inst.domains[i], &inst.domains[j], &inst.class);
                d_hdh[i][j] = exact_hdh_divergence(&inst.domains[i], &inst.domains[j], &inst.class);
            } else if i > j {
                d_h[i][j] = d_h[j][i];
                d_hdh[i][j] = d_hdh[j][i];
            }
        }
    }
    let (h_joint, beta_all) = argmin((0..hyps.len()).map(|k| risk.iter().map(|r| r[k]).sum()));
    Ok(PairwiseTerms { risk, eps_star, h_star, beta, delta, d_h, d_hdh, beta_all, h_joint })
}

/// `sqrt(sum_j alpha_j^2 / gamma_j) sqrt((2 d log(2 (m + 1)) + log(4 / delta)) / m)`.
pub fn b_alpha(inst: &DiscreteInstance) -> f64 {
    let weights: f64 = inst.alpha.iter().zip(&inst.gamma).map(|(&a, &g)| if a == 0.0 { 0.0 } else { a * a / g }).sum();
    let m = inst.m as f64;
    let complexity = (2.0 * inst.vc_dim as f64 * (2.0 * (m + 1.0)).ln() + (4.0 / inst.delta).ln()) / m;
    weights.sqrt() * complexity.sqrt()
}

/// Index of the minimizer of `sum_i alpha_i err_i` on samples of
/// `gamma_i m` points drawn from each domain; ties go to the first
/// hypothesis.
pub fn empirical_minimizer<R: Rng>(inst: &DiscreteInstance, rng: &mut R) -> Result<usize, BoundsError> {
    inst.validate()?;
    let hyps: Vec<_> = inst.class.iter().collect();
    let mut objective = vec![0.0; hyps.len()];
    for ((d, &count), &alpha) in inst.domains.iter().zip(&inst.sample_counts()).zip(&inst.alpha) {
        if count == 0 {
            continue;
        }
        let pick = WeightedIndex::new(&d.weights).map_err(|e| BoundsError::Instance(e.to_string()))?;
        let sample: Vec<usize> = (0..count).map(|_| pick.sample(rng)).collect();
        for (k, h) in hyps.iter().enumerate() {
            let wrong = sample.iter().filter(|&&s| h.predict(&d.points[s]) != d.labels[s]).count();
            objective[k] += alpha * wrong as f64 / count as f64;
        }
    }
    Ok(argmin(objective.into_iter()).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    /// Compound statement form.
    pub compound: BoundReport,
    /// Same with `d_HdH / 2` in place of `d_H`.
    pub tighter: BoundReport,
    /// One proof-form report per domain.
    pub per_domain: Vec<BoundReport>,
    /// Whether the `d_HdH` right-hand side is no larger than the `d_H` one.
    pub tighter_is_tighter: bool,
}

impl TheoremReport {
    pub fn reports(&self) -> impl Iterator<Item = &BoundReport> {
        [&self.compound, &self.tighter].into_iter().chain(&self.per_domain)
    }
}

/// Checks the compound and per-domain bounds for the hypothesis `h_hat`.
pub fn check_theorem1(
    inst: &DiscreteInstance,
    terms: &PairwiseTerms,
    h_hat: usize,
) -> Result<TheoremReport, BoundsError> {
    inst.validate()?;
    if h_hat >= inst.class.len() {
        return Err(BoundsError::Hypothesis(h_hat));
    }
    let n = inst.n();
    let b = b_alpha(inst);
    let eps: Vec<f64> = terms.risk.iter().map(|r| r[h_hat]).collect();
    let lhs: f64 = eps.iter().sum();
    let star: f64 = terms.eps_star.iter().sum();
    let cross = |div: &dyn Fn(usize, usize) -> f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i..n {
                s += (inst.alpha[i] + inst.alpha[j]) * (div(i, j) + terms.beta[i][j]);
            }
        }
        2.0 * s
    };
    let cross_h = cross(&|i, j| terms.d_h[i][j]);
    let cross_hdh = cross(&|i, j| 0.5 * terms.d_hdh[i][j]);
    let base = star + 4.0 * n as f64 * b;
    let named =
        |cross: f64| vec![("sum_eps_star".to_string(), star), ("B".to_string(), b), ("cross".to_string(), cross)];
    let compound = BoundReport::new(BoundId::Thm1, None, h_hat, lhs, base + cross_h, named(cross_h));
    let tighter = BoundReport::new(BoundId::Thm1Tighter, None, h_hat, lhs, base + cross_hdh, named(cross_hdh));
    let per_domain = (0..n)
        .map(|j| {
            let cross: f64 = (0..n).map(|i| inst.alpha[i] * (terms.beta[i][j] + terms.d_h[i][j])).sum();
            let rhs = terms.eps_star[j] + 4.0 * b + 2.0 * cross;
            let named =
                vec![("eps_star".to_string(), terms.eps_star[j]), ("B".to_string(), b), ("cross".to_string(), cross)];
            BoundReport::new(BoundId::Thm1PerDomain, Some(j), h_hat, eps[j], rhs, named)
        })
        .collect();
    Ok(TheoremReport {
        tighter_is_tighter: tighter.rhs <= compound.rhs + BOUND_TOLERANCE,
        compound,
        tighter,
        per_domain,
    })
}

fn check_h(inst: &DiscreteInstance, h: usize) -> Result<(), BoundsError> {
    if h >= inst.class.len() {
        return Err(BoundsError::Hypothesis(h));
    }
    Ok(())
}

fn check_domain(inst: &DiscreteInstance, i: usize) -> Result<(), BoundsError> {
    if i >= inst.n() {
        return Err(BoundsError::Instance(format!("domain {i} out of range")));
    }
    Ok(())
}

/// `|eps_i(h) - mean eps(h)| <= eps_i* + mean eps* + mean_j (d_H(i, j) + Delta_ij)`.
pub fn check_prop1(
    inst: &DiscreteInstance,
    terms: &PairwiseTerms,
    h: usize,
    i: usize,
) -> Result<BoundReport, BoundsError> {
    check_h(inst, h)?;
    check_domain(inst, i)?;
    let n = inst.n() as f64;
    let mean_eps = terms.risk.iter().map(|r| r[h]).sum::<f64>() / n;
    let mean_star = terms.eps_star.iter().sum::<f64>() / n;
    let mean_div = (0..inst.n()).map(|j| terms.d_h[i][j] + terms.delta[i][j]).sum::<f64>() / n;
    let lhs = (terms.risk[i][h] - mean_eps).abs();
    let rhs = terms.eps_star[i] + mean_star + mean_div;
    let named = vec![
        ("eps_star".to_string(), terms.eps_star[i]),
        ("eps_bar".to_string(), mean_eps),
        ("mean_eps_star".to_string(), mean_star),
        ("mean_divergence".to_string(), mean_div),
    ];
    Ok(BoundReport::new(BoundId::Prop1, Some(i), h, lhs, rhs, named))
}

/// `|eps_j(h) - mean eps(h)| <= 2 (eps_j* + mean eps*) + eps_j(h*) + beta
/// + mean_i (d_H(i, j) + d_HdH(i, j) / 2)`, with `h*` the joint minimizer
/// and `beta` its summed risk.
pub fn check_prop2(
    inst: &DiscreteInstance,
    terms: &PairwiseTerms,
    h: usize,
    j: usize,
) -> Result<BoundReport, BoundsError> {
    check_h(inst, h)?;
    check_domain(inst, j)?;
    let n = inst.n() as f64;
    let mean_eps = terms.risk.iter().map(|r| r[h]).sum::<f64>() / n;
    let mean_star = terms.eps_star.iter().sum::<f64>() / n;
    let joint = terms.risk[j][terms.h_joint];
    let mean_div = (0..inst.n()).map(|i| terms.d_h[i][j] + 0.5 * terms.d_hdh[i][j]).sum::<f64>() / n;
    let lhs = (terms.risk[j][h] - mean_eps).abs();
    let rhs = 2.0 * (terms.eps_star[j] + mean_star) + joint + terms.beta_all + mean_div;
    let named = vec![
        ("eps_star".to_string(), terms.eps_star[j]),
        ("mean_eps_star".to_string(), mean_star),
        ("eps_joint".to_string(), joint),
        ("beta".to_string(), terms.beta_all),
        ("mean_divergence".to_string(), mean_div),
    ];
    Ok(BoundReport::new(BoundId::Prop2, Some(j), h, lhs, rhs, named))
}

fn two_domains(inst: &DiscreteInstance, bound: &'static str) -> Result<(), BoundsError> {
    if inst.n() != 2 {
        return Err(BoundsError::TwoDomains { bound, got: inst.n() });
    }
    Ok(())
}

/// `|eps_S(h) - eps_T(h)| <= eps_S* + eps_T* + Delta + d_H`.
pub fn check_cor3(inst: &DiscreteInstance, terms: &PairwiseTerms, h: usize) -> Result<BoundReport, BoundsError> {
    two_domains(inst, "cor3")?;
    check_h(inst, h)?;
    let lhs = (terms.risk[0][h] - terms.risk[1][h]).abs();
    let rhs = terms.eps_star[0] + terms.eps_star[1] + terms.delta[0][1] + terms.d_h[0][1];
    let named = vec![
        ("eps_star_s".to_string(), terms.eps_star[0]),
        ("eps_star_t".to_string(), terms.eps_star[1]),
        ("delta".to_string(), terms.delta[0][1]),
        ("d_h".to_string(), terms.d_h[0][1]),
    ];
    Ok(BoundReport::new(BoundId::Cor3, None, h, lhs, rhs, named))
}

/// `|eps_S(h) - eps_T(h)| <= 2 (eps_S* + eps_T*) + beta + d_HdH / 2 + d_H`.
pub fn check_cor4(inst: &DiscreteInstance, terms: &PairwiseTerms, h: usize) -> Result<BoundReport, BoundsError> {
    two_domains(inst, "cor4")?;
    check_h(inst, h)?;
    let lhs = (terms.risk[0][h] - terms.risk[1][h]).abs();
    let rhs =
        2.0 * (terms.eps_star[0] + terms.eps_star[1]) + terms.beta[0][1] + 0.5 * terms.d_hdh[0][1] + terms.d_h[0][1];
    let named = vec![
        ("eps_star_s".to_string(), terms.eps_star[0]),
        ("eps_star_t".to_string(), terms.eps_star[1]),
        ("beta".to_string(), terms.beta[0][1]),
        ("d_hdh".to_string(), terms.d_hdh[0][1]),
        ("d_h".to_string(), terms.d_h[0][1]),
    ];
    Ok(BoundReport::new(BoundId::Cor4, None, h, lhs, rhs, named))
}

/// Every check on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCheck {
    pub h_hat: usize,
    pub reports: Vec<BoundReport>,
    pub tighter_is_tighter: bool,
}

/// The theorem family at the empirical minimizer (sample drawn from `seed`),
/// then the propositions at every hypothesis and domain, and the corollaries
/// at every hypothesis when there are two domains.
pub fn check_instance(inst: &DiscreteInstance, seed: u64) -> Result<InstanceCheck, BoundsError> {
    let terms = pairwise_terms(inst)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_hat = empirical_minimizer(inst, &mut rng)?;
    let thm = check_theorem1(inst, &terms, h_hat)?;
    let mut reports: Vec<BoundReport> = thm.reports().cloned().collect();
    for h in 0..inst.class.len() {
        for i in 0..inst.n() {
            reports.push(check_prop1(inst, &terms, h, i)?);
            reports.push(check_prop2(inst, &terms, h, i)?);
        }
        if inst.n() == 2 {
            reports.push(check_cor3(inst, &terms, h)?);
            reports.push(check_cor4(inst, &terms, h)?);
        }
    }
    Ok(InstanceCheck { h_hat, reports, tighter_is_tighter: thm.tighter_is_tighter })
}
