use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn dist(points: &[&[f64]], labels: &[bool], weights: &[f64]) -> DiscreteDistribution {
    DiscreteDistribution {
        points: points.iter().map(|p| p.to_vec()).collect(),
        labels: labels.to_vec(),
        weights: weights.to_vec(),
    }
}

fn instance(dims: usize, domains: Vec<DiscreteDistribution>) -> DiscreteInstance {
    let n = domains.len();
    let all: Vec<&[f64]> = domains.iter().flat_map(|d| d.points.iter().map(Vec::as_slice)).collect();
    let class = HypothesisClass::adaptive(&all, dims);
    DiscreteInstance {
        dims,
        class,
        m: 50,
        gamma: vec![1.0 / n as f64; n],
        alpha: vec![1.0 / n as f64; n],
        delta: 0.05,
        vc_dim: vc_dimension(dims).unwrap(),
        domains,
    }
}

// Oracles.

/// Risk on weights that are multiples of `1/k`, in integer arithmetic.
fn risk_oracle(h: &Hypothesis, d: &DiscreteDistribution, k: u64) -> f64 {
    let wrong: u64 = (0..d.points.len())
        .filter(|&s| h.predict(&d.points[s]) != d.labels[s])
        .map(|s| (d.weights[s] * k as f64).round() as u64)
        .sum();
    wrong as f64 / k as f64
}

/// Dense fixed threshold grid instead of the data-adaptive one.
fn dense_class(dims: usize) -> HypothesisClass {
    let mut thresholds = Vec::new();
    for axis in 0..dims {
        thresholds.push((axis, -1.0));
        thresholds.extend((0..=1000).map(|k| (axis, k as f64 / 1000.0 + 5e-4)));
    }
    HypothesisClass { thresholds }
}

fn hdh_oracle(a: &DiscreteDistribution, b: &DiscreteDistribution, class: &HypothesisClass) -> f64 {
    let mut gap: f64 = 0.0;
    for h in class.iter() {
        for g in class.iter() {
            gap = gap.max((disagreement(&h, &g, a) - disagreement(&h, &g, b)).abs());
        }
    }
    2.0 * gap
}

fn fuzz(dims: usize, seed: u64) -> DiscreteInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fuzz_instance(&FuzzSpec { dims, ..FuzzSpec::default() }, &mut rng).unwrap()
}

fn all_reports(inst: &DiscreteInstance, seed: u64) -> Vec<BoundReport> {
    check_instance(inst, seed).unwrap().reports
}

#[test]
fn risk_of_labeling_function_and_complement() {
    let d = dist(&[&[0.0], &[0.4], &[0.6], &[1.0]], &[false, false, true, true], &[0.1, 0.2, 0.3, 0.4]);
    let h = Hypothesis { axis: 0, threshold: 0.5, negated: false };
    assert_eq!(exact_risk(&h, &d), 0.0);
    assert!((exact_risk(&h.complement(), &d) - 1.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn risk_matches_integer_oracle(seed in 0u64..1000, t in -0.1f64..1.1, negated: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 64u64;
        let n = rng.random_range(1..10);
        let mut counts: Vec<u64> = (0..n).map(|_| rng.random_range(1..10)).collect();
        let total: u64 = counts.iter().sum();
        counts[0] += k - total.min(k);
        let scale: u64 = counts.iter().sum();
        let d = DiscreteDistribution {
            points: (0..n).map(|_| vec![rng.random::<f64>()]).collect(),
            labels: (0..n).map(|_| rng.random()).collect(),
            weights: counts.iter().map(|&c| c as f64 / scale as f64).collect(),
        };
        let h = Hypothesis { axis: 0, threshold: t, negated };
        prop_assert!((exact_risk(&h, &d) - risk_oracle(&h, &d, scale)).abs() < 1e-12);
    }

    #[test]
    fn divergences_match_enumeration(seed in 0u64..300, dims in 1usize..=2) {
        let inst = fuzz(dims, seed);
        let dense = dense_class(dims);
        for i in 0..inst.n() {
            for j in 0..inst.n() {
                let (a, b) = (&inst.domains[i], &inst.domains[j]);
                let dh = exact_h_divergence(a, b, &inst.class);
                prop_assert!((dh - exact_h_divergence(a, b, &dense)).abs() < 1e-12);
                prop_assert!((dh - exact_h_divergence(b, a, &inst.class)).abs() < 1e-15);
                let dhdh = exact_hdh_divergence(a, b, &inst.class);
                prop_assert!((dhdh - hdh_oracle(a, b, &inst.class)).abs() < 1e-12);
                prop_assert!((0.0..=2.0 + 1e-12).contains(&dh) && (0.0..=2.0 + 1e-12).contains(&dhdh));
                if i == j {
                    prop_assert_eq!(dh, 0.0);
                    prop_assert_eq!(dhdh, 0.0);
                }
            }
        }
    }

    #[test]
    fn pairwise_terms_match_enumeration(seed in 0u64..300) {
        let inst = fuzz(1, seed);
        let t = pairwise_terms(&inst).unwrap();
        let hyps: Vec<Hypothesis> = inst.class.iter().collect();
        for i in 0..inst.n() {
            let risks: Vec<f64> = hyps.iter().map(|h| exact_risk(h, &inst.domains[i])).collect();
            let min = risks.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(t.eps_star[i], min);
            prop_assert_eq!(t.h_star[i], risks.iter().position(|&r| r == min).unwrap());
            for j in 0..inst.n() {
                let b = hyps.iter().map(|h| exact_risk(h, &inst.domains[i]) + exact_risk(h, &inst.domains[j])).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(t.beta[i][j], b);
                let (hi, hj) = (hyps[t.h_star[i]], hyps[t.h_star[j]]);
                let e = |d: &DiscreteDistribution| d.points.iter().zip(&d.weights).filter(|(x, _)| hi.predict(x) != hj.predict(x)).map(|(_, w)| w).sum::<f64>();
                prop_assert_eq!(t.delta[i][j], e(&inst.domains[j]).max(e(&inst.domains[i])));
            }
        }
    }

    /// For 1-D thresholds with complements, disagreement regions are
    /// intervals or their complements, so their mass gap is at most d_H.
    #[test]
    fn one_dimensional_disagreement_is_bounded_by_h_divergence(seed in 0u64..300) {
        let inst = fuzz(1, seed);
        for i in 0..inst.n() {
            for j in 0..inst.n() {
                let (a, b) = (&inst.domains[i], &inst.domains[j]);
                let dh = exact_h_divergence(a, b, &inst.class);
                prop_assert!(exact_hdh_divergence(a, b, &inst.class) <= 2.0 * dh + 1e-12);
            }
        }
    }
}

#[test]
fn separable_point_masses() {
    let a = dist(&[&[0.0]], &[false], &[1.0]);
    let b = dist(&[&[1.0]], &[true], &[1.0]);
    let class = HypothesisClass { thresholds: vec![(0, 0.5)] };
    assert_eq!(exact_h_divergence(&a, &b, &class), 2.0);
    assert_eq!(exact_h_divergence(&a, &a, &class), 0.0);
}

#[test]
fn singleton_class_hdh_reduces_to_pair_structure() {
    // With H = {h, !h}, every pair disagrees nowhere or everywhere.
    let inst = fuzz(1, 3);
    let class = HypothesisClass { thresholds: vec![inst.class.thresholds[1]] };
    assert_eq!(exact_hdh_divergence(&inst.domains[0], &inst.domains[1], &class), 0.0);
    assert_eq!(hdh_oracle(&inst.domains[0], &inst.domains[1], &class), 0.0);
}

#[test]
fn identical_domains_and_shared_fit() {
    let d = dist(&[&[0.0], &[0.5], &[1.0]], &[false, true, true], &[0.3, 0.3, 0.4]);
    let inst = instance(1, vec![d.clone(), d.clone()]);
    let t = pairwise_terms(&inst).unwrap();
    assert_eq!(t.beta[0][1], 2.0 * t.eps_star[0]);
    assert_eq!(t.delta[0][1], 0.0);
    assert_eq!(t.beta[0][1], 0.0, "one threshold fits both");
    for h in 0..inst.class.len() {
        assert_eq!(check_prop1(&inst, &t, h, 0).unwrap().lhs, 0.0);
        assert!(check_cor3(&inst, &t, h).unwrap().pass);
    }
}

#[test]
fn validation_rejects_bad_instances() {
    let d = dist(&[&[0.0]], &[false], &[1.0]);
    let ok = instance(1, vec![d.clone(), d.clone()]);
    ok.validate().unwrap();
    for delta in [0.0, 1.0, -0.1] {
        let bad = DiscreteInstance { delta, ..ok.clone() };
        assert!(matches!(bad.validate(), Err(BoundsError::Delta(_))));
        assert!(matches!(pairwise_terms(&bad), Err(BoundsError::Delta(_))));
    }
    assert!(DiscreteInstance { alpha: vec![0.7, 0.7], ..ok.clone() }.validate().is_err());
    let heavy = dist(&[&[0.0]], &[false], &[0.9]);
    assert!(instance(1, vec![heavy, d.clone()]).validate().is_err());
    let three = instance(1, vec![d.clone(), d.clone(), d]);
    let t = pairwise_terms(&three).unwrap();
    assert!(matches!(check_cor3(&three, &t, 0), Err(BoundsError::TwoDomains { .. })));
    assert!(matches!(check_cor4(&three, &t, 0), Err(BoundsError::TwoDomains { .. })));
}

#[test]
fn sample_counts_sum_to_m() {
    let inst = fuzz(1, 11);
    let counts = inst.sample_counts();
    assert_eq!(counts.iter().sum::<usize>(), inst.m);
    for (c, g) in counts.iter().zip(&inst.gamma) {
        assert!((*c as f64 - g * inst.m as f64).abs() < 1.0);
    }
}

#[test]
fn single_domain_theorem() {
    let d = dist(&[&[0.0], &[0.5], &[1.0]], &[false, true, false], &[0.3, 0.3, 0.4]);
    let inst = DiscreteInstance { gamma: vec![1.0], alpha: vec![1.0], ..instance(1, vec![d]) };
    let t = pairwise_terms(&inst).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h_hat = empirical_minimizer(&inst, &mut rng).unwrap();
    let r = check_theorem1(&inst, &t, h_hat).unwrap();
    let b = checks_b(&inst);
    // No divergence terms remain; only the oracle risk pair term.
    assert!((r.per_domain[0].rhs - (t.eps_star[0] + 4.0 * b + 2.0 * t.beta[0][0])).abs() < 1e-12);
    assert!((r.compound.rhs - (t.eps_star[0] + 4.0 * b + 4.0 * t.beta[0][0])).abs() < 1e-12);
    assert!(r.compound.pass && r.per_domain[0].pass);
}

fn checks_b(inst: &DiscreteInstance) -> f64 {
    b_alpha(inst)
}

#[test]
fn b_alpha_closed_form() {
    let d = dist(&[&[0.0]], &[false], &[1.0]);
    let inst = DiscreteInstance {
        alpha: vec![0.25, 0.75],
        gamma: vec![0.5, 0.5],
        m: 40,
        delta: 0.1,
        ..instance(1, vec![d.clone(), d])
    };
    let expected = ((0.0625 + 0.5625) / 0.5f64).sqrt() * ((2.0 * 2.0 * (82.0f64).ln() + 40f64.ln()) / 40.0).sqrt();
    assert!((checks_b(&inst) - expected).abs() < 1e-12);
}

#[test]
fn rhs_minimal_at_sample_proportions() {
    let d = dist(&[&[0.0], &[0.5], &[1.0]], &[false, true, true], &[0.2, 0.5, 0.3]);
    let gamma = vec![0.3, 0.7];
    let base = DiscreteInstance { gamma: gamma.clone(), ..instance(1, vec![d.clone(), d]) };
    let t = pairwise_terms(&base).unwrap();
    let rhs = |a: f64| {
        let inst = DiscreteInstance { alpha: vec![a, 1.0 - a], ..base.clone() };
        check_theorem1(&inst, &t, 0).unwrap().compound.rhs
    };
    let at_gamma = rhs(gamma[0]);
    for k in 1..100 {
        assert!(rhs(k as f64 / 100.0) >= at_gamma - 1e-12, "alpha={}", k as f64 / 100.0);
    }
}

#[test]
fn one_dimensional_fuzz_has_no_violations() {
    let mut checked = 0;
    for seed in 0..200 {
        let inst = fuzz(1, seed);
        let t = pairwise_terms(&inst).unwrap();
        let thm = check_theorem1(&inst, &t, 0).unwrap();
        assert!(thm.tighter_is_tighter, "seed {seed}");
        for r in all_reports(&inst, seed) {
            assert!(r.pass, "seed {seed}: {r:?}");
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn prop1_specializes_to_cor3() {
    for seed in 0..200 {
        let inst = fuzz(1, seed);
        if inst.n() != 2 {
            continue;
        }
        let t = pairwise_terms(&inst).unwrap();
        for h in 0..inst.class.len() {
            let c = check_cor3(&inst, &t, h).unwrap();
            for i in 0..2 {
                let p = check_prop1(&inst, &t, h, i).unwrap();
                assert!((2.0 * p.rhs - 2.0 * t.eps_star[i] - c.rhs).abs() < 1e-12);
                assert!((2.0 * p.lhs - c.lhs).abs() < 1e-12);
            }
        }
    }
}

/// In 2-D, a disagreement region of two stumps can be a quadrant, whose mass
/// gap is not controlled by single stumps.
#[test]
fn two_dimensional_disagreement_can_exceed_h_divergence() {
    let a = dist(&[&[0.0, 0.0], &[1.0, 1.0]], &[false, true], &[0.5, 0.5]);
    let b = dist(&[&[0.0, 1.0], &[1.0, 0.0]], &[true, false], &[0.5, 0.5]);
    let inst = instance(2, vec![a, b]);
    let dh = exact_h_divergence(&inst.domains[0], &inst.domains[1], &inst.class);
    let dhdh = exact_hdh_divergence(&inst.domains[0], &inst.domains[1], &inst.class);
    assert_eq!(dh, 0.0);
    assert_eq!(dhdh, 2.0);
    // The bounds still hold here.
    assert!(all_reports(&inst, 0).iter().all(|r| r.pass));
}

#[test]
fn two_dimensional_fuzz_is_exploratory() {
    let mut violations = std::collections::BTreeMap::new();
    let mut total = 0;
    for seed in 0..100 {
        let inst = fuzz(2, seed);
        for r in all_reports(&inst, seed) {
            total += 1;
            if !r.pass {
                *violations.entry(r.id.to_string()).or_insert(0) += 1;
            }
        }
    }
    eprintln!("2-D fuzz: {total} checks, violations by bound: {violations:?}");
    // The d_HdH forms and the compound statement do not rely on the 1-D
    // disagreement property.
    for id in ["prop2", "cor4", "thm1", "thm1-tighter"] {
        assert!(!violations.contains_key(id), "{id}: {violations:?}");
    }
}

fn shattered(points: &[Vec<f64>], class: &HypothesisClass) -> bool {
    let patterns: std::collections::BTreeSet<Vec<bool>> =
        class.iter().map(|h| points.iter().map(|p| h.predict(p)).collect()).collect();
    patterns.len() == 1 << points.len()
}

#[test]
fn vc_dimensions_by_shattering() {
    let class_for = |pts: &[Vec<f64>], dims| {
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        HypothesisClass::adaptive(&refs, dims)
    };
    let two = vec![vec![0.0], vec![1.0]];
    assert!(shattered(&two, &class_for(&two, 1)));
    let three = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 0.5]];
    assert!(shattered(&three, &class_for(&three, 2)));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let pts: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random::<f64>()]).collect();
        assert!(!shattered(&pts, &class_for(&pts, 1)));
        let pts: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        assert!(!shattered(&pts, &class_for(&pts, 2)));
    }
}

fn gaussian(n: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| vec![normal.sample(&mut rng) + shift, normal.sample(&mut rng)]).collect()
}

#[test]
fn proxy_divergence_extremes_and_trend() {
    let cfg = ProxyConfig::default();
    let same = proxy_divergence(&gaussian(200, 0.0, 1), &gaussian(200, 0.0, 2), &cfg).unwrap();
    assert!(same.divergence < 0.5, "{same:?}");
    let apart = proxy_divergence(&gaussian(200, 0.0, 1), &gaussian(200, 20.0, 2), &cfg).unwrap();
    assert!(apart.divergence > 1.9, "{apart:?}");
    let mut last = 0.0;
    for shift in [0.0, 1.0, 2.0, 4.0] {
        let d = proxy_divergence(&gaussian(300, 0.0, 3), &gaussian(300, shift, 4), &cfg).unwrap().divergence;
        assert!(d >= last - 0.1, "shift {shift}: {d} after {last}");
        last = d;
    }
}

#[test]
fn proxy_divergence_needs_samples() {
    let err = proxy_divergence(&gaussian(19, 0.0, 1), &gaussian(50, 0.0, 2), &ProxyConfig::default()).unwrap_err();
    assert!(matches!(err, BoundsError::TooFewSamples { got: 19, .. }));
    let ok = proxy_divergence(&gaussian(20, 0.0, 1), &gaussian(20, 0.0, 2), &ProxyConfig::default());
    assert!(ok.is_ok());
}
