use super::*;
use crate::data::{semi_supervised_split, synth_domains, SplitSpec, SynthSpec};
use crate::network::Variant;
use proptest::prelude::*;

fn synth(classes: usize, shift: f64, seed: u64) -> Vec<DomainDataset> {
    let spec = SynthSpec {
        domains: 2,
        classes,
        radius: 3.0,
        scale: 0.4,
        shift,
        rotation: 0.3,
        per_class: 40,
        nuisance_dims: 0,
        offset: 0.0,
    };
    let raw = synth_domains(&spec, seed).unwrap();
    let split =
        SplitSpec { labeled_class_fraction: 0.5, labeled_per_class: 10, test_fraction: 0.2, nft_fraction: 0.25 };
    semi_supervised_split(&raw, &split, seed).unwrap()
}

fn cfg(method: Method, steps: usize) -> TrainConfig {
    TrainConfig { method, steps, batch_size: 16, lr: 0.05, seed: 7, ..TrainConfig::default() }
}

#[test]
fn schedules_at_the_ends() {
    for t in [0.0, 0.3, 1.0] {
        assert_eq!(schedule_value(Schedule::Constant, 0.7, t), 0.7);
    }
    assert_eq!(schedule_value(Schedule::ExpIncreasing, 0.5, 0.0), 0.0);
    let end = 0.5 * (2.0 / (1.0 + (-10.0f64).exp()) - 1.0);
    assert!((schedule_value(Schedule::ExpIncreasing, 0.5, 1.0) - end).abs() < 1e-15);
    assert_eq!(schedule_value(Schedule::ExpDecreasing, 0.01, 0.0), 0.01);
    assert!((schedule_value(Schedule::ExpDecreasing, 0.01, 1.0) - 0.01 / 11f64.powf(0.75)).abs() < 1e-15);
}

proptest! {
    #[test]
    fn schedules_are_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, base in 0.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(schedule_value(Schedule::ExpIncreasing, base, lo) <= schedule_value(Schedule::ExpIncreasing, base, hi));
        prop_assert!(schedule_value(Schedule::ExpDecreasing, base, lo) >= schedule_value(Schedule::ExpDecreasing, base, hi));
        prop_assert!(schedule_value(Schedule::ExpIncreasing, base, hi) <= base);
    }

    #[test]
    fn plain_sgd_when_rho_is_zero(theta in -5.0f64..5.0, g in -5.0f64..5.0, lr in 0.0f64..1.0) {
        let mut t = Tensor::scalar(theta);
        let mut state = OptimizerState::for_shapes(&[1]);
        sgd_momentum_step(&mut [&mut t], &[Some(vec![g])], &mut state, lr, 0.0).unwrap();
        prop_assert_eq!(t.values()[0], theta - lr * g);
    }
}

#[test]
fn momentum_two_step_arithmetic() {
    let mut t = Tensor::scalar(0.0);
    let mut state = OptimizerState::for_shapes(&[1]);
    sgd_momentum_step(&mut [&mut t], &[Some(vec![1.0])], &mut state, 0.1, 0.9).unwrap();
    assert!((t.values()[0] + 0.1).abs() < 1e-15);
    let before = t.values()[0];
    sgd_momentum_step(&mut [&mut t], &[Some(vec![1.0])], &mut state, 0.1, 0.9).unwrap();
    assert!((t.values()[0] - before + 0.19).abs() < 1e-15);
    assert_eq!(state.step, 2);
}

#[test]
fn momentum_descends_a_quadratic() {
    // f(x) = a x^2 / 2; lr * a below (1 - sqrt(rho))^2 keeps the iterates
    // on one side of the minimum, so f decreases every step.
    let (a, rho) = (2.0, 0.9);
    let lr = 0.9 * (1.0 - f64::sqrt(rho)).powi(2) / a;
    let mut t = Tensor::scalar(3.0);
    let mut state = OptimizerState::for_shapes(&[1]);
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        let x = t.values()[0];
        let f = 0.5 * a * x * x;
        assert!(f <= last);
        last = f;
        sgd_momentum_step(&mut [&mut t], &[Some(vec![a * x])], &mut state, lr, rho).unwrap();
    }
    assert!(last < 1e-3);
}

#[test]
fn missing_gradient_is_rejected() {
    let mut a = Tensor::scalar(1.0);
    let mut b = Tensor::scalar(1.0);
    let mut state = OptimizerState::for_shapes(&[1, 1]);
    let err = sgd_momentum_step(&mut [&mut a, &mut b], &[Some(vec![1.0]), None], &mut state, 0.1, 0.9).unwrap_err();
    assert!(matches!(err, TrainError::Gradient { index: 1, .. }));
    assert_eq!(a.values()[0], 1.0, "no partial update");
    assert_eq!(state.step, 0);
}

#[test]
fn config_validation() {
    let ok = TrainConfig::default();
    ok.validate().unwrap();
    for bad in [
        TrainConfig { momentum: 1.0, ..ok.clone() },
        TrainConfig { p: 1.5, ..ok.clone() },
        TrainConfig { lambda: -0.1, ..ok.clone() },
        TrainConfig { zeta: f64::NAN, ..ok.clone() },
        TrainConfig { lr: 0.0, ..ok.clone() },
        TrainConfig { batch_size: 0, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))), "{bad:?}");
    }
    assert_eq!(TrainConfig { method: Method::Dann, p: 0.7, ..ok.clone() }.effective_p(), 0.0);
}

#[test]
fn methods_pick_their_heads() {
    let data = synth(4, 1.0, 1);
    let dann = architecture(Variant::MlpSynthetic, Method::Dann, &data).unwrap();
    assert_eq!((dann.discriminator_count(), dann.unlabeled_domains), (1, 0));
    let mada = architecture(Variant::MlpSynthetic, Method::Mada, &data).unwrap();
    assert_eq!((mada.discriminator_count(), mada.unlabeled_domains), (4, 0));
    let mulann = architecture(Variant::MlpSynthetic, Method::Mulann, &data).unwrap();
    assert_eq!((mulann.discriminator_count(), mulann.unlabeled_domains), (1, 1));
}

#[test]
fn training_is_deterministic() {
    let data = synth(3, 1.0, 2);
    let c = cfg(Method::Mulann, 20);
    let a = train(&c, Variant::MlpSynthetic, &data).unwrap();
    let b = train(&c, Variant::MlpSynthetic, &data).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params, b.params);
    let other = train(&TrainConfig { seed: 8, ..c }, Variant::MlpSynthetic, &data).unwrap();
    assert_ne!(a.trace, other.trace);
}

#[test]
fn dann_equals_mulann_with_p_zero() {
    let data = synth(3, 1.0, 3);
    let dann = train(&cfg(Method::Dann, 25), Variant::MlpSynthetic, &data).unwrap();
    let mulann = train(&TrainConfig { p: 0.0, ..cfg(Method::Mulann, 25) }, Variant::MlpSynthetic, &data).unwrap();
    assert_eq!(dann.trace, mulann.trace);
    assert_eq!(dann.params.extractor, mulann.params.extractor);
    assert_eq!(dann.params.classifier, mulann.params.classifier);
    assert_eq!(dann.params.domain, mulann.params.domain);
}

#[test]
fn mada_with_one_class_equals_dann() {
    let mut data = synth(2, 1.0, 4);
    for ds in &mut data {
        ds.classes = 1;
        ds.labels.iter_mut().for_each(|c| *c = 0);
    }
    let dann = train(&cfg(Method::Dann, 15), Variant::MlpSynthetic, &data).unwrap();
    let mada = train(&cfg(Method::Mada, 15), Variant::MlpSynthetic, &data).unwrap();
    assert_eq!(dann.trace, mada.trace);
    assert_eq!(dann.params.named_tensors(), mada.params.named_tensors());
}

#[test]
fn zero_lambda_matches_baseline_classification() {
    let data = synth(3, 1.0, 5);
    let c = TrainConfig { lambda: 0.0, zeta: 0.0, ..cfg(Method::Dann, 25) };
    let dann = train(&c, Variant::MlpSynthetic, &data).unwrap();
    let base = train(&TrainConfig { method: Method::Baseline, ..c }, Variant::MlpSynthetic, &data).unwrap();
    for (a, b) in dann.trace.iter().zip(&base.trace) {
        assert_eq!(a.breakdown.classification, b.breakdown.classification);
        assert_eq!(a.breakdown.total, b.breakdown.total);
    }
    assert!(base.trace.iter().all(|r| r.breakdown.domain.iter().all(|&d| d == 0.0)));
    assert_eq!(dann.params.extractor, base.params.extractor);
    assert_eq!(dann.params.classifier, base.params.classifier);
}

#[test]
fn separable_domains_are_learned() {
    let spec = SynthSpec {
        domains: 2,
        classes: 3,
        radius: 4.0,
        scale: 0.3,
        shift: 0.5,
        rotation: 0.0,
        per_class: 40,
        nuisance_dims: 0,
        offset: 0.0,
    };
    let data = synth_domains(&spec, 9).unwrap();
    // Closed-form separability: every sample is nearer its own mean than any
    // other, so the nearest-mean rule is a perfect linear classifier.
    for ds in &data {
        for i in 0..ds.len() {
            let x = ds.sample(i);
            let dist = |c: usize| {
                let m = spec.mean(ds.domain, c);
                (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2)
            };
            assert!((0..3).all(|c| c == ds.labels[i] || dist(c) > dist(ds.labels[i])));
        }
    }
    let c = TrainConfig { lambda: 0.0, ..cfg(Method::Baseline, 300) };
    let out = train(&c, Variant::MlpSynthetic, &data).unwrap();
    let mut train_view = data.clone();
    for ds in &mut train_view {
        ds.roles.iter_mut().for_each(|r| *r = Role::Holdout);
    }
    let eval = evaluate(&out.params, &train_view, EvalSetting::Ft).unwrap();
    let (correct, total) = eval.groups.iter().fold((0, 0), |(c, t), g| (c + g.correct, t + g.total));
    assert!(correct as f64 / total as f64 >= 0.95, "{correct}/{total}");
}

#[test]
fn batches_skip_holdout_and_nft_pool_is_unseen() {
    let data = synth(3, 1.0, 6);
    let out = train(&cfg(Method::Mulann, 60), Variant::MlpSynthetic, &data).unwrap();
    for (ds, seen) in data.iter().zip(&out.seen) {
        assert!(seen.iter().all(|&i| ds.roles[i] != Role::Holdout));
        let pool: BTreeSet<usize> = ds.evaluation_pool(EvalSetting::Nft).unwrap().into_iter().collect();
        assert!(pool.is_disjoint(seen));
    }
}

#[test]
fn labeled_share_splits_the_batch() {
    let data = synth(4, 1.0, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = draw_batch(&data[1], 20, Some(0.25), &mut rng);
    let labeled = b.iter().filter(|&&i| data[1].roles[i] == Role::Labeled).count();
    assert_eq!((b.len(), labeled), (20, 5));
}

#[test]
fn kud_trace_columns_follow_unlabeled_domains() {
    let data = synth(4, 1.0, 8);
    let out = train(&cfg(Method::Mulann, 10), Variant::MlpSynthetic, &data).unwrap();
    assert!(out.trace.iter().all(|r| r.breakdown.kud.len() == 1));
    assert!(out.trace.iter().any(|r| r.breakdown.kud[0] > 0.0));
    let dann = train(&cfg(Method::Dann, 10), Variant::MlpSynthetic, &data).unwrap();
    assert!(dann.trace.iter().all(|r| r.breakdown.kud == vec![0.0]));
    for r in &out.trace {
        assert!((r.breakdown.recompute() - r.breakdown.total).abs() < 1e-12);
    }
}

#[test]
fn perfect_and_random_classifiers() {
    let data = synth(4, 1.0, 9);
    let perfect =
        accuracy(&data, EvalSetting::Ft, |d, pool| Ok(pool.iter().map(|&i| data[d].labels[i]).collect())).unwrap();
    for g in &perfect.groups {
        assert!(g.total == 0 || g.accuracy() == Some(1.0), "{g:?}");
    }
    assert!(perfect.accuracy(1, ClassGroup::Unlabeled).is_some());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let big = {
        let spec = SynthSpec {
            domains: 2,
            classes: 4,
            radius: 3.0,
            scale: 0.4,
            shift: 0.0,
            rotation: 0.0,
            per_class: 500,
            nuisance_dims: 0,
            offset: 0.0,
        };
        let mut raw = synth_domains(&spec, 1).unwrap();
        raw.iter_mut().for_each(|d| d.roles.iter_mut().for_each(|r| *r = Role::Holdout));
        raw
    };
    let random = accuracy(&big, EvalSetting::Ft, |_, pool| {
        Ok(pool.iter().map(|_| rand::Rng::random_range(&mut rng, 0..4)).collect())
    })
    .unwrap();
    for g in random.groups.iter().filter(|g| g.total > 0) {
        // 4 binomial standard deviations around 1/4.
        let sd = (0.25f64 * 0.75 / g.total as f64).sqrt();
        assert!((g.accuracy().unwrap() - 0.25).abs() < 4.0 * sd, "{g:?}");
    }
}

#[test]
fn nft_without_holdout_is_rejected() {
    let mut data = synth(3, 1.0, 10);
    for r in &mut data[1].roles {
        if *r == Role::Holdout {
            *r = Role::Unlabeled;
        }
    }
    let params = network::build(&architecture(Variant::MlpSynthetic, Method::Dann, &data).unwrap(), 0).unwrap();
    assert!(evaluate(&params, &data, EvalSetting::Ft).is_ok());
    assert!(matches!(evaluate(&params, &data, EvalSetting::Nft), Err(TrainError::Data(_))));
}

#[test]
fn trace_csv_layout() {
    let data = synth(3, 1.0, 11);
    let out = train(&cfg(Method::Mulann, 3), Variant::MlpSynthetic, &data).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&out.trace, &unlabeled_domains(&data), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "#schema=trace/1");
    assert_eq!(lines[1], "step,lc_0,lc_1,ld_0,ld_1,lu_1,total,lambda,lr");
    assert_eq!(lines.len(), 5);
}
