use super::*;
use std::collections::BTreeSet;

fn spec(shift: f64) -> SynthSpec {
    SynthSpec {
        domains: 2,
        classes: 4,
        radius: 3.0,
        scale: 0.5,
        shift,
        rotation: 0.3,
        per_class: 60,
        nuisance_dims: 0,
        offset: 0.0,
    }
}

fn split() -> SplitSpec {
    SplitSpec { labeled_class_fraction: 0.5, labeled_per_class: 5, test_fraction: 0.25, nft_fraction: 0.5 }
}

#[test]
fn synth_is_deterministic_and_counts_match() {
    let a = synth_domains(&spec(1.0), 7).unwrap();
    let b = synth_domains(&spec(1.0), 7).unwrap();
    assert_eq!(a, b);
    for d in &a {
        assert_eq!(d.class_counts(), vec![60; 4]);
        d.validate().unwrap();
    }
    assert_ne!(a, synth_domains(&spec(1.0), 8).unwrap());
}

#[test]
fn zero_shift_gives_identical_layouts() {
    let mut s = spec(0.0);
    s.rotation = 0.0;
    for c in 0..4 {
        assert_eq!(s.mean(0, c), s.mean(1, c));
    }
    let s = spec(2.0);
    assert_ne!(s.mean(0, 1), s.mean(1, 1));
}

#[test]
fn cluster_means_are_within_three_sigma() {
    let s = spec(1.5);
    let ds = synth_domains(&s, 3).unwrap();
    let bound = 3.0 * s.scale / (s.per_class as f64).sqrt();
    for d in &ds {
        for c in 0..s.classes {
            let idx: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == c).collect();
            let m = s.mean(d.domain, c);
            for (axis, want) in m.iter().enumerate() {
                let mean = idx.iter().map(|&i| d.sample(i)[axis]).sum::<f64>() / idx.len() as f64;
                assert!((mean - want).abs() < bound, "domain {} class {c} axis {axis}", d.domain);
            }
        }
    }
}

#[test]
fn synth_rejects_bad_parameters() {
    let mut s = spec(1.0);
    s.per_class = 0;
    assert!(synth_domains(&s, 0).is_err());
    let mut s = spec(f64::NAN);
    assert!(synth_domains(&s, 0).is_err());
    s.shift = 0.0;
    s.classes = 1;
    assert!(synth_domains(&s, 0).is_err());
}

#[test]
fn split_labels_half_the_classes() {
    let mut s = spec(1.0);
    s.classes = 10;
    s.per_class = 20;
    let ds = semi_supervised_split(&synth_domains(&s, 1).unwrap(), &split(), 2).unwrap();
    assert_eq!(ds[1].labeled_classes().len(), 5);
    for c in ds[1].labeled_classes() {
        let n = (0..ds[1].len()).filter(|&i| ds[1].labels[i] == c && ds[1].roles[i] == Role::Labeled).count();
        assert_eq!(n, 5);
    }
    assert_eq!(ds[0].labeled_classes().len(), 10);
    assert!(ds[0].indices(Role::Unlabeled).is_empty());
    assert_eq!(ds[0].indices(Role::Holdout).len(), 50);
}

#[test]
fn full_fraction_leaves_no_unlabeled_classes_in_evaluation() {
    let mut sp = split();
    sp.labeled_class_fraction = 1.0;
    let ds = semi_supervised_split(&synth_domains(&spec(1.0), 1).unwrap(), &sp, 2).unwrap();
    let labeled = ds[1].labeled_classes();
    for setting in [EvalSetting::Ft, EvalSetting::Nft] {
        let pool = ds[1].evaluation_pool(setting).unwrap();
        assert!(!pool.is_empty());
        assert!(pool.iter().all(|&i| labeled.contains(&ds[1].labels[i])));
    }
}

#[test]
fn nft_pools_are_disjoint_from_training() {
    let ds = semi_supervised_split(&synth_domains(&spec(1.0), 1).unwrap(), &split(), 2).unwrap();
    for d in &ds {
        let eval: BTreeSet<usize> = d.evaluation_pool(EvalSetting::Nft).unwrap().into_iter().collect();
        let train: BTreeSet<usize> = (0..d.len()).filter(|&i| d.roles[i] != Role::Holdout).collect();
        assert!(eval.is_disjoint(&train));
    }
    let ft: Vec<usize> = ds[1].evaluation_pool(EvalSetting::Ft).unwrap();
    assert_eq!(ft, ds[1].indices(Role::Unlabeled));
}

#[test]
fn nft_without_holdout_is_rejected() {
    let mut sp = split();
    sp.nft_fraction = 0.0;
    let ds = semi_supervised_split(&synth_domains(&spec(1.0), 1).unwrap(), &sp, 2).unwrap();
    assert!(matches!(ds[1].evaluation_pool(EvalSetting::Nft), Err(DataError::NoHoldout(1))));
    assert!(ds[1].evaluation_pool(EvalSetting::Ft).is_ok());
}

#[test]
fn split_rejects_oversized_labeled_quota() {
    let mut sp = split();
    sp.labeled_per_class = 61;
    assert!(matches!(
        semi_supervised_split(&synth_domains(&spec(1.0), 1).unwrap(), &sp, 2),
        Err(DataError::Insufficient { requested: 61, .. })
    ));
}

fn roles() -> ClassRoles {
    ClassRoles { alpha: vec![0, 1], beta: vec![2], gamma: vec![3], delta: vec![4] }
}

fn asym_base() -> Vec<DomainDataset> {
    let mut s = spec(1.0);
    s.classes = 5;
    synth_domains(&s, 4).unwrap()
}

#[test]
fn asymmetry_cases_match_their_compositions() {
    let base = asym_base();
    for id in 1..=4 {
        let case = AsymmetryCase::from_id(id).unwrap();
        let data = build_asymmetry_case(&base, case, &roles(), &split(), 5).unwrap();
        let [d1, d2] = &data.datasets[..] else { panic!() };
        let mut want1: BTreeSet<usize> = [0, 1, 2].into();
        if case.labeled_orphans() {
            want1.insert(3);
        }
        assert_eq!(d1.labeled_classes(), want1);
        assert!(d1.indices(Role::Unlabeled).is_empty());
        assert_eq!(d2.labeled_classes(), [0, 1].into());
        let mut want2: BTreeSet<usize> = [0, 1, 2].into();
        if case.unlabeled_orphans() {
            want2.insert(4);
        }
        assert_eq!(d2.unlabeled_classes(), want2);
        assert!(!d2.labels.contains(&3));
        assert!(!d1.labels.contains(&4));
        // conservation: every sample of a kept class is assigned
        assert_eq!(d1.len(), want1.len() * 60);
        assert_eq!(d2.len(), want2.len() * 60);
        assert_eq!(Some(data.p_star), d2.p_star());
    }
}

#[test]
fn p_star_counts_extra_class_unlabeled_samples() {
    let data = build_asymmetry_case(&asym_base(), AsymmetryCase::One, &roles(), &split(), 5).unwrap();
    let d2 = &data.datasets[1];
    let unl = d2.indices(Role::Unlabeled);
    let beta = unl.iter().filter(|&&i| d2.labels[i] == 2).count();
    assert_eq!(data.p_star, beta as f64 / unl.len() as f64);
    // alpha: 55 left per class, 28 of them held out; beta: 60, 30 held out
    assert_eq!(unl.len(), 2 * 27 + 30);
}

#[test]
fn asymmetry_rejects_bad_roles() {
    let base = asym_base();
    let mut r = roles();
    r.gamma.clear();
    assert!(build_asymmetry_case(&base, AsymmetryCase::Two, &r, &split(), 0).is_err());
    assert!(build_asymmetry_case(&base, AsymmetryCase::One, &r, &split(), 0).is_ok());
    let mut r = roles();
    r.beta = vec![0];
    assert!(build_asymmetry_case(&base, AsymmetryCase::One, &r, &split(), 0).is_err());
    let mut r = roles();
    r.delta = vec![9];
    assert!(build_asymmetry_case(&base, AsymmetryCase::Three, &r, &split(), 0).is_err());
    assert!(AsymmetryCase::from_id(5).is_err());
}

#[test]
fn subsampling_hits_target_p_star() {
    let data = build_asymmetry_case(&asym_base(), AsymmetryCase::Three, &roles(), &split(), 5).unwrap();
    let d2 = &data.datasets[1];
    for target in [0.1, 0.3, 0.5, 0.7] {
        let s = subsample_to_p_star(d2, target, 1).unwrap();
        let got = s.p_star().unwrap();
        let m = s.indices(Role::Unlabeled).len() as f64;
        assert!((got - target).abs() <= 1.0 / m, "{target} -> {got}");
        assert_eq!(s.indices(Role::Labeled).len(), d2.indices(Role::Labeled).len());
        assert_eq!(s.indices(Role::Holdout).len(), d2.indices(Role::Holdout).len());
    }
    assert!(subsample_to_p_star(d2, 1.2, 1).is_err());
}

fn idx_images(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
    let mut v = 0x0000_0803u32.to_be_bytes().to_vec();
    for x in [count, rows, cols] {
        v.extend(x.to_be_bytes());
    }
    v.extend_from_slice(payload);
    v
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = 0x0000_0801u32.to_be_bytes().to_vec();
    v.extend((labels.len() as u32).to_be_bytes());
    v.extend_from_slice(labels);
    v
}

#[test]
fn idx_round_trip() {
    let pixels: Vec<u8> = (0..2 * 3 * 2).map(|i| (i * 20) as u8).collect();
    let (count, rows, cols, values) = parse_idx_images(&idx_images(2, 3, 2, &pixels)).unwrap();
    assert_eq!((count, rows, cols), (2, 3, 2));
    assert_eq!(values.len(), count * rows * cols);
    assert_eq!(values[1], 20.0 / 255.0);
    assert_eq!(parse_idx_labels(&idx_labels(&[3, 7])).unwrap(), vec![3, 7]);

    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    std::fs::write(&ip, idx_images(2, 3, 2, &pixels)).unwrap();
    std::fs::write(&lp, idx_labels(&[3, 7])).unwrap();
    let ds = load_idx(&ip, &lp, 1).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.sample_shape, vec![1, 3, 2]);
    assert_eq!(ds.classes, 8);
    assert!(ds.provenance.starts_with("idx sha256="));
}

#[test]
fn idx_errors_carry_offsets() {
    let mut bad = idx_images(1, 2, 2, &[0; 4]);
    bad[3] = 0x01;
    match parse_idx_images(&bad) {
        Err(DataError::Format { offset: 0, reason, .. }) => assert!(reason.contains("magic")),
        other => panic!("{other:?}"),
    }
    match parse_idx_images(&idx_images(2, 2, 2, &[0; 5])) {
        Err(DataError::Format { offset, reason, .. }) => {
            assert_eq!(offset, 21);
            assert!(reason.contains("truncated"));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(DataError::Format { offset: 0, .. })));
    assert!(parse_idx_labels(&idx_images(0, 0, 0, &[])).is_err());
}

#[test]
fn glyphs_and_colorize() {
    let g = synth_glyphs(10, 3, 28, 1).unwrap();
    assert_eq!(g.len(), 30);
    assert_eq!(g.sample_shape, vec![1, 28, 28]);
    assert!(g.inputs.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(g, synth_glyphs(10, 3, 28, 1).unwrap());
    let c = colorize_digits(&g, 9).unwrap();
    assert_eq!(c.labels, g.labels);
    assert_eq!(c.sample_shape, vec![3, 28, 28]);
    assert!(c.inputs.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(c, colorize_digits(&g, 9).unwrap());
    assert_ne!(c, colorize_digits(&g, 10).unwrap());
    assert!(colorize_digits(&c, 1).is_err());
    let rgb = gray_to_rgb(&g).unwrap();
    assert_eq!(rgb.sample(0)[..784], rgb.sample(0)[784..1568]);
}

#[test]
fn text_round_trip_is_exact() {
    let ds = semi_supervised_split(&synth_domains(&spec(1.0), 1).unwrap(), &split(), 2).unwrap();
    let mut buf = Vec::new();
    write_datasets(&ds, &mut buf).unwrap();
    let back = read_datasets(&buf[..]).unwrap();
    assert_eq!(back, ds);
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("#schema=dataset/1\n#domain=0 classes=4 shape=2 "));
    assert!(text.contains("\ndomain,class,role,x0,x1\n"));
}

#[test]
fn text_rejects_malformed_rows() {
    let bad = "#schema=dataset/1\n#domain=0 classes=2 shape=2 provenance=x\ndomain,class,role,x0,x1\n0,1,labeled,0.5\n";
    assert!(read_datasets(bad.as_bytes()).is_err());
    let bad =
        "#schema=dataset/1\n#domain=0 classes=2 shape=2 provenance=x\ndomain,class,role,x0,x1\n3,1,labeled,0.5,1\n";
    assert!(read_datasets(bad.as_bytes()).is_err());
    assert!(read_datasets("nope\n".as_bytes()).is_err());
}

#[test]
fn nuisance_coordinates_follow_the_domain_offset() {
    let spec = SynthSpec { nuisance_dims: 3, offset: 5.0, per_class: 200, ..spec(0.0) };
    let data = synth_domains(&spec, 4).unwrap();
    for ds in &data {
        assert_eq!(ds.sample_shape, vec![5]);
        let mean = (0..ds.len()).map(|i| ds.sample(i)[2..].iter().sum::<f64>() / 3.0).sum::<f64>() / ds.len() as f64;
        assert!((mean - 5.0 * ds.domain as f64).abs() < 0.05, "{mean}");
    }
}
