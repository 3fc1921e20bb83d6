use super::table::fmt_num;
use super::{DataSource, ExperimentConfig, HarnessError, SeedTable, Table};
use crate::autodiff::Tensor;
use crate::bounds::{check_instance, fuzz_instance, proxy_divergence, BoundId};
use crate::data::{
    build_asymmetry_case, colorize_digits, gray_to_rgb, load_idx, read_datasets, semi_supervised_split,
    subsample_to_p_star, synth_domains, synth_glyphs, AsymmetryCase, DomainDataset, EvalSetting,
};
use crate::network::{self, extract_features, load_checkpoint, save_checkpoint, NetworkParams};
use crate::trainer::{argmax, evaluate, train, unlabeled_domains, write_trace_csv, ClassGroup, Method, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Datasets before any semi-supervised split (fully labeled), for `seed`.
/// File datasets are returned as stored.
pub fn raw_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<DomainDataset>, HarnessError> {
    let d = &cfg.data;
    Ok(match d.source {
        DataSource::Synthetic => synth_domains(&d.synth_spec(), seed)?,
        DataSource::File => {
            let path = d.path.as_ref().expect("validated");
            read_datasets(std::io::BufReader::new(std::fs::File::open(path)?))?
        }
        DataSource::Digits => {
            let gray = match (&d.images, &d.labels) {
                (Some(images), Some(labels)) => load_idx(images, labels, 0)?,
                _ => synth_glyphs(d.classes, d.per_class, d.glyph_size, seed)?,
            };
            let mut first = gray_to_rgb(&gray)?;
            let mut second = colorize_digits(&gray, seed)?;
            first.domain = 0;
            second.domain = 1;
            vec![first, second]
        }
    })
}

/// Training datasets for `seed`: the raw datasets with the configured
/// semi-supervised split (file datasets keep their stored roles).
pub fn build_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<DomainDataset>, HarnessError> {
    let raw = raw_datasets(cfg, seed)?;
    if cfg.data.source == DataSource::File {
        return Ok(raw);
    }
    Ok(semi_supervised_split(&raw, &cfg.split.spec(), seed)?)
}

/// Mean extra-class fraction over the domains that have unlabeled data.
fn mean_p_star(datasets: &[DomainDataset]) -> f64 {
    let ps: Vec<f64> = datasets.iter().filter_map(DomainDataset::p_star).collect();
    if ps.is_empty() {
        0.0
    } else {
        ps.iter().sum::<f64>() / ps.len() as f64
    }
}

pub fn checkpoint_path(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join("checkpoints").join(format!("{method}-seed{seed}.ckpt"))
}

fn trace_path(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join("traces").join(format!("{method}-seed{seed}.csv"))
}

fn fit(
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    datasets: &[DomainDataset],
) -> Result<NetworkParams, HarnessError> {
    Ok(train(train_cfg, cfg.train.variant()?, datasets)?.params)
}

fn record_evaluation(
    table: &mut SeedTable,
    seed: u64,
    method: Method,
    params: &NetworkParams,
    datasets: &[DomainDataset],
    setting: EvalSetting,
) -> Result<(), HarnessError> {
    for g in evaluate(params, datasets, setting)?.groups {
        let keys = vec![method.to_string(), setting.to_string(), g.domain.to_string(), g.group.to_string()];
        table.record(seed, keys, g.accuracy());
    }
    Ok(())
}

/// Trains one model per seed, saves checkpoints and loss traces, and reports
/// per-group accuracies. Writes `train.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Table, HarnessError> {
    cfg.validate()?;
    let setting = cfg.train.eval_setting()?;
    let mut table = SeedTable::new("train/1", &["method", "setting", "domain", "group"]);
    for seed in cfg.seeds() {
        let datasets = build_datasets(cfg, seed)?;
        let train_cfg = cfg.train.to_config(seed, mean_p_star(&datasets))?;
        let outcome = train(&train_cfg, cfg.train.variant()?, &datasets)?;
        let ckpt = checkpoint_path(out, train_cfg.method, seed);
        std::fs::create_dir_all(ckpt.parent().expect("has parent"))?;
        save_checkpoint(&outcome.params, &ckpt)?;
        let trace = trace_path(out, train_cfg.method, seed);
        std::fs::create_dir_all(trace.parent().expect("has parent"))?;
        let mut buf = Vec::new();
        write_trace_csv(&outcome.trace, &unlabeled_domains(&datasets), &mut buf)?;
        std::fs::write(&trace, buf)?;
        record_evaluation(&mut table, seed, train_cfg.method, &outcome.params, &datasets, setting)?;
    }
    let table = table.finish();
    table.write_file(&out.join("train.csv"))?;
    Ok(table)
}

fn load_trained(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<(Method, NetworkParams), HarnessError> {
    let method = cfg.train.method()?;
    let path = checkpoint_path(out, method, seed);
    if !path.exists() {
        return Err(HarnessError::MissingCheckpoint(path.display().to_string()));
    }
    Ok((method, load_checkpoint(&path)?))
}

/// Re-scores the checkpoints written by `train` under the configured
/// evaluation setting. Writes `evaluate.csv`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<Table, HarnessError> {
    cfg.validate()?;
    let setting = cfg.train.eval_setting()?;
    let mut table = SeedTable::new("evaluate/1", &["method", "setting", "domain", "group"]);
    for seed in cfg.seeds() {
        let (method, params) = load_trained(cfg, out, seed)?;
        let datasets = build_datasets(cfg, seed)?;
        record_evaluation(&mut table, seed, method, &params, &datasets, setting)?;
    }
    let table = table.finish();
    table.write_file(&out.join("evaluate.csv"))?;
    Ok(table)
}

fn mean_of(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// MuLANN accuracy over a grid of `p` for each target `p_star`. Unlabeled
/// pools are subsampled to each target. Reports unlabeled-class accuracy on
/// the domains with unlabeled data and accuracy on the domains without.
/// Writes `sweep-p.csv`.
pub fn cmd_sweep_p(cfg: &ExperimentConfig, out: &Path) -> Result<Table, HarnessError> {
    cfg.validate()?;
    let setting = cfg.train.eval_setting()?;
    let mut table = SeedTable::new("sweep-p/1", &["p_star", "p", "metric"]);
    for &target in &cfg.sweep.p_star {
        for seed in cfg.seeds() {
            let mut datasets = build_datasets(cfg, seed)?;
            for ds in datasets.iter_mut().filter(|d| d.p_star().is_some()) {
                *ds = subsample_to_p_star(ds, target, seed)?;
            }
            table.record(
                seed,
                vec![fmt_num(target), String::new(), "realized_p_star".into()],
                Some(mean_p_star(&datasets)),
            );
            for &p in &cfg.sweep.p {
                let mut train_cfg = cfg.train.to_config(seed, p)?;
                train_cfg.method = Method::Mulann;
                train_cfg.p = p;
                let params = fit(cfg, &train_cfg, &datasets)?;
                let ev = evaluate(&params, &datasets, setting)?;
                let (with, without): (Vec<&DomainDataset>, Vec<&DomainDataset>) =
                    datasets.iter().partition(|d| d.p_star().is_some());
                let unl = mean_of(with.iter().map(|d| ev.accuracy(d.domain, ClassGroup::Unlabeled)));
                let reference = mean_of(without.iter().map(|d| ev.accuracy(d.domain, ClassGroup::Labeled)));
                let keys = |m: &str| vec![fmt_num(target), fmt_num(p), m.to_string()];
                table.record(seed, keys("unlabeled_accuracy"), unl);
                table.record(seed, keys("reference_accuracy"), reference);
            }
        }
    }
    let table = table.finish();
    table.write_file(&out.join("sweep-p.csv"))?;
    Ok(table)
}

/// Accuracy of `params` on the samples of `ds`'s evaluation pool whose class
/// is in `classes`.
fn class_accuracy(
    params: &NetworkParams,
    ds: &DomainDataset,
    setting: EvalSetting,
    classes: &[usize],
) -> Result<Option<f64>, HarnessError> {
    let pool: Vec<usize> =
        ds.evaluation_pool(setting)?.into_iter().filter(|&i| classes.contains(&ds.labels[i])).collect();
    if pool.is_empty() {
        return Ok(None);
    }
    let mut values = Vec::with_capacity(pool.len() * ds.sample_len());
    for &i in &pool {
        values.extend_from_slice(ds.sample(i));
    }
    let probs = network::predict_probs(
        params,
        &Tensor::new(vec![pool.len(), ds.sample_len()], values).map_err(network::NetworkError::from)?,
    )?;
    let correct = (0..pool.len()).filter(|&r| argmax(probs.row(r)) == ds.labels[pool[r]]).count();
    Ok(Some(correct as f64 / pool.len() as f64))
}

/// Class-asymmetry cases on two domains: per method and case, `x` is the
/// accuracy on domain 1's alpha and beta classes and `y` the accuracy on
/// domain 2's (unlabeled) beta classes. Writes `asymmetry.csv`.
pub fn cmd_asymmetry(cfg: &ExperimentConfig, out: &Path) -> Result<Table, HarnessError> {
    cfg.validate()?;
    let setting = cfg.train.eval_setting()?;
    let roles = cfg.asymmetry.roles();
    let alpha_beta: Vec<usize> = roles.alpha.iter().chain(&roles.beta).copied().collect();
    let methods: Vec<Method> = cfg.asymmetry.methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    let mut table = SeedTable::new("asymmetry/1", &["case", "method", "metric"]);
    for &id in &cfg.asymmetry.cases {
        let case = AsymmetryCase::from_id(id)?;
        for seed in cfg.seeds() {
            let raw = raw_datasets(cfg, seed)?;
            let data = build_asymmetry_case(&raw, case, &roles, &cfg.split.spec(), seed)?;
            table.record(seed, vec![id.to_string(), String::new(), "p_star".into()], Some(data.p_star));
            for &method in &methods {
                let mut train_cfg = cfg.train.to_config(seed, data.p_star)?;
                train_cfg.method = method;
                let params = fit(cfg, &train_cfg, &data.datasets)?;
                let x = class_accuracy(&params, &data.datasets[0], setting, &alpha_beta)?;
                let y = class_accuracy(&params, &data.datasets[1], setting, &roles.beta)?;
                table.record(seed, vec![id.to_string(), method.to_string(), "x".into()], x);
                table.record(seed, vec![id.to_string(), method.to_string(), "y".into()], y);
            }
        }
    }
    let table = table.finish();
    table.write_file(&out.join("asymmetry.csv"))?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSummary {
    pub table: Table,
    pub instances: usize,
    pub checks: usize,
    pub violations: usize,
}

/// Fuzzes random discrete instances and checks every bound on each. One row
/// per instance and bound holds the tightest check (least slack) and the
/// number of checks and violations. The `thm1-tighter-order` row compares
/// the two compound right-hand sides. Writes `bounds.csv`.
pub fn cmd_bounds(cfg: &ExperimentConfig, out: &Path) -> Result<BoundsSummary, HarnessError> {
    cfg.validate()?;
    let spec = cfg.bounds.spec();
    let seed = cfg.experiment.seed;
    let mut table = Table::new(
        "bounds/1",
        &["seed", "instance", "domains", "bound", "checks", "violations", "lhs", "rhs", "slack", "pass"],
    );
    let (mut checks, mut violations) = (0, 0);
    for k in 0..cfg.bounds.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let inst = fuzz_instance(&spec, &mut rng)?;
        let check = check_instance(&inst, rng.random())?;
        let mut ids: Vec<BoundId> = Vec::new();
        for r in &check.reports {
            if !ids.contains(&r.id) {
                ids.push(r.id);
            }
        }
        let mut row = |bound: String, n: usize, bad: usize, lhs: f64, rhs: f64| {
            table.push(vec![
                seed.to_string(),
                k.to_string(),
                inst.n().to_string(),
                bound,
                n.to_string(),
                bad.to_string(),
                fmt_num(lhs),
                fmt_num(rhs),
                fmt_num(rhs - lhs),
                (bad == 0).to_string(),
            ]);
        };
        for id in ids {
            let group: Vec<_> = check.reports.iter().filter(|r| r.id == id).collect();
            let worst = group.iter().min_by(|a, b| a.slack().total_cmp(&b.slack())).expect("non-empty");
            let bad = group.iter().filter(|r| !r.pass).count();
            checks += group.len();
            violations += bad;
            row(id.to_string(), group.len(), bad, worst.lhs, worst.rhs);
        }
        let rhs_of = |id| check.reports.iter().find(|r| r.id == id).map(|r| r.rhs).expect("theorem rows present");
        let bad = usize::from(!check.tighter_is_tighter);
        checks += 1;
        violations += bad;
        row("thm1-tighter-order".into(), 1, bad, rhs_of(BoundId::Thm1Tighter), rhs_of(BoundId::Thm1));
    }
    table.write_file(&out.join("bounds.csv"))?;
    Ok(BoundsSummary { table, instances: cfg.bounds.instances, checks, violations })
}

fn rows_of(ds: &DomainDataset) -> Vec<Vec<f64>> {
    (0..ds.len()).map(|i| ds.sample(i).to_vec()).collect()
}

fn feature_rows(params: &NetworkParams, ds: &DomainDataset) -> Result<Vec<Vec<f64>>, HarnessError> {
    let batch = Tensor::new(vec![ds.len(), ds.sample_len()], ds.inputs.clone()).map_err(network::NetworkError::from)?;
    let f = extract_features(params, &batch)?;
    Ok((0..f.rows()).map(|r| f.row(r).to_vec()).collect())
}

/// Proxy divergence for every unordered domain pair on three
/// representations: raw inputs, features of the untrained network and
/// features of the checkpoint written by `train`. Writes `divergence.csv`.
pub fn cmd_divergence(cfg: &ExperimentConfig, out: &Path) -> Result<Table, HarnessError> {
    cfg.validate()?;
    let mut table = SeedTable::new("divergence/1", &["domain_a", "domain_b", "stage"]);
    for seed in cfg.seeds() {
        let (_, trained) = load_trained(cfg, out, seed)?;
        let init = network::build(&trained.spec, seed)?;
        let datasets = build_datasets(cfg, seed)?;
        let proxy = cfg.divergence.proxy(seed);
        let mut stages: Vec<(&str, Vec<Vec<Vec<f64>>>)> = vec![("input", datasets.iter().map(rows_of).collect())];
        stages.push(("init-features", datasets.iter().map(|d| feature_rows(&init, d)).collect::<Result<_, _>>()?));
        stages
            .push(("trained-features", datasets.iter().map(|d| feature_rows(&trained, d)).collect::<Result<_, _>>()?));
        for a in 0..datasets.len() {
            for b in a + 1..datasets.len() {
                for (stage, rows) in &stages {
                    let est = proxy_divergence(&rows[a], &rows[b], &proxy)?;
                    let keys = vec![datasets[a].domain.to_string(), datasets[b].domain.to_string(), stage.to_string()];
                    table.record(seed, keys, Some(est.divergence));
                }
            }
        }
    }
    let table = table.finish();
    table.write_file(&out.join("divergence.csv"))?;
    Ok(table)
}
