use super::HarnessError;
use crate::bounds::{FuzzSpec, ProxyConfig};
use crate::data::{ClassRoles, EvalSetting, SplitSpec, SynthSpec};
use crate::network::Variant;
use crate::trainer::{Method, Schedule, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

fn config_err(path: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Config { path: path.to_string(), reason: reason.into() }
}

/// Everything that determines a run. Every section and key is optional;
/// missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub asymmetry: AsymmetrySection,
    pub bounds: BoundsSection,
    pub divergence: DivergenceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Subdirectory of the output root.
    pub name: String,
    /// First seed; runs use `seed, seed + 1, ...`.
    pub seed: u64,
    pub seeds: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection { name: "experiment".into(), seed: 0, seeds: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Gaussian class clusters per domain.
    Synthetic,
    /// Datasets in the columnar text format, used as stored.
    File,
    /// Grayscale digits (IDX files, or generated glyphs) and their colorized copy.
    Digits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub domains: usize,
    pub classes: usize,
    pub radius: f64,
    pub scale: f64,
    pub shift: f64,
    pub rotation: f64,
    pub per_class: usize,
    pub nuisance_dims: usize,
    pub offset: f64,
    /// Dataset file for `source = "file"`.
    pub path: Option<PathBuf>,
    /// IDX files for `source = "digits"`; glyphs are generated when absent.
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub glyph_size: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            domains: 2,
            classes: 6,
            radius: 3.0,
            scale: 0.9,
            shift: 0.0,
            rotation: 0.0,
            per_class: 60,
            nuisance_dims: 2,
            offset: 3.0,
            path: None,
            images: None,
            labels: None,
            glyph_size: 28,
        }
    }
}

impl DataSection {
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            domains: self.domains,
            classes: self.classes,
            radius: self.radius,
            scale: self.scale,
            shift: self.shift,
            rotation: self.rotation,
            per_class: self.per_class,
            nuisance_dims: self.nuisance_dims,
            offset: self.offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub labeled_class_fraction: f64,
    pub labeled_per_class: usize,
    pub test_fraction: f64,
    pub nft_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { labeled_class_fraction: 0.5, labeled_per_class: 10, test_fraction: 0.2, nft_fraction: 0.0 }
    }
}

impl SplitSection {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            labeled_class_fraction: self.labeled_class_fraction,
            labeled_per_class: self.labeled_per_class,
            test_fraction: self.test_fraction,
            nft_fraction: self.nft_fraction,
        }
    }
}

/// `p` as a number, or `"p-star"` for the true extra-class fraction of the
/// data at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PSetting {
    Value(f64),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub method: String,
    pub variant: String,
    pub lr: f64,
    pub lr_schedule: String,
    pub lambda: f64,
    pub lambda_schedule: String,
    pub zeta: f64,
    pub p: PSetting,
    pub momentum: f64,
    pub batch_size: usize,
    /// Labeled share of each batch; proportional to the pools when absent.
    pub labeled_share: Option<f64>,
    pub steps: usize,
    /// `ft` or `nft`.
    pub eval: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            method: "mulann".into(),
            variant: "mlp-synthetic".into(),
            lr: 0.01,
            lr_schedule: "exp-decreasing".into(),
            lambda: 0.8,
            lambda_schedule: "exp-increasing".into(),
            zeta: 0.8,
            p: PSetting::Keyword("p-star".into()),
            momentum: 0.9,
            batch_size: 32,
            labeled_share: None,
            steps: 1000,
            eval: "ft".into(),
        }
    }
}

impl TrainSection {
    pub fn method(&self) -> Result<Method, HarnessError> {
        self.method.parse().map_err(|_| config_err("train.method", format!("unknown method `{}`", self.method)))
    }

    pub fn variant(&self) -> Result<Variant, HarnessError> {
        self.variant.parse().map_err(|_| config_err("train.variant", format!("unknown variant `{}`", self.variant)))
    }

    pub fn eval_setting(&self) -> Result<EvalSetting, HarnessError> {
        match self.eval.as_str() {
            "ft" => Ok(EvalSetting::Ft),
            "nft" => Ok(EvalSetting::Nft),
            other => Err(config_err("train.eval", format!("expected `ft` or `nft`, got `{other}`"))),
        }
    }

    /// The fixed `p`, or `None` when it follows the data.
    pub fn fixed_p(&self) -> Result<Option<f64>, HarnessError> {
        match &self.p {
            PSetting::Value(p) if (0.0..=1.0).contains(p) => Ok(Some(*p)),
            PSetting::Value(p) => Err(config_err("train.p", format!("{p} outside [0, 1]"))),
            PSetting::Keyword(k) if k == "p-star" => Ok(None),
            PSetting::Keyword(k) => Err(config_err("train.p", format!("expected a number or `p-star`, got `{k}`"))),
        }
    }

    /// Trainer settings for one seed, with `p_star` filling in `p = "p-star"`.
    pub fn to_config(&self, seed: u64, p_star: f64) -> Result<TrainConfig, HarnessError> {
        let schedule = |path: &str, s: &str| -> Result<Schedule, HarnessError> {
            s.parse().map_err(|_| config_err(path, format!("unknown schedule `{s}`")))
        };
        let cfg = TrainConfig {
            method: self.method()?,
            lr: self.lr,
            lr_schedule: schedule("train.lr_schedule", &self.lr_schedule)?,
            lambda: self.lambda,
            lambda_schedule: schedule("train.lambda_schedule", &self.lambda_schedule)?,
            zeta: self.zeta,
            p: self.fixed_p()?.unwrap_or(p_star),
            momentum: self.momentum,
            batch_size: self.batch_size,
            labeled_share: self.labeled_share,
            steps: self.steps,
            seed,
            eval: self.eval_setting()?,
        };
        cfg.validate().map_err(|e| config_err("train", e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Values of `p` tried for every `p_star`.
    pub p: Vec<f64>,
    /// Targets for the extra-class fraction of each unlabeled pool.
    pub p_star: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { p: vec![0.0, 0.3, 0.5, 0.7, 1.0], p_star: vec![0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsymmetrySection {
    pub cases: Vec<u32>,
    pub methods: Vec<String>,
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    pub gamma: Vec<usize>,
    pub delta: Vec<usize>,
}

impl Default for AsymmetrySection {
    fn default() -> Self {
        AsymmetrySection {
            cases: vec![1, 2, 3, 4],
            methods: vec!["dann".into(), "mada".into(), "mulann".into()],
            alpha: vec![0, 1],
            beta: vec![2, 3],
            gamma: vec![4],
            delta: vec![5],
        }
    }
}

impl AsymmetrySection {
    pub fn roles(&self) -> ClassRoles {
        ClassRoles {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
            delta: self.delta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub instances: usize,
    pub dims: usize,
    pub min_domains: usize,
    pub max_domains: usize,
    pub max_points: usize,
    pub grid: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        let f = FuzzSpec::default();
        BoundsSection {
            instances: 1000,
            dims: f.dims,
            min_domains: f.min_domains,
            max_domains: f.max_domains,
            max_points: f.max_points,
            grid: f.grid,
        }
    }
}

impl BoundsSection {
    pub fn spec(&self) -> FuzzSpec {
        FuzzSpec {
            dims: self.dims,
            min_domains: self.min_domains,
            max_domains: self.max_domains,
            max_points: self.max_points,
            grid: self.grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub validation_fraction: f64,
}

impl Default for DivergenceSection {
    fn default() -> Self {
        let p = ProxyConfig::default();
        DivergenceSection {
            max_epochs: p.max_epochs,
            patience: p.patience,
            batch_size: p.batch_size,
            lr: p.lr,
            momentum: p.momentum,
            validation_fraction: p.validation_fraction,
        }
    }
}

impl DivergenceSection {
    pub fn proxy(&self, seed: u64) -> ProxyConfig {
        ProxyConfig {
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            validation_fraction: self.validation_fraction,
            seed,
        }
    }
}

fn unit(path: String, v: f64) -> Result<(), HarnessError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(config_err(&path, format!("{v} outside [0, 1]")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    /// Checks every key that can be checked without loading data.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.experiment.seeds == 0 {
            return Err(config_err("experiment.seeds", "must be at least 1"));
        }
        if self.experiment.name.is_empty()
            || self.experiment.name.contains(['/', '\\'])
            || self.experiment.name.starts_with('.')
        {
            return Err(config_err("experiment.name", "must be a plain directory name"));
        }
        match self.data.source {
            DataSource::File if self.data.path.is_none() => {
                return Err(config_err("data.path", "required when source = \"file\""))
            }
            DataSource::Digits if self.data.images.is_some() != self.data.labels.is_some() => {
                return Err(config_err("data.images", "images and labels must be given together"))
            }
            _ => {}
        }
        unit("split.labeled_class_fraction".into(), self.split.labeled_class_fraction)?;
        unit("split.test_fraction".into(), self.split.test_fraction)?;
        unit("split.nft_fraction".into(), self.split.nft_fraction)?;
        self.train.variant()?;
        self.train.to_config(0, 0.0)?;
        for (k, &p) in self.sweep.p.iter().enumerate() {
            unit(format!("sweep.p[{k}]"), p)?;
        }
        for (k, &p) in self.sweep.p_star.iter().enumerate() {
            unit(format!("sweep.p_star[{k}]"), p)?;
        }
        for (k, &c) in self.asymmetry.cases.iter().enumerate() {
            if !(1..=4).contains(&c) {
                return Err(config_err(&format!("asymmetry.cases[{k}]"), format!("case {c} outside 1-4")));
            }
        }
        for (k, m) in self.asymmetry.methods.iter().enumerate() {
            m.parse::<Method>()
                .map_err(|_| config_err(&format!("asymmetry.methods[{k}]"), format!("unknown method `{m}`")))?;
        }
        if self.bounds.instances == 0 {
            return Err(config_err("bounds.instances", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.divergence.validation_fraction) || self.divergence.max_epochs == 0 {
            return Err(config_err("divergence", "validation_fraction must be in [0, 1) and max_epochs positive"));
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        let base = self.experiment.seed;
        (0..self.experiment.seeds as u64).map(move |k| base + k)
    }
}
