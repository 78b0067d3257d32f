//! Run configuration and its flat `key = value` file format.
//!
//! One setting per line, `#` starts a comment, lists are comma separated.
//! Unknown keys and badly typed values are rejected. [`ExperimentConfig::to_pairs`]
//! renders every key, and parsing that output reproduces the configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::SelectionRule;
use crate::datagen::{self, CsvSchema, Dataset, DEFAULT_IMBALANCE_RATIOS};
use crate::engine::optim::AdamConfig;
use crate::error::{Error, Result};
use crate::objectives::EntropySign;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Mal,
    Random,
    Entropy,
    KCenter,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mal => "mal",
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::KCenter => "kcenter",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mal" => Ok(Strategy::Mal),
            "random" => Ok(Strategy::Random),
            "entropy" => Ok(Strategy::Entropy),
            "kcenter" | "coreset" => Ok(Strategy::KCenter),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected mal, random, entropy or kcenter)"
            ))),
        }
    }
}

/// Components of MAL that can be switched off independently.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Train F and C on labeled data only; no entropy game.
    pub no_minimax: bool,
    /// Do not train D; select by classifier entropy alone.
    pub no_discriminator: bool,
    /// Train D but select by classifier entropy alone.
    pub sample_by_entropy_only: bool,
    /// Select by discriminator probability alone.
    pub sample_by_dprob_only: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 4] = [
        "no_minimax",
        "no_discriminator",
        "sample_by_entropy_only",
        "sample_by_dprob_only",
    ];

    pub fn single(name: &str) -> Result<Self> {
        let mut a = Ablation::default();
        a.set(name)?;
        Ok(a)
    }

    fn set(&mut self, name: &str) -> Result<()> {
        match name {
            "no_minimax" => self.no_minimax = true,
            "no_discriminator" => self.no_discriminator = true,
            "sample_by_entropy_only" => self.sample_by_entropy_only = true,
            "sample_by_dprob_only" => self.sample_by_dprob_only = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation flag {other:?} (expected one of {:?})",
                    Self::NAMES
                )))
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        *self == Ablation::default()
    }

    pub fn names(&self) -> Vec<&'static str> {
        let on = [
            self.no_minimax,
            self.no_discriminator,
            self.sample_by_entropy_only,
            self.sample_by_dprob_only,
        ];
        Self::NAMES
            .iter()
            .zip(on)
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_by_entropy_only && self.sample_by_dprob_only {
            return Err(Error::Config(
                "sample_by_entropy_only and sample_by_dprob_only are mutually exclusive".into(),
            ));
        }
        if self.no_discriminator && self.sample_by_dprob_only {
            return Err(Error::Config(
                "sample_by_dprob_only needs a trained discriminator".into(),
            ));
        }
        Ok(())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part != "none" {
                a.set(part)?;
            }
        }
        a.validate()?;
        Ok(a)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&self.names().join(","))
        }
    }
}

/// Acquisition budget per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    /// Fraction of the training pool size.
    Fraction(f64),
    Count(usize),
}

impl Budget {
    pub fn resolve(self, pool_size: usize) -> usize {
        match self {
            Budget::Fraction(f) => (pool_size as f64 * f + 1e-9).floor() as usize,
            Budget::Count(c) => c,
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(c) = s.parse::<usize>() {
            return Ok(Budget::Count(c));
        }
        let f: f64 = s.parse().map_err(|_| {
            Error::Config(format!("budget {s:?} is neither a count nor a fraction"))
        })?;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!(
                "budget fraction must be in (0, 1), got {f}"
            )));
        }
        Ok(Budget::Fraction(f))
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Fraction(x) => write!(f, "{x}"),
            Budget::Count(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// MAL training epochs per split.
    pub epochs: usize,
    /// Task-model epochs per split.
    pub task_epochs: usize,
    pub batch_size: usize,
    /// Unlabeled batch size as a multiple of `batch_size`.
    pub unlabeled_ratio: f64,
    /// MAL steps per epoch; defaults to one pass over the pool.
    pub steps_per_epoch: Option<usize>,
    pub lr_encoder: f64,
    pub lr_classifier: f64,
    pub lr_discriminator: f64,
    pub lr_task: f64,
    pub adam: AdamConfig,
    /// Gradient reversal strength.
    pub lambda: f64,
    pub temperature: f64,
    pub entropy_weight: f64,
    pub entropy_sign: EntropySign,
    pub normalize_prototypes: bool,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub disc_hidden: Vec<usize>,
    pub strategy: Strategy,
    pub selection_rule: SelectionRule,
    pub splits: usize,
    pub initial_fraction: f64,
    pub budget: Budget,
    pub seeds: Vec<u64>,
    pub ablation: Ablation,
    pub reinit_per_split: bool,
    /// Record wall-clock times; when off, `wall_ms` is written as 0.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            task_epochs: 100,
            batch_size: 64,
            unlabeled_ratio: 1.0,
            steps_per_epoch: None,
            lr_encoder: 1e-3,
            lr_classifier: 1e-3,
            lr_discriminator: 1e-3,
            lr_task: 1e-3,
            adam: AdamConfig::default(),
            lambda: 1.0,
            temperature: 0.05,
            entropy_weight: 1.0,
            entropy_sign: EntropySign::Minimax,
            normalize_prototypes: true,
            encoder_hidden: vec![64],
            latent_dim: 32,
            disc_hidden: vec![32, 16],
            strategy: Strategy::Mal,
            selection_rule: SelectionRule::RankSum,
            splits: 4,
            initial_fraction: 0.02,
            budget: Budget::Fraction(0.02),
            seeds: (0..5).collect(),
            ablation: Ablation::default(),
            reinit_per_split: false,
            record_timing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs < 1 || self.task_epochs < 1 {
            return bad("epochs and task_epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be >= 1".into());
        }
        if !(self.unlabeled_ratio > 0.0) {
            return bad("unlabeled_ratio must be positive".into());
        }
        for (name, lr) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_classifier", self.lr_classifier),
            ("lr_discriminator", self.lr_discriminator),
            ("lr_task", self.lr_task),
        ] {
            if !(lr > 0.0) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0".into());
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive".into());
        }
        if !(self.entropy_weight >= 0.0) {
            return bad("entropy_weight must be >= 0".into());
        }
        if self.latent_dim < 1 || self.encoder_hidden.contains(&0) || self.disc_hidden.contains(&0)
        {
            return bad("layer sizes must be >= 1".into());
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction < 1.0) {
            return bad("initial_fraction must be in (0, 1)".into());
        }
        if self.budget == Budget::Count(0) {
            return bad("budget must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.ablation.validate()?;
        if self.strategy != Strategy::Mal && !self.ablation.is_empty() {
            return bad(format!(
                "ablation flags apply to the mal strategy only, not {}",
                self.strategy
            ));
        }
        Ok(())
    }

    /// Name used in result files, e.g. `mal` or `mal[no_minimax]`.
    pub fn label(&self) -> String {
        if self.ablation.is_empty() {
            self.strategy.name().to_string()
        } else {
            format!("{}[{}]", self.strategy, self.ablation)
        }
    }

    pub fn unlabeled_batch_size(&self) -> usize {
        ((self.batch_size as f64 * self.unlabeled_ratio).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Blobs,
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub data_seed: u64,
    pub test_fraction: f64,
    pub imbalance: bool,
    pub imbalance_ratios: Vec<f64>,
    pub min_keep: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Blobs,
            classes: 8,
            per_class: 625,
            dim: 16,
            spread: 0.3,
            data_seed: 0,
            test_fraction: 0.2,
            imbalance: false,
            imbalance_ratios: DEFAULT_IMBALANCE_RATIOS.to_vec(),
            min_keep: 5,
        }
    }
}

impl DataConfig {
    /// Builds the dataset, with a held-out test partition.
    pub fn load(&self) -> Result<Dataset> {
        let ds = match &self.source {
            DataSource::Blobs => datagen::generate_blobs(
                self.classes,
                self.per_class,
                self.dim,
                self.spread,
                self.data_seed,
            )?
            .with_test_split(self.test_fraction, self.data_seed)?,
            DataSource::Csv { train, test } => {
                let schema = CsvSchema::default();
                let train = datagen::load_csv(train, &schema)?;
                let test = datagen::load_csv(test, &schema)?;
                Dataset::from_parts(train, test)?
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = datagen::load_idx(train_images, train_labels)?;
                let test = datagen::load_idx(test_images, test_labels)?;
                Dataset::from_parts(train, test)?
            }
        };
        if self.imbalance {
            datagen::apply_imbalance(&ds, &self.imbalance_ratios, self.min_keep, self.data_seed)
        } else {
            Ok(ds)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out_dir: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: DataConfig::default(),
            out_dir: None,
            jobs: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// `0..5` or `1,4,9`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = value.split_once("..") {
        let a: u64 = parse("seeds", a.trim())?;
        let b: u64 = parse("seeds", b.trim())?;
        if b <= a {
            return Err(Error::Config(format!("seeds: empty range {value:?}")));
        }
        return Ok((a..b).collect());
    }
    parse_list("seeds", value)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.jobs < 1 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if let DataSource::Csv { train, test } = &self.data.source {
            if train.as_os_str().is_empty() || test.as_os_str().is_empty() {
                return Err(Error::Config(
                    "dataset = csv needs train_csv and test_csv".into(),
                ));
            }
        }
        if let DataSource::Idx {
            train_images,
            test_images,
            train_labels,
            test_labels,
        } = &self.data.source
        {
            if [train_images, train_labels, test_images, test_labels]
                .iter()
                .any(|p| p.as_os_str().is_empty())
            {
                return Err(Error::Config(
                    "dataset = idx needs train_images, train_labels, test_images, test_labels"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "epochs" => t.epochs = parse(key, value)?,
            "task_epochs" => t.task_epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "unlabeled_ratio" => t.unlabeled_ratio = parse(key, value)?,
            "steps_per_epoch" => {
                t.steps_per_epoch = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "lr" => {
                let lr: f64 = parse(key, value)?;
                t.lr_encoder = lr;
                t.lr_classifier = lr;
                t.lr_discriminator = lr;
                t.lr_task = lr;
            }
            "lr_encoder" => t.lr_encoder = parse(key, value)?,
            "lr_classifier" => t.lr_classifier = parse(key, value)?,
            "lr_discriminator" => t.lr_discriminator = parse(key, value)?,
            "lr_task" => t.lr_task = parse(key, value)?,
            "adam_beta1" => t.adam.beta1 = parse(key, value)?,
            "adam_beta2" => t.adam.beta2 = parse(key, value)?,
            "adam_eps" => t.adam.eps = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "temperature" => t.temperature = parse(key, value)?,
            "entropy_weight" => t.entropy_weight = parse(key, value)?,
            "entropy_sign" => {
                t.entropy_sign = match value {
                    "minimax" => EntropySign::Minimax,
                    "alg1" => EntropySign::Alg1,
                    _ => return Err(Error::Config(format!("{key}: expected minimax or alg1"))),
                }
            }
            "normalize_prototypes" => t.normalize_prototypes = parse_bool(key, value)?,
            "encoder_hidden" => t.encoder_hidden = parse_list(key, value)?,
            "latent_dim" => t.latent_dim = parse(key, value)?,
            "disc_hidden" => t.disc_hidden = parse_list(key, value)?,
            "strategy" => t.strategy = value.parse()?,
            "selection_rule" => {
                t.selection_rule = match value {
                    "rank_sum" => SelectionRule::RankSum,
                    "two_stage" => SelectionRule::TwoStage,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected rank_sum or two_stage"
                        )))
                    }
                }
            }
            "splits" => t.splits = parse(key, value)?,
            "initial_fraction" => t.initial_fraction = parse(key, value)?,
            "budget" => t.budget = value.parse()?,
            "seeds" => t.seeds = parse_seeds(value)?,
            "flags" => t.ablation = value.parse()?,
            "reinit_per_split" => t.reinit_per_split = parse_bool(key, value)?,
            "timing" => t.record_timing = parse_bool(key, value)?,

            "dataset" => {
                d.source = match value {
                    "blobs" => DataSource::Blobs,
                    "csv" => match &d.source {
                        DataSource::Csv { .. } => d.source.clone(),
                        _ => DataSource::Csv {
                            train: PathBuf::new(),
                            test: PathBuf::new(),
                        },
                    },
                    "idx" => match &d.source {
                        DataSource::Idx { .. } => d.source.clone(),
                        _ => DataSource::Idx {
                            train_images: PathBuf::new(),
                            train_labels: PathBuf::new(),
                            test_images: PathBuf::new(),
                            test_labels: PathBuf::new(),
                        },
                    },
                    _ => return Err(Error::Config(format!("{key}: expected blobs, csv or idx"))),
                }
            }
            "train_csv" | "test_csv" => {
                let DataSource::Csv { train, test } = &mut d.source else {
                    return Err(Error::Config(format!("{key} requires dataset = csv first")));
                };
                *(if key == "train_csv" { train } else { test }) = PathBuf::from(value);
            }
            "train_images" | "train_labels" | "test_images" | "test_labels" => {
                let DataSource::Idx {
                    train_images,
                    train_labels,
                    test_images,
                    test_labels,
                } = &mut d.source
                else {
                    return Err(Error::Config(format!("{key} requires dataset = idx first")));
                };
                let slot = match key {
                    "train_images" => train_images,
                    "train_labels" => train_labels,
                    "test_images" => test_images,
                    _ => test_labels,
                };
                *slot = PathBuf::from(value);
            }
            "classes" => d.classes = parse(key, value)?,
            "per_class" => d.per_class = parse(key, value)?,
            "dim" => d.dim = parse(key, value)?,
            "spread" => d.spread = parse(key, value)?,
            "data_seed" => d.data_seed = parse(key, value)?,
            "test_fraction" => d.test_fraction = parse(key, value)?,
            "imbalance" => d.imbalance = parse_bool(key, value)?,
            "imbalance_ratios" => d.imbalance_ratios = parse_list(key, value)?,
            "min_keep" => d.min_keep = parse(key, value)?,

            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "jobs" => self.jobs = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every setting as `(key, value)`, in file order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let d = &self.data;
        let mut p: Vec<(&str, String)> = vec![
            ("epochs", t.epochs.to_string()),
            ("task_epochs", t.task_epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("unlabeled_ratio", t.unlabeled_ratio.to_string()),
            (
                "steps_per_epoch",
                t.steps_per_epoch.map_or("auto".into(), |s| s.to_string()),
            ),
            ("lr_encoder", t.lr_encoder.to_string()),
            ("lr_classifier", t.lr_classifier.to_string()),
            ("lr_discriminator", t.lr_discriminator.to_string()),
            ("lr_task", t.lr_task.to_string()),
            ("adam_beta1", t.adam.beta1.to_string()),
            ("adam_beta2", t.adam.beta2.to_string()),
            ("adam_eps", t.adam.eps.to_string()),
            ("lambda", t.lambda.to_string()),
            ("temperature", t.temperature.to_string()),
            ("entropy_weight", t.entropy_weight.to_string()),
            (
                "entropy_sign",
                match t.entropy_sign {
                    EntropySign::Minimax => "minimax".into(),
                    EntropySign::Alg1 => "alg1".into(),
                },
            ),
            ("normalize_prototypes", t.normalize_prototypes.to_string()),
            ("encoder_hidden", join(&t.encoder_hidden)),
            ("latent_dim", t.latent_dim.to_string()),
            ("disc_hidden", join(&t.disc_hidden)),
            ("strategy", t.strategy.to_string()),
            (
                "selection_rule",
                match t.selection_rule {
                    SelectionRule::RankSum => "rank_sum".into(),
                    SelectionRule::TwoStage => "two_stage".into(),
                },
            ),
            ("splits", t.splits.to_string()),
            ("initial_fraction", t.initial_fraction.to_string()),
            ("budget", t.budget.to_string()),
            ("seeds", join(&t.seeds)),
            ("flags", t.ablation.to_string()),
            ("reinit_per_split", t.reinit_per_split.to_string()),
            ("timing", t.record_timing.to_string()),
        ];
        match &d.source {
            DataSource::Blobs => p.push(("dataset", "blobs".into())),
            DataSource::Csv { train, test } => {
                p.push(("dataset", "csv".into()));
                p.push(("train_csv", train.display().to_string()));
                p.push(("test_csv", test.display().to_string()));
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                p.push(("dataset", "idx".into()));
                p.push(("train_images", train_images.display().to_string()));
                p.push(("train_labels", train_labels.display().to_string()));
                p.push(("test_images", test_images.display().to_string()));
                p.push(("test_labels", test_labels.display().to_string()));
            }
        }
        p.extend([
            ("classes", d.classes.to_string()),
            ("per_class", d.per_class.to_string()),
            ("dim", d.dim.to_string()),
            ("spread", d.spread.to_string()),
            ("data_seed", d.data_seed.to_string()),
            ("test_fraction", d.test_fraction.to_string()),
            ("imbalance", d.imbalance.to_string()),
            ("imbalance_ratios", join(&d.imbalance_ratios)),
            ("min_keep", d.min_keep.to_string()),
            ("jobs", self.jobs.to_string()),
        ]);
        if let Some(dir) = &self.out_dir {
            p.push(("out_dir", dir.display().to_string()));
        }
        p.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
