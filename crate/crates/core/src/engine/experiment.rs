//! The active-learning outer loop over splits and seeds, and its result files.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    score_unlabeled, select_by_d_prob, select_by_entropy, select_kcenter, select_mal,
    select_max_entropy, select_random, AcquisitionScore,
};
use crate::datagen::Dataset;
use crate::engine::checkpoint::Checkpoint;
use crate::engine::config::{ExperimentConfig, Strategy, TrainConfig};
use crate::engine::train::{train_mal, train_task, MalModels};
use crate::error::{Error, Result};
use crate::networks::TaskModel;
use crate::pools::{Oracle, PoolState};
use crate::rng;

/// Test accuracy of one seed after one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub seed: u64,
    pub split: usize,
    pub labeled_count: usize,
    pub accuracy: f64,
    pub wall_ms: u64,
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: usize,
    pub labeled_count: usize,
    pub mean: f64,
    pub std: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// Strategy name, with ablation flags in brackets.
    pub strategy: String,
    pub dataset: String,
    pub summary: Vec<SplitSummary>,
    /// Ordered by seed (config order), then split.
    pub runs: Vec<SplitResult>,
    /// Resolved configuration as `key = value` pairs.
    pub config: Vec<(String, String)>,
    /// Final MAL models per seed; empty for baselines.
    #[serde(skip)]
    pub checkpoints: Vec<Checkpoint>,
}

/// Everything produced by one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub results: Vec<SplitResult>,
    pub pool: PoolState,
    pub models: Option<MalModels>,
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Per-split seed for training streams, so batches differ between splits.
fn split_seed(seed: u64, split: usize) -> u64 {
    rng::derive_seed(seed, &[0x5EED, split as u64])
}

/// Chooses `b` ids to annotate next.
fn select(
    cfg: &TrainConfig,
    pool: &PoolState,
    mal: Option<&MalModels>,
    task: &TaskModel,
    b: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let unlabeled = pool.unlabeled_ids();
    match cfg.strategy {
        Strategy::Random => select_random(&unlabeled, b, seed),
        Strategy::Entropy => {
            let x = pool.unlabeled_features();
            select_max_entropy(&task.forward_array(&x)?, &unlabeled, b)
        }
        Strategy::KCenter => {
            let emb = task.features_array(pool.features())?;
            select_kcenter(&emb, &pool.labeled_ids(), &unlabeled, b)
        }
        Strategy::Mal => {
            let m = mal.expect("mal strategy keeps models");
            let scores = score_unlabeled(&m.encoder, &m.classifier, &m.discriminator, pool)?;
            select_from_scores(cfg, &scores, b)
        }
    }
}

/// MAL selection over precomputed scores, honoring the sampling ablations
/// and the selection rule of `cfg`. Ids come back in selection order.
pub fn select_from_scores(
    cfg: &TrainConfig,
    scores: &[AcquisitionScore],
    b: usize,
) -> Result<Vec<usize>> {
    let a = &cfg.ablation;
    if a.no_discriminator || a.sample_by_entropy_only {
        select_by_entropy(scores, b)
    } else if a.sample_by_dprob_only {
        select_by_d_prob(scores, b)
    } else {
        select_mal(scores, b, cfg.selection_rule)
    }
}

/// Runs splits `0..=cfg.splits` for one seed. Split 0 trains on the initial
/// pool; every later split selects a batch with the models of the previous
/// split, annotates it, retrains and evaluates.
pub fn run_seed(cfg: &TrainConfig, dataset: &Dataset, seed: u64) -> Result<SeedRun> {
    let train = dataset.train();
    let test = dataset.test();
    if test.is_empty() {
        return Err(Error::Config(format!(
            "dataset {:?} has no test partition",
            dataset.name
        )));
    }
    let features = Arc::new(train.features.clone());
    let mut oracle = Oracle::ideal(Arc::new(train.labels.clone()));
    let mut pool = PoolState::init(features, &mut oracle, cfg.initial_fraction, seed)?;
    let b = cfg.budget.resolve(pool.len());
    if b == 0 {
        return Err(Error::Config(format!(
            "budget {} of a {}-row pool selects no samples",
            cfg.budget,
            pool.len()
        )));
    }
    let needed = b * cfg.splits;
    if needed > pool.unlabeled_count() {
        return Err(Error::Selection(format!(
            "{} splits of {b} need {needed} samples but only {} are unlabeled",
            cfg.splits,
            pool.unlabeled_count()
        )));
    }
    let k = train.num_classes.max(test.num_classes);
    let input_dim = train.input_dim();
    let is_mal = cfg.strategy == Strategy::Mal;
    let mut mal = if is_mal {
        Some(MalModels::init(seed, input_dim, k, cfg)?)
    } else {
        None
    };
    let test = Dataset {
        num_classes: k,
        ..test
    };

    let mut results = Vec::with_capacity(cfg.splits + 1);
    let mut task: Option<TaskModel> = None;
    for split in 0..=cfg.splits {
        let start = Instant::now();
        let sseed = split_seed(seed, split);
        if split > 0 {
            let prev = task.as_ref().expect("task model trained in previous split");
            let ids = select(cfg, &pool, mal.as_ref(), prev, b, sseed)?;
            let stamp = if cfg.record_timing { now_ms() } else { 0 };
            pool.annotate(ids, &mut oracle, &cfg.label(), sseed, stamp)?;
        }
        if let Some(m) = mal.as_mut() {
            if cfg.reinit_per_split && split > 0 {
                *m = MalModels::init(sseed, input_dim, k, cfg)?;
            }
            if pool.unlabeled_count() > 0 {
                train_mal(m, &pool, cfg, sseed)?;
            }
        }
        let (model, acc) = train_task(mal.as_ref().map(|m| &m.encoder), &pool, &test, cfg, sseed)?;
        task = Some(model);
        let wall_ms = if cfg.record_timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        log::debug!(
            "{} seed {seed} split {split}: |L| = {}, accuracy {acc:.4}",
            cfg.label(),
            pool.labeled_count()
        );
        results.push(SplitResult {
            seed,
            split,
            labeled_count: pool.labeled_count(),
            accuracy: acc,
            wall_ms,
        });
    }
    Ok(SeedRun {
        results,
        pool,
        models: mal,
    })
}

fn summarize(runs: &[SplitResult], splits: usize) -> Vec<SplitSummary> {
    (0..=splits)
        .map(|split| {
            let rows: Vec<&SplitResult> = runs.iter().filter(|r| r.split == split).collect();
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r.accuracy).sum::<f64>() / n;
            let var = if rows.len() > 1 {
                rows.iter()
                    .map(|r| (r.accuracy - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1.0)
            } else {
                0.0
            };
            SplitSummary {
                split,
                labeled_count: rows[0].labeled_count,
                mean,
                std: var.sqrt(),
                wall_ms: (rows.iter().map(|r| r.wall_ms).sum::<u64>() as f64 / n).round() as u64,
            }
        })
        .collect()
}

/// Runs every configured seed, `cfg.jobs` at a time. Results do not depend
/// on the number of jobs.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let t = &cfg.train;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    let seeds: Vec<SeedRun> = pool.install(|| {
        t.seeds
            .par_iter()
            .map(|&s| run_seed(t, dataset, s))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut runs = Vec::new();
    let mut checkpoints = Vec::new();
    for (run, &seed) in seeds.into_iter().zip(&t.seeds) {
        runs.extend(run.results);
        if let Some(models) = run.models {
            checkpoints.push(Checkpoint {
                seed,
                models,
                labeled_ids: run.pool.labeled_ids(),
            });
        }
    }
    Ok(ExperimentRecord {
        strategy: t.label(),
        dataset: dataset.name.clone(),
        summary: summarize(&runs, t.splits),
        runs,
        config: cfg.to_pairs(),
        checkpoints,
    })
}

impl ExperimentRecord {
    /// `strategy,seed,split,labeled_count,accuracy,wall_ms`
    pub fn results_csv(&self) -> String {
        let mut out = String::from("strategy,seed,split,labeled_count,accuracy,wall_ms\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.strategy, r.seed, r.split, r.labeled_count, r.accuracy, r.wall_ms
            ));
        }
        out
    }

    pub fn curve_json(&self) -> String {
        #[derive(Serialize)]
        struct Curve<'a> {
            strategy: &'a str,
            dataset: &'a str,
            points: &'a [SplitSummary],
        }
        serde_json::to_string_pretty(&Curve {
            strategy: &self.strategy,
            dataset: &self.dataset,
            points: &self.summary,
        })
        .expect("plain data serializes")
    }

    pub fn final_mean(&self) -> f64 {
        self.summary.last().map_or(f64::NAN, |s| s.mean)
    }

    /// File-name stem: `mal`, `mal-no_minimax`, ...
    pub fn file_stem(&self) -> String {
        self.strategy
            .chars()
            .map(|c| match c {
                '[' | ',' => '-',
                ']' => '\0',
                c => c,
            })
            .filter(|&c| c != '\0')
            .collect()
    }

    /// Writes the results CSV, curve JSON, resolved config and (for MAL) one
    /// checkpoint per seed into `dir`. Returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = self.file_stem();
        let mut files = vec![
            (dir.join(format!("{stem}_results.csv")), self.results_csv()),
            (dir.join(format!("{stem}_curve.json")), self.curve_json()),
            (
                dir.join(format!("{stem}_config.txt")),
                self.config
                    .iter()
                    .map(|(k, v)| format!("{k} = {v}\n"))
                    .collect(),
            ),
        ];
        for ck in &self.checkpoints {
            files.push((
                dir.join(format!("{stem}_seed{}.ckpt.json", ck.seed)),
                ck.to_json()?,
            ));
        }
        let mut paths = Vec::new();
        for (path, text) in files {
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}
