//! MAL training (encoder, cosine classifier, discriminator) and task-model
//! training on the labeled pool.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::acquisition::normalize_rows;
use crate::datagen::Dataset;
use crate::engine::config::TrainConfig;
use crate::engine::optim::Adam;
use crate::error::{Error, Result};
use crate::networks::{Bound, Discriminator, Encoder, PrototypeClassifier, TaskModel};
use crate::objectives::{cross_entropy, discriminator_bce, minimax_entropy_term};
use crate::pools::PoolState;
use crate::rng::{self, tag};
use crate::tensor::Tape;

/// The three networks trained jointly by MAL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalModels {
    pub encoder: Encoder,
    pub classifier: PrototypeClassifier,
    pub discriminator: Discriminator,
}

impl MalModels {
    pub fn init(
        seed: u64,
        input_dim: usize,
        num_classes: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::init(
                rng::derive_seed(seed, &[tag::ENCODER_INIT]),
                input_dim,
                &cfg.encoder_hidden,
                cfg.latent_dim,
            )?,
            classifier: PrototypeClassifier::init(
                rng::derive_seed(seed, &[tag::CLASSIFIER_INIT]),
                cfg.latent_dim,
                num_classes,
                cfg.temperature,
                cfg.normalize_prototypes,
            )?,
            discriminator: Discriminator::init(
                rng::derive_seed(seed, &[tag::DISCRIMINATOR_INIT]),
                cfg.latent_dim,
                &cfg.disc_hidden,
            )?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// ℓ2-normalized encoder features.
    pub fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(normalize_rows(&self.encoder.encode_array(x)?))
    }
}

/// Mean losses of each epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub cross_entropy: Vec<f64>,
    /// Mean unlabeled entropy, empty when the minimax step is skipped.
    pub entropy: Vec<f64>,
    /// Discriminator BCE, empty when the discriminator is not trained.
    pub bce: Vec<f64>,
}

fn steps_per_epoch(cfg: &TrainConfig, pool: &PoolState) -> usize {
    cfg.steps_per_epoch
        .unwrap_or_else(|| pool.len().div_ceil(cfg.batch_size))
        .max(1)
}

/// One epoch is `steps_per_epoch` steps (default: one pass over the pool).
/// Each step takes (1) a cross-entropy step on F and C, (2) the minimax
/// entropy step on F and C, and (3) a BCE step on D over detached features
/// of the updated encoder. Batches are drawn from `(seed, step)` streams.
pub fn train_mal(
    models: &mut MalModels,
    pool: &PoolState,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainLog> {
    if pool.labeled_count() == 0 {
        return Err(Error::Contract("train_mal: labeled pool is empty".into()));
    }
    if pool.unlabeled_count() == 0 {
        return Err(Error::Contract("train_mal: unlabeled pool is empty".into()));
    }
    let minimax = !cfg.ablation.no_minimax;
    let discriminate = !cfg.ablation.no_discriminator;
    let mut opt_f = Adam::new(&models.encoder, cfg.lr_encoder, cfg.adam);
    let mut opt_c = Adam::new(&models.classifier, cfg.lr_classifier, cfg.adam);
    let mut opt_d = Adam::new(&models.discriminator, cfg.lr_discriminator, cfg.adam);
    let steps = steps_per_epoch(cfg, pool);
    let bu = cfg.unlabeled_batch_size();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let (mut ce_sum, mut h_sum, mut bce_sum) = (0.0, 0.0, 0.0);
        for i in 0..steps {
            let step = (epoch * steps + i) as u64;
            let (xl, yl) = pool.labeled_batch(cfg.batch_size, seed, step)?;
            let xu = pool.unlabeled_batch(bu, seed, step)?;

            ce_sum += supervised_step(models, &mut opt_f, &mut opt_c, &xl, &yl)?;
            if minimax {
                h_sum += minimax_step(models, &mut opt_f, &mut opt_c, &xu, cfg)?;
            }
            if discriminate {
                bce_sum += discriminator_step(models, &mut opt_d, &xl, &xu)?;
            }
        }
        let n = steps as f64;
        log.cross_entropy.push(ce_sum / n);
        if minimax {
            log.entropy.push(h_sum / n);
        }
        if discriminate {
            log.bce.push(bce_sum / n);
        }
    }
    Ok(log)
}

fn supervised_step(
    m: &mut MalModels,
    opt_f: &mut Adam,
    opt_c: &mut Adam,
    x: &Array2<f64>,
    y: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new();
    let fp = Bound::bind(&mut tape, &m.encoder, true);
    let cp = Bound::bind(&mut tape, &m.classifier, true);
    let xi = tape.constant(x.clone());
    let feats = m.encoder.encode(&mut tape, &fp, xi)?;
    let logits = m.classifier.classify(&mut tape, &cp, feats)?;
    let probs = tape.softmax_rows(logits);
    let ce = cross_entropy(&mut tape, probs, y)?;
    tape.backward(ce.node)?;
    opt_f.step(&mut m.encoder, &fp.grads(&tape))?;
    opt_c.step(&mut m.classifier, &cp.grads(&tape))?;
    m.classifier.project();
    Ok(ce.value(&tape))
}

/// One descent step of both optimizers on the minimax objective.
pub fn minimax_step(
    m: &mut MalModels,
    opt_f: &mut Adam,
    opt_c: &mut Adam,
    xu: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (gf, gc, h) = minimax_grads(m, xu, cfg)?;
    opt_f.step(&mut m.encoder, &gf)?;
    opt_c.step(&mut m.classifier, &gc)?;
    m.classifier.project();
    Ok(h)
}

/// Encoder gradients, classifier gradients and the batch entropy.
pub type MinimaxGrads = (Vec<Array2<f64>>, Vec<Array2<f64>>, f64);

/// Gradients of the minimax objective for F and C, plus the batch entropy.
pub fn minimax_grads(m: &MalModels, xu: &Array2<f64>, cfg: &TrainConfig) -> Result<MinimaxGrads> {
    let mut tape = Tape::new();
    let fp = Bound::bind(&mut tape, &m.encoder, true);
    let cp = Bound::bind(&mut tape, &m.classifier, true);
    let term = minimax_entropy_term(
        &mut tape,
        &m.encoder,
        &fp,
        &m.classifier,
        &cp,
        xu,
        cfg.lambda,
        cfg.entropy_weight,
        cfg.entropy_sign,
    )?;
    tape.backward(term.objective.node)?;
    Ok((fp.grads(&tape), cp.grads(&tape), term.entropy))
}

fn discriminator_step(
    m: &mut MalModels,
    opt_d: &mut Adam,
    xl: &Array2<f64>,
    xu: &Array2<f64>,
) -> Result<f64> {
    let zl = m.embed(xl)?;
    let zu = m.embed(xu)?;
    let mut tape = Tape::new();
    let dp = Bound::bind(&mut tape, &m.discriminator, true);
    let bce = discriminator_bce(&mut tape, &m.discriminator, &dp, &zl, &zu)?;
    tape.backward(bce.node)?;
    opt_d.step(&mut m.discriminator, &dp.grads(&tape))?;
    Ok(bce.value(&tape))
}

/// Initial task model: pretrained encoder backbone with a fresh head, or a
/// freshly initialized network of the same shape.
pub fn task_model(
    pretrained: Option<&Encoder>,
    input_dim: usize,
    num_classes: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TaskModel> {
    let seed = rng::derive_seed(seed, &[tag::TASK_INIT]);
    match pretrained {
        Some(enc) => {
            if enc.input_dim() != input_dim {
                return Err(Error::Shape {
                    op: "task backbone",
                    left: (enc.input_dim(), enc.latent_dim()),
                    right: (input_dim, cfg.latent_dim),
                });
            }
            Ok(TaskModel::from_encoder(enc, num_classes, seed))
        }
        None => {
            let mut dims = vec![input_dim];
            dims.extend(&cfg.encoder_hidden);
            dims.push(cfg.latent_dim);
            TaskModel::init(seed, &dims, num_classes)
        }
    }
}

/// Trains `model` with cross-entropy on the labeled pool only. One epoch is
/// `ceil(|L| / batch_size)` steps. Returns the per-epoch mean loss.
pub fn fit_task(
    model: &mut TaskModel,
    pool: &PoolState,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if pool.labeled_count() == 0 {
        return Err(Error::Contract("train_task: labeled pool is empty".into()));
    }
    let mut opt = Adam::new(&*model, cfg.lr_task, cfg.adam);
    let steps = pool.labeled_count().div_ceil(cfg.batch_size).max(1);
    let batch_seed = rng::derive_seed(seed, &[tag::TASK_BATCH]);
    let mut losses = Vec::with_capacity(cfg.task_epochs);
    for epoch in 0..cfg.task_epochs {
        let mut sum = 0.0;
        for i in 0..steps {
            let (x, y) =
                pool.labeled_batch(cfg.batch_size, batch_seed, (epoch * steps + i) as u64)?;
            let mut tape = Tape::new();
            let params = Bound::bind(&mut tape, &*model, true);
            let xi = tape.constant(x);
            let probs = model.forward(&mut tape, &params, xi)?;
            let ce = cross_entropy(&mut tape, probs, &y)?;
            tape.backward(ce.node)?;
            opt.step(model, &params.grads(&tape))?;
            sum += ce.value(&tape);
        }
        losses.push(sum / steps as f64);
    }
    Ok(losses)
}

/// Builds M from `pretrained` (or from scratch), fits it on L and returns it
/// with its test accuracy.
pub fn train_task(
    pretrained: Option<&Encoder>,
    pool: &PoolState,
    test: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TaskModel, f64)> {
    let mut model = task_model(pretrained, test.input_dim(), test.num_classes, cfg, seed)?;
    fit_task(&mut model, pool, cfg, seed)?;
    let acc = evaluate(&model, test)?;
    Ok((model, acc))
}

/// Row-wise argmax, ties to the lower class id.
pub fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(scores: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if scores.nrows() != labels.len() {
        return Err(Error::Shape {
            op: "accuracy",
            left: scores.dim(),
            right: (labels.len(), 1),
        });
    }
    if labels.is_empty() {
        return Err(Error::Contract("accuracy on an empty test set".into()));
    }
    let correct = argmax_rows(scores)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn evaluate(model: &TaskModel, test: &Dataset) -> Result<f64> {
    accuracy(&model.forward_array(&test.features)?, &test.labels)
}
