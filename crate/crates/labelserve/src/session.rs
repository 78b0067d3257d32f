//! The labeling session: one pool, one human oracle, one batch at a time.
//!
//! Every change goes through [`Session::record`], which applies an
//! [`AuditEntry`] and then appends it to the log. Replaying the log through
//! the same path rebuilds the session exactly.

use std::collections::BTreeMap;
use std::sync::Arc;

use malkit::acquisition::{score_unlabeled, AcquisitionScore};
use malkit::datagen::Dataset;
use malkit::engine::{select_from_scores, train_mal, train_task, MalModels, Strategy, TrainConfig};
use malkit::pools::{Annotation, Oracle, PoolState};
use malkit::rng::{derive_seed, tag};
use serde::{Deserialize, Serialize};

use crate::audit::{AuditEntry, AuditError, AuditLog};
use crate::payload::{Payload, PayloadBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Training,
    AwaitingLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub id: usize,
    pub payload: Payload,
    pub d_prob: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub round: usize,
    pub labeled_count: usize,
    pub unlabeled_count: usize,
    pub state: Phase,
    pub num_classes: usize,
    pub budget: usize,
    /// The batch awaiting labels, in selection order; empty otherwise.
    pub batch: Vec<BatchItem>,
    /// Batch ids that already have an answer.
    pub answered: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub labeled_count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundBatch {
    pub round: usize,
    pub batch: Vec<BatchItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReceipt {
    pub accepted: usize,
    pub remaining: usize,
    /// Round after this submission; one higher when it completed the batch.
    pub round: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Engine(#[from] malkit::Error),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("audit log does not replay: {0}")]
    Replay(String),
}

/// Everything a round's training needs, detached from the session so it
/// can run on a worker thread.
#[derive(Debug, Clone)]
pub struct RoundJob {
    pub round: usize,
    cfg: TrainConfig,
    pool: PoolState,
    seed: u64,
    input_dim: usize,
    num_classes: usize,
    budget: usize,
    test: Option<Arc<Dataset>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: usize,
    pub labeled_count: usize,
    pub accuracy: Option<f64>,
    pub items: Vec<AcquisitionScore>,
}

impl RoundJob {
    /// Trains fresh MAL networks on the current pool, scores `U` and picks
    /// the batch. With a test set, also trains and evaluates a task model.
    pub fn run(&self) -> malkit::Result<RoundOutcome> {
        let cfg = &self.cfg;
        let mut m = MalModels::init(self.seed, self.input_dim, self.num_classes, cfg)?;
        train_mal(&mut m, &self.pool, cfg, self.seed)?;
        let scores = score_unlabeled(&m.encoder, &m.classifier, &m.discriminator, &self.pool)?;
        let ids = select_from_scores(cfg, &scores, self.budget)?;
        let by_id: BTreeMap<usize, AcquisitionScore> = scores.iter().map(|s| (s.id, *s)).collect();
        let items = ids.iter().map(|id| by_id[id]).collect();
        let accuracy = match &self.test {
            Some(test) => Some(train_task(Some(&m.encoder), &self.pool, test, cfg, self.seed)?.1),
            None => None,
        };
        Ok(RoundOutcome {
            round: self.round,
            labeled_count: self.pool.labeled_count(),
            accuracy,
            items,
        })
    }
}

#[derive(Debug)]
pub struct Session {
    cfg: TrainConfig,
    seed: u64,
    train: Arc<Dataset>,
    test: Option<Arc<Dataset>>,
    num_classes: usize,
    budget: usize,
    payloads: PayloadBuilder,
    pool: PoolState,
    oracle: Oracle,
    round: usize,
    phase: Phase,
    batch: Vec<BatchItem>,
    received: BTreeMap<usize, usize>,
    receipts: BTreeMap<String, LabelReceipt>,
    curve: Vec<CurvePoint>,
    audit: AuditLog,
}

impl Session {
    /// Starts a session, or resumes one when `audit` already holds entries.
    ///
    /// The initial labeled pool is drawn from `cfg.initial_fraction` and
    /// revealed from the dataset's own labels; every later label comes
    /// from a person.
    pub fn open(
        cfg: TrainConfig,
        dataset: &Dataset,
        seed: u64,
        audit: AuditLog,
    ) -> Result<Self, SessionError> {
        cfg.validate()?;
        if cfg.strategy != Strategy::Mal {
            return Err(malkit::Error::Config(format!(
                "the labeling service selects with mal, not {}",
                cfg.strategy.name()
            ))
            .into());
        }
        let train = dataset.train();
        let test = dataset.test();
        let num_classes = train.num_classes.max(test.num_classes);
        let budget = cfg.budget.resolve(train.len());
        if budget == 0 {
            return Err(malkit::Error::Config(format!(
                "budget {} of a {}-row pool selects no samples",
                cfg.budget,
                train.len()
            ))
            .into());
        }
        let features = Arc::new(train.features.clone());
        let mut ideal = Oracle::ideal(Arc::new(train.labels.clone()));
        let history = audit.entries().to_vec();
        let pool = match history.first() {
            None => PoolState::init(features, &mut ideal, cfg.initial_fraction, seed)?,
            Some(AuditEntry::Started {
                seed: s,
                num_classes: k,
                budget: b,
                initial_ids,
            }) => {
                if (*s, *k, *b) != (seed, num_classes, budget) {
                    return Err(SessionError::Replay(format!(
                        "log was written with seed {s}, {k} classes, budget {b}; \
                         this session has seed {seed}, {num_classes} classes, budget {budget}"
                    )));
                }
                PoolState::with_initial(features, &mut ideal, initial_ids.clone(), seed)?
            }
            Some(other) => {
                return Err(SessionError::Replay(format!("log starts with {other:?}")));
            }
        };
        let test = (!test.is_empty()).then(|| {
            Arc::new(Dataset {
                num_classes,
                ..test
            })
        });
        let mut session = Self {
            payloads: PayloadBuilder::for_dataset(&train),
            cfg,
            seed,
            train: Arc::new(train),
            test,
            num_classes,
            budget,
            pool,
            oracle: Oracle::human(num_classes),
            round: 0,
            phase: Phase::Idle,
            batch: Vec::new(),
            received: BTreeMap::new(),
            receipts: BTreeMap::new(),
            curve: Vec::new(),
            audit,
        };
        if history.is_empty() {
            session.audit.append(AuditEntry::Started {
                seed,
                num_classes,
                budget,
                initial_ids: session.pool.labeled_ids(),
            })?;
        } else {
            for (i, entry) in history.iter().enumerate().skip(1) {
                session
                    .apply(entry)
                    .map_err(|e| SessionError::Replay(format!("entry {}: {e}", i + 1)))?;
            }
            session.settle()?;
        }
        Ok(session)
    }

    /// Brings a replayed session to a resting state: a training run cut
    /// short is abandoned, a fully answered batch is committed.
    fn settle(&mut self) -> Result<(), SessionError> {
        match self.phase {
            Phase::Training => self.record(AuditEntry::TrainingFailed {
                round: self.round,
                error: "interrupted".into(),
            }),
            Phase::AwaitingLabels if self.received.len() == self.batch.len() => self.commit(),
            _ => Ok(()),
        }
    }

    pub fn status(&self) -> Status {
        Status {
            round: self.round,
            labeled_count: self.pool.labeled_count(),
            unlabeled_count: self.pool.unlabeled_count(),
            state: self.phase,
            num_classes: self.num_classes,
            budget: self.budget,
            batch: self.batch.clone(),
            answered: self.received.keys().copied().collect(),
        }
    }

    pub fn curve(&self) -> Curve {
        Curve {
            points: self.curve.clone(),
        }
    }

    pub fn pool(&self) -> &PoolState {
        &self.pool
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    /// Labels received so far for the current batch.
    pub fn received(&self) -> &BTreeMap<usize, usize> {
        &self.received
    }

    /// Moves to training and hands back the work to run.
    pub fn begin_round(&mut self) -> Result<RoundJob, SessionError> {
        match self.phase {
            Phase::Idle => {}
            Phase::Training => return Err(SessionError::Conflict("training in progress".into())),
            Phase::AwaitingLabels => {
                return Err(SessionError::Conflict(format!(
                    "round {} is awaiting labels",
                    self.round
                )))
            }
        }
        if self.pool.unlabeled_count() == 0 {
            return Err(SessionError::Conflict(
                "the unlabeled pool is exhausted".into(),
            ));
        }
        self.record(AuditEntry::TrainingStarted { round: self.round })?;
        Ok(RoundJob {
            round: self.round,
            cfg: self.cfg.clone(),
            pool: self.pool.clone(),
            seed: self.round_seed(self.round),
            input_dim: self.train.input_dim(),
            num_classes: self.num_classes,
            budget: self.budget.min(self.pool.unlabeled_count()),
            test: self.test.clone(),
        })
    }

    /// Publishes the batch chosen by `outcome`, or returns to idle if
    /// training failed.
    pub fn finish_round(
        &mut self,
        outcome: malkit::Result<RoundOutcome>,
    ) -> Result<RoundBatch, SessionError> {
        if self.phase != Phase::Training {
            return Err(SessionError::Conflict("no training run to finish".into()));
        }
        match outcome {
            Err(e) => {
                self.record(AuditEntry::TrainingFailed {
                    round: self.round,
                    error: e.to_string(),
                })?;
                Err(e.into())
            }
            Ok(o) => {
                if o.round != self.round {
                    return Err(SessionError::Conflict(format!(
                        "outcome for round {} but the session is at round {}",
                        o.round, self.round
                    )));
                }
                self.record(AuditEntry::BatchIssued {
                    round: o.round,
                    labeled_count: o.labeled_count,
                    accuracy: o.accuracy,
                    items: o.items,
                })?;
                Ok(RoundBatch {
                    round: self.round,
                    batch: self.batch.clone(),
                })
            }
        }
    }

    /// Trains and selects on the calling thread.
    pub fn next_round(&mut self) -> Result<RoundBatch, SessionError> {
        let job = self.begin_round()?;
        let outcome = job.run();
        self.finish_round(outcome)
    }

    /// Accepts answers for ids of the current batch. The batch enters the
    /// pool only once every id has an answer. A repeated idempotency key
    /// returns the first receipt without applying anything.
    pub fn submit_labels(
        &mut self,
        labels: BTreeMap<usize, usize>,
        idempotency_key: Option<String>,
    ) -> Result<LabelReceipt, SessionError> {
        if let Some(receipt) = idempotency_key.as_ref().and_then(|k| self.receipts.get(k)) {
            return Ok(receipt.clone());
        }
        self.check_labels(&labels)?;
        let accepted = labels.len();
        self.record(AuditEntry::LabelsReceived {
            round: self.round,
            labels,
            idempotency_key: idempotency_key.clone(),
        })?;
        let remaining = self.batch.len() - self.received.len();
        if remaining == 0 {
            self.commit()?;
        }
        let receipt = LabelReceipt {
            accepted,
            remaining,
            round: self.round,
        };
        Ok(receipt)
    }

    fn commit(&mut self) -> Result<(), SessionError> {
        self.record(AuditEntry::RoundCommitted {
            round: self.round,
            ids: self.batch.iter().map(|b| b.id).collect(),
        })
    }

    fn round_seed(&self, round: usize) -> u64 {
        derive_seed(self.seed, &[tag::SESSION_ROUND, round as u64])
    }

    fn check_labels(&self, labels: &BTreeMap<usize, usize>) -> Result<(), SessionError> {
        if self.phase != Phase::AwaitingLabels {
            return Err(SessionError::Conflict("no batch is awaiting labels".into()));
        }
        if labels.is_empty() {
            return Err(SessionError::BadRequest("no labels submitted".into()));
        }
        for (&id, &class) in labels {
            if !self.batch.iter().any(|b| b.id == id) {
                return Err(SessionError::BadRequest(format!(
                    "id {id} is not in the current batch"
                )));
            }
            if class >= self.num_classes {
                return Err(SessionError::BadRequest(format!(
                    "class {class} out of range for {} classes",
                    self.num_classes
                )));
            }
            if self.received.contains_key(&id) {
                return Err(SessionError::BadRequest(format!(
                    "id {id} was already labeled this round"
                )));
            }
        }
        Ok(())
    }

    fn record(&mut self, entry: AuditEntry) -> Result<(), SessionError> {
        self.apply(&entry)?;
        self.audit.append(entry)?;
        Ok(())
    }

    fn apply(&mut self, entry: &AuditEntry) -> Result<(), SessionError> {
        let expect_round = |round: usize| {
            if round == self.round {
                Ok(())
            } else {
                Err(SessionError::Replay(format!(
                    "entry for round {round} while the session is at round {}",
                    self.round
                )))
            }
        };
        match entry {
            AuditEntry::Started { .. } => {
                return Err(SessionError::Replay("second start entry".into()));
            }
            AuditEntry::TrainingStarted { round } => {
                expect_round(*round)?;
                if self.phase != Phase::Idle {
                    return Err(SessionError::Conflict("training started while busy".into()));
                }
                self.phase = Phase::Training;
            }
            AuditEntry::TrainingFailed { round, .. } => {
                expect_round(*round)?;
                self.phase = Phase::Idle;
            }
            AuditEntry::BatchIssued {
                round,
                labeled_count,
                accuracy,
                items,
            } => {
                expect_round(*round)?;
                if self.phase != Phase::Training {
                    return Err(SessionError::Conflict(
                        "batch issued without training".into(),
                    ));
                }
                if *labeled_count != self.pool.labeled_count() {
                    return Err(SessionError::Replay(format!(
                        "batch trained on {labeled_count} labels but the pool has {}",
                        self.pool.labeled_count()
                    )));
                }
                let ids: Vec<usize> = items.iter().map(|s| s.id).collect();
                let seed = self.round_seed(*round);
                match self
                    .pool
                    .annotate(ids, &mut self.oracle, &self.cfg.label(), seed, 0)?
                {
                    Annotation::Pending { .. } => {}
                    Annotation::Committed => {
                        return Err(SessionError::Replay(
                            "batch committed without answers".into(),
                        ))
                    }
                }
                self.batch = items
                    .iter()
                    .map(|s| BatchItem {
                        id: s.id,
                        payload: self.payloads.build(
                            self.train
                                .features
                                .row(s.id)
                                .as_slice()
                                .expect("rows are contiguous"),
                        ),
                        d_prob: s.d_prob,
                        entropy: s.entropy,
                    })
                    .collect();
                self.received.clear();
                if let Some(accuracy) = *accuracy {
                    self.curve.push(CurvePoint {
                        round: *round,
                        labeled_count: *labeled_count,
                        accuracy,
                    });
                }
                self.phase = Phase::AwaitingLabels;
            }
            AuditEntry::LabelsReceived {
                round,
                labels,
                idempotency_key,
            } => {
                expect_round(*round)?;
                self.check_labels(labels)?;
                let Oracle::Human(human) = &mut self.oracle else {
                    unreachable!("sessions label through a human oracle")
                };
                for (&id, &class) in labels {
                    human.answer(id, class)?;
                    self.received.insert(id, class);
                }
                let remaining = self.batch.len() - self.received.len();
                if let Some(key) = idempotency_key {
                    self.receipts.insert(
                        key.clone(),
                        LabelReceipt {
                            accepted: labels.len(),
                            remaining,
                            round: if remaining == 0 {
                                self.round + 1
                            } else {
                                self.round
                            },
                        },
                    );
                }
            }
            AuditEntry::RoundCommitted { round, ids } => {
                expect_round(*round)?;
                let batch_ids: Vec<usize> = self.batch.iter().map(|b| b.id).collect();
                if self.phase != Phase::AwaitingLabels || *ids != batch_ids {
                    return Err(SessionError::Replay(format!(
                        "commit of {ids:?} does not match the open batch {batch_ids:?}"
                    )));
                }
                let seed = self.round_seed(*round);
                match self.pool.annotate(
                    ids.clone(),
                    &mut self.oracle,
                    &self.cfg.label(),
                    seed,
                    0,
                )? {
                    Annotation::Committed => {}
                    Annotation::Pending { remaining } => {
                        return Err(SessionError::Replay(format!(
                            "commit with {remaining} answers missing"
                        )))
                    }
                }
                self.batch.clear();
                self.received.clear();
                self.round += 1;
                self.phase = Phase::Idle;
            }
        }
        Ok(())
    }
}
