//! Labeled / unlabeled partition of a training pool, budget bookkeeping and
//! the oracle that reveals labels.
//!
//! Ids are stable row indices into the pool's feature table. [`PoolState::annotate`]
//! is the only operation that moves ids between the two sides, and it moves a
//! whole batch at once: with a [`HumanOracle`] the batch stays in `U` until every
//! answer has arrived.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Ground-truth label source answering immediately.
#[derive(Debug, Clone)]
pub struct IdealOracle {
    labels: Arc<Vec<usize>>,
}

impl IdealOracle {
    pub fn new(labels: Arc<Vec<usize>>) -> Self {
        Self { labels }
    }

    pub fn label(&self, id: usize) -> usize {
        self.labels[id]
    }
}

/// Label source backed by a person. Never answers on its own.
#[derive(Debug, Clone, Default)]
pub struct HumanOracle {
    num_classes: usize,
    pending: BTreeMap<usize, Option<usize>>,
}

impl HumanOracle {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            pending: BTreeMap::new(),
        }
    }

    pub fn is_pending(&self, id: usize) -> bool {
        self.pending.contains_key(&id)
    }

    pub fn pending_ids(&self) -> Vec<usize> {
        self.pending.keys().copied().collect()
    }

    pub fn remaining(&self) -> usize {
        self.pending.values().filter(|v| v.is_none()).count()
    }

    /// Records a person's answer for a queried id.
    pub fn answer(&mut self, id: usize, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(Error::Selection(format!(
                "class {class} out of range for {} classes",
                self.num_classes
            )));
        }
        match self.pending.get_mut(&id) {
            None => Err(Error::Selection(format!("id {id} is not awaiting a label"))),
            Some(Some(_)) => Err(Error::Selection(format!("id {id} already labeled"))),
            Some(slot) => {
                *slot = Some(class);
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Oracle {
    Ideal(IdealOracle),
    Human(HumanOracle),
}

impl Oracle {
    pub fn ideal(labels: Arc<Vec<usize>>) -> Self {
        Oracle::Ideal(IdealOracle::new(labels))
    }

    pub fn human(num_classes: usize) -> Self {
        Oracle::Human(HumanOracle::new(num_classes))
    }

    /// Asks for labels; `None` means the answers are deferred.
    fn query(&mut self, ids: &[usize]) -> Option<Vec<usize>> {
        match self {
            Oracle::Ideal(o) => Some(ids.iter().map(|&i| o.label(i)).collect()),
            Oracle::Human(h) => {
                let complete = ids
                    .iter()
                    .map(|i| h.pending.get(i).copied().flatten())
                    .collect::<Option<Vec<_>>>();
                match complete {
                    Some(labels) if !ids.is_empty() => {
                        for i in ids {
                            h.pending.remove(i);
                        }
                        Some(labels)
                    }
                    _ => {
                        for &i in ids {
                            h.pending.entry(i).or_insert(None);
                        }
                        None
                    }
                }
            }
        }
    }
}

/// One entry of the acquisition history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split: usize,
    pub ids: Vec<usize>,
    pub strategy: String,
    pub seed: u64,
    /// Milliseconds since the Unix epoch, 0 when not recorded.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Annotation {
    Committed,
    Pending { remaining: usize },
}

#[derive(Debug, Clone)]
pub struct PoolState {
    features: Arc<Array2<f64>>,
    labeled: BTreeSet<usize>,
    unlabeled: BTreeSet<usize>,
    revealed: BTreeMap<usize, usize>,
    history: Vec<SplitRecord>,
    pending: Option<Vec<usize>>,
}

impl PartialEq for PoolState {
    fn eq(&self, other: &Self) -> bool {
        self.labeled == other.labeled
            && self.unlabeled == other.unlabeled
            && self.revealed == other.revealed
            && self.history == other.history
            && self.pending == other.pending
            && *self.features == *other.features
    }
}

impl PoolState {
    /// Labels `floor(n * initial_fraction)` ids drawn uniformly; the draw is
    /// recorded as split 0 with strategy `"initial"`.
    pub fn init(
        features: Arc<Array2<f64>>,
        oracle: &mut Oracle,
        initial_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(initial_fraction > 0.0 && initial_fraction < 1.0) {
            return Err(Error::Config(format!(
                "initial fraction must be in (0, 1), got {initial_fraction}"
            )));
        }
        let n = features.nrows();
        let count = (n as f64 * initial_fraction + 1e-9).floor() as usize;
        if count == 0 {
            return Err(Error::Config(format!(
                "initial fraction {initial_fraction} of {n} rows labels no samples"
            )));
        }
        let mut ids: Vec<usize> = (0..n).collect();
        let mut r = rng::stream(seed, &[tag::INIT_POOL]);
        let (chosen, _) = ids.partial_shuffle(&mut r, count);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        Self::with_initial(features, oracle, chosen, seed)
    }

    /// A pool whose initial labeled set is given explicitly.
    pub fn with_initial(
        features: Arc<Array2<f64>>,
        oracle: &mut Oracle,
        initial: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let n = features.nrows();
        let mut pool = Self {
            features,
            labeled: BTreeSet::new(),
            unlabeled: (0..n).collect(),
            revealed: BTreeMap::new(),
            history: Vec::new(),
            pending: None,
        };
        if initial.is_empty() {
            return Err(Error::Contract("initial labeled set is empty".into()));
        }
        match pool.annotate_as(initial, oracle, 0, "initial", seed, 0)? {
            Annotation::Committed => Ok(pool),
            Annotation::Pending { .. } => Err(Error::Contract(
                "the initial pool needs an oracle that answers immediately".into(),
            )),
        }
    }

    /// Rebuilds a pool by replaying a recorded history, starting from the
    /// split-0 record.
    pub fn replay(
        features: Arc<Array2<f64>>,
        oracle: &mut Oracle,
        history: &[SplitRecord],
    ) -> Result<Self> {
        let (first, rest) = history
            .split_first()
            .ok_or_else(|| Error::Contract("empty history".into()))?;
        let n = features.nrows();
        let mut pool = Self {
            features,
            labeled: BTreeSet::new(),
            unlabeled: (0..n).collect(),
            revealed: BTreeMap::new(),
            history: Vec::new(),
            pending: None,
        };
        for rec in std::iter::once(first).chain(rest) {
            let outcome = pool.annotate_as(
                rec.ids.clone(),
                oracle,
                rec.split,
                &rec.strategy,
                rec.seed,
                rec.timestamp,
            )?;
            if outcome != Annotation::Committed {
                return Err(Error::Contract(format!(
                    "split {} could not be replayed: oracle deferred",
                    rec.split
                )));
            }
        }
        Ok(pool)
    }

    pub fn features(&self) -> &Arc<Array2<f64>> {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn labeled_ids(&self) -> Vec<usize> {
        self.labeled.iter().copied().collect()
    }

    pub fn unlabeled_ids(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn is_labeled(&self, id: usize) -> bool {
        self.labeled.contains(&id)
    }

    pub fn is_unlabeled(&self, id: usize) -> bool {
        self.unlabeled.contains(&id)
    }

    pub fn revealed_label(&self, id: usize) -> Option<usize> {
        self.revealed.get(&id).copied()
    }

    pub fn history(&self) -> &[SplitRecord] {
        &self.history
    }

    /// Ids awaiting human answers, if a batch is outstanding.
    pub fn pending(&self) -> Option<&[usize]> {
        self.pending.as_deref()
    }

    /// Index of the next acquisition split (split 0 is the initial draw).
    pub fn next_split(&self) -> usize {
        self.history.last().map_or(0, |r| r.split + 1)
    }

    /// Moves `ids` from U to L once the oracle has labeled all of them.
    pub fn annotate(
        &mut self,
        ids: Vec<usize>,
        oracle: &mut Oracle,
        strategy: &str,
        seed: u64,
        timestamp: u64,
    ) -> Result<Annotation> {
        let split = self.next_split();
        self.annotate_as(ids, oracle, split, strategy, seed, timestamp)
    }

    fn annotate_as(
        &mut self,
        ids: Vec<usize>,
        oracle: &mut Oracle,
        split: usize,
        strategy: &str,
        seed: u64,
        timestamp: u64,
    ) -> Result<Annotation> {
        if ids.is_empty() {
            return Err(Error::Contract(
                "annotation batch must hold at least one id".into(),
            ));
        }
        if let Some(pending) = &self.pending {
            if *pending != ids {
                return Err(Error::Selection(
                    "another batch is still awaiting labels".into(),
                ));
            }
        }
        let mut seen = BTreeSet::new();
        for &id in &ids {
            if !seen.insert(id) {
                return Err(Error::Selection(format!("duplicate id {id} in batch")));
            }
            if !self.unlabeled.contains(&id) {
                return Err(Error::Selection(format!(
                    "id {id} is not in the unlabeled pool"
                )));
            }
        }
        let Some(labels) = oracle.query(&ids) else {
            let remaining = match oracle {
                Oracle::Human(h) => ids
                    .iter()
                    .filter(|i| h.pending.get(i) == Some(&None))
                    .count(),
                Oracle::Ideal(_) => 0,
            };
            self.pending = Some(ids);
            return Ok(Annotation::Pending { remaining });
        };
        for (&id, &y) in ids.iter().zip(&labels) {
            self.unlabeled.remove(&id);
            self.labeled.insert(id);
            self.revealed.insert(id, y);
        }
        self.pending = None;
        self.history.push(SplitRecord {
            split,
            ids,
            strategy: strategy.to_string(),
            seed,
            timestamp,
        });
        Ok(Annotation::Committed)
    }

    /// A labeled batch: without replacement when it fits, otherwise with
    /// replacement. Deterministic in `(seed, step)`.
    pub fn labeled_batch(
        &self,
        batch_size: usize,
        seed: u64,
        step: u64,
    ) -> Result<(Array2<f64>, Vec<usize>)> {
        let ids = draw(&self.labeled, batch_size, seed, &[tag::LABELED_BATCH, step])
            .ok_or_else(|| Error::Contract("labeled pool is empty".into()))?;
        let labels = ids.iter().map(|i| self.revealed[i]).collect();
        Ok((self.features.select(Axis(0), &ids), labels))
    }

    pub fn labeled_batch_ids(&self, batch_size: usize, seed: u64, step: u64) -> Result<Vec<usize>> {
        draw(&self.labeled, batch_size, seed, &[tag::LABELED_BATCH, step])
            .ok_or_else(|| Error::Contract("labeled pool is empty".into()))
    }

    pub fn unlabeled_batch(&self, batch_size: usize, seed: u64, step: u64) -> Result<Array2<f64>> {
        let ids = self.unlabeled_batch_ids(batch_size, seed, step)?;
        Ok(self.features.select(Axis(0), &ids))
    }

    pub fn unlabeled_batch_ids(
        &self,
        batch_size: usize,
        seed: u64,
        step: u64,
    ) -> Result<Vec<usize>> {
        draw(
            &self.unlabeled,
            batch_size,
            seed,
            &[tag::UNLABELED_BATCH, step],
        )
        .ok_or_else(|| Error::Contract("unlabeled pool is empty".into()))
    }

    /// Labeled rows and their revealed labels, in id order.
    pub fn labeled_data(&self) -> (Array2<f64>, Vec<usize>) {
        let ids = self.labeled_ids();
        let labels = ids.iter().map(|i| self.revealed[i]).collect();
        (self.features.select(Axis(0), &ids), labels)
    }

    pub fn unlabeled_features(&self) -> Array2<f64> {
        self.features.select(Axis(0), &self.unlabeled_ids())
    }

    /// Checks the partition and label bookkeeping; used by tests and replay.
    pub fn check_invariants(&self) -> Result<()> {
        if self.labeled.intersection(&self.unlabeled).next().is_some() {
            return Err(Error::Contract("labeled and unlabeled sets overlap".into()));
        }
        if self.labeled.len() + self.unlabeled.len() != self.len() {
            return Err(Error::Contract("partition does not cover every id".into()));
        }
        if self.labeled.iter().any(|i| !self.revealed.contains_key(i)) {
            return Err(Error::Contract(
                "labeled id without a revealed label".into(),
            ));
        }
        let acquired: usize = self.history.iter().map(|r| r.ids.len()).sum();
        if acquired != self.labeled.len() {
            return Err(Error::Contract(format!(
                "history holds {acquired} ids but {} are labeled",
                self.labeled.len()
            )));
        }
        Ok(())
    }

    /// History as JSON lines `{split, ids, strategy, seed, timestamp}`.
    pub fn history_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.history {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_history_jsonl(text: &str) -> Result<Vec<SplitRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }
}

fn draw(side: &BTreeSet<usize>, batch_size: usize, seed: u64, tags: &[u64]) -> Option<Vec<usize>> {
    if side.is_empty() {
        return None;
    }
    let mut ids: Vec<usize> = side.iter().copied().collect();
    let mut r = rng::stream(seed, tags);
    if batch_size <= ids.len() {
        let (chosen, _) = ids.partial_shuffle(&mut r, batch_size);
        Some(chosen.to_vec())
    } else {
        Some(
            (0..batch_size)
                .map(|_| *ids.choose(&mut r).expect("non-empty"))
                .collect(),
        )
    }
}
