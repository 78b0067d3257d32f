//! Scoring unlabeled samples and choosing the next batch to annotate.
//!
//! The MAL rule combines two rankings of the unlabeled pool: ascending by
//! the discriminator's labeledness probability (most confidently
//! "unlabeled" first) and descending by classifier entropy (farthest from
//! every prototype first). Baselines are uniform random sampling, max
//! task-model entropy, and greedy k-center over embeddings.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Discriminator, Encoder, PrototypeClassifier, NORM_EPS};
use crate::objectives::row_entropies;
use crate::pools::PoolState;
use crate::rng::{self, tag};
use crate::tensor::softmax_rows;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub id: usize,
    /// Discriminator probability that the sample is labeled.
    pub d_prob: f64,
    /// Predictive entropy of the cosine classifier.
    pub entropy: f64,
}

/// How the two MAL conditions are merged into one selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Smallest sum of the two ranks.
    #[default]
    RankSum,
    /// Keep the `2b` lowest `d_prob`, then the `b` highest entropy among them.
    TwoStage,
}

/// Scores every id in `ids` (eval mode, no gradients).
pub fn score_ids(
    encoder: &Encoder,
    classifier: &PrototypeClassifier,
    disc: &Discriminator,
    features: &Array2<f64>,
    ids: &[usize],
) -> Result<Vec<AcquisitionScore>> {
    if ids.is_empty() {
        return Err(Error::Contract("no unlabeled samples to score".into()));
    }
    let x = features.select(Axis(0), ids);
    let raw = encoder.encode_array(&x)?;
    let z = normalize_rows(&raw);
    let probs = softmax_rows(&classifier.classify_array(&raw)?);
    let entropy = row_entropies(&probs);
    let d = disc.discriminate_array(&z)?;
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, &id)| AcquisitionScore {
            id,
            d_prob: d[[i, 0]],
            entropy: entropy[i],
        })
        .collect())
}

/// Scores the whole unlabeled side of `pool`.
pub fn score_unlabeled(
    encoder: &Encoder,
    classifier: &PrototypeClassifier,
    disc: &Discriminator,
    pool: &PoolState,
) -> Result<Vec<AcquisitionScore>> {
    score_ids(
        encoder,
        classifier,
        disc,
        pool.features(),
        &pool.unlabeled_ids(),
    )
}

pub fn normalize_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut z = x.clone();
    for mut row in z.rows_mut() {
        let n = row.dot(&row).sqrt().max(NORM_EPS);
        row /= n;
    }
    z
}

fn check_budget(b: usize, available: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::Selection("budget must be at least 1".into()));
    }
    if b > available {
        return Err(Error::Selection(format!(
            "budget {b} exceeds the {available} unlabeled candidates"
        )));
    }
    Ok(())
}

/// Competition ranks (0-based): rank = number of values strictly ahead.
fn competition_ranks(values: &[f64], ahead: impl Fn(f64, f64) -> bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        if ahead(values[a], values[b]) {
            Ordering::Less
        } else if ahead(values[b], values[a]) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    });
    let mut ranks = vec![0; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && !ahead(values[order[pos - 1]], values[i]) {
            ranks[order[pos - 1]]
        } else {
            pos
        };
    }
    ranks
}

/// Rank-sum of every score: ascending `d_prob` rank plus descending entropy rank.
pub fn rank_sums(scores: &[AcquisitionScore]) -> Vec<usize> {
    let d: Vec<f64> = scores.iter().map(|s| s.d_prob).collect();
    let h: Vec<f64> = scores.iter().map(|s| s.entropy).collect();
    let rd = competition_ranks(&d, |a, b| a < b);
    let rh = competition_ranks(&h, |a, b| a > b);
    rd.iter().zip(&rh).map(|(a, b)| a + b).collect()
}

fn by_d_prob_then_id(a: &AcquisitionScore, b: &AcquisitionScore) -> Ordering {
    a.d_prob.total_cmp(&b.d_prob).then(a.id.cmp(&b.id))
}

fn by_entropy_desc_then_id(a: &AcquisitionScore, b: &AcquisitionScore) -> Ordering {
    b.entropy.total_cmp(&a.entropy).then(a.id.cmp(&b.id))
}

/// The MAL hybrid rule. Returns exactly `b` distinct ids.
pub fn select_mal(
    scores: &[AcquisitionScore],
    b: usize,
    rule: SelectionRule,
) -> Result<Vec<usize>> {
    check_budget(b, scores.len())?;
    match rule {
        SelectionRule::RankSum => {
            let sums = rank_sums(scores);
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&i, &j| {
                sums[i]
                    .cmp(&sums[j])
                    .then_with(|| by_d_prob_then_id(&scores[i], &scores[j]))
            });
            Ok(order[..b].iter().map(|&i| scores[i].id).collect())
        }
        SelectionRule::TwoStage => {
            let mut pool: Vec<AcquisitionScore> = scores.to_vec();
            pool.sort_by(by_d_prob_then_id);
            pool.truncate((2 * b).min(scores.len()));
            pool.sort_by(by_entropy_desc_then_id);
            Ok(pool[..b].iter().map(|s| s.id).collect())
        }
    }
}

/// Top-`b` by classifier entropy (ties to lower id).
pub fn select_by_entropy(scores: &[AcquisitionScore], b: usize) -> Result<Vec<usize>> {
    check_budget(b, scores.len())?;
    let mut s = scores.to_vec();
    s.sort_by(by_entropy_desc_then_id);
    Ok(s[..b].iter().map(|s| s.id).collect())
}

/// Lowest-`b` labeledness probability (ties to lower id).
pub fn select_by_d_prob(scores: &[AcquisitionScore], b: usize) -> Result<Vec<usize>> {
    check_budget(b, scores.len())?;
    let mut s = scores.to_vec();
    s.sort_by(by_d_prob_then_id);
    Ok(s[..b].iter().map(|s| s.id).collect())
}

/// Uniform sample of `b` ids without replacement, deterministic in `seed`.
pub fn select_random(unlabeled: &[usize], b: usize, seed: u64) -> Result<Vec<usize>> {
    check_budget(b, unlabeled.len())?;
    let mut ids = unlabeled.to_vec();
    let mut r = rng::stream(seed, &[tag::RANDOM_SELECT]);
    let (chosen, _) = ids.partial_shuffle(&mut r, b);
    Ok(chosen.to_vec())
}

/// Top-`b` rows of `task_probs` by predictive entropy; row `i` belongs to
/// `ids[i]`. Ties go to the lower id.
pub fn select_max_entropy(task_probs: &Array2<f64>, ids: &[usize], b: usize) -> Result<Vec<usize>> {
    if task_probs.nrows() != ids.len() {
        return Err(Error::Shape {
            op: "select_max_entropy",
            left: task_probs.dim(),
            right: (ids.len(), 1),
        });
    }
    check_budget(b, ids.len())?;
    let h = row_entropies(task_probs);
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&i, &j| h[j].total_cmp(&h[i]).then(ids[i].cmp(&ids[j])));
    Ok(order[..b].iter().map(|&i| ids[i]).collect())
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy farthest-first k-center selection over Euclidean distance.
///
/// `all_feats` is indexed by id. Each round picks the unlabeled id whose
/// distance to the nearest center (labeled ids plus earlier picks) is
/// largest, ties to the lower id. With no labeled ids, the first center is
/// the lowest unlabeled id.
pub fn select_kcenter(
    all_feats: &Array2<f64>,
    labeled: &[usize],
    unlabeled: &[usize],
    b: usize,
) -> Result<Vec<usize>> {
    check_budget(b, unlabeled.len())?;
    let mut cands: Vec<usize> = unlabeled.to_vec();
    cands.sort_unstable();
    let mut min_d = vec![f64::INFINITY; cands.len()];
    let mut taken = vec![false; cands.len()];
    for (k, &c) in cands.iter().enumerate() {
        for &l in labeled {
            let d = sq_dist(all_feats.row(c), all_feats.row(l));
            if d < min_d[k] {
                min_d[k] = d;
            }
        }
    }
    let mut out = Vec::with_capacity(b);
    for round in 0..b {
        let pick = if round == 0 && labeled.is_empty() {
            0
        } else {
            let mut best: Option<usize> = None;
            for k in 0..cands.len() {
                if taken[k] {
                    continue;
                }
                if best.is_none_or(|j| min_d[k] > min_d[j]) {
                    best = Some(k);
                }
            }
            best.expect("budget checked")
        };
        taken[pick] = true;
        let center = cands[pick];
        out.push(center);
        for k in 0..cands.len() {
            if !taken[k] {
                let d = sq_dist(all_feats.row(cands[k]), all_feats.row(center));
                if d < min_d[k] {
                    min_d[k] = d;
                }
            }
        }
    }
    Ok(out)
}

/// CSV `id,d_prob,entropy`, one row per score.
pub fn scores_csv(scores: &[AcquisitionScore]) -> String {
    let mut out = String::from("id,d_prob,entropy\n");
    for s in scores {
        out.push_str(&format!("{},{},{}\n", s.id, s.d_prob, s.entropy));
    }
    out
}
