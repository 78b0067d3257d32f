//! Acceptance suite. Runs criteria 1 to 9 in order and prints one PASS or
//! FAIL line for each; exits non-zero if any criterion fails.
//!
//! `cargo test --release -p malkit-core --test acceptance -- 3 6` runs a subset.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use malkit::acquisition::{rank_sums, select_kcenter, select_mal, AcquisitionScore, SelectionRule};
use malkit::datagen::{generate_blobs, Dataset};
use malkit::engine::{
    minimax_grads, run_experiment, Ablation, Adam, ExperimentConfig, ExperimentRecord, MalModels,
    Strategy, TrainConfig,
};
use malkit::networks::{Bound, Discriminator, Encoder, Parameters, PrototypeClassifier};
use malkit::objectives::{
    cross_entropy, discriminator_bce, minimax_entropy_term, row_entropies, shannon_entropy,
    EntropySign,
};
use malkit::pools::{Annotation, Oracle, PoolState};
use malkit::tensor::{softmax_rows, NodeId, Tape};

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-scale..scale))
}

/// Entries with magnitude in `[lo, hi]` and random sign.
fn away_from_zero(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let m = r.random_range(lo..hi);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

// ---------------------------------------------------------------------------
// Criterion 1: central finite differences

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn rel_err(a: &Array2<f64>, n: &Array2<f64>) -> f64 {
    let diff = (a - n).mapv(|x| x * x).sum().sqrt();
    let scale = a
        .mapv(|x| x * x)
        .sum()
        .sqrt()
        .max(n.mapv(|x| x * x).sum().sqrt());
    if scale < 1e-7 {
        diff
    } else {
        diff / scale
    }
}

/// Builds a scalar from `inputs` on a fresh tape.
type Graph<'a> = dyn Fn(&mut Tape, &[NodeId]) -> NodeId + 'a;

fn eval(graph: &Graph, inputs: &[Array2<f64>]) -> f64 {
    let mut t = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| t.param(x.clone())).collect();
    let out = graph(&mut t, &ids);
    t.scalar(out)
}

/// Largest relative error between backprop and central differences over
/// every input. `factor[i]` multiplies the numeric gradient of input `i`.
fn check_graph(graph: &Graph, inputs: &[Array2<f64>], factor: &[f64]) -> f64 {
    let mut t = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| t.param(x.clone())).collect();
    let out = graph(&mut t, &ids);
    t.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = t.grad_or_zeros(ids[i]);
        let mut numeric = Array2::zeros(x.dim());
        for idx in ndarray::indices(x.dim()) {
            let mut xs = inputs.to_vec();
            xs[i][idx] += H;
            let plus = eval(graph, &xs);
            xs[i][idx] -= 2.0 * H;
            let minus = eval(graph, &xs);
            numeric[idx] = factor[i] * (plus - minus) / (2.0 * H);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Reduces a matrix node to a scalar with fixed random weights so every
/// output entry contributes a distinct amount.
fn project(t: &mut Tape, x: NodeId, w: &Array2<f64>) -> NodeId {
    let wn = t.constant(w.clone());
    let p = t.mul(x, wn).unwrap();
    t.sum(p)
}

/// Backprop vs central differences over every parameter of `model`.
/// `loss` binds the parameters itself and returns their nodes in
/// [`Parameters::tensors`] order. `factor(i)` multiplies the numeric
/// gradient of tensor `i`.
type LossFn<'a, P> = dyn Fn(&mut Tape, &P) -> (NodeId, Vec<NodeId>) + 'a;

fn check_model<P: Parameters + Clone>(
    model: &P,
    loss: &LossFn<'_, P>,
    factor: &dyn Fn(usize) -> f64,
) -> f64 {
    let mut t = Tape::new();
    let (out, ids) = loss(&mut t, model);
    t.backward(out).unwrap();
    let grads: Vec<Array2<f64>> = ids.iter().map(|&id| t.grad_or_zeros(id)).collect();
    let value = |m: &P| {
        let mut t = Tape::new();
        let (out, _) = loss(&mut t, m);
        t.scalar(out)
    };
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        let mut numeric = Array2::zeros(g.dim());
        for idx in ndarray::indices(g.dim()) {
            let mut m = model.clone();
            m.tensors_mut()[ti][idx] += H;
            let plus = value(&m);
            m.tensors_mut()[ti][idx] -= 2.0 * H;
            let minus = value(&m);
            numeric[idx] = factor(ti) * (plus - minus) / (2.0 * H);
        }
        worst = worst.max(rel_err(g, &numeric));
    }
    worst
}

fn jitter<P: Parameters>(m: &mut P, r: &mut ChaCha8Rng, scale: f64) {
    for t in m.tensors_mut() {
        t.mapv_inplace(|v| v + r.random_range(-scale..scale));
    }
}

fn criterion_1() -> Outcome {
    const INSTANCES: usize = 100;
    let mut r = rng(1);
    let mut report: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match report.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(err),
        None => report.push((name.to_string(), err)),
    };

    for _ in 0..INSTANCES {
        let (m, k, n) = (
            r.random_range(1..5),
            r.random_range(1..5),
            r.random_range(1..5),
        );
        let a = random_matrix(&mut r, m, k, 2.0);
        let b = random_matrix(&mut r, k, n, 2.0);
        let c = random_matrix(&mut r, m, k, 2.0);
        let row = random_matrix(&mut r, 1, k, 2.0);
        let wmn = random_matrix(&mut r, m, n, 1.0);
        let wmk = random_matrix(&mut r, m, k, 1.0);
        let wm1 = random_matrix(&mut r, m, 1, 1.0);
        let factor = r.random_range(-3.0..3.0);
        let offset = r.random_range(-3.0..3.0);
        let lambda = r.random_range(0.0..2.0);

        record(
            "matmul",
            check_graph(
                &|t, x| {
                    let y = t.matmul(x[0], x[1]).unwrap();
                    project(t, y, &wmn)
                },
                &[a.clone(), b],
                &[1.0, 1.0],
            ),
        );
        for (name, bcast) in [("", false), (" (row broadcast)", true)] {
            let rhs = if bcast { row.clone() } else { c.clone() };
            record(
                &format!("add{name}"),
                check_graph(
                    &|t, x| {
                        let y = t.add(x[0], x[1]).unwrap();
                        project(t, y, &wmk)
                    },
                    &[a.clone(), rhs.clone()],
                    &[1.0, 1.0],
                ),
            );
            record(
                &format!("sub{name}"),
                check_graph(
                    &|t, x| {
                        let y = t.sub(x[0], x[1]).unwrap();
                        project(t, y, &wmk)
                    },
                    &[a.clone(), rhs.clone()],
                    &[1.0, 1.0],
                ),
            );
            record(
                &format!("mul{name}"),
                check_graph(
                    &|t, x| {
                        let y = t.mul(x[0], x[1]).unwrap();
                        project(t, y, &wmk)
                    },
                    &[a.clone(), rhs],
                    &[1.0, 1.0],
                ),
            );
        }
        record(
            "scale",
            check_graph(
                &|t, x| {
                    let y = t.scale(x[0], factor);
                    project(t, y, &wmk)
                },
                std::slice::from_ref(&a),
                &[1.0],
            ),
        );
        record(
            "add_scalar",
            check_graph(
                &|t, x| {
                    let y = t.add_scalar(x[0], offset);
                    project(t, y, &wmk)
                },
                std::slice::from_ref(&a),
                &[1.0],
            ),
        );
        let kinked = away_from_zero(&mut r, m, k, 0.05, 2.0);
        record(
            "relu",
            check_graph(
                &|t, x| {
                    let y = t.relu(x[0]);
                    project(t, y, &wmk)
                },
                &[kinked],
                &[1.0],
            ),
        );
        record(
            "sigmoid",
            check_graph(
                &|t, x| {
                    let y = t.sigmoid(x[0]);
                    project(t, y, &wmk)
                },
                std::slice::from_ref(&a),
                &[1.0],
            ),
        );
        let positive = Array2::from_shape_fn((m, k), |_| r.random_range(0.1..3.0));
        record(
            "log",
            check_graph(
                &|t, x| {
                    let y = t.log(x[0], 1e-12);
                    project(t, y, &wmk)
                },
                &[positive],
                &[1.0],
            ),
        );
        record(
            "mean",
            check_graph(
                &|t, x| {
                    let y = t.mean(x[0]);
                    t.scale(y, 1.7)
                },
                std::slice::from_ref(&a),
                &[1.0],
            ),
        );
        record(
            "sum",
            check_graph(
                &|t, x| {
                    let y = t.sum(x[0]);
                    t.scale(y, -0.3)
                },
                std::slice::from_ref(&a),
                &[1.0],
            ),
        );
        record(
            "sum_rows",
            check_graph(
                &|t, x| {
                    let y = t.sum_rows(x[0]);
                    project(t, y, &wm1)
                },
                std::slice::from_ref(&a),
                &[1.0],
            ),
        );
        let cols: Vec<usize> = (0..m).map(|_| r.random_range(0..k)).collect();
        record(
            "pick",
            check_graph(
                &|t, x| {
                    let y = t.pick(x[0], &cols).unwrap();
                    project(t, y, &wm1)
                },
                std::slice::from_ref(&a),
                &[1.0],
            ),
        );
        let rows: Vec<usize> = (0..r.random_range(1..6))
            .map(|_| r.random_range(0..m))
            .collect();
        let wsel = random_matrix(&mut r, rows.len(), k, 1.0);
        record(
            "select_rows",
            check_graph(
                &|t, x| {
                    let y = t.select_rows(x[0], &rows).unwrap();
                    project(t, y, &wsel)
                },
                std::slice::from_ref(&a),
                &[1.0],
            ),
        );
        let rowsafe = away_from_zero(&mut r, m, k, 0.2, 2.0);
        record(
            "l2_normalize_rows",
            check_graph(
                &|t, x| {
                    let y = t.l2_normalize_rows(x[0], 1e-12);
                    project(t, y, &wmk)
                },
                &[rowsafe],
                &[1.0],
            ),
        );
        record(
            "softmax_rows",
            check_graph(
                &|t, x| {
                    let y = t.softmax_rows(x[0]);
                    project(t, y, &wmk)
                },
                std::slice::from_ref(&a),
                &[1.0],
            ),
        );
        // Forward is the identity, so the reversed gradient is -lambda times the numeric one.
        record(
            "grad_reverse",
            check_graph(
                &|t, x| {
                    let y = t.grad_reverse(x[0], lambda);
                    project(t, y, &wmk)
                },
                std::slice::from_ref(&a),
                &[-lambda],
            ),
        );
    }

    // The three losses, through the networks that produce them.
    for i in 0..INSTANCES {
        let seed = 1000 + i as u64;
        let (din, k) = (r.random_range(2..6), r.random_range(2..5));
        let mut enc = Encoder::init(seed, din, &[5], 4).unwrap();
        jitter(&mut enc, &mut r, 0.3);
        let mut cls =
            PrototypeClassifier::init(seed, 4, k, r.random_range(0.05..1.0), true).unwrap();
        jitter(&mut cls, &mut r, 0.1);
        let mut disc = Discriminator::init(seed, 4, &[4, 3]).unwrap();
        jitter(&mut disc, &mut r, 0.3);
        let n = r.random_range(2..6);
        let x = random_matrix(&mut r, n, din, 1.5);
        let y: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let lambda = r.random_range(0.1..2.0);
        let weight = r.random_range(0.1..2.0);

        let fc = FC(enc.clone(), cls.clone());
        let n_enc = enc.tensors().len();
        record(
            "cross-entropy loss",
            check_model(
                &fc,
                &|t, m| {
                    let (eb, cb, ids) = m.bind(t);
                    let xi = t.constant(x.clone());
                    let f = m.0.encode(t, &eb, xi).unwrap();
                    let logits = m.1.classify(t, &cb, f).unwrap();
                    let p = t.softmax_rows(logits);
                    (cross_entropy(t, p, &y).unwrap().node, ids)
                },
                &|_| 1.0,
            ),
        );
        // Encoder tensors sit behind the reversal layer.
        record(
            "minimax entropy loss",
            check_model(
                &fc,
                &|t, m| {
                    let (eb, cb, ids) = m.bind(t);
                    let term = minimax_entropy_term(
                        t,
                        &m.0,
                        &eb,
                        &m.1,
                        &cb,
                        &x,
                        lambda,
                        weight,
                        EntropySign::Minimax,
                    )
                    .unwrap();
                    (term.objective.node, ids)
                },
                &|ti| if ti < n_enc { -lambda } else { 1.0 },
            ),
        );
        let (nl, nu) = (r.random_range(1..4), r.random_range(1..4));
        let zl = random_matrix(&mut r, nl, 4, 1.0);
        let zu = random_matrix(&mut r, nu, 4, 1.0);
        record(
            "discriminator BCE loss",
            check_model(
                &disc,
                &|t, d| {
                    let b = Bound::bind(t, d, true);
                    (
                        discriminator_bce(t, d, &b, &zl, &zu).unwrap().node,
                        b.ids().to_vec(),
                    )
                },
                &|_| 1.0,
            ),
        );
        record(
            "shannon entropy",
            check_graph(
                &|t, ids| {
                    let p = t.softmax_rows(ids[0]);
                    shannon_entropy(t, p).unwrap().node
                },
                &[random_matrix(&mut r, n, k, 3.0)],
                &[1.0],
            ),
        );
    }

    let failed: Vec<String> = report
        .iter()
        .filter(|(_, e)| e.is_nan() || *e > GRAD_TOL)
        .map(|(n, e)| format!("{n} ({e:.2e})"))
        .collect();
    let worst = report.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    if failed.is_empty() {
        Ok(format!(
            "{} checks x {INSTANCES} instances, worst relative error {worst:.2e}",
            report.len()
        ))
    } else {
        Err(format!(
            "relative error above {GRAD_TOL}: {}",
            failed.join(", ")
        ))
    }
}

/// Encoder and classifier as one parameter set, encoder tensors first.
#[derive(Clone)]
struct FC(Encoder, PrototypeClassifier);

impl FC {
    fn bind(&self, t: &mut Tape) -> (Bound, Bound, Vec<NodeId>) {
        let eb = Bound::bind(t, &self.0, true);
        let cb = Bound::bind(t, &self.1, true);
        let ids = eb.ids().iter().chain(cb.ids()).copied().collect();
        (eb, cb, ids)
    }
}

impl Parameters for FC {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t = self.0.tensors();
        t.extend(self.1.tensors());
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t = self.0.tensors_mut();
        t.extend(self.1.tensors_mut());
        t
    }
}

// ---------------------------------------------------------------------------
// Criterion 2

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let mut worst_sum: f64 = 0.0;
    let mut cases = 0usize;
    for _ in 0..5000 {
        let (n, k) = (r.random_range(1..8), r.random_range(2..12));
        let scale = 10f64.powf(r.random_range(-3.0..3.0));
        let mut logits = random_matrix(&mut r, n, k, scale);
        if r.random_bool(0.1) {
            logits[[0, 0]] = 800.0;
        }
        let p = softmax_rows(&logits);
        for row in p.rows() {
            worst_sum = worst_sum.max((row.sum() - 1.0).abs());
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(format!("softmax entry outside [0, 1]: {row:?}"));
            }
        }
        let ln_k = (k as f64).ln();
        for h in row_entropies(&p) {
            if !(h >= -1e-9 && h <= ln_k + 1e-9) {
                return Err(format!("entropy {h} outside [0, ln {k}]"));
            }
        }
        let mut t = Tape::new();
        let pn = t.constant(p.clone());
        let h = shannon_entropy(&mut t, pn).unwrap().value(&t);
        if !(h >= -1e-9 && h <= ln_k + 1e-9) {
            return Err(format!("batch entropy {h} outside [0, ln {k}]"));
        }
        cases += 1;
    }
    if worst_sum > 1e-9 {
        return Err(format!("softmax row sum off by {worst_sum:.2e}"));
    }
    for k in 2..12 {
        let uniform = Array2::from_elem((1, k), 1.0 / k as f64);
        let onehot = Array2::from_shape_fn((1, k), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let hu = row_entropies(&uniform)[0];
        let ho = row_entropies(&onehot)[0];
        if (hu - (k as f64).ln()).abs() > 1e-9 || ho.abs() > 1e-9 {
            return Err(format!("entropy extremes wrong for K={k}: {hu}, {ho}"));
        }
    }

    let mut worst_logit: f64 = 0.0;
    for i in 0..3000 {
        let (d, k) = (r.random_range(1..10), r.random_range(2..10));
        let temp = 10f64.powf(r.random_range(-2.0..0.5));
        let mut c = PrototypeClassifier::init(i, d, k, temp, true).unwrap();
        jitter(&mut c, &mut r, 5.0);
        c.project();
        let scale = 10f64.powf(r.random_range(-4.0..4.0));
        let rows = r.random_range(1..6);
        let mut feats = random_matrix(&mut r, rows, d, scale);
        if r.random_bool(0.1) {
            feats.row_mut(0).fill(0.0);
        }
        let logits = c.classify_array(&feats).unwrap();
        let bound = 1.0 / temp;
        for &v in &logits {
            worst_logit = worst_logit.max(v.abs() - bound);
            if v.abs() > bound + 1e-9 {
                return Err(format!("cosine logit {v} exceeds 1/T = {bound}"));
            }
        }
        cases += 1;
    }
    Ok(format!(
        "{cases} randomized cases, worst softmax row-sum error {worst_sum:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 3

fn mean_entropy(m: &MalModels, x: &Array2<f64>) -> f64 {
    let f = m.encoder.encode_array(x).unwrap();
    let p = softmax_rows(&m.classifier.classify_array(&f).unwrap());
    let h = row_entropies(&p);
    h.iter().sum::<f64>() / h.len() as f64
}

fn criterion_3() -> Outcome {
    let data = generate_blobs(4, 16, 8, 0.25, 0).unwrap();
    let xu = data.features;
    let cfg = TrainConfig::default();
    let (mut f_ok, mut c_ok) = (0, 0);
    for seed in 0..20u64 {
        let base = MalModels::init(seed, 8, 4, &cfg).unwrap();
        let h0 = mean_entropy(&base, &xu);
        let (gf, gc, _) = minimax_grads(&base, &xu, &cfg).unwrap();

        let mut m = base.clone();
        Adam::new(&m.encoder, 1e-3, cfg.adam)
            .step(&mut m.encoder, &gf)
            .unwrap();
        if mean_entropy(&m, &xu) <= h0 {
            f_ok += 1;
        }

        let mut m = base.clone();
        Adam::new(&m.classifier, 1e-3, cfg.adam)
            .step(&mut m.classifier, &gc)
            .unwrap();
        m.classifier.project();
        if mean_entropy(&m, &xu) >= h0 {
            c_ok += 1;
        }
    }
    let line = format!(
        "encoder step lowered entropy in {f_ok}/20 seeds, classifier step raised it in {c_ok}/20"
    );
    if f_ok >= 18 && c_ok >= 18 {
        Ok(line)
    } else {
        Err(line)
    }
}

// ---------------------------------------------------------------------------
// Criterion 4

fn subsets(n: usize, b: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, b: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == b {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, b, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, b, &mut Vec::new(), &mut out);
    out
}

/// Rank-sum oracle: ranks counted directly, then the unique b-subset whose
/// every member precedes every non-member under (rank sum, d_prob, id),
/// found by enumerating all subsets.
fn mal_oracle(scores: &[AcquisitionScore], b: usize) -> Vec<usize> {
    let n = scores.len();
    let sum: Vec<usize> = (0..n)
        .map(|i| {
            let rd = scores
                .iter()
                .filter(|s| s.d_prob < scores[i].d_prob)
                .count();
            let rh = scores
                .iter()
                .filter(|s| s.entropy > scores[i].entropy)
                .count();
            rd + rh
        })
        .collect();
    let before = |i: usize, j: usize| {
        (sum[i], scores[i].d_prob, scores[i].id) < (sum[j], scores[j].d_prob, scores[j].id)
    };
    let winners: Vec<Vec<usize>> = subsets(n, b)
        .into_iter()
        .filter(|s| {
            (0..n)
                .filter(|j| !s.contains(j))
                .all(|j| s.iter().all(|&i| before(i, j)))
        })
        .collect();
    assert_eq!(
        winners.len(),
        1,
        "keys are distinct, so exactly one subset dominates"
    );
    let mut chosen = winners[0].clone();
    chosen.sort_by(|&i, &j| {
        if before(i, j) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    chosen.into_iter().map(|i| scores[i].id).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Farthest-first trace recomputed from scratch every round.
fn kcenter_oracle(
    points: &[Vec<f64>],
    labeled: &[usize],
    unlabeled: &[usize],
    b: usize,
) -> Vec<usize> {
    let mut centers: Vec<usize> = labeled.to_vec();
    let mut cands: Vec<usize> = unlabeled.to_vec();
    cands.sort_unstable();
    let mut out = Vec::new();
    for _ in 0..b {
        let pick = if centers.is_empty() {
            cands[0]
        } else {
            let mut best = None;
            let mut best_d = f64::NEG_INFINITY;
            for &c in &cands {
                let d = centers
                    .iter()
                    .map(|&z| dist(&points[c], &points[z]))
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = Some(c);
                }
            }
            best.unwrap()
        };
        cands.retain(|&c| c != pick);
        centers.push(pick);
        out.push(pick);
    }
    out
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    for case in 0..1000 {
        let n = r.random_range(1..=12);
        let b = r.random_range(1..=n.min(4));
        let coarse = r.random_bool(0.5);
        let mut ids: Vec<usize> = (0..100).collect();
        ids.shuffle(&mut r);
        let scores: Vec<AcquisitionScore> = (0..n)
            .map(|i| {
                let (d, h) = if coarse {
                    (
                        r.random_range(0..4) as f64 / 4.0,
                        r.random_range(0..4) as f64 / 4.0,
                    )
                } else {
                    (r.random::<f64>(), r.random::<f64>() * 2.0)
                };
                AcquisitionScore {
                    id: ids[i],
                    d_prob: d,
                    entropy: h,
                }
            })
            .collect();
        let got = select_mal(&scores, b, SelectionRule::RankSum).map_err(|e| e.to_string())?;
        let want = mal_oracle(&scores, b);
        if got != want {
            return Err(format!(
                "select_mal case {case}: got {got:?}, oracle {want:?} (sums {:?})",
                rank_sums(&scores)
            ));
        }
    }
    for case in 0..1000 {
        let n = r.random_range(1..=8);
        let dim = r.random_range(1..=3);
        let grid = r.random_bool(0.5);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        if grid {
                            r.random_range(0..4) as f64
                        } else {
                            r.random_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut r);
        let n_lab = r.random_range(0..n);
        let labeled = all[..n_lab].to_vec();
        let unlabeled = all[n_lab..].to_vec();
        let b = r.random_range(1..=unlabeled.len());
        let feats = Array2::from_shape_fn((n, dim), |(i, j)| points[i][j]);
        let got = select_kcenter(&feats, &labeled, &unlabeled, b).map_err(|e| e.to_string())?;
        let want = kcenter_oracle(&points, &labeled, &unlabeled, b);
        if got != want {
            return Err(format!(
                "select_kcenter case {case}: got {got:?}, oracle {want:?}"
            ));
        }
    }
    Ok(
        "1000 rank-sum cases (|U| <= 12, b <= 4) and 1000 k-center traces (<= 8 points) match"
            .into(),
    )
}

// ---------------------------------------------------------------------------
// Criterion 5

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let mut ops = 0usize;
    let mut replays = 0usize;
    let mut sequence = 0u64;
    while ops < 10_000 {
        sequence += 1;
        let n = r.random_range(20..120);
        let k = 3;
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let features = Arc::new(Array2::from_shape_fn((n, 2), |(i, j)| (i * 3 + j) as f64));
        let mut ideal = Oracle::ideal(Arc::new(labels.clone()));
        let human_mode = r.random_bool(0.5);
        let mut pool = PoolState::init(
            features.clone(),
            &mut ideal,
            r.random_range(0.05..0.3),
            sequence,
        )
        .map_err(|e| e.to_string())?;
        let mut oracle = if human_mode {
            Oracle::human(k)
        } else {
            ideal.clone()
        };
        let mut expected_labeled = pool.labeled_count();
        let mut outstanding: Option<Vec<usize>> = None;

        for _ in 0..r.random_range(50..400) {
            ops += 1;
            let before = pool.clone();
            match r.random_range(0..6) {
                // acquire a batch, or continue the pending one
                0 | 1 => {
                    let batch = match &outstanding {
                        Some(b) => b.clone(),
                        None => {
                            let mut u = pool.unlabeled_ids();
                            if u.is_empty() {
                                continue;
                            }
                            u.shuffle(&mut r);
                            u.truncate(r.random_range(1..=u.len().min(6)));
                            u
                        }
                    };
                    match pool.annotate(batch.clone(), &mut oracle, "op", ops as u64, 0) {
                        Ok(Annotation::Committed) => {
                            expected_labeled += batch.len();
                            outstanding = None;
                        }
                        Ok(Annotation::Pending { remaining }) => {
                            if before.labeled_ids() != pool.labeled_ids() {
                                return Err("pending annotation changed the pool".into());
                            }
                            if remaining == 0 || remaining > batch.len() {
                                return Err(format!("bad remaining count {remaining}"));
                            }
                            outstanding = Some(batch);
                        }
                        Err(e) => return Err(format!("valid annotation rejected: {e}")),
                    }
                }
                // a person answers some of the outstanding ids
                2 => {
                    if let (Some(batch), Oracle::Human(h)) = (&outstanding, &mut oracle) {
                        for &id in batch {
                            if r.random_bool(0.5) && h.is_pending(id) {
                                let _ = h.answer(id, labels[id]);
                            }
                        }
                        if h.answer(batch[0], k).is_ok() {
                            return Err("out-of-range class accepted".into());
                        }
                    }
                }
                // invalid requests must fail and leave the pool untouched
                3 => {
                    let bad = match (pool.labeled_ids().first(), pool.unlabeled_ids().first()) {
                        (Some(&l), _) if r.random_bool(0.5) => vec![l],
                        (_, Some(&u)) => vec![u, u],
                        _ => vec![n + 5],
                    };
                    if pool.annotate(bad.clone(), &mut oracle, "bad", 0, 0).is_ok() {
                        return Err(format!("invalid batch {bad:?} accepted"));
                    }
                    if pool != before {
                        return Err("rejected batch modified the pool".into());
                    }
                    if let Some(p) = &outstanding {
                        if let Some(&u) = pool.unlabeled_ids().iter().find(|u| !p.contains(u)) {
                            if pool.annotate(vec![u], &mut oracle, "x", 0, 0).is_ok() {
                                return Err("second batch accepted while one is pending".into());
                            }
                        }
                    }
                }
                // minibatch draws
                4 => {
                    let size = r.random_range(1..40);
                    let step = r.random::<u64>();
                    for (side, ids) in [
                        (pool.labeled_ids(), pool.labeled_batch_ids(size, 7, step)),
                        (
                            pool.unlabeled_ids(),
                            pool.unlabeled_batch_ids(size, 7, step),
                        ),
                    ] {
                        match ids {
                            Ok(ids) => {
                                let set: BTreeSet<usize> = side.iter().copied().collect();
                                if ids.len() != size || ids.iter().any(|i| !set.contains(i)) {
                                    return Err("minibatch left its side of the pool".into());
                                }
                                let distinct: BTreeSet<_> = ids.iter().collect();
                                if size <= side.len() && distinct.len() != size {
                                    return Err("minibatch repeated ids although it fit".into());
                                }
                            }
                            Err(_) if side.is_empty() => {}
                            Err(e) => return Err(format!("minibatch draw failed: {e}")),
                        }
                    }
                }
                // replay the history into a fresh pool
                _ => {
                    let text = pool.history_jsonl();
                    let history =
                        PoolState::parse_history_jsonl(&text).map_err(|e| e.to_string())?;
                    let mut truth = Oracle::ideal(Arc::new(labels.clone()));
                    let rebuilt = PoolState::replay(features.clone(), &mut truth, &history)
                        .map_err(|e| e.to_string())?;
                    if rebuilt.labeled_ids() != pool.labeled_ids()
                        || rebuilt.unlabeled_ids() != pool.unlabeled_ids()
                        || rebuilt.history() != pool.history()
                        || rebuilt.labeled_data() != pool.labeled_data()
                    {
                        return Err("replay did not reconstruct the pool".into());
                    }
                    replays += 1;
                }
            }
            pool.check_invariants()
                .map_err(|e| format!("after op {ops}: {e}"))?;
            if pool.labeled_count() != expected_labeled
                || pool.labeled_count() + pool.unlabeled_count() != n
            {
                return Err(format!(
                    "budget arithmetic broken: |L| = {}, expected {expected_labeled}, |U| = {}, n = {n}",
                    pool.labeled_count(),
                    pool.unlabeled_count()
                ));
            }
            for id in pool.labeled_ids() {
                if pool.revealed_label(id) != Some(labels[id]) {
                    return Err(format!("id {id} carries the wrong label"));
                }
            }
        }
    }
    Ok(format!(
        "{ops} operations over {sequence} sequences, {replays} replays"
    ))
}

// ---------------------------------------------------------------------------
// Criteria 6 to 9 share the blobs benchmark runs.

struct Bench {
    cfg: ExperimentConfig,
    data: Dataset,
    mal: Option<ExperimentRecord>,
    random: Option<ExperimentRecord>,
    no_minimax: Option<ExperimentRecord>,
}

impl Bench {
    fn load() -> Result<Self, String> {
        let cfg = ExperimentConfig::load(config_path("blobs.conf")).map_err(|e| e.to_string())?;
        let data = cfg.data.load().map_err(|e| e.to_string())?;
        Ok(Self {
            cfg,
            data,
            mal: None,
            random: None,
            no_minimax: None,
        })
    }

    fn run(&self, strategy: Strategy, ablation: Ablation) -> Result<ExperimentRecord, String> {
        let mut cfg = self.cfg.clone();
        cfg.train.strategy = strategy;
        cfg.train.ablation = ablation;
        run_experiment(&cfg, &self.data).map_err(|e| e.to_string())
    }

    fn mal(&mut self) -> Result<&ExperimentRecord, String> {
        if self.mal.is_none() {
            self.mal = Some(self.run(Strategy::Mal, Ablation::default())?);
        }
        Ok(self.mal.as_ref().unwrap())
    }
}

fn curve(r: &ExperimentRecord) -> String {
    r.summary
        .iter()
        .map(|s| format!("{:.4}", s.mean))
        .collect::<Vec<_>>()
        .join(" ")
}

fn full_label_accuracy(bench: &Bench) -> Result<f64, String> {
    let mut cfg = bench.cfg.clone();
    cfg.train.strategy = Strategy::Random;
    cfg.train.splits = 0;
    cfg.train.initial_fraction = 0.999_9;
    cfg.train.seeds = vec![0];
    Ok(run_experiment(&cfg, &bench.data)
        .map_err(|e| e.to_string())?
        .final_mean())
}

fn criterion_6(bench: &mut Bench) -> Outcome {
    let n_train = bench.data.len() - bench.data.test_ids.len();
    if n_train != 4000 || bench.data.test_ids.len() != 1000 {
        return Err(format!(
            "benchmark has {n_train} train / {} test rows",
            bench.data.test_ids.len()
        ));
    }
    let full = full_label_accuracy(bench)?;
    bench.mal()?;
    bench.random = Some(bench.run(Strategy::Random, Ablation::default())?);
    bench.no_minimax = Some(bench.run(Strategy::Mal, Ablation::single("no_minimax").unwrap())?);
    let (mal, random, nm) = (
        bench.mal.as_ref().unwrap(),
        bench.random.as_ref().unwrap(),
        bench.no_minimax.as_ref().unwrap(),
    );
    let line = format!(
        "full labels {full:.4}; final MAL {:.4} vs random {:.4}; split 0 MAL {:.4} vs no_minimax {:.4} [mal {} | random {} | no_minimax {}]",
        mal.final_mean(),
        random.final_mean(),
        mal.summary[0].mean,
        nm.summary[0].mean,
        curve(mal),
        curve(random),
        curve(nm)
    );
    if full >= 0.95
        && mal.final_mean() >= random.final_mean()
        && mal.summary[0].mean >= nm.summary[0].mean
    {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_7() -> Outcome {
    let cfg =
        ExperimentConfig::load(config_path("blobs-imbalanced.conf")).map_err(|e| e.to_string())?;
    let data = cfg.data.load().map_err(|e| e.to_string())?;
    let counts = data.train().class_counts();
    if counts.iter().min().copied().unwrap_or(0) < 5 {
        return Err(format!("a class fell below 5 rows: {counts:?}"));
    }
    let run = |s: Strategy| {
        let mut c = cfg.clone();
        c.train.strategy = s;
        run_experiment(&c, &data).map_err(|e| e.to_string())
    };
    let mal = run(Strategy::Mal)?;
    let random = run(Strategy::Random)?;
    let line = format!(
        "train class counts {counts:?}; final MAL {:.4} vs random {:.4} [mal {} | random {}]",
        mal.final_mean(),
        random.final_mean(),
        curve(&mal),
        curve(&random)
    );
    if mal.final_mean() >= random.final_mean() {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_8(bench: &mut Bench) -> Outcome {
    let full = bench.mal()?.final_mean();
    let mut parts = Vec::new();
    let mut ok = true;
    for name in Ablation::NAMES {
        let rec = match (name, &bench.no_minimax) {
            ("no_minimax", Some(r)) => r.clone(),
            _ => bench.run(Strategy::Mal, Ablation::single(name).unwrap())?,
        };
        let m = rec.final_mean();
        if full < m - 0.005 {
            ok = false;
        }
        parts.push(format!("{name} {m:.4}"));
    }
    let line = format!("full MAL {full:.4}; {}", parts.join(", "));
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_9(bench: &mut Bench) -> Outcome {
    let first = bench.mal()?.results_csv();
    let second = bench.run(Strategy::Mal, Ablation::default())?.results_csv();
    let r1 = bench
        .run(Strategy::Random, Ablation::default())?
        .results_csv();
    let r2 = bench
        .run(Strategy::Random, Ablation::default())?
        .results_csv();
    if first == second && r1 == r2 {
        Ok(format!(
            "MAL and random results CSVs identical across runs ({} and {} bytes)",
            first.len(),
            r1.len()
        ))
    } else {
        Err("results CSVs differ between identical runs".into())
    }
}

// ---------------------------------------------------------------------------

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut bench = match Bench::load() {
        Ok(b) => Some(b),
        Err(e) => {
            eprintln!("cannot load the blobs benchmark: {e}");
            None
        }
    };
    let limits: [(usize, &str, Duration); 9] = [
        (1, "gradient correctness", Duration::from_secs(30)),
        (
            2,
            "entropy and normalization invariants",
            Duration::from_secs(10),
        ),
        (3, "minimax direction", Duration::from_secs(60)),
        (4, "selection oracles", Duration::from_secs(60)),
        (5, "pool invariants", Duration::from_secs(60)),
        (6, "desk-scale efficacy (blobs)", Duration::from_secs(300)),
        (7, "imbalanced efficacy", Duration::from_secs(300)),
        (8, "ablation ordering", Duration::from_secs(900)),
        (9, "determinism", Duration::from_secs(600)),
    ];
    let mut failures = 0;
    for (n, name, limit) in limits {
        if !selected(n) {
            continue;
        }
        let start = Instant::now();
        let outcome = match (n, bench.as_mut()) {
            (1, _) => criterion_1(),
            (2, _) => criterion_2(),
            (3, _) => criterion_3(),
            (4, _) => criterion_4(),
            (5, _) => criterion_5(),
            (7, _) => criterion_7(),
            (6, Some(b)) => criterion_6(b),
            (8, Some(b)) => criterion_8(b),
            (9, Some(b)) => criterion_9(b),
            _ => Err("benchmark config unavailable".into()),
        };
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > limit => {
                Err(format!("{msg}; took {elapsed:.1?}, limit {limit:?}"))
            }
            other => other,
        };
        match outcome {
            Ok(msg) => println!(
                "criterion {n} ({name}): PASS in {:.1}s: {msg}",
                elapsed.as_secs_f64()
            ),
            Err(msg) => {
                failures += 1;
                println!(
                    "criterion {n} ({name}): FAIL in {:.1}s: {msg}",
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
