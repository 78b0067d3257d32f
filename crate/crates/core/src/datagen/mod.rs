//! Datasets: synthetic Gaussian blobs, the per-class imbalance protocol,
//! and CSV / IDX file formats.

mod io;

pub use io::{
    load_csv, load_idx, parse_csv, parse_idx, save_csv, write_csv, CsvSchema, ParseError,
};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Imbalance ratios used for the long-tail protocol: 10^-2 … 10^0 in half-decade steps.
pub const DEFAULT_IMBALANCE_RATIOS: [f64; 5] = [
    0.01,
    0.031_622_776_601_683_79,
    0.1,
    0.316_227_766_016_837_94,
    1.0,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// n × input_dim
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Rows held out for evaluation, sorted ascending.
    pub test_ids: Vec<usize>,
    /// (height, width) when rows are flattened images.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Contract(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            num_classes,
            test_ids: Vec::new(),
            image_shape: None,
        })
    }

    /// Concatenates a training and a test set, marking the latter as held out.
    pub fn from_parts(train: Dataset, test: Dataset) -> Result<Self> {
        if train.input_dim() != test.input_dim() {
            return Err(Error::Shape {
                op: "dataset concat",
                left: train.features.dim(),
                right: test.features.dim(),
            });
        }
        let n_train = train.len();
        let features =
            ndarray::concatenate(Axis(0), &[train.features.view(), test.features.view()])
                .expect("widths checked above");
        let mut labels = train.labels;
        labels.extend(test.labels);
        let num_classes = train.num_classes.max(test.num_classes);
        let mut ds = Dataset::new(train.name, features, labels, num_classes)?;
        ds.test_ids = (n_train..ds.len()).collect();
        ds.image_shape = train.image_shape;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn train_ids(&self) -> Vec<usize> {
        let mut test = self.test_ids.iter().peekable();
        (0..self.len())
            .filter(|i| {
                if test.peek() == Some(&i) {
                    test.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }

    /// Rows `ids` as a standalone dataset without a test partition.
    pub fn subset(&self, ids: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select(Axis(0), ids),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            test_ids: Vec::new(),
            image_shape: self.image_shape,
        }
    }

    pub fn train(&self) -> Dataset {
        self.subset(&self.train_ids())
    }

    pub fn test(&self) -> Dataset {
        self.subset(&self.test_ids)
    }

    /// Holds out `floor(count * fraction)` rows of every class, chosen uniformly.
    pub fn with_test_split(mut self, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "test fraction must be in [0, 1), got {fraction}"
            )));
        }
        let mut r = rng::stream(seed, &[tag::TEST_SPLIT]);
        let mut test = Vec::new();
        for mut rows in self.rows_by_class() {
            rows.shuffle(&mut r);
            let k = (rows.len() as f64 * fraction + 1e-9).floor() as usize;
            test.extend_from_slice(&rows[..k]);
        }
        test.sort_unstable();
        self.test_ids = test;
        Ok(self)
    }

    /// Row ids of each class, in ascending order.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by[y].push(i);
        }
        by
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.rows_by_class().iter().map(Vec::len).collect()
    }
}

/// Gaussian clusters around class means drawn uniformly on the unit sphere.
///
/// Rows are ordered by class: `per_class` rows of class 0, then class 1, …
pub fn generate_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || per_class < 2 || dim < 1 {
        return Err(Error::Config(format!(
            "blobs need K >= 2, per_class >= 2, dim >= 1 (got {num_classes}, {per_class}, {dim})"
        )));
    }
    if !(spread >= 0.0) {
        return Err(Error::Config(format!("spread must be >= 0, got {spread}")));
    }
    let mut r = rng::stream(seed, &[tag::DATA]);
    let mut means = Array2::<f64>::zeros((num_classes, dim));
    for mut m in means.rows_mut() {
        loop {
            m.mapv_inplace(|_| StandardNormal.sample(&mut r));
            let n = m.dot(&m).sqrt();
            if n > 1e-8 {
                m /= n;
                break;
            }
        }
    }
    let n = num_classes * per_class;
    let mut features = Array2::<f64>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let k = i / per_class;
        labels.push(k);
        for (j, v) in row.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut r);
            *v = means[[k, j]] + spread * noise;
        }
    }
    Dataset::new(
        format!("blobs-k{num_classes}-d{dim}"),
        features,
        labels,
        num_classes,
    )
}

/// Subsamples training rows per class to create a long-tailed distribution.
///
/// Classes are shuffled and split into `ratios.len()` equal groups; every
/// class in group `g` keeps `max(floor(count * ratios[g]), min_keep)` of its
/// training rows (never more than it has). Held-out test rows are kept as-is.
pub fn apply_imbalance(
    dataset: &Dataset,
    ratios: &[f64],
    min_keep: usize,
    seed: u64,
) -> Result<Dataset> {
    if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::Config(format!(
            "imbalance ratios must lie in (0, 1], got {ratios:?}"
        )));
    }
    if min_keep < 1 {
        return Err(Error::Config("min_keep must be >= 1".into()));
    }
    let k = dataset.num_classes;
    if !k.is_multiple_of(ratios.len()) {
        return Err(Error::Config(format!(
            "{} ratio groups do not divide {k} classes evenly",
            ratios.len()
        )));
    }
    let group_size = k / ratios.len();
    let mut r = rng::stream(seed, &[tag::IMBALANCE]);
    let mut classes: Vec<usize> = (0..k).collect();
    classes.shuffle(&mut r);
    let mut ratio_of = vec![1.0; k];
    for (pos, &c) in classes.iter().enumerate() {
        ratio_of[c] = ratios[pos / group_size];
    }

    let is_test = {
        let mut v = vec![false; dataset.len()];
        for &i in &dataset.test_ids {
            v[i] = true;
        }
        v
    };
    let mut train_by_class = vec![Vec::new(); k];
    for (i, &y) in dataset.labels.iter().enumerate() {
        if !is_test[i] {
            train_by_class[y].push(i);
        }
    }
    let mut keep: Vec<usize> = Vec::new();
    for (c, rows) in train_by_class.iter_mut().enumerate() {
        let target = ((rows.len() as f64 * ratio_of[c] + 1e-9).floor() as usize)
            .max(min_keep)
            .min(rows.len());
        rows.shuffle(&mut r);
        keep.extend_from_slice(&rows[..target]);
    }
    keep.sort_unstable();
    let n_train = keep.len();
    keep.extend_from_slice(&dataset.test_ids);
    let mut out = dataset.subset(&keep);
    out.test_ids = (n_train..out.len()).collect();
    out.name = format!("{}-imbalanced", dataset.name);
    Ok(out)
}
