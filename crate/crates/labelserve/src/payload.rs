//! What a person sees for each queried sample.

use malkit::datagen::Dataset;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Raw feature row plus its position on the dataset's first two
    /// principal axes.
    Vector {
        features: Vec<f64>,
        projection: [f64; 2],
    },
    /// Grayscale pixels, row-major, one byte each.
    Image {
        width: usize,
        height: usize,
        pixels: Vec<u8>,
    },
}

/// Two leading principal axes of a feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    mean: Array1<f64>,
    axes: [Array1<f64>; 2],
}

const POWER_ITERS: usize = 200;

impl Projection {
    pub fn fit(features: &Array2<f64>) -> Self {
        let d = features.ncols();
        let mean = features
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(d));
        let centered = features - &mean;
        let n = (features.nrows().max(2) - 1) as f64;
        let mut cov = centered.t().dot(&centered) / n;
        let first = leading_axis(&cov, 0);
        let lambda = first.dot(&cov.dot(&first));
        // Deflate so the second search lands on the next axis.
        let outer = first
            .view()
            .insert_axis(Axis(1))
            .dot(&first.view().insert_axis(Axis(0)));
        cov = cov - outer * lambda;
        let mut second = leading_axis(&cov, 1);
        second = &second - &(&first * first.dot(&second));
        let norm = second.dot(&second).sqrt();
        if norm > 1e-12 {
            second /= norm;
        }
        Self {
            mean,
            axes: [first, second],
        }
    }

    pub fn project(&self, row: &[f64]) -> [f64; 2] {
        let x = Array1::from_iter(row.iter().copied()) - &self.mean;
        [x.dot(&self.axes[0]), x.dot(&self.axes[1])]
    }
}

/// Power iteration from a fixed start so the axes are deterministic.
fn leading_axis(cov: &Array2<f64>, start: usize) -> Array1<f64> {
    let d = cov.nrows();
    let mut v = Array1::from_shape_fn(d, |i| 1.0 + ((i + start) % 3) as f64);
    v /= v.dot(&v).sqrt().max(1e-300);
    for _ in 0..POWER_ITERS {
        let w = cov.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm < 1e-12 {
            break;
        }
        v = w / norm;
    }
    // Fix the sign so the largest component is positive.
    let pivot = v
        .iter()
        .copied()
        .fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if pivot < 0.0 {
        v.mapv_inplace(|x| -x);
    }
    v
}

/// Builds payloads for rows of one dataset.
#[derive(Debug, Clone)]
pub enum PayloadBuilder {
    Vector(Projection),
    Image { width: usize, height: usize },
}

impl PayloadBuilder {
    pub fn for_dataset(train: &Dataset) -> Self {
        match train.image_shape {
            Some((height, width)) => Self::Image { width, height },
            None => Self::Vector(Projection::fit(&train.features)),
        }
    }

    pub fn build(&self, row: &[f64]) -> Payload {
        match self {
            Self::Vector(p) => Payload::Vector {
                features: row.to_vec(),
                projection: p.project(row),
            },
            Self::Image { width, height } => Payload::Image {
                width: *width,
                height: *height,
                pixels: row
                    .iter()
                    .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect(),
            },
        }
    }
}
