//! Seeded synthetic datasets for desk-scale runs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::Dataset;

/// Classification spec: labels come from the argmax of per-class hyperplane
/// scores, then a `noise` fraction is relabeled uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub num_classes: usize,
    pub noise: f64,
    pub seed: u64,
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.p == 0 {
        return Err(Error::invalid("synthetic data needs n >= 1 and p >= 1"));
    }
    if spec.num_classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if !(0.0..=1.0).contains(&spec.noise) {
        return Err(Error::invalid("noise must lie in [0, 1]"));
    }
    let mut rng = rng::data_stream(spec.seed);
    let planes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..spec.p).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut features = Vec::with_capacity(spec.n * spec.p);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let row: Vec<f64> = (0..spec.p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, plane) in planes.iter().enumerate() {
            let score: f64 = plane.iter().zip(&row).map(|(w, x)| w * x).sum();
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        let label = if spec.noise > 0.0 && rng.gen::<f64>() < spec.noise {
            rng.gen_range(0..spec.num_classes)
        } else {
            best
        };
        features.extend_from_slice(&row);
        labels.push(label as u32);
    }
    Dataset::classification(features, spec.n, spec.p, labels, spec.num_classes)
}

/// Regression spec: targets are a seeded hyperplane response plus uniform
/// noise of the given amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRegressionSpec {
    pub n: usize,
    pub p: usize,
    pub noise: f64,
    pub seed: u64,
}

pub fn gen_synthetic_regression(spec: &SyntheticRegressionSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.p == 0 {
        return Err(Error::invalid("synthetic data needs n >= 1 and p >= 1"));
    }
    if spec.noise < 0.0 {
        return Err(Error::invalid("noise must be non-negative"));
    }
    let mut rng = rng::data_stream(spec.seed);
    let plane: Vec<f64> = (0..spec.p).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut features = Vec::with_capacity(spec.n * spec.p);
    let mut values = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let row: Vec<f64> = (0..spec.p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y: f64 = plane.iter().zip(&row).map(|(w, x)| w * x).sum();
        if spec.noise > 0.0 {
            y += spec.noise * rng.gen_range(-1.0..1.0);
        }
        features.extend_from_slice(&row);
        values.push(y);
    }
    Dataset::regression(features, spec.n, spec.p, values)
}
