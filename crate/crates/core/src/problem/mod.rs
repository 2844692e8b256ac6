//! Finite-sum objectives `f(x) = (1/n) sum_i f_i(x)` with exact per-sample
//! gradients, plus data ingestion and gradient validation.
//!
//! Three problem kinds are provided: least squares (quadratic, exact
//! smoothness constant and minimizer available), binary logistic loss with a
//! bounded non-convex regularizer, and a small one-hidden-layer ReLU/softmax
//! network. All of them share the same contract: `grad_full` is the exact
//! mean of `grad_sample` over all samples, accumulated through the fixed
//! chunked reduction in [`crate::accum`].

mod idx;
mod mlp;
mod synthetic;

pub use idx::load_idx;
pub use synthetic::{
    gen_synthetic, gen_synthetic_regression, SyntheticRegressionSpec, SyntheticSpec,
};

use std::ops::Deref;

use rand::Rng;

use crate::accum;
use crate::error::{Error, Result};
use crate::rng;
use crate::vecmath;

/// A point in parameter space; entries are finite by construction at the API
/// boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        vecmath::norm_sq(&self.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

/// Sample labels: class ids for classification, real targets for regression.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes {
        labels: Vec<u32>,
        num_classes: usize,
    },
    Values(Vec<f64>),
}

/// An immutable design matrix plus targets. Rows are stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n: usize,
    p: usize,
    targets: Targets,
}

impl Dataset {
    pub fn classification(
        features: Vec<f64>,
        n: usize,
        p: usize,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.len() != n * p {
            return Err(Error::invalid(format!(
                "feature buffer has {} entries, expected {}x{}",
                features.len(),
                n,
                p
            )));
        }
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "{} labels for {} samples",
                labels.len(),
                n
            )));
        }
        if !vecmath::all_finite(&features) {
            return Err(Error::invalid("non-finite feature value"));
        }
        if let Some(bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Dataset {
            features,
            n,
            p,
            targets: Targets::Classes {
                labels,
                num_classes,
            },
        })
    }

    pub fn regression(features: Vec<f64>, n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if features.len() != n * p {
            return Err(Error::invalid(format!(
                "feature buffer has {} entries, expected {}x{}",
                features.len(),
                n,
                p
            )));
        }
        if values.len() != n {
            return Err(Error::invalid(format!(
                "{} targets for {} samples",
                values.len(),
                n
            )));
        }
        if !vecmath::all_finite(&features) || !vecmath::all_finite(&values) {
            return Err(Error::invalid("non-finite value in dataset"));
        }
        Ok(Dataset {
            features,
            n,
            p,
            targets: Targets::Values(values),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn class_label(&self, i: usize) -> Option<u32> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels[i]),
            Targets::Values(_) => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { num_classes, .. } => Some(*num_classes),
            Targets::Values(_) => None,
        }
    }
}

/// Which objective the dataset is wrapped in.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    /// `f_i(x) = 1/2 (a_i . x - y_i)^2` over regression targets.
    LeastSquares,
    /// Binary logistic loss plus the bounded non-convex regularizer
    /// `lambda * sum_j x_j^2 / (1 + x_j^2)`.
    LogisticNonconvex { lambda: f64 },
    /// One-hidden-layer ReLU network with softmax cross-entropy.
    Mlp { hidden: usize },
}

/// A finite-sum objective over an immutable dataset. Shareable across threads;
/// every operation is a pure function of its inputs.
#[derive(Debug, Clone)]
pub struct FiniteSumProblem {
    dataset: Dataset,
    kind: ProblemKind,
    l2_weight: f64,
    d: usize,
}

impl FiniteSumProblem {
    pub fn new(dataset: Dataset, kind: ProblemKind, l2_weight: f64) -> Result<Self> {
        if dataset.n == 0 {
            return Err(Error::invalid("problem requires at least one sample"));
        }
        if !(l2_weight >= 0.0) {
            return Err(Error::invalid("l2 weight must be non-negative"));
        }
        let d = match &kind {
            ProblemKind::LeastSquares => {
                if !matches!(dataset.targets, Targets::Values(_)) {
                    return Err(Error::invalid("least squares requires regression targets"));
                }
                dataset.p
            }
            ProblemKind::LogisticNonconvex { lambda } => {
                if !(*lambda >= 0.0) {
                    return Err(Error::invalid("lambda must be non-negative"));
                }
                match &dataset.targets {
                    Targets::Classes { num_classes: 2, .. } => dataset.p,
                    _ => return Err(Error::invalid("logistic loss requires binary class labels")),
                }
            }
            ProblemKind::Mlp { hidden } => {
                let h = *hidden;
                if h == 0 {
                    return Err(Error::invalid("hidden layer must have at least one unit"));
                }
                match &dataset.targets {
                    Targets::Classes { num_classes, .. } if *num_classes >= 2 => {
                        let p = dataset.p;
                        let k = *num_classes;
                        p * h + h + h * k + k
                    }
                    _ => {
                        return Err(Error::invalid(
                            "mlp requires class labels with >= 2 classes",
                        ))
                    }
                }
            }
        };
        Ok(FiniteSumProblem {
            dataset,
            kind,
            l2_weight,
            d,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    pub fn l2_weight(&self) -> f64 {
        self.l2_weight
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_samples(&self) -> usize {
        self.dataset.n
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        if !vecmath::all_finite(x) {
            return Err(Error::invalid("parameter vector has non-finite entries"));
        }
        Ok(())
    }

    fn check_sample(&self, i: usize) -> Result<()> {
        if i >= self.dataset.n {
            return Err(Error::SampleOutOfRange {
                index: i,
                n: self.dataset.n,
            });
        }
        Ok(())
    }

    /// `f(x)`, the mean of the per-sample losses (each includes the l2 term).
    pub fn loss(&self, x: &ParamVector) -> Result<f64> {
        self.check_x(x)?;
        let n = self.dataset.n;
        let sum = accum::scalar_sum(n, |i| self.loss_sample_unchecked(x, i));
        Ok(sum * (1.0 / n as f64))
    }

    /// `f_i(x)` including the l2 term `C/2 ||x||^2`.
    pub fn loss_sample(&self, x: &ParamVector, i: usize) -> Result<f64> {
        self.check_x(x)?;
        self.check_sample(i)?;
        Ok(self.loss_sample_unchecked(x, i))
    }

    fn loss_sample_unchecked(&self, x: &[f64], i: usize) -> f64 {
        let data = match &self.kind {
            ProblemKind::LeastSquares => {
                let a = self.dataset.row(i);
                let y = match &self.dataset.targets {
                    Targets::Values(v) => v[i],
                    _ => unreachable!(),
                };
                let r = vecmath::dot(a, x) - y;
                0.5 * r * r
            }
            ProblemKind::LogisticNonconvex { lambda } => {
                let a = self.dataset.row(i);
                let label = self.dataset.class_label(i).unwrap();
                let sign = if label == 1 { 1.0 } else { -1.0 };
                let margin = sign * vecmath::dot(a, x);
                let mut f = log1p_exp_neg(margin);
                if *lambda > 0.0 {
                    let mut reg = 0.0;
                    for &xj in x {
                        reg += xj * xj / (1.0 + xj * xj);
                    }
                    f += lambda * reg;
                }
                f
            }
            ProblemKind::Mlp { hidden } => {
                let label = self.dataset.class_label(i).unwrap() as usize;
                let k = self.dataset.num_classes().unwrap();
                mlp::loss(x, self.dataset.row(i), label, self.dataset.p, *hidden, k)
            }
        };
        if self.l2_weight > 0.0 {
            data + 0.5 * self.l2_weight * vecmath::norm_sq(x)
        } else {
            data
        }
    }

    /// Exact analytic gradient of `f_i`, including the regularizer gradient.
    pub fn grad_sample(&self, x: &ParamVector, i: usize) -> Result<ParamVector> {
        self.check_x(x)?;
        self.check_sample(i)?;
        let mut out = vec![0.0; self.d];
        self.grad_sample_into(x, i, &mut out);
        Ok(ParamVector(out))
    }

    /// Writes the gradient of `f_i` at `x` into `out` (overwriting it).
    pub(crate) fn grad_sample_into(&self, x: &[f64], i: usize, out: &mut [f64]) {
        match &self.kind {
            ProblemKind::LeastSquares => {
                let a = self.dataset.row(i);
                let y = match &self.dataset.targets {
                    Targets::Values(v) => v[i],
                    _ => unreachable!(),
                };
                let r = vecmath::dot(a, x) - y;
                for (o, &ak) in out.iter_mut().zip(a) {
                    *o = r * ak;
                }
            }
            ProblemKind::LogisticNonconvex { lambda } => {
                let a = self.dataset.row(i);
                let label = self.dataset.class_label(i).unwrap();
                let sign = if label == 1 { 1.0 } else { -1.0 };
                let margin = sign * vecmath::dot(a, x);
                // d/dm log(1 + e^-m) = -sigmoid(-m)
                let coeff = -sign * sigmoid_neg(margin);
                for (o, &ak) in out.iter_mut().zip(a) {
                    *o = coeff * ak;
                }
                if *lambda > 0.0 {
                    for (o, &xj) in out.iter_mut().zip(x) {
                        let denom = 1.0 + xj * xj;
                        *o += lambda * 2.0 * xj / (denom * denom);
                    }
                }
            }
            ProblemKind::Mlp { hidden } => {
                let label = self.dataset.class_label(i).unwrap() as usize;
                let k = self.dataset.num_classes().unwrap();
                mlp::grad_into(
                    x,
                    self.dataset.row(i),
                    label,
                    self.dataset.p,
                    *hidden,
                    k,
                    out,
                );
            }
        }
        if self.l2_weight > 0.0 {
            for (o, &xk) in out.iter_mut().zip(x) {
                *o += self.l2_weight * xk;
            }
        }
    }

    /// Unscaled `sum_{i in [lo, hi)} grad f_i(x)`, accumulated in index order.
    /// This is the chunk kernel shared by `grad_full` and the distributed
    /// full-gradient gather.
    pub fn grad_chunk_partial(&self, x: &[f64], lo: usize, hi: usize) -> Vec<f64> {
        let mut part = vec![0.0; self.d];
        let mut tmp = vec![0.0; self.d];
        for i in lo..hi {
            self.grad_sample_into(x, i, &mut tmp);
            for (p, t) in part.iter_mut().zip(&tmp) {
                *p += *t;
            }
        }
        part
    }

    /// `grad f(x)`, the exact mean of the per-sample gradients under the
    /// fixed chunked summation order.
    pub fn grad_full(&self, x: &ParamVector) -> Result<ParamVector> {
        self.check_x(x)?;
        let n = self.dataset.n;
        let mut g = accum::vector_sum(n, self.d, |lo, hi| self.grad_chunk_partial(x, lo, hi));
        let inv_n = 1.0 / n as f64;
        for v in &mut g {
            *v *= inv_n;
        }
        Ok(ParamVector(g))
    }

    /// Max over coordinates of the relative error between the analytic and
    /// central-difference gradient of `f`, scaled by `1 + ||grad||_inf`.
    pub fn fd_check(&self, x: &ParamVector, h: f64) -> Result<f64> {
        self.check_x(x)?;
        if !(h > 0.0) {
            return Err(Error::invalid("finite-difference step must be positive"));
        }
        let analytic = self.grad_full(x)?;
        let scale = 1.0 + analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut worst = 0.0f64;
        let mut probe = x.values().to_vec();
        for k in 0..self.d {
            let orig = probe[k];
            probe[k] = orig + h;
            let fp = self.loss(&ParamVector(probe.clone()))?;
            probe[k] = orig - h;
            let fm = self.loss(&ParamVector(probe.clone()))?;
            probe[k] = orig;
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((analytic[k] - fd).abs() / scale);
        }
        Ok(worst)
    }

    /// Smoothness constant for the step-size and theory calculations.
    ///
    /// Least squares: exact largest eigenvalue of the Hessian
    /// `(1/n) sum a_i a_i^T + C I` by power iteration. Other kinds: sampled
    /// ratio `||grad f(x) - grad f(y)|| / ||x - y||` over random probe pairs
    /// (also probing random per-sample components) times a 1.5 safety factor.
    pub fn estimate_l(&self, num_probes: usize, seed: u64) -> Result<f64> {
        if num_probes == 0 {
            return Err(Error::invalid("need at least one probe"));
        }
        match self.kind {
            ProblemKind::LeastSquares => Ok(self.least_squares_spectral_norm(seed)),
            _ => Ok(self.probe_l(num_probes, seed)),
        }
    }

    fn least_squares_spectral_norm(&self, seed: u64) -> f64 {
        let d = self.d;
        let n = self.dataset.n;
        let mut rng = rng::init_stream(seed);
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..1.0)).collect();
        let norm = vecmath::norm_sq(&v).sqrt();
        for vk in &mut v {
            *vk /= norm;
        }
        let mut eig = 0.0;
        for _ in 0..500 {
            // H v = (1/n) sum a_i (a_i . v) + C v
            let mut hv = accum::vector_sum(n, d, |lo, hi| {
                let mut part = vec![0.0; d];
                for i in lo..hi {
                    let a = self.dataset.row(i);
                    let coef = vecmath::dot(a, &v);
                    for (p, &ak) in part.iter_mut().zip(a) {
                        *p += coef * ak;
                    }
                }
                part
            });
            let inv_n = 1.0 / n as f64;
            for (h, &vk) in hv.iter_mut().zip(&v) {
                *h = *h * inv_n + self.l2_weight * vk;
            }
            let new_eig = vecmath::dot(&v, &hv);
            let norm = vecmath::norm_sq(&hv).sqrt();
            if norm == 0.0 {
                return self.l2_weight;
            }
            for (vk, h) in v.iter_mut().zip(&hv) {
                *vk = h / norm;
            }
            if (new_eig - eig).abs() <= 1e-13 * new_eig.abs().max(1.0) {
                return new_eig;
            }
            eig = new_eig;
        }
        eig
    }

    fn probe_l(&self, num_probes: usize, seed: u64) -> f64 {
        let d = self.d;
        let mut rng = rng::init_stream(seed);
        let scales = [1.0, 0.1, 0.01];
        let mut best = 0.0f64;
        for probe in 0..num_probes {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scale = scales[probe % scales.len()];
            let y: Vec<f64> = x
                .iter()
                .map(|&xk| xk + scale * rng.gen_range(-1.0..1.0f64))
                .collect();
            let dist = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist == 0.0 {
                continue;
            }
            let xv = ParamVector(x.clone());
            let yv = ParamVector(y.clone());
            let gx = self.grad_full(&xv).expect("probe in domain");
            let gy = self.grad_full(&yv).expect("probe in domain");
            let diff: f64 = gx
                .iter()
                .zip(gy.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.max(diff / dist);

            // Assumption is that every f_i shares the constant; sample one.
            let i = rng.gen_range(0..self.dataset.n);
            let gxi = self.grad_sample(&xv, i).expect("probe in domain");
            let gyi = self.grad_sample(&yv, i).expect("probe in domain");
            let diff_i: f64 = gxi
                .iter()
                .zip(gyi.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.max(diff_i / dist);
        }
        1.5 * best
    }

    /// Seeded initial parameters: uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// per layer for the network, zeros otherwise.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        match &self.kind {
            ProblemKind::Mlp { hidden } => {
                let p = self.dataset.p;
                let h = *hidden;
                let k = self.dataset.num_classes().unwrap();
                let mut rng = rng::init_stream(seed);
                let mut w = Vec::with_capacity(self.d);
                let lim1 = 1.0 / (p as f64).sqrt();
                for _ in 0..(p * h + h) {
                    w.push(rng.gen_range(-lim1..lim1));
                }
                let lim2 = 1.0 / (h as f64).sqrt();
                for _ in 0..(h * k + k) {
                    w.push(rng.gen_range(-lim2..lim2));
                }
                ParamVector(w)
            }
            _ => ParamVector::zeros(self.d),
        }
    }

    /// Exact minimizer and optimal value for least squares, by solving the
    /// normal equations. `None` for the other kinds.
    pub fn least_squares_minimizer(&self) -> Option<(ParamVector, f64)> {
        if !matches!(self.kind, ProblemKind::LeastSquares) {
            return None;
        }
        let d = self.d;
        let n = self.dataset.n;
        let inv_n = 1.0 / n as f64;
        let mut h = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        let values = match &self.dataset.targets {
            Targets::Values(v) => v,
            _ => unreachable!(),
        };
        for i in 0..n {
            let a = self.dataset.row(i);
            for r in 0..d {
                let ar = a[r];
                for c in 0..d {
                    h[r * d + c] += inv_n * ar * a[c];
                }
                rhs[r] += inv_n * ar * values[i];
            }
        }
        for r in 0..d {
            h[r * d + r] += self.l2_weight;
        }
        let x = solve_dense(&mut h, &mut rhs, d)?;
        let xv = ParamVector(x);
        let fstar = self.loss(&xv).ok()?;
        Some((xv, fstar))
    }
}

/// Gaussian elimination with partial pivoting; `a` is row-major `d x d`.
fn solve_dense(a: &mut [f64], b: &mut [f64], d: usize) -> Option<Vec<f64>> {
    for col in 0..d {
        let mut pivot = col;
        for r in (col + 1)..d {
            if a[r * d + col].abs() > a[pivot * d + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * d + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for c in 0..d {
                a.swap(col * d + c, pivot * d + c);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * d + col];
        for r in (col + 1)..d {
            let factor = a[r * d + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..d {
                a[r * d + c] -= factor * a[col * d + c];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for col in (0..d).rev() {
        let mut s = b[col];
        for c in (col + 1)..d {
            s -= a[col * d + c] * x[c];
        }
        x[col] = s / a[col * d + col];
    }
    Some(x)
}

/// `ln(1 + e^-m)`, stable for large |m|.
fn log1p_exp_neg(m: f64) -> f64 {
    if m >= 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// `sigmoid(-m) = 1 / (1 + e^m)`, stable for large |m|.
fn sigmoid_neg(m: f64) -> f64 {
    if m >= 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

#[cfg(test)]
pub(crate) mod tests;
