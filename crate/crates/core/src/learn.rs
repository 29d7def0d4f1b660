//! Kernels, one-vs-all SVMs and score calibration.
//!
//! Both SVM trainers solve the hinge-loss dual by coordinate descent. The bias
//! is learned as the weight of an implicit constant feature equal to 1, so it
//! is regularised together with `w` and the dual has no equality constraint.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::linalg::{self, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    Linear,
    /// `sum sign(a b) sqrt(|a b|)`, i.e. linear on signed square roots.
    Hellinger,
    AdditiveChi2,
    /// Inputs are L1-normalised before the distance is taken.
    ExpChi2 {
        lambda: f64,
    },
}

impl KernelKind {
    fn needs_nonnegative(self) -> bool {
        matches!(self, KernelKind::AdditiveChi2 | KernelKind::ExpChi2 { .. })
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Hellinger => "hellinger",
            KernelKind::AdditiveChi2 => "additive_chi2",
            KernelKind::ExpChi2 { .. } => "exp_chi2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Divide by `sqrt(K(x,x) K(y,y))`.
    pub normalize: bool,
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        KernelSpec {
            kind,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelKind::ExpChi2 { lambda } = self.kind {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::invalid(format!(
                    "exp-chi2 lambda {lambda} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Signed square root of each component.
pub fn hellinger_embed(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.signum() * x.abs().sqrt()).collect()
}

/// Symmetric chi-squared distance `sum (a-b)^2 / (a+b)`; zero-sum terms count 0.
pub fn chi2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            if x + y > 0.0 {
                (x - y) * (x - y) / (x + y)
            } else {
                0.0
            }
        })
        .sum()
}

fn l1_normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter().map(|x| x / s).collect()
    } else {
        v.to_vec()
    }
}

/// Kernel value on already-prepared inputs (L1-normalised for exp-chi2).
fn raw_kernel(kind: KernelKind, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        KernelKind::Linear => linalg::dot(a, b),
        KernelKind::Hellinger => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x * y).signum() * (x * y).abs().sqrt())
            .sum(),
        KernelKind::AdditiveChi2 => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                if x + y > 0.0 {
                    2.0 * x * y / (x + y)
                } else {
                    0.0
                }
            })
            .sum(),
        KernelKind::ExpChi2 { lambda } => (-lambda * chi2_distance(a, b)).exp(),
    }
}

fn prepare(x: &Matrix, kind: KernelKind) -> Result<Matrix> {
    if kind.needs_nonnegative() {
        if let Some(v) = x.as_slice().iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::invalid(format!(
                "{} kernel needs nonnegative inputs, found {v}",
                kind.name()
            )));
        }
    }
    if let KernelKind::ExpChi2 { .. } = kind {
        let rows: Vec<Vec<f64>> = x.iter_rows().map(l1_normalized).collect();
        return Matrix::from_vec(x.rows(), x.cols(), rows.concat());
    }
    Ok(x.clone())
}

/// Gram matrix `K[i, j] = k(x_i, y_j)`, normalised if the spec asks for it.
pub fn compute_kernel(x: &Matrix, y: &Matrix, spec: &KernelSpec) -> Result<Matrix> {
    spec.validate()?;
    Error::check_dim(x.cols(), y.cols())?;
    let (px, py) = (prepare(x, spec.kind)?, prepare(y, spec.kind)?);
    let data: Vec<f64> = (0..px.rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (px, py) = (&px, &py);
            (0..py.rows()).map(move |j| raw_kernel(spec.kind, px.row(i), py.row(j)))
        })
        .collect();
    let k = Matrix::from_vec(x.rows(), y.rows(), data)?;
    if !spec.normalize {
        return Ok(k);
    }
    let dx: Vec<f64> = px
        .iter_rows()
        .map(|r| raw_kernel(spec.kind, r, r))
        .collect();
    let dy: Vec<f64> = py
        .iter_rows()
        .map(|r| raw_kernel(spec.kind, r, r))
        .collect();
    normalize_kernel(&k, &dx, &dy)
}

/// Self-similarities `k(x_i, x_i)` before normalisation.
pub fn kernel_diagonal(x: &Matrix, spec: &KernelSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let px = prepare(x, spec.kind)?;
    Ok(px
        .iter_rows()
        .map(|r| raw_kernel(spec.kind, r, r))
        .collect())
}

/// `K'[i, j] = K[i, j] / sqrt(diag_x[i] diag_y[j])`.
pub fn normalize_kernel(k: &Matrix, diag_x: &[f64], diag_y: &[f64]) -> Result<Matrix> {
    Error::check_dim(k.rows(), diag_x.len())?;
    Error::check_dim(k.cols(), diag_y.len())?;
    if let Some(d) = diag_x.iter().chain(diag_y).find(|d| !(**d > 0.0)) {
        return Err(Error::invalid(format!(
            "kernel normalisation needs a positive diagonal, found {d}"
        )));
    }
    let mut out = k.clone();
    for i in 0..k.rows() {
        for j in 0..k.cols() {
            out[(i, j)] = k[(i, j)] / (diag_x[i] * diag_y[j]).sqrt();
        }
    }
    Ok(out)
}

/// Reciprocal of the mean off-diagonal chi-squared distance between the
/// L1-normalised rows of `x`.
pub fn estimate_chi2_lambda(x: &Matrix) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::invalid(
            "lambda estimation needs at least two vectors",
        ));
    }
    let px = prepare(x, KernelKind::ExpChi2 { lambda: 1.0 })?;
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| chi2_distance(px.row(i), px.row(j)))
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let mean = total / (n * (n - 1) / 2) as f64;
    if !(mean > 0.0) {
        return Err(Error::Degenerate(
            "all vectors are identical, mean chi2 distance is zero".into(),
        ));
    }
    Ok(1.0 / mean)
}

/// Smallest eigenvalue must be at least `-1e-6 trace / n`.
pub fn check_psd(k: &Matrix) -> Result<()> {
    let n = k.rows();
    if n != k.cols() {
        return Err(Error::invalid(format!(
            "kernel matrix is {}x{}, not square",
            n,
            k.cols()
        )));
    }
    let scale = k.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n.max(1) as f64;
    if !k.is_symmetric(1e-9 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::invalid("kernel matrix is not symmetric"));
    }
    let (values, _) = linalg::symmetric_eigen(k)?;
    let min = values.last().copied().unwrap_or(0.0);
    let trace: f64 = k.diagonal().iter().sum();
    if min < -1e-6 * trace / n as f64 {
        return Err(Error::invalid(format!(
            "kernel matrix is not positive semidefinite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// Stop when the duality gap falls below `tol * primal`.
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            tol: 1e-4,
            max_epochs: 1_000_000,
            seed: 0,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!(
                "SVM C = {} must be positive",
                self.c
            )));
        }
        if !(self.tol > 0.0) || self.max_epochs == 0 {
            return Err(Error::invalid(
                "SVM tolerance and epoch cap must be positive",
            ));
        }
        Ok(())
    }
}

/// One-vs-all linear scorer `s_c(x) = <w_c, x> + b_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// One row per class.
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub labels: Vec<String>,
}

impl LinearClassifier {
    pub fn new(weights: Matrix, biases: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        Error::check_dim(weights.rows(), biases.len())?;
        Error::check_dim(weights.rows(), labels.len())?;
        Ok(LinearClassifier {
            weights,
            biases,
            labels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn score(&self, class: usize, x: &[f64]) -> f64 {
        linalg::dot(self.weights.row(class), x) + self.biases[class]
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.dim(), x.len())?;
        Ok((0..self.num_classes()).map(|c| self.score(c, x)).collect())
    }

    /// Highest scoring class; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_labels(n: usize, labels: &[usize], classes: &[String]) -> Result<()> {
    Error::check_dim(n, labels.len())?;
    if classes.len() < 2 {
        return Err(Error::invalid(
            "one-vs-all training needs at least two classes",
        ));
    }
    let mut counts = vec![0usize; classes.len()];
    for &l in labels {
        if l >= classes.len() {
            return Err(Error::invalid(format!(
                "label {l} out of range for {} classes",
                classes.len()
            )));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "class {} has no training examples",
            classes[c]
        )));
    }
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::invalid("training data contains a single class"));
    }
    Ok(())
}

/// Binary hinge-loss SVM on raw vectors; returns `(w, b)`.
pub fn train_binary_linear_svm(
    x: &Matrix,
    y: &[bool],
    params: &SvmParams,
) -> Result<(Vec<f64>, f64)> {
    params.validate()?;
    Error::check_dim(x.rows(), y.len())?;
    let n = x.rows();
    let ys: Vec<f64> = y.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let qii: Vec<f64> = x.iter_rows().map(|r| linalg::dot(r, r) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let c = params.c;
    for epoch in 0..params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let xi = x.row(i);
            let g = ys[i] * (linalg::dot(&w, xi) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg != 0.0 {
                let new = (alpha[i] - g / qii[i]).clamp(0.0, c);
                let d = (new - alpha[i]) * ys[i];
                alpha[i] = new;
                for (wj, xj) in w.iter_mut().zip(xi) {
                    *wj += d * xj;
                }
                b += d;
            }
        }
        let reg = 0.5 * (linalg::dot(&w, &w) + b * b);
        let loss: f64 = (0..n)
            .map(|i| (1.0 - ys[i] * (linalg::dot(&w, x.row(i)) + b)).max(0.0))
            .sum();
        let primal = reg + c * loss;
        let dual = alpha.iter().sum::<f64>() - reg;
        if primal - dual <= params.tol * primal {
            break;
        }
        if epoch + 1 == params.max_epochs {
            warn!(
                "linear SVM stopped at the epoch cap with duality gap {:e}",
                primal - dual
            );
        }
    }
    Ok((w, b))
}

/// One-vs-all linear SVMs, one per class, trained in parallel.
pub fn train_linear_svm_ova(
    x: &Matrix,
    labels: &[usize],
    classes: &[String],
    params: &SvmParams,
) -> Result<LinearClassifier> {
    check_labels(x.rows(), labels, classes)?;
    let fits: Vec<(Vec<f64>, f64)> = (0..classes.len())
        .into_par_iter()
        .map(|c| {
            let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            train_binary_linear_svm(x, &y, params)
        })
        .collect::<Result<_>>()?;
    let mut weights = Matrix::zeros(classes.len(), x.cols());
    let mut biases = Vec::with_capacity(classes.len());
    for (c, (w, b)) in fits.into_iter().enumerate() {
        weights.row_mut(c).copy_from_slice(&w);
        biases.push(b);
    }
    LinearClassifier::new(weights, biases, classes.to_vec())
}

/// Dual solution over a precomputed kernel: `s_c(i) = sum_j coef[c][j] K[j, i] + bias[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSvm {
    /// `alpha_j y_j`, one row per class, one column per training point.
    pub coefs: Matrix,
    pub biases: Vec<f64>,
    pub labels: Vec<String>,
    /// Set when the kernel carried no cross-example similarity.
    pub degenerate: bool,
}

impl KernelSvm {
    /// Scores from kernel values against every training point.
    pub fn scores(&self, k_row: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.coefs.cols(), k_row.len())?;
        Ok((0..self.biases.len())
            .map(|c| linalg::dot(self.coefs.row(c), k_row) + self.biases[c])
            .collect())
    }
}

fn train_binary_kernel_svm(k: &Matrix, y: &[bool], params: &SvmParams) -> (Vec<f64>, f64) {
    let n = k.rows();
    let ys: Vec<f64> = y.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let mut alpha = vec![0.0; n];
    // f[i] = sum_j alpha_j y_j (K_ji + 1)
    let mut f = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let c = params.c;
    for epoch in 0..params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = ys[i] * f[i] - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            let qii = k[(i, i)] + 1.0;
            if pg != 0.0 && qii > 0.0 {
                let new = (alpha[i] - g / qii).clamp(0.0, c);
                let d = (new - alpha[i]) * ys[i];
                alpha[i] = new;
                let row = k.row(i);
                for (fj, kij) in f.iter_mut().zip(row) {
                    *fj += d * (kij + 1.0);
                }
            }
        }
        let reg = 0.5 * (0..n).map(|i| alpha[i] * ys[i] * f[i]).sum::<f64>();
        let loss: f64 = (0..n).map(|i| (1.0 - ys[i] * f[i]).max(0.0)).sum();
        let primal = reg + c * loss;
        let dual = alpha.iter().sum::<f64>() - reg;
        if primal - dual <= params.tol * primal {
            break;
        }
        if epoch + 1 == params.max_epochs {
            warn!(
                "kernel SVM stopped at the epoch cap with duality gap {:e}",
                primal - dual
            );
        }
    }
    let coefs: Vec<f64> = alpha.iter().zip(&ys).map(|(a, y)| a * y).collect();
    let bias = coefs.iter().sum();
    (coefs, bias)
}

/// One-vs-all SVMs on a precomputed training kernel.
pub fn train_kernel_svm_ova(
    k: &Matrix,
    labels: &[usize],
    classes: &[String],
    params: &SvmParams,
) -> Result<KernelSvm> {
    params.validate()?;
    check_psd(k)?;
    check_labels(k.rows(), labels, classes)?;
    let n = k.rows();
    let max_diag = k.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let max_off = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max(k[(i, j)].abs()));
    let degenerate = max_off <= 1e-12 * max_diag;
    if degenerate {
        warn!("kernel has no off-diagonal similarity; the SVM reduces to its bias");
    }
    let fits: Vec<(Vec<f64>, f64)> = (0..classes.len())
        .into_par_iter()
        .map(|c| {
            let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            train_binary_kernel_svm(k, &y, params)
        })
        .collect();
    let mut coefs = Matrix::zeros(classes.len(), n);
    let mut biases = Vec::with_capacity(classes.len());
    for (c, (a, b)) in fits.into_iter().enumerate() {
        coefs.row_mut(c).copy_from_slice(&a);
        biases.push(b);
    }
    Ok(KernelSvm {
        coefs,
        biases,
        labels: classes.to_vec(),
        degenerate,
    })
}

/// Kernel SVM bundled with its support vectors so it can score raw vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    pub spec: KernelSpec,
    /// Retained training vectors, one per row.
    pub support: Matrix,
    /// One row per class, one column per support vector.
    pub coefs: Matrix,
    pub biases: Vec<f64>,
    pub labels: Vec<String>,
}

impl KernelModel {
    /// Trains on raw vectors; only points with a non-zero coefficient for some
    /// class are retained.
    pub fn fit(
        x: &Matrix,
        labels: &[usize],
        classes: &[String],
        spec: &KernelSpec,
        params: &SvmParams,
    ) -> Result<KernelModel> {
        let k = compute_kernel(x, x, spec)?;
        let svm = train_kernel_svm_ova(&k, labels, classes, params)?;
        let keep: Vec<usize> = (0..x.rows())
            .filter(|&j| (0..classes.len()).any(|c| svm.coefs[(c, j)] != 0.0))
            .collect();
        let mut coefs = Matrix::zeros(classes.len(), keep.len());
        for c in 0..classes.len() {
            for (col, &j) in keep.iter().enumerate() {
                coefs[(c, col)] = svm.coefs[(c, j)];
            }
        }
        Ok(KernelModel {
            spec: *spec,
            support: x.select_rows(&keep),
            coefs,
            biases: svm.biases,
            labels: svm.labels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.biases.len()
    }

    /// Class scores for each row of `x`, one row per input.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        let k = compute_kernel(x, &self.support, &self.spec)?;
        let mut out = Matrix::zeros(x.rows(), self.num_classes());
        for i in 0..x.rows() {
            for c in 0..self.num_classes() {
                out[(i, c)] = linalg::dot(self.coefs.row(c), k.row(i)) + self.biases[c];
            }
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let s = self.scores(x)?;
        Ok(s.iter_rows().map(argmax).collect())
    }
}

/// Affine map `s -> a s + shift` sending the positive median to +1 and the
/// negative median to -1. `None` if the medians are not ordered.
pub fn recalibration_map(pos: &[f64], neg: &[f64]) -> Option<(f64, f64)> {
    let mp = linalg::median(pos)?;
    let mn = linalg::median(neg)?;
    if !(mp > mn) {
        return None;
    }
    let a = 2.0 / (mp - mn);
    Some((a, -a * mn - 1.0))
}

/// Rescales each class so that the median training score of its positives is
/// +1 and of its negatives -1. Classes whose medians are not ordered are left
/// unchanged with a warning.
pub fn recalibrate(
    clf: &LinearClassifier,
    x: &Matrix,
    labels: &[usize],
) -> Result<LinearClassifier> {
    Error::check_dim(x.rows(), labels.len())?;
    Error::check_dim(clf.dim(), x.cols())?;
    let mut out = clf.clone();
    for c in 0..clf.num_classes() {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (r, &l) in x.iter_rows().zip(labels) {
            let s = clf.score(c, r);
            if l == c {
                pos.push(s)
            } else {
                neg.push(s)
            }
        }
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::invalid(format!(
                "class {} needs positive and negative training scores",
                clf.labels[c]
            )));
        }
        match recalibration_map(&pos, &neg) {
            Some((a, shift)) => {
                out.weights.row_mut(c).iter_mut().for_each(|w| *w *= a);
                out.biases[c] = a * clf.biases[c] + shift;
            }
            None => warn!(
                "class {}: positive median does not exceed negative median, left unchanged",
                clf.labels[c]
            ),
        }
    }
    Ok(out)
}

/// Sigmoid `p(s) = 1 / (1 + exp(a s + b))`; `a < 0` when probability grows with the score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationParams {
    pub a: f64,
    pub b: f64,
}

impl CalibrationParams {
    pub fn probability(&self, score: f64) -> f64 {
        let z = self.a * score + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// Platt scaling fitted by Newton's method with backtracking on the smoothed
/// targets `(N+ + 1)/(N+ + 2)` and `1/(N- + 2)`.
pub fn platt_calibrate(scores: &[f64], positive: &[bool]) -> Result<CalibrationParams> {
    Error::check_dim(scores.len(), positive.len())?;
    let np = positive.iter().filter(|&&p| p).count() as f64;
    let nn = positive.len() as f64 - np;
    if np == 0.0 || nn == 0.0 {
        return Err(Error::invalid(
            "Platt calibration needs both positive and negative examples",
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("Platt calibration scores must be finite"));
    }
    if scores.iter().all(|&s| s == scores[0]) {
        return Err(Error::Degenerate("all calibration scores are equal".into()));
    }
    let hi = (np + 1.0) / (np + 2.0);
    let lo = 1.0 / (nn + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&t)
            .map(|(&s, &ti)| {
                let f = a * s + b;
                if f >= 0.0 {
                    ti * f + (1.0 + (-f).exp()).ln()
                } else {
                    (ti - 1.0) * f + (1.0 + f.exp()).ln()
                }
            })
            .sum()
    };

    let (mut a, mut b) = (0.0, ((nn + 1.0) / (np + 1.0)).ln());
    let mut fval = objective(a, b);
    const SIGMA: f64 = 1e-12;
    const EPS: f64 = 1e-5;
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&s, &ti) in scores.iter().zip(&t) {
            let f = a * s + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = ti - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    Ok(CalibrationParams { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn lin() -> KernelSpec {
        KernelSpec {
            kind: KernelKind::Linear,
            normalize: false,
        }
    }

    #[test]
    fn linear_on_basis_is_identity() {
        let x = Matrix::identity(4);
        assert_eq!(compute_kernel(&x, &x, &lin()).unwrap(), Matrix::identity(4));
    }

    #[test]
    fn additive_chi2_hand_value() {
        let x = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let y = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let spec = KernelSpec {
            kind: KernelKind::AdditiveChi2,
            normalize: false,
        };
        let k = compute_kernel(&x, &y, &spec).unwrap();
        assert!((k[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        let neg = Matrix::from_rows(&[[-0.5, 1.5]]).unwrap();
        assert!(compute_kernel(&neg, &y, &spec).is_err());
    }

    #[test]
    fn hellinger_self_similarity_of_histogram() {
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.7]]).unwrap();
        let spec = KernelSpec {
            kind: KernelKind::Hellinger,
            normalize: false,
        };
        let k = compute_kernel(&x, &x, &spec).unwrap();
        assert!((k[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exp_chi2_range() {
        let x = Matrix::from_rows(&[[1.0, 0.0, 2.0], [0.3, 0.3, 0.4], [2.0, 0.0, 4.0]]).unwrap();
        let spec = KernelSpec {
            kind: KernelKind::ExpChi2 { lambda: 2.0 },
            normalize: false,
        };
        let k = compute_kernel(&x, &x, &spec).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        // equal after L1 normalisation
        assert_eq!(k[(0, 2)], 1.0);
        assert!(k[(0, 1)] > 0.0 && k[(0, 1)] < 1.0);
        let bad = KernelSpec {
            kind: KernelKind::ExpChi2 { lambda: 0.0 },
            normalize: false,
        };
        assert!(compute_kernel(&x, &x, &bad).is_err());
    }

    #[test]
    fn normalize_hand_case_and_idempotence() {
        let k = Matrix::from_rows(&[[4.0, 2.0], [2.0, 9.0]]).unwrap();
        let n = normalize_kernel(&k, &[4.0, 9.0], &[4.0, 9.0]).unwrap();
        assert_eq!(n[(0, 0)], 1.0);
        assert_eq!(n[(1, 1)], 1.0);
        assert!((n[(0, 1)] - 2.0 / 6.0).abs() < 1e-15);
        let again = normalize_kernel(&n, &n.diagonal(), &n.diagonal()).unwrap();
        assert_eq!(again, n);
        assert!(normalize_kernel(&k, &[0.0, 9.0], &[4.0, 9.0]).is_err());
    }

    #[test]
    fn lambda_estimation() {
        let same = Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        assert!(estimate_chi2_lambda(&same).is_err());
        // three corners of the simplex: every pair at distance 2
        let corners = Matrix::identity(3);
        assert!((estimate_chi2_lambda(&corners).unwrap() - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let v: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let mut d = 0.0;
                    for t in 0..5 {
                        let (a, b) = (rows[i][t], rows[j][t]);
                        d += (a - b).powi(2) / (a + b);
                    }
                    total += d;
                    count += 1.0;
                }
            }
        }
        let lambda = estimate_chi2_lambda(&Matrix::from_rows(&rows).unwrap()).unwrap();
        assert!((lambda - count / total).abs() < 1e-12 * lambda);
    }

    #[test]
    fn psd_check() {
        assert!(check_psd(&Matrix::identity(3)).is_ok());
        let bad = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(check_psd(&bad).is_err());
        let rect = Matrix::zeros(2, 3);
        assert!(check_psd(&rect).is_err());
    }

    fn toy_2d() -> (Matrix, Vec<usize>) {
        let x = Matrix::from_rows(&[
            [2.0, 1.0],
            [3.0, 2.0],
            [2.5, -1.0],
            [-2.0, -1.0],
            [-3.0, 0.5],
            [-1.5, 1.0],
        ])
        .unwrap();
        (x, vec![0, 0, 0, 1, 1, 1])
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = toy_2d();
        let clf = train_linear_svm_ova(&x, &y, &names(2), &SvmParams::default()).unwrap();
        for (r, &l) in x.iter_rows().zip(&y) {
            assert_eq!(clf.predict(r).unwrap(), l);
        }
        assert_eq!(SvmParams::default().c, 1.0);
    }

    #[test]
    fn svm_input_errors() {
        let (x, _) = toy_2d();
        let p = SvmParams::default();
        assert!(train_linear_svm_ova(&x, &[0; 6], &names(1), &p).is_err());
        assert!(train_linear_svm_ova(&x, &[0; 6], &names(2), &p).is_err());
        assert!(train_linear_svm_ova(&x, &[0, 1, 2, 0, 1, 0], &names(2), &p).is_err());
        assert!(train_linear_svm_ova(&x, &[0, 1], &names(2), &p).is_err());
    }

    /// Projected gradient on the box-constrained dual, far past convergence.
    fn dual_oracle(x: &Matrix, y: &[f64], c: f64) -> (Vec<f64>, f64) {
        let n = x.rows();
        let mut q = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] = y[i] * y[j] * (linalg::dot(x.row(i), x.row(j)) + 1.0);
            }
        }
        let lmax: f64 = (0..n)
            .map(|i| (0..n).map(|j| q[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let step = 1.0 / lmax;
        let mut a = vec![0.0; n];
        for _ in 0..200_000 {
            let g: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| q[(i, j)] * a[j]).sum::<f64>() - 1.0)
                .collect();
            for i in 0..n {
                a[i] = (a[i] - step * g[i]).clamp(0.0, c);
            }
        }
        let mut w = vec![0.0; x.cols()];
        let mut b = 0.0;
        for i in 0..n {
            for (wj, xj) in w.iter_mut().zip(x.row(i)) {
                *wj += a[i] * y[i] * xj;
            }
            b += a[i] * y[i];
        }
        (w, b)
    }

    #[test]
    fn linear_svm_matches_dual_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        while rows.len() < 20 {
            let p: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let m = p[0] + 0.5 * p[1] - 0.1;
            if m.abs() > 0.1 {
                rows.push(p);
                y.push(m > 0.0);
            }
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let params = SvmParams {
            tol: 1e-8,
            ..SvmParams::default()
        };
        let (w, b) = train_binary_linear_svm(&x, &y, &params).unwrap();
        let ys: Vec<f64> = y.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        let (wo, bo) = dual_oracle(&x, &ys, 1.0);
        for r in x.iter_rows() {
            let got = linalg::dot(&w, r) + b;
            let want = linalg::dot(&wo, r) + bo;
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn kernel_svm_agrees_with_linear_svm() {
        let (x, y) = toy_2d();
        let params = SvmParams {
            tol: 1e-8,
            ..SvmParams::default()
        };
        let lin_clf = train_linear_svm_ova(&x, &y, &names(2), &params).unwrap();
        let model = KernelModel::fit(&x, &y, &names(2), &lin(), &params).unwrap();
        let test = Matrix::from_rows(&[[0.5, 0.2], [-0.3, 2.0], [4.0, -4.0]]).unwrap();
        let ks = model.scores(&test).unwrap();
        for (i, r) in test.iter_rows().enumerate() {
            let ls = lin_clf.scores(r).unwrap();
            for c in 0..2 {
                assert!((ks[(i, c)] - ls[c]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn identity_kernel_is_flagged() {
        let k = Matrix::identity(4);
        let svm =
            train_kernel_svm_ova(&k, &[0, 0, 1, 1], &names(2), &SvmParams::default()).unwrap();
        assert!(svm.degenerate);
        let (x, y) = toy_2d();
        let k = compute_kernel(&x, &x, &lin()).unwrap();
        let svm = train_kernel_svm_ova(&k, &y, &names(2), &SvmParams::default()).unwrap();
        assert!(!svm.degenerate);
        assert!(train_kernel_svm_ova(
            &Matrix::zeros(2, 3),
            &[0, 1],
            &names(2),
            &SvmParams::default()
        )
        .is_err());
        assert!(train_kernel_svm_ova(&k, &[0, 1], &names(2), &SvmParams::default()).is_err());
    }

    #[test]
    fn exp_chi2_at_least_as_good_as_linear_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..45 {
            let c = i % 3;
            let mut v: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            v[c] += 0.6;
            let s: f64 = v.iter().sum();
            rows.push(v.iter().map(|x| x / s).collect::<Vec<_>>());
            y.push(c);
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let acc = |pred: Vec<usize>| pred.iter().zip(&y).filter(|(a, b)| a == b).count();
        let lambda = estimate_chi2_lambda(&x).unwrap();
        let p = SvmParams::default();
        let lm =
            KernelModel::fit(&x, &y, &names(3), &KernelSpec::new(KernelKind::Linear), &p).unwrap();
        let em = KernelModel::fit(
            &x,
            &y,
            &names(3),
            &KernelSpec::new(KernelKind::ExpChi2 { lambda }),
            &p,
        )
        .unwrap();
        assert!(acc(em.predict(&x).unwrap()) >= acc(lm.predict(&x).unwrap()));
    }

    #[test]
    fn recalibration_hand_case() {
        let (a, shift) = recalibration_map(&[0.2, 0.4, 0.6], &[-0.1, 0.0, 0.1]).unwrap();
        assert!((a - 5.0).abs() < 1e-12);
        assert!((a * 0.4 + shift - 1.0).abs() < 1e-12);
        assert!((a * 0.0 + shift + 1.0).abs() < 1e-12);
        assert!(recalibration_map(&[0.0], &[0.5]).is_none());
        let (a, shift) = recalibration_map(&[1.0, 1.0], &[-1.0, -1.0]).unwrap();
        assert_eq!((a, shift), (1.0, 0.0));
    }

    #[test]
    fn recalibrate_sets_medians() {
        let (x, y) = toy_2d();
        let clf = train_linear_svm_ova(&x, &y, &names(2), &SvmParams::default()).unwrap();
        let r = recalibrate(&clf, &x, &y).unwrap();
        for c in 0..2 {
            let pos: Vec<f64> = (0..6)
                .filter(|&i| y[i] == c)
                .map(|i| r.score(c, x.row(i)))
                .collect();
            let neg: Vec<f64> = (0..6)
                .filter(|&i| y[i] != c)
                .map(|i| r.score(c, x.row(i)))
                .collect();
            assert!((linalg::median(&pos).unwrap() - 1.0).abs() < 1e-9);
            assert!((linalg::median(&neg).unwrap() + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn inverted_class_is_left_alone() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let clf = LinearClassifier::new(
            Matrix::from_rows(&[[-1.0], [1.0]]).unwrap(),
            vec![0.0, 0.0],
            names(2),
        )
        .unwrap();
        let r = recalibrate(&clf, &x, &[1, 0, 0]).unwrap();
        // class 0 positives score lowest: unchanged
        assert_eq!(r.weights.row(0), clf.weights.row(0));
        assert_eq!(r.biases[0], 0.0);
    }

    #[test]
    fn platt_symmetric_boundary() {
        let scores = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let labels = [false, false, true, false, true, true];
        let p = platt_calibrate(&scores, &labels).unwrap();
        assert!(p.a < 0.0);
        assert!((p.probability(0.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn platt_separable_limit() {
        let mut scores = vec![1.0; 200];
        scores.extend(vec![-1.0; 200]);
        let labels: Vec<bool> = (0..400).map(|i| i < 200).collect();
        let p = platt_calibrate(&scores, &labels).unwrap();
        assert!(p.probability(1.0) >= 0.99);
        assert!(p.probability(-1.0) <= 0.01);
    }

    #[test]
    fn platt_recovers_generating_model() {
        let (a0, b0) = (-1.5, 0.4);
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let s = -3.0 + 6.0 * i as f64 / 19.0;
            let p = 1.0 / (1.0 + (a0 * s + b0).exp());
            let pos = (p * 100.0).round() as usize;
            for k in 0..100 {
                scores.push(s);
                labels.push(k < pos);
            }
        }
        let fit = platt_calibrate(&scores, &labels).unwrap();
        assert!(((fit.a - a0) / a0).abs() < 0.1, "{fit:?}");
        assert!(((fit.b - b0) / b0).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn platt_errors() {
        assert!(platt_calibrate(&[1.0, 2.0], &[true, true]).is_err());
        assert!(platt_calibrate(&[1.0, 1.0], &[true, false]).is_err());
    }
}
