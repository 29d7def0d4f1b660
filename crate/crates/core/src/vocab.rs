//! Vocabulary learning: PCA whitening, k-means codebooks and diagonal GMMs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptors::DescriptorSample;
use crate::linalg::{self, Matrix};
use crate::{Error, Result};

/// Eigenvalues below this fraction of the largest one are floored.
const EIGEN_FLOOR_REL: f64 = 1e-8;
/// Components whose prior would drop below this are clamped, then priors renormalised.
pub const PRIOR_FLOOR: f64 = 1e-6;
/// Variance floor as a fraction of the mean per-dimension data variance.
pub const VARIANCE_FLOOR_REL: f64 = 1e-4;
/// Rows per chunk in the parallel passes; fixed so results do not depend on the thread count.
const CHUNK: usize = 2048;

/// PCA projection followed by whitening: `y = diag(1/sqrt(lambda)) B^T (f - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaWhitener {
    pub mean: Vec<f64>,
    /// `D x D'` matrix with orthonormal columns.
    pub basis: Matrix,
    /// Eigenvalues of the kept directions, descending.
    pub eigenvalues: Vec<f64>,
    /// Whether the output is divided by the square root of the eigenvalues.
    pub whiten: bool,
}

impl PcaWhitener {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn target_dim(&self) -> usize {
        self.basis.cols()
    }

    fn floor(&self) -> f64 {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0);
        (top * EIGEN_FLOOR_REL).max(f64::MIN_POSITIVE)
    }

    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        let floor = self.floor();
        let centered: Vec<f64> = f.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        (0..self.target_dim())
            .map(|j| {
                let mut s = 0.0;
                for (i, c) in centered.iter().enumerate() {
                    s += self.basis[(i, j)] * c;
                }
                if self.whiten {
                    s / self.eigenvalues[j].max(floor).sqrt()
                } else {
                    s
                }
            })
            .collect()
    }

    pub fn transform(&self, sample: &DescriptorSample) -> Result<DescriptorSample> {
        Error::check_dim(self.input_dim(), sample.dim())?;
        let out = sample.map_descriptors(|f| self.project(f))?;
        if out.is_empty() {
            return Ok(DescriptorSample::empty(self.target_dim()));
        }
        Ok(out)
    }
}

/// Fits PCA on the rows of `samples` and keeps the `target_dim` leading directions.
pub fn fit_pca_whitener(samples: &Matrix, target_dim: usize) -> Result<PcaWhitener> {
    let (n, d) = (samples.rows(), samples.cols());
    if target_dim == 0 || target_dim > d {
        return Err(Error::invalid(format!(
            "PCA target dimension {target_dim} must be in 1..={d}"
        )));
    }
    if n <= target_dim {
        return Err(Error::invalid(format!(
            "PCA needs more samples ({n}) than target dimensions ({target_dim})"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in samples.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in samples.iter_rows() {
        for (c, (v, m)) in centered.iter_mut().zip(r.iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = cov.row_mut(i);
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let (values, vectors) = linalg::symmetric_eigen(&cov)?;
    let mut basis = Matrix::zeros(d, target_dim);
    for i in 0..d {
        for j in 0..target_dim {
            basis[(i, j)] = vectors[(i, j)];
        }
    }
    Ok(PcaWhitener {
        mean,
        basis,
        eigenvalues: values[..target_dim].iter().map(|v| v.max(0.0)).collect(),
        whiten: true,
    })
}

/// Visual-word dictionary, one centre per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centers: Matrix,
}

impl Codebook {
    pub fn new(centers: Matrix) -> Result<Self> {
        if centers.rows() == 0 || centers.cols() == 0 {
            return Err(Error::invalid(
                "codebook needs at least one non-empty centre",
            ));
        }
        if centers.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook has non-finite entries"));
        }
        for i in 0..centers.rows() {
            for j in 0..i {
                if centers.row(i) == centers.row(j) {
                    return Err(Error::invalid(format!(
                        "duplicate codebook centres {j} and {i}"
                    )));
                }
            }
        }
        Ok(Codebook { centers })
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn center(&self, k: usize) -> &[f64] {
        self.centers.row(k)
    }

    /// Nearest centre (lowest index on ties) and its squared distance.
    pub fn assign(&self, f: &[f64]) -> (usize, f64) {
        linalg::nearest_row(&self.centers, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl KmeansParams {
    pub fn new(k: usize) -> Self {
        KmeansParams {
            k,
            max_iters: 100,
            seed: 0,
        }
    }
}

/// Codebook plus the objective (sum of squared distances) after every assignment step.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub codebook: Codebook,
    pub objective_history: Vec<f64>,
    pub assignments: Vec<usize>,
}

fn assign_all(data: &Matrix, centers: &Matrix) -> Vec<(usize, f64)> {
    let d = data.cols().max(1);
    data.as_slice()
        .par_chunks(CHUNK * d)
        .flat_map_iter(|chunk| {
            chunk
                .chunks_exact(d)
                .map(|f| linalg::nearest_row(centers, f))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn kmeans_pp(data: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let n = data.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = data
        .iter_rows()
        .map(|r| linalg::sq_dist(r, data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate(format!(
                "fewer than {k} distinct points to seed k-means"
            )));
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < w {
                break;
            }
            target -= w;
        }
        let pick = pick.expect("positive total implies a candidate");
        chosen.push(pick);
        let c = data.row(pick);
        for (i, r) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(linalg::sq_dist(r, c));
        }
    }
    Ok(data.select_rows(&chosen))
}

/// Lloyd's algorithm from k-means++ seeding. Clusters that lose all their
/// points are re-seeded at the point farthest from its centre.
pub fn kmeans(samples: &Matrix, params: &KmeansParams) -> Result<KmeansFit> {
    let (n, dim) = (samples.rows(), samples.cols());
    let k = params.k;
    if k == 0 {
        return Err(Error::invalid("k-means needs K >= 1"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "k-means needs at least K={k} samples, got {n}"
        )));
    }
    if samples.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means input has non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centers = kmeans_pp(samples, k, &mut rng)?;
    let mut history = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for _ in 0..params.max_iters.max(1) {
        let assigned = assign_all(samples, &centers);
        history.push(assigned.iter().map(|a| a.1).sum());
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if new_labels == labels {
            break;
        }
        labels = new_labels;

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (r, &l) in samples.iter_rows().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut dists: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("non-empty data");
                centers.row_mut(c).copy_from_slice(samples.row(far));
                dists[far] = 0.0;
            }
        }
    }
    let assignments = if labels.is_empty() {
        assign_all(samples, &centers).iter().map(|a| a.0).collect()
    } else {
        labels
    };
    Ok(KmeansFit {
        codebook: Codebook::new(centers)?,
        objective_history: history,
        assignments,
    })
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    priors: Vec<f64>,
    means: Matrix,
    variances: Matrix,
    /// `log pi_k - 0.5 * sum_d log(2 pi sigma^2_kd)`
    log_consts: Vec<f64>,
}

impl GmmModel {
    pub fn new(priors: Vec<f64>, means: Matrix, variances: Matrix) -> Result<Self> {
        let k = priors.len();
        if k == 0 {
            return Err(Error::invalid("GMM needs at least one component"));
        }
        Error::check_dim(k, means.rows())?;
        Error::check_dim(k, variances.rows())?;
        Error::check_dim(means.cols(), variances.cols())?;
        if priors.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::invalid("GMM priors must be positive"));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("GMM priors sum to {total}, not 1")));
        }
        if variances
            .as_slice()
            .iter()
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::invalid("GMM variances must be positive"));
        }
        if means.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("GMM means must be finite"));
        }
        let log_consts = (0..k)
            .map(|c| {
                priors[c].ln()
                    - 0.5
                        * variances
                            .row(c)
                            .iter()
                            .map(|v| (2.0 * std::f64::consts::PI * v).ln())
                            .sum::<f64>()
            })
            .collect();
        Ok(GmmModel {
            priors,
            means,
            variances,
            log_consts,
        })
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn variances(&self) -> &Matrix {
        &self.variances
    }

    /// `log(pi_k N(f; mu_k, Sigma_k))` for every component.
    pub fn log_joint(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let q: f64 = f
                    .iter()
                    .zip(self.means.row(k))
                    .zip(self.variances.row(k))
                    .map(|((x, m), v)| {
                        let d = x - m;
                        d * d / v
                    })
                    .sum();
                self.log_consts[k] - 0.5 * q
            })
            .collect()
    }

    /// Posteriors and the log-density of `f`.
    pub fn posteriors_with_ll(&self, f: &[f64]) -> (Vec<f64>, f64) {
        let mut lj = self.log_joint(f);
        let max = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in lj.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        lj.iter_mut().for_each(|v| *v /= total);
        (lj, max + total.ln())
    }

    pub fn log_likelihood(&self, samples: &Matrix) -> f64 {
        samples
            .iter_rows()
            .map(|f| self.posteriors_with_ll(f).1)
            .sum()
    }
}

/// Posterior responsibilities of every component for `f`, computed in log space.
pub fn gmm_posteriors(gmm: &GmmModel, f: &[f64]) -> Result<Vec<f64>> {
    Error::check_dim(gmm.dim(), f.len())?;
    Ok(gmm.posteriors_with_ll(f).0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative log-likelihood change falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl GmmParams {
    pub fn new(k: usize) -> Self {
        GmmParams {
            k,
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood before every M-step.
    pub log_likelihood_history: Vec<f64>,
}

fn normalize_priors(priors: &mut [f64]) {
    for p in priors.iter_mut() {
        *p = p.max(PRIOR_FLOOR);
    }
    let s: f64 = priors.iter().sum();
    priors.iter_mut().for_each(|p| *p /= s);
}

struct Stats {
    ll: f64,
    n: Vec<f64>,
    s1: Matrix,
    s2: Matrix,
}

fn e_step(model: &GmmModel, samples: &Matrix) -> Stats {
    let (k, d) = (model.len(), model.dim());
    let partials: Vec<Stats> = samples
        .as_slice()
        .par_chunks(CHUNK * d.max(1))
        .map(|chunk| {
            let mut st = Stats {
                ll: 0.0,
                n: vec![0.0; k],
                s1: Matrix::zeros(k, d),
                s2: Matrix::zeros(k, d),
            };
            for f in chunk.chunks_exact(d.max(1)) {
                let (post, ll) = model.posteriors_with_ll(f);
                st.ll += ll;
                for (c, &g) in post.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    st.n[c] += g;
                    let s1 = st.s1.row_mut(c);
                    for (a, x) in s1.iter_mut().zip(f) {
                        *a += g * x;
                    }
                    let s2 = st.s2.row_mut(c);
                    for (a, x) in s2.iter_mut().zip(f) {
                        *a += g * x * x;
                    }
                }
            }
            st
        })
        .collect();
    let mut total = Stats {
        ll: 0.0,
        n: vec![0.0; k],
        s1: Matrix::zeros(k, d),
        s2: Matrix::zeros(k, d),
    };
    for p in partials {
        total.ll += p.ll;
        for c in 0..k {
            total.n[c] += p.n[c];
        }
        for (a, b) in total.s1.as_mut_slice().iter_mut().zip(p.s1.as_slice()) {
            *a += b;
        }
        for (a, b) in total.s2.as_mut_slice().iter_mut().zip(p.s2.as_slice()) {
            *a += b;
        }
    }
    total
}

/// EM for a diagonal GMM, initialised from k-means.
pub fn fit_gmm(samples: &Matrix, params: &GmmParams) -> Result<GmmFit> {
    let (n, d) = (samples.rows(), samples.cols());
    let k = params.k;
    if k == 0 || n < k {
        return Err(Error::invalid(format!(
            "GMM needs 1 <= K <= samples, got K={k}, n={n}"
        )));
    }
    // Global per-dimension variance sets the floor.
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for r in samples.iter_rows() {
        for j in 0..d {
            mean[j] += r[j];
            sq[j] += r[j] * r[j];
        }
    }
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            let m = mean[j] / n as f64;
            (sq[j] / n as f64 - m * m).max(0.0)
        })
        .collect();
    let mean_var = global_var.iter().sum::<f64>() / d.max(1) as f64;
    let floor = (VARIANCE_FLOOR_REL * mean_var).max(1e-12);

    let km = kmeans(
        samples,
        &KmeansParams {
            k,
            max_iters: 30,
            seed: params.seed,
        },
    )?;
    let centers = km.codebook.centers().clone();
    let mut counts = vec![0usize; k];
    let mut var_acc = Matrix::zeros(k, d);
    for (r, &l) in samples.iter_rows().zip(&km.assignments) {
        counts[l] += 1;
        for j in 0..d {
            let diff = r[j] - centers[(l, j)];
            var_acc[(l, j)] += diff * diff;
        }
    }
    let mut variances = Matrix::zeros(k, d);
    for c in 0..k {
        for j in 0..d {
            variances[(c, j)] = if counts[c] >= 2 {
                var_acc[(c, j)] / counts[c] as f64
            } else {
                global_var[j]
            }
            .max(floor);
        }
    }
    let mut priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    normalize_priors(&mut priors);
    let mut model = GmmModel::new(priors, centers, variances)?;

    let mut history: Vec<f64> = Vec::new();
    for _ in 0..params.max_iters.max(1) {
        let st = e_step(&model, samples);
        let converged = history
            .last()
            .is_some_and(|&prev| (st.ll - prev).abs() <= params.tol * prev.abs().max(1e-300));
        history.push(st.ll);
        if converged {
            break;
        }
        let mut means = model.means.clone();
        let mut vars = model.variances.clone();
        let mut priors = model.priors.clone();
        for c in 0..k {
            let nk = st.n[c];
            if nk > 1e-10 {
                for j in 0..d {
                    let mu = st.s1[(c, j)] / nk;
                    means[(c, j)] = mu;
                    vars[(c, j)] = (st.s2[(c, j)] / nk - mu * mu).max(floor);
                }
            }
            priors[c] = nk / n as f64;
        }
        normalize_priors(&mut priors);
        model = GmmModel::new(priors, means, vars)?;
    }
    Ok(GmmFit {
        model,
        log_likelihood_history: history,
    })
}
