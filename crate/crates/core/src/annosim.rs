//! Budgeted attribute annotation driven by co-occurrence statistics.
//!
//! Each image comes with a key attribute that is known to apply. The
//! remaining attributes are queried in order of how likely they are to
//! co-occur with the key, optionally sharpened by classifier scores, and
//! only the top `budget` queries are asked.

use rand::Rng;
use rayon::prelude::*;

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Laplace pseudo-count used when estimating co-occurrences.
pub const DEFAULT_ALPHA: f64 = 1.0;
const PROB_CLAMP: f64 = 1e-12;

/// Binary image-by-attribute annotations with a key attribute per image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMatrix {
    num_attributes: usize,
    rows: Vec<Vec<bool>>,
    keys: Vec<usize>,
}

impl GroundTruthMatrix {
    pub fn new(num_attributes: usize, rows: Vec<Vec<bool>>, keys: Vec<usize>) -> Result<Self> {
        Error::check_dim(rows.len(), keys.len())?;
        if num_attributes < 2 {
            return Err(Error::invalid("annotation needs at least two attributes"));
        }
        for (i, (r, &k)) in rows.iter().zip(&keys).enumerate() {
            Error::check_dim(num_attributes, r.len())?;
            if k >= num_attributes {
                return Err(Error::invalid(format!(
                    "image {i}: key attribute {k} out of range"
                )));
            }
            if !r[k] {
                return Err(Error::invalid(format!(
                    "image {i}: key attribute {k} is not marked present"
                )));
            }
        }
        Ok(GroundTruthMatrix {
            num_attributes,
            rows,
            keys,
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }

    pub fn key(&self, i: usize) -> usize {
        self.keys[i]
    }
}

/// `p(q'|q)`: probability that `q'` applies to an image keyed by `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceModel {
    pub p_cond: Matrix,
    /// Base rate `1/Q`.
    pub p0: f64,
}

impl CooccurrenceModel {
    pub fn num_attributes(&self) -> usize {
        self.p_cond.rows()
    }
}

/// Smoothed fraction of seed images keyed by `q` that exhibit `q'`:
/// `(count + alpha) / (n_q + 2 alpha)`, with the diagonal fixed at 1.
pub fn estimate_cooccurrence(seed: &GroundTruthMatrix, alpha: f64) -> Result<CooccurrenceModel> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid("smoothing pseudo-count must be nonnegative"));
    }
    let q = seed.num_attributes();
    let mut counts = Matrix::zeros(q, q);
    let mut n = vec![0usize; q];
    for (row, &k) in seed.rows.iter().zip(&seed.keys) {
        n[k] += 1;
        for (j, &present) in row.iter().enumerate() {
            if present {
                counts[(k, j)] += 1.0;
            }
        }
    }
    if let Some(k) = n.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "key attribute {k} has no seed images"
        )));
    }
    let mut p = Matrix::zeros(q, q);
    for k in 0..q {
        for j in 0..q {
            p[(k, j)] = if j == k {
                1.0
            } else {
                (counts[(k, j)] + alpha) / (n[k] as f64 + 2.0 * alpha)
            };
        }
    }
    Ok(CooccurrenceModel {
        p_cond: p,
        p0: 1.0 / q as f64,
    })
}

fn check_key(q: usize, model: &CooccurrenceModel) -> Result<()> {
    if q >= model.num_attributes() {
        return Err(Error::invalid(format!("attribute {q} out of range")));
    }
    Ok(())
}

/// Attributes other than `q` by decreasing `p(q'|q)`; ties keep index order.
pub fn rank_queries_prior(q: usize, model: &CooccurrenceModel) -> Result<Vec<(usize, f64)>> {
    check_key(q, model)?;
    let mut r: Vec<(usize, f64)> = (0..model.num_attributes())
        .filter(|&j| j != q)
        .map(|j| (j, model.p_cond[(q, j)]))
        .collect();
    r.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(r)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Classifier-adjusted ranking by `sigma(c) * odds(p(q'|q)) * (1 - p0) / p0`.
/// Ties fall back to the prior order.
pub fn rank_queries_posterior(
    q: usize,
    scores: &[f64],
    model: &CooccurrenceModel,
) -> Result<Vec<(usize, f64)>> {
    check_key(q, model)?;
    Error::check_dim(model.num_attributes(), scores.len())?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!(
            "classifier score {s} is not finite"
        )));
    }
    posterior_ranking(q, scores.iter().map(|&s| sigmoid(s)), model)
}

/// Same as [`rank_queries_posterior`] with the sigmoid already applied.
pub fn rank_queries_posterior_probs(
    q: usize,
    probs: &[f64],
    model: &CooccurrenceModel,
) -> Result<Vec<(usize, f64)>> {
    check_key(q, model)?;
    Error::check_dim(model.num_attributes(), probs.len())?;
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    posterior_ranking(q, probs.iter().copied(), model)
}

fn posterior_ranking(
    q: usize,
    probs: impl Iterator<Item = f64>,
    model: &CooccurrenceModel,
) -> Result<Vec<(usize, f64)>> {
    let ratio = (1.0 - model.p0) / model.p0;
    let mut r: Vec<(usize, f64, f64)> = probs
        .enumerate()
        .filter(|&(j, _)| j != q)
        .map(|(j, s)| {
            let p = model.p_cond[(q, j)].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            (j, s * (p / (1.0 - p)) * ratio, p)
        })
        .collect();
    r.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)));
    Ok(r.into_iter().map(|(j, v, _)| (j, v)).collect())
}

/// Query ordering used by the simulator.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    Prior,
    /// Classifier scores, one row per image, one column per attribute.
    Posterior(&'a Matrix),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetReport {
    pub budget: usize,
    pub mean_recall: f64,
    /// Fraction of images whose positives were all recovered.
    pub fully_recovered: f64,
}

/// Queries the top `budget` attributes per image and measures how many of
/// its positive attributes are recovered. The key attribute is always known.
pub fn simulate_budget(
    gt: &GroundTruthMatrix,
    model: &CooccurrenceModel,
    budget: usize,
    strategy: Strategy<'_>,
) -> Result<BudgetReport> {
    Error::check_dim(model.num_attributes(), gt.num_attributes())?;
    if gt.is_empty() {
        return Err(Error::invalid("no images to simulate"));
    }
    if let Strategy::Posterior(s) = strategy {
        Error::check_dim(gt.len(), s.rows())?;
        Error::check_dim(gt.num_attributes(), s.cols())?;
    }
    let recalls: Vec<f64> = (0..gt.len())
        .into_par_iter()
        .map(|i| {
            let key = gt.key(i);
            let ranking = match strategy {
                Strategy::Prior => rank_queries_prior(key, model)?,
                Strategy::Posterior(s) => rank_queries_posterior(key, s.row(i), model)?,
            };
            let row = gt.row(i);
            let positives = row.iter().filter(|&&p| p).count();
            let found = 1 + ranking.iter().take(budget).filter(|(j, _)| row[*j]).count();
            Ok(found as f64 / positives as f64)
        })
        .collect::<Result<_>>()?;
    let n = recalls.len() as f64;
    Ok(BudgetReport {
        budget,
        mean_recall: recalls.iter().sum::<f64>() / n,
        fully_recovered: recalls.iter().filter(|&&r| r == 1.0).count() as f64 / n,
    })
}

/// Recall for each budget in `budgets`.
pub fn budget_curve(
    gt: &GroundTruthMatrix,
    model: &CooccurrenceModel,
    budgets: &[usize],
    strategy: Strategy<'_>,
) -> Result<Vec<BudgetReport>> {
    budgets
        .iter()
        .map(|&b| simulate_budget(gt, model, b, strategy))
        .collect()
}

/// Total price of collecting `votes` answers for every image/attribute pair.
pub fn annotation_cost(n_images: usize, n_attrs: usize, votes: usize, rate: f64) -> Result<f64> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::invalid(format!(
            "rate {rate} must be a nonnegative number"
        )));
    }
    Ok(n_images as f64 * n_attrs as f64 * votes as f64 * rate)
}

/// Draws `per_key` images for every key attribute, each other attribute
/// present independently with probability `p(q'|key)`.
pub fn sample_ground_truth<R: Rng>(
    model: &CooccurrenceModel,
    per_key: usize,
    rng: &mut R,
) -> GroundTruthMatrix {
    let q = model.num_attributes();
    let mut rows = Vec::with_capacity(q * per_key);
    let mut keys = Vec::with_capacity(q * per_key);
    for k in 0..q {
        for _ in 0..per_key {
            let row: Vec<bool> = (0..q)
                .map(|j| j == k || rng.gen_bool(model.p_cond[(k, j)].clamp(0.0, 1.0)))
                .collect();
            rows.push(row);
            keys.push(k);
        }
    }
    GroundTruthMatrix {
        num_attributes: q,
        rows,
        keys,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seed_rows(q: usize, key: usize, present: &[usize], n: usize, hits: usize) -> Vec<Vec<bool>> {
        (0..n)
            .map(|i| {
                (0..q)
                    .map(|j| j == key || (present.contains(&j) && i < hits))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn smoothing_arithmetic() {
        let mut rows = seed_rows(3, 0, &[1], 12, 7);
        let mut keys = vec![0; 12];
        rows.push(vec![true, true, true]);
        keys.push(1);
        rows.push(vec![false, false, true]);
        keys.push(2);
        let gt = GroundTruthMatrix::new(3, rows, keys).unwrap();
        let m = estimate_cooccurrence(&gt, DEFAULT_ALPHA).unwrap();
        assert!((m.p_cond[(0, 1)] - 8.0 / 14.0).abs() < 1e-15);
        assert!((m.p_cond[(0, 2)] - 1.0 / 14.0).abs() < 1e-15);
        assert!((m.p_cond[(1, 0)] - 2.0 / 3.0).abs() < 1e-15);
        for k in 0..3 {
            assert_eq!(m.p_cond[(k, k)], 1.0);
        }
        assert!((m.p0 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn missing_key_and_bad_rows() {
        let gt = GroundTruthMatrix::new(3, vec![vec![true, false, false]], vec![0]).unwrap();
        assert!(estimate_cooccurrence(&gt, 1.0).is_err());
        assert!(GroundTruthMatrix::new(3, vec![vec![false, true, false]], vec![0]).is_err());
    }

    fn model(p: &[&[f64]]) -> CooccurrenceModel {
        CooccurrenceModel {
            p_cond: Matrix::from_rows(p).unwrap(),
            p0: 1.0 / p.len() as f64,
        }
    }

    #[test]
    fn prior_ranking() {
        let m = model(&[&[1.0, 0.2, 0.2, 0.2], &[0.5; 4], &[0.5; 4], &[0.5; 4]]);
        let r: Vec<usize> = rank_queries_prior(0, &m)
            .unwrap()
            .iter()
            .map(|x| x.0)
            .collect();
        assert_eq!(r, vec![1, 2, 3]);
        let m = model(&[&[1.0, 0.1, 0.9, 0.2], &[0.5; 4], &[0.5; 4], &[0.5; 4]]);
        assert_eq!(rank_queries_prior(0, &m).unwrap()[0].0, 2);
        assert!(rank_queries_prior(4, &m).is_err());
    }

    #[test]
    fn posterior_reductions_and_direct_formula() {
        let p = [1.0, 0.3, 0.05, 0.6, 0.2];
        let m = model(&[&p, &[0.5; 5], &[0.5; 5], &[0.5; 5], &[0.5; 5]]);
        let probs = [0.9, 0.1, 0.7, 0.4, 0.95];
        let r = rank_queries_posterior_probs(0, &probs, &m).unwrap();
        let p0 = 0.2;
        let mut want: Vec<(usize, f64)> = (1..5)
            .map(|j| (j, probs[j] * p[j] / (1.0 - p[j]) * (1.0 - p0) / p0))
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        assert_eq!(r.len(), 4);
        for (g, w) in r.iter().zip(&want) {
            assert_eq!(g.0, w.0);
            assert!((g.1 - w.1).abs() < 1e-12 * w.1);
        }

        let flat = rank_queries_posterior_probs(0, &[p0; 5], &m).unwrap();
        let prior = rank_queries_prior(0, &m).unwrap();
        assert_eq!(
            flat.iter().map(|x| x.0).collect::<Vec<_>>(),
            prior.iter().map(|x| x.0).collect::<Vec<_>>()
        );

        let uniform = model(&[
            &[1.0, 0.2, 0.2, 0.2, 0.2],
            &[0.5; 5],
            &[0.5; 5],
            &[0.5; 5],
            &[0.5; 5],
        ]);
        let scores = [0.0, -1.0, 2.0, 0.5, 1.0];
        let r: Vec<usize> = rank_queries_posterior(0, &scores, &uniform)
            .unwrap()
            .iter()
            .map(|x| x.0)
            .collect();
        assert_eq!(r, vec![2, 4, 3, 1]);
    }

    #[test]
    fn budget_extremes_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = 8;
        let rows: Vec<Vec<f64>> = (0..q)
            .map(|k| {
                (0..q)
                    .map(|j| {
                        if j == k {
                            1.0
                        } else {
                            rng.gen_range(0.05..0.6)
                        }
                    })
                    .collect()
            })
            .collect();
        let m = CooccurrenceModel {
            p_cond: Matrix::from_rows(&rows).unwrap(),
            p0: 1.0 / q as f64,
        };
        let gt = sample_ground_truth(&m, 5, &mut rng);
        let full = simulate_budget(&gt, &m, q - 1, Strategy::Prior).unwrap();
        assert_eq!(full.mean_recall, 1.0);
        assert_eq!(full.fully_recovered, 1.0);

        let none = simulate_budget(&gt, &m, 0, Strategy::Prior).unwrap();
        let want: f64 = (0..gt.len())
            .map(|i| 1.0 / gt.row(i).iter().filter(|&&p| p).count() as f64)
            .sum::<f64>()
            / gt.len() as f64;
        assert!((none.mean_recall - want).abs() < 1e-15);

        let budgets: Vec<usize> = (0..q).collect();
        let curve = budget_curve(&gt, &m, &budgets, Strategy::Prior).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].mean_recall >= w[0].mean_recall);
        }
    }

    #[test]
    fn posterior_strategy_needs_matching_scores() {
        let m = model(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let gt = GroundTruthMatrix::new(2, vec![vec![true, true]], vec![0]).unwrap();
        let wrong = Matrix::zeros(2, 2);
        assert!(simulate_budget(&gt, &m, 1, Strategy::Posterior(&wrong)).is_err());
    }

    #[test]
    fn cost_arithmetic() {
        assert!((annotation_cost(5640, 46, 5, 0.01).unwrap() - 12972.0).abs() < 1e-9);
        assert_eq!(annotation_cost(5640, 46, 0, 0.01).unwrap(), 0.0);
        assert!((annotation_cost(5640, 10, 5, 0.01).unwrap() - 2820.0).abs() < 1e-9);
        assert!(annotation_cost(1, 1, 1, -1.0).is_err());
    }
}
