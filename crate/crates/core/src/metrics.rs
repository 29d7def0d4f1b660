//! Classification and segmentation measures.

use std::collections::HashMap;

use crate::{Error, Result};

/// Mean over classes of the fraction of items of that class predicted correctly.
/// Every class in `0..num_classes` must occur in `truth`.
pub fn per_class_accuracy(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<f64> {
    Error::check_dim(truth.len(), pred.len())?;
    if num_classes == 0 {
        return Err(Error::invalid("accuracy needs at least one class"));
    }
    let mut total = vec![0usize; num_classes];
    let mut correct = vec![0usize; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes {
            return Err(Error::invalid(format!(
                "label {t} out of range for {num_classes} classes"
            )));
        }
        total[t] += 1;
        if t == p {
            correct[t] += 1;
        }
    }
    if let Some(c) = total.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "class {c} has no ground-truth items"
        )));
    }
    Ok(correct
        .iter()
        .zip(&total)
        .map(|(&c, &n)| c as f64 / n as f64)
        .sum::<f64>()
        / num_classes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApVariant {
    /// Area under the monotone precision envelope, sampled at every positive.
    Pascal08,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

/// Precision and recall after each rank; equal scores keep input order.
fn precision_recall(scores: &[f64], positive: &[bool]) -> Result<(Vec<f64>, Vec<f64>, Vec<bool>)> {
    Error::check_dim(scores.len(), positive.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores must not be NaN"));
    }
    let npos = positive.iter().filter(|&&p| p).count();
    if npos == 0 {
        return Err(Error::invalid(
            "average precision needs at least one positive",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut prec = Vec::with_capacity(order.len());
    let mut rec = Vec::with_capacity(order.len());
    let mut hits = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            tp += 1;
        }
        prec.push(tp as f64 / (rank + 1) as f64);
        rec.push(tp as f64 / npos as f64);
        hits.push(positive[i]);
    }
    Ok((prec, rec, hits))
}

pub fn average_precision(scores: &[f64], positive: &[bool], variant: ApVariant) -> Result<f64> {
    let (prec, rec, hits) = precision_recall(scores, positive)?;
    let mut envelope = prec.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    match variant {
        ApVariant::Pascal08 => {
            let npos = hits.iter().filter(|&&h| h).count() as f64;
            Ok(envelope
                .iter()
                .zip(&hits)
                .filter(|(_, &h)| h)
                .map(|(p, _)| p)
                .sum::<f64>()
                / npos)
        }
        ApVariant::ElevenPoint => {
            let mut total = 0.0;
            for t in 0..=10 {
                let r = t as f64 / 10.0;
                // envelope is non-increasing, so the first rank reaching r is the max
                if let Some(k) = rec.iter().position(|&x| x >= r - 1e-12) {
                    total += envelope[k];
                }
            }
            Ok(total / 11.0)
        }
    }
}

/// Mean AP over classes; `scores[i][c]` is item i's score for class c.
pub fn mean_average_precision(
    scores: &[Vec<f64>],
    positive: &[Vec<bool>],
    variant: ApVariant,
) -> Result<f64> {
    Error::check_dim(scores.len(), positive.len())?;
    let Some(nc) = scores.first().map(Vec::len) else {
        return Err(Error::invalid("mAP needs at least one item"));
    };
    let mut total = 0.0;
    for c in 0..nc {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let p: Vec<bool> = positive.iter().map(|r| r[c]).collect();
        total += average_precision(&s, &p, variant)?;
    }
    Ok(total / nc as f64)
}

/// Per-pixel labels; 0 means unlabelled (ground truth) or background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelLabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl PixelLabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        Error::check_dim(width * height, labels.len())?;
        Ok(PixelLabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u16) -> Self {
        PixelLabelMap {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }
}

/// Ground truth where each pixel may carry several labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiLabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Vec<u16>>,
}

fn check_size(aw: usize, ah: usize, bw: usize, bh: usize) -> Result<()> {
    if (aw, ah) != (bw, bh) {
        return Err(Error::invalid(format!(
            "label maps differ in size: {aw}x{ah} vs {bw}x{bh}"
        )));
    }
    Ok(())
}

/// Pixel accuracy over pixels with a non-zero ground-truth label. With
/// `normalize_per_class` the per-class recalls are averaged.
pub fn pixel_accuracy(
    pred: &PixelLabelMap,
    gt: &PixelLabelMap,
    normalize_per_class: bool,
) -> Result<f64> {
    check_size(pred.width, pred.height, gt.width, gt.height)?;
    let mut per: HashMap<u16, (usize, usize)> = HashMap::new();
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if g == 0 {
            continue;
        }
        let e = per.entry(g).or_default();
        e.1 += 1;
        if p == g {
            e.0 += 1;
        }
    }
    if per.is_empty() {
        return Err(Error::invalid("ground truth has no labelled pixels"));
    }
    if normalize_per_class {
        let mut classes: Vec<_> = per.into_iter().collect();
        classes.sort_by_key(|c| c.0);
        Ok(classes
            .iter()
            .map(|(_, (c, n))| *c as f64 / *n as f64)
            .sum::<f64>()
            / classes.len() as f64)
    } else {
        let (c, n) = per.values().fold((0, 0), |a, v| (a.0 + v.0, a.1 + v.1));
        Ok(c as f64 / n as f64)
    }
}

/// Fraction of labelled pixels whose prediction is one of their labels.
pub fn osa_pixel_accuracy(pred: &PixelLabelMap, gt: &MultiLabelMap) -> Result<f64> {
    check_size(pred.width, pred.height, gt.width, gt.height)?;
    Error::check_dim(gt.width * gt.height, gt.labels.len())?;
    let mut labelled = 0usize;
    let mut correct = 0usize;
    for (p, set) in pred.labels.iter().zip(&gt.labels) {
        if set.is_empty() {
            continue;
        }
        labelled += 1;
        if set.contains(p) {
            correct += 1;
        }
    }
    if labelled == 0 {
        return Err(Error::invalid("ground truth has no labelled pixels"));
    }
    Ok(correct as f64 / labelled as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information (nats) between two discrete samples.
pub fn mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::invalid("mutual information needs samples"));
    }
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ma: HashMap<usize, usize> = HashMap::new();
    let mut mb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mi: f64 = cells
        .iter()
        .map(|&((x, y), c)| {
            let pxy = c as f64 / n;
            let px = ma[&x] as f64 / n;
            let py = mb[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok(mi.max(0.0))
}

/// Empirical entropy (nats) of a discrete sample.
pub fn sample_entropy(a: &[usize]) -> f64 {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &x in a {
        *counts.entry(x).or_default() += 1;
    }
    let mut c: Vec<usize> = counts.into_values().collect();
    c.sort_unstable();
    entropy(c.into_iter(), a.len() as f64)
}

/// `(I(A,C)/H(C), I(A,C)/H(A))` for a binary attribute `a` and categorical `c`.
pub fn mutual_information_reduction(a: &[bool], c: &[usize]) -> Result<(f64, f64)> {
    let a: Vec<usize> = a.iter().map(|&x| usize::from(x)).collect();
    let mi = mutual_information(&a, c)?;
    let (ha, hc) = (sample_entropy(&a), sample_entropy(c));
    if ha == 0.0 || hc == 0.0 {
        return Err(Error::Degenerate(
            "a variable is constant, its entropy is zero".into(),
        ));
    }
    Ok(((mi / hc).min(1.0), (mi / ha).min(1.0)))
}
