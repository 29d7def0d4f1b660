//! Pooling encoders and their post-processing.
//!
//! Orderless encoders map a descriptor sequence to one vector by encoding
//! each descriptor and pooling: BoVW, kernel codebook, VLAD and Fisher vectors
//! average, LLC takes the coordinate-wise max. The pooled vectors returned by
//! the `encode_*` functions are raw; [`postprocess`] applies signed square
//! rooting and the L2 normalisations.
//!
//! Floating-point sums depend on summation order, so the averaging encoders
//! visit descriptors in a canonical (lexicographic) order. This makes the
//! output bit-identical under any permutation of the input.

use crate::corpus::BinaryMask;
use crate::descriptors::DescriptorSample;
use crate::linalg::{self, Matrix};
use crate::vocab::{Codebook, GmmModel};
use crate::{Error, Result};

/// FV posteriors below this are treated as zero.
pub const FV_POSTERIOR_THRESHOLD: f64 = 1e-6;
/// Largest LLC neighbourhood; the exact simplex solver enumerates supports.
pub const LLC_MAX_NEIGHBORS: usize = 10;
pub const LLC_DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Bovw,
    Kcb,
    Llc,
    Vlad,
    Fv,
    Spp,
}

impl EncoderKind {
    pub fn tag(self) -> u32 {
        match self {
            EncoderKind::Bovw => 0,
            EncoderKind::Kcb => 1,
            EncoderKind::Llc => 2,
            EncoderKind::Vlad => 3,
            EncoderKind::Fv => 4,
            EncoderKind::Spp => 5,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => EncoderKind::Bovw,
            1 => EncoderKind::Kcb,
            2 => EncoderKind::Llc,
            3 => EncoderKind::Vlad,
            4 => EncoderKind::Fv,
            5 => EncoderKind::Spp,
            _ => return None,
        })
    }
}

/// Which post-processing steps to apply (or have been applied).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PostProcessSpec {
    pub signed_sqrt: bool,
    /// Per-subvector L2 normalisation; only for subvector-structured encodings.
    pub intra_norm: bool,
    pub global_l2: bool,
}

impl PostProcessSpec {
    pub const NONE: PostProcessSpec = PostProcessSpec {
        signed_sqrt: false,
        intra_norm: false,
        global_l2: false,
    };

    /// Improved FV: signed sqrt + L2. VLAD: intra-norm + L2. Others: L2.
    pub fn default_for(kind: EncoderKind) -> Self {
        match kind {
            EncoderKind::Fv => PostProcessSpec {
                signed_sqrt: true,
                intra_norm: false,
                global_l2: true,
            },
            EncoderKind::Vlad => PostProcessSpec {
                signed_sqrt: false,
                intra_norm: true,
                global_l2: true,
            },
            _ => PostProcessSpec {
                signed_sqrt: false,
                intra_norm: false,
                global_l2: true,
            },
        }
    }

    pub(crate) fn bits(self) -> u32 {
        u32::from(self.signed_sqrt)
            | u32::from(self.intra_norm) << 1
            | u32::from(self.global_l2) << 2
    }

    pub(crate) fn from_bits(bits: u32) -> Self {
        PostProcessSpec {
            signed_sqrt: bits & 1 != 0,
            intra_norm: bits & 2 != 0,
            global_l2: bits & 4 != 0,
        }
    }
}

/// A pooled image or region representation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector {
    pub values: Vec<f64>,
    pub kind: EncoderKind,
    /// Length of the per-word blocks (VLAD, FV) if any.
    pub subvector_len: Option<usize>,
    /// Post-processing already applied.
    pub post: PostProcessSpec,
}

impl EncodedVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        linalg::l2_norm(&self.values)
    }
}

/// A map from descriptor samples to fixed-length vectors.
pub trait Encoder: Sync {
    fn kind(&self) -> EncoderKind;
    /// Output dimension.
    fn dim(&self) -> usize;
    /// Expected descriptor dimension.
    fn input_dim(&self) -> usize;
    fn subvector_len(&self) -> Option<usize> {
        None
    }
    fn encode(&self, sample: &DescriptorSample) -> Result<EncodedVector>;

    fn zeros(&self) -> EncodedVector {
        EncodedVector {
            values: vec![0.0; self.dim()],
            kind: self.kind(),
            subvector_len: self.subvector_len(),
            post: PostProcessSpec::NONE,
        }
    }
}

/// The orderless encoders over a learned vocabulary.
#[derive(Debug, Clone, Copy)]
pub enum Orderless<'a> {
    Bovw(&'a Codebook),
    Kcb {
        codebook: &'a Codebook,
        lambda: f64,
    },
    Llc {
        codebook: &'a Codebook,
        neighbors: usize,
    },
    Vlad(&'a Codebook),
    Fv(&'a GmmModel),
}

impl Encoder for Orderless<'_> {
    fn kind(&self) -> EncoderKind {
        match self {
            Orderless::Bovw(_) => EncoderKind::Bovw,
            Orderless::Kcb { .. } => EncoderKind::Kcb,
            Orderless::Llc { .. } => EncoderKind::Llc,
            Orderless::Vlad(_) => EncoderKind::Vlad,
            Orderless::Fv(_) => EncoderKind::Fv,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Orderless::Bovw(cb)
            | Orderless::Kcb { codebook: cb, .. }
            | Orderless::Llc { codebook: cb, .. } => cb.len(),
            Orderless::Vlad(cb) => cb.len() * cb.dim(),
            Orderless::Fv(g) => 2 * g.len() * g.dim(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Orderless::Bovw(cb)
            | Orderless::Kcb { codebook: cb, .. }
            | Orderless::Llc { codebook: cb, .. }
            | Orderless::Vlad(cb) => cb.dim(),
            Orderless::Fv(g) => g.dim(),
        }
    }

    fn subvector_len(&self) -> Option<usize> {
        match self {
            Orderless::Vlad(cb) => Some(cb.dim()),
            Orderless::Fv(g) => Some(g.dim()),
            _ => None,
        }
    }

    fn encode(&self, sample: &DescriptorSample) -> Result<EncodedVector> {
        match *self {
            Orderless::Bovw(cb) => encode_bovw(sample, cb),
            Orderless::Kcb { codebook, lambda } => encode_kcb(sample, codebook, lambda),
            Orderless::Llc {
                codebook,
                neighbors,
            } => encode_llc(sample, codebook, neighbors),
            Orderless::Vlad(cb) => encode_vlad(sample, cb),
            Orderless::Fv(g) => encode_fv(sample, g),
        }
    }
}

fn check_sample(sample: &DescriptorSample, dim: usize) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    Error::check_dim(dim, sample.dim())
}

/// Indices of the sample rows in lexicographic order of their values.
fn canonical_order(sample: &DescriptorSample) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sample.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (sample.descriptor(a), sample.descriptor(b));
        ra.iter()
            .zip(rb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

fn raw(values: Vec<f64>, kind: EncoderKind, subvector_len: Option<usize>) -> EncodedVector {
    EncodedVector {
        values,
        kind,
        subvector_len,
        post: PostProcessSpec::NONE,
    }
}

/// Histogram of nearest visual words, averaged over the sample.
pub fn encode_bovw(sample: &DescriptorSample, cb: &Codebook) -> Result<EncodedVector> {
    check_sample(sample, cb.dim())?;
    let mut counts = vec![0usize; cb.len()];
    for f in sample.descriptors().iter_rows() {
        counts[cb.assign(f).0] += 1;
    }
    let n = sample.len() as f64;
    Ok(raw(
        counts.into_iter().map(|c| c as f64 / n).collect(),
        EncoderKind::Bovw,
        None,
    ))
}

/// Soft assignment `exp(-lambda ||f - c_j||^2)`, L1-normalised per descriptor, averaged.
pub fn encode_kcb(sample: &DescriptorSample, cb: &Codebook, lambda: f64) -> Result<EncodedVector> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "kernel codebook lambda {lambda} must be positive"
        )));
    }
    check_sample(sample, cb.dim())?;
    let k = cb.len();
    let mut acc = vec![0.0; k];
    let mut code = vec![0.0; k];
    for i in canonical_order(sample) {
        let f = sample.descriptor(i);
        for (j, c) in code.iter_mut().enumerate() {
            *c = linalg::sq_dist(f, cb.center(j));
        }
        let dmin = code.iter().copied().fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for c in code.iter_mut() {
            *c = (-lambda * (*c - dmin)).exp();
            total += *c;
        }
        for (a, c) in acc.iter_mut().zip(&code) {
            *a += c / total;
        }
    }
    let n = sample.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(raw(acc, EncoderKind::Kcb, None))
}

/// The `r` nearest centres of `f`, nearest first, ties by lower index.
fn nearest_centers(cb: &Codebook, f: &[f64], r: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..cb.len())
        .map(|j| (linalg::sq_dist(f, cb.center(j)), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(r).map(|(_, j)| j).collect()
}

/// Minimum-norm point of the affine hull of `points`, as barycentric weights.
/// `None` if the points are affinely dependent.
fn affine_min_norm(points: &[&[f64]]) -> Option<(Vec<f64>, f64)> {
    let m = points.len();
    let z0 = points[0];
    if m == 1 {
        return Some((vec![1.0], linalg::dot(z0, z0)));
    }
    let diffs: Vec<Vec<f64>> = points[1..]
        .iter()
        .map(|z| z.iter().zip(z0).map(|(a, b)| a - b).collect())
        .collect();
    let mut gram = Matrix::zeros(m - 1, m - 1);
    let mut rhs = vec![0.0; m - 1];
    for i in 0..m - 1 {
        for j in 0..m - 1 {
            gram[(i, j)] = linalg::dot(&diffs[i], &diffs[j]);
        }
        rhs[i] = -linalg::dot(&diffs[i], z0);
    }
    let beta = linalg::solve(&gram, &rhs, 1e-10)?;
    let mut alpha = Vec::with_capacity(m);
    alpha.push(1.0 - beta.iter().sum::<f64>());
    alpha.extend_from_slice(&beta);
    let mut p = z0.to_vec();
    for (b, d) in beta.iter().zip(&diffs) {
        for (pi, di) in p.iter_mut().zip(d) {
            *pi += b * di;
        }
    }
    Some((alpha, linalg::dot(&p, &p)))
}

/// LLC code of one descriptor: `min ||f - C_r a||^2` over the `r` nearest
/// centres subject to `a >= 0, sum(a) = 1`. Returns `(center index, weight)`
/// pairs with non-zero weight.
///
/// Solved exactly by scanning candidate supports from small to large; the
/// optimum is the minimum-norm point of the convex hull of the shifted
/// centres, and a support is only replaced by a strictly better one.
pub fn llc_code(cb: &Codebook, f: &[f64], r: usize) -> Result<Vec<(usize, f64)>> {
    if r == 0 || r > cb.len() || r > LLC_MAX_NEIGHBORS {
        return Err(Error::invalid(format!(
            "LLC neighbourhood {r} must be in 1..={}",
            cb.len().min(LLC_MAX_NEIGHBORS)
        )));
    }
    Error::check_dim(cb.dim(), f.len())?;
    let nn = nearest_centers(cb, f, r);
    let shifted: Vec<Vec<f64>> = nn
        .iter()
        .map(|&j| cb.center(j).iter().zip(f).map(|(c, x)| c - x).collect())
        .collect();
    let scale = shifted
        .iter()
        .map(|z| linalg::dot(z, z))
        .fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);

    let mut masks: Vec<u32> = (1..(1u32 << r)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let mut best: Option<(Vec<(usize, f64)>, f64)> = None;
    for mask in masks {
        let members: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
        let pts: Vec<&[f64]> = members.iter().map(|&i| shifted[i].as_slice()).collect();
        let Some((alpha, obj)) = affine_min_norm(&pts) else {
            continue;
        };
        if alpha.iter().any(|&a| a < -1e-12) {
            continue;
        }
        if best.as_ref().is_some_and(|(_, b)| obj >= *b - tol) {
            continue;
        }
        let total: f64 = alpha.iter().map(|a| a.max(0.0)).sum();
        let code = members
            .iter()
            .zip(&alpha)
            .filter(|(_, &a)| a > 0.0)
            .map(|(&i, &a)| (nn[i], a.max(0.0) / total))
            .collect();
        best = Some((code, obj));
    }
    Ok(best.expect("singleton supports are always feasible").0)
}

/// Locality-constrained linear coding with max pooling.
pub fn encode_llc(
    sample: &DescriptorSample,
    cb: &Codebook,
    neighbors: usize,
) -> Result<EncodedVector> {
    check_sample(sample, cb.dim())?;
    let mut pooled = vec![0.0f64; cb.len()];
    for f in sample.descriptors().iter_rows() {
        for (j, a) in llc_code(cb, f, neighbors)? {
            pooled[j] = pooled[j].max(a);
        }
    }
    Ok(raw(pooled, EncoderKind::Llc, None))
}

/// Residuals to the nearest centre, accumulated per word and averaged.
pub fn encode_vlad(sample: &DescriptorSample, cb: &Codebook) -> Result<EncodedVector> {
    check_sample(sample, cb.dim())?;
    let d = cb.dim();
    let mut acc = vec![0.0; cb.len() * d];
    for i in canonical_order(sample) {
        let f = sample.descriptor(i);
        let (k, _) = cb.assign(f);
        for ((a, x), c) in acc[k * d..(k + 1) * d].iter_mut().zip(f).zip(cb.center(k)) {
            *a += x - c;
        }
    }
    let n = sample.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(raw(acc, EncoderKind::Vlad, Some(d)))
}

/// Fisher vector: all first-order blocks (one per component) followed by all
/// second-order blocks.
pub fn encode_fv(sample: &DescriptorSample, gmm: &GmmModel) -> Result<EncodedVector> {
    check_sample(sample, gmm.dim())?;
    let (k, d) = (gmm.len(), gmm.dim());
    let mut first = vec![0.0; k * d];
    let mut second = vec![0.0; k * d];
    let inv_sd: Vec<f64> = gmm
        .variances()
        .as_slice()
        .iter()
        .map(|v| 1.0 / v.sqrt())
        .collect();
    for i in canonical_order(sample) {
        let f = sample.descriptor(i);
        let post = gmm.posteriors_with_ll(f).0;
        for (c, &g) in post.iter().enumerate() {
            if g < FV_POSTERIOR_THRESHOLD {
                continue;
            }
            let mu = gmm.means().row(c);
            for j in 0..d {
                let z = (f[j] - mu[j]) * inv_sd[c * d + j];
                first[c * d + j] += g * z;
                second[c * d + j] += g * (z * z - 1.0);
            }
        }
    }
    let n = sample.len() as f64;
    for c in 0..k {
        let p = gmm.priors()[c];
        let (s1, s2) = (p.sqrt(), (2.0 * p).sqrt());
        for j in 0..d {
            first[c * d + j] = first[c * d + j] / n / s1;
            second[c * d + j] = second[c * d + j] / n / s2;
        }
    }
    first.extend_from_slice(&second);
    Ok(raw(first, EncoderKind::Fv, Some(d)))
}

/// Spatial pyramid: one base encoding per grid cell, stacked row-major.
#[derive(Clone, Copy)]
pub struct SpatialPyramid<'a> {
    pub base: &'a dyn Encoder,
    pub grid: (usize, usize),
    /// Width and height of the image the positions refer to.
    pub image_size: (usize, usize),
}

impl Encoder for SpatialPyramid<'_> {
    fn kind(&self) -> EncoderKind {
        EncoderKind::Spp
    }

    fn dim(&self) -> usize {
        self.grid.0 * self.grid.1 * self.base.dim()
    }

    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn subvector_len(&self) -> Option<usize> {
        self.base.subvector_len()
    }

    fn encode(&self, sample: &DescriptorSample) -> Result<EncodedVector> {
        spp_encode(sample, self.grid, self.image_size, self.base)
    }
}

/// Stacks `gx * gy` base encodings, one per cell; empty cells are zero.
pub fn spp_encode(
    sample: &DescriptorSample,
    grid: (usize, usize),
    image_size: (usize, usize),
    base: &dyn Encoder,
) -> Result<EncodedVector> {
    let (gx, gy) = grid;
    let (w, h) = image_size;
    if gx == 0 || gy == 0 || w == 0 || h == 0 {
        return Err(Error::invalid("SPP grid and image size must be positive"));
    }
    Error::check_dim(base.input_dim(), sample.dim())?;
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); gx * gy];
    for (i, p) in sample.positions().iter().enumerate() {
        let cx = ((p.x * gx as f64 / w as f64).floor().max(0.0) as usize).min(gx - 1);
        let cy = ((p.y * gy as f64 / h as f64).floor().max(0.0) as usize).min(gy - 1);
        cells[cy * gx + cx].push(i);
    }
    let mut values = Vec::with_capacity(gx * gy * base.dim());
    for idx in &cells {
        if idx.is_empty() {
            values.extend(std::iter::repeat_n(0.0, base.dim()));
        } else {
            values.extend(base.encode(&sample.subset(idx))?.values);
        }
    }
    Ok(EncodedVector {
        values,
        kind: EncoderKind::Spp,
        subvector_len: base.subvector_len(),
        post: PostProcessSpec::NONE,
    })
}

/// Indices of the descriptors whose centre falls inside `mask`.
pub fn descriptors_in_mask(sample: &DescriptorSample, mask: &BinaryMask) -> Result<Vec<usize>> {
    let mut idx = Vec::new();
    for (i, p) in sample.positions().iter().enumerate() {
        if mask.contains_point(p.x, p.y)? {
            idx.push(i);
        }
    }
    Ok(idx)
}

/// Encodes only the descriptors inside a region, reusing the image's sample.
pub fn region_pool(
    sample: &DescriptorSample,
    mask: &BinaryMask,
    base: &dyn Encoder,
) -> Result<EncodedVector> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let idx = descriptors_in_mask(sample, mask)?;
    if idx.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if idx.len() == sample.len() {
        return base.encode(sample);
    }
    base.encode(&sample.subset(&idx))
}

pub fn signed_sqrt(values: &mut [f64]) {
    for v in values {
        *v = v.signum() * v.abs().sqrt();
    }
}

/// L2-normalises in place; zero vectors are left untouched.
pub fn l2_normalize(values: &mut [f64]) {
    let n = linalg::l2_norm(values);
    if n > 0.0 {
        values.iter_mut().for_each(|v| *v /= n);
    }
}

/// Applies signed square root, intra-normalisation and global L2, in that order.
pub fn postprocess(vec: &EncodedVector, spec: &PostProcessSpec) -> Result<EncodedVector> {
    let mut out = vec.clone();
    if spec.signed_sqrt {
        signed_sqrt(&mut out.values);
    }
    if spec.intra_norm {
        let Some(len) = vec
            .subvector_len
            .filter(|&l| l > 0 && vec.dim().is_multiple_of(l))
        else {
            return Err(Error::invalid(format!(
                "intra-normalisation needs a subvector-structured encoding, got {:?}",
                vec.kind
            )));
        };
        for block in out.values.chunks_mut(len) {
            l2_normalize(block);
        }
    }
    if spec.global_l2 {
        l2_normalize(&mut out.values);
    }
    out.post = PostProcessSpec {
        signed_sqrt: vec.post.signed_sqrt || spec.signed_sqrt,
        intra_norm: vec.post.intra_norm || spec.intra_norm,
        global_l2: vec.post.global_l2 || spec.global_l2,
    };
    Ok(out)
}
