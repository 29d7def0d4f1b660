//! Linear texture filter banks (Leung-Malik and the MR family).
//!
//! Oriented kernels are products of a 1-D Gaussian along the filter axis
//! (elongated three times) and a first or second Gaussian derivative across it.
//! Every kernel except the plain Gaussians is zero-mean; all kernels have unit
//! L1 norm.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::corpus::GrayImage;
use crate::descriptors::DescriptorField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterFamily {
    /// First derivative across the filter axis.
    Edge,
    /// Second derivative across the filter axis.
    Bar,
    LoG,
    Gaussian,
}

impl FilterFamily {
    pub fn is_oriented(self) -> bool {
        matches!(self, FilterFamily::Edge | FilterFamily::Bar)
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            FilterFamily::Edge => 0,
            FilterFamily::Bar => 1,
            FilterFamily::LoG => 2,
            FilterFamily::Gaussian => 3,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => FilterFamily::Edge,
            1 => FilterFamily::Bar,
            2 => FilterFamily::LoG,
            3 => FilterFamily::Gaussian,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelMeta {
    pub family: FilterFamily,
    pub orientation: Option<usize>,
    pub scale: usize,
    pub sigma: f64,
}

/// Square kernel with odd support, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel support {size} is not odd")));
        }
        Error::check_dim(size * size, data.len())?;
        Ok(Kernel { size, data })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    kernels: Vec<Kernel>,
    meta: Vec<KernelMeta>,
}

impl FilterBank {
    pub fn new(kernels: Vec<Kernel>, meta: Vec<KernelMeta>) -> Result<Self> {
        Error::check_dim(kernels.len(), meta.len())?;
        let Some(first) = kernels.first() else {
            return Err(Error::invalid("filter bank has no kernels"));
        };
        if kernels.iter().any(|k| k.size != first.size) {
            return Err(Error::invalid("kernels in a bank must share their support"));
        }
        Ok(FilterBank { kernels, meta })
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn meta(&self) -> &[KernelMeta] {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn support(&self) -> usize {
        self.kernels[0].size
    }

    pub fn count_family(&self, family: FilterFamily) -> usize {
        self.meta.iter().filter(|m| m.family == family).count()
    }
}

fn gauss1d(sigma: f64, x: f64, order: u8) -> f64 {
    let var = sigma * sigma;
    let g = (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
    match order {
        0 => g,
        1 => -g * x / var,
        _ => g * (x * x - var) / (var * var),
    }
}

fn zero_mean_l1(mut data: Vec<f64>) -> Vec<f64> {
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    data.iter_mut().for_each(|v| *v -= mean);
    let l1: f64 = data.iter().map(|v| v.abs()).sum();
    data.iter_mut().for_each(|v| *v /= l1);
    data
}

fn unit_sum(mut data: Vec<f64>) -> Vec<f64> {
    let s: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= s);
    data
}

fn grid(support: usize, mut f: impl FnMut(f64, f64) -> f64) -> Vec<f64> {
    let half = (support / 2) as f64;
    let mut out = Vec::with_capacity(support * support);
    for row in 0..support {
        for col in 0..support {
            out.push(f(col as f64 - half, row as f64 - half));
        }
    }
    out
}

/// Elongated (3:1) Gaussian derivative kernel at angle `theta`.
fn oriented_kernel(sigma: f64, theta: f64, order: u8, support: usize) -> Kernel {
    let (s, c) = theta.sin_cos();
    let data = grid(support, |x, y| {
        let u = c * x - s * y;
        let v = s * x + c * y;
        gauss1d(3.0 * sigma, u, 0) * gauss1d(sigma, v, order)
    });
    Kernel {
        size: support,
        data: zero_mean_l1(data),
    }
}

fn gaussian_kernel(sigma: f64, support: usize) -> Kernel {
    let data = grid(support, |x, y| gauss1d(sigma, x, 0) * gauss1d(sigma, y, 0));
    Kernel {
        size: support,
        data: unit_sum(data),
    }
}

fn log_kernel(sigma: f64, support: usize) -> Kernel {
    let var = sigma * sigma;
    let data = grid(support, |x, y| {
        let r2 = x * x + y * y;
        (r2 - 2.0 * var) / (var * var) * (-r2 / (2.0 * var)).exp()
    });
    Kernel {
        size: support,
        data: zero_mean_l1(data),
    }
}

fn check_bank_args(scales: &[f64], support: usize) -> Result<()> {
    if support.is_multiple_of(2) || support == 0 {
        return Err(Error::invalid(format!(
            "kernel support {support} is not odd"
        )));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!("non-positive sigma {s}")));
    }
    Ok(())
}

fn push_oriented(
    kernels: &mut Vec<Kernel>,
    meta: &mut Vec<KernelMeta>,
    scales: &[f64],
    orientations: usize,
    support: usize,
) {
    for family in [FilterFamily::Edge, FilterFamily::Bar] {
        let order = if family == FilterFamily::Edge { 1 } else { 2 };
        for (si, &sigma) in scales.iter().enumerate() {
            for o in 0..orientations {
                let theta = PI * o as f64 / orientations as f64;
                kernels.push(oriented_kernel(sigma, theta, order, support));
                meta.push(KernelMeta {
                    family,
                    orientation: Some(o),
                    scale: si,
                    sigma,
                });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    /// Base sigmas of the oriented kernels.
    pub scales: [f64; 3],
    /// Sigmas of the Gaussians; LoG kernels use these and three times these.
    pub isotropic_scales: [f64; 4],
    pub orientations: usize,
    pub support: usize,
}

impl Default for LmParams {
    fn default() -> Self {
        let r2 = std::f64::consts::SQRT_2;
        LmParams {
            scales: [1.0, 2.0, 4.0],
            isotropic_scales: [r2, 2.0, 2.0 * r2, 4.0],
            orientations: 6,
            support: 49,
        }
    }
}

/// Leung-Malik bank: 36 oriented kernels, 8 LoG and 4 Gaussians with the defaults.
pub fn make_lm(params: &LmParams) -> Result<FilterBank> {
    check_bank_args(&params.scales, params.support)?;
    check_bank_args(&params.isotropic_scales, params.support)?;
    if params.orientations == 0 {
        return Err(Error::invalid("need at least one orientation"));
    }
    let mut kernels = Vec::new();
    let mut meta = Vec::new();
    push_oriented(
        &mut kernels,
        &mut meta,
        &params.scales,
        params.orientations,
        params.support,
    );
    let iso = params.isotropic_scales;
    let log_sigmas = iso.iter().copied().chain(iso.iter().map(|s| 3.0 * s));
    for (si, sigma) in log_sigmas.enumerate() {
        kernels.push(log_kernel(sigma, params.support));
        meta.push(KernelMeta {
            family: FilterFamily::LoG,
            orientation: None,
            scale: si,
            sigma,
        });
    }
    for (si, &sigma) in iso.iter().enumerate() {
        kernels.push(gaussian_kernel(sigma, params.support));
        meta.push(KernelMeta {
            family: FilterFamily::Gaussian,
            orientation: None,
            scale: si,
            sigma,
        });
    }
    FilterBank::new(kernels, meta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrParams {
    pub scales: [f64; 3],
    /// Sigma shared by the isotropic Gaussian and LoG.
    pub isotropic_sigma: f64,
    pub support: usize,
}

impl Default for MrParams {
    fn default() -> Self {
        MrParams {
            scales: [1.0, 2.0, 4.0],
            isotropic_sigma: 10.0,
            support: 49,
        }
    }
}

pub const MR_ORIENTATIONS: usize = 6;

/// Maximum-response bank with default parameters: 36 oriented kernels plus a
/// Gaussian and a LoG.
pub fn make_mr_bank() -> FilterBank {
    make_mr_bank_with(&MrParams::default()).expect("default MR parameters are valid")
}

pub fn make_mr_bank_with(params: &MrParams) -> Result<FilterBank> {
    check_bank_args(&params.scales, params.support)?;
    check_bank_args(&[params.isotropic_sigma], params.support)?;
    let mut kernels = Vec::new();
    let mut meta = Vec::new();
    push_oriented(
        &mut kernels,
        &mut meta,
        &params.scales,
        MR_ORIENTATIONS,
        params.support,
    );
    kernels.push(gaussian_kernel(params.isotropic_sigma, params.support));
    meta.push(KernelMeta {
        family: FilterFamily::Gaussian,
        orientation: None,
        scale: 0,
        sigma: params.isotropic_sigma,
    });
    kernels.push(log_kernel(params.isotropic_sigma, params.support));
    meta.push(KernelMeta {
        family: FilterFamily::LoG,
        orientation: None,
        scale: 0,
        sigma: params.isotropic_sigma,
    });
    FilterBank::new(kernels, meta)
}

/// Dense responses of every kernel over the valid region of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResponseField {
    pub width: usize,
    pub height: usize,
    /// Kernel support; the response at `(x, y)` is centred on pixel
    /// `(x + support / 2, y + support / 2)`.
    pub support: usize,
    pub channels: Vec<Vec<f64>>,
    pub meta: Vec<KernelMeta>,
}

impl FilterResponseField {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Stacks all channels into one descriptor per pixel.
    pub fn into_descriptor_field(self) -> DescriptorField {
        let dim = self.channels.len();
        let n = self.width * self.height;
        let mut data = Vec::with_capacity(n * dim);
        for p in 0..n {
            data.extend(self.channels.iter().map(|c| c[p]));
        }
        DescriptorField::from_parts(
            self.width,
            self.height,
            dim,
            1,
            self.support / 2,
            self.support,
            1.0,
            data,
        )
        .expect("response field geometry is consistent")
    }
}

/// Valid-region correlation of one kernel with an image.
pub fn correlate_valid(img: &GrayImage, kernel: &Kernel) -> Result<(usize, usize, Vec<f64>)> {
    let k = kernel.size;
    let (w, h) = (img.width(), img.height());
    if w < k || h < k {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            message: format!("kernel support is {k}"),
        });
    }
    let (ow, oh) = (w - k + 1, h - k + 1);
    let src = img.data();
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        let out_row = &mut out[y * ow..(y + 1) * ow];
        for ky in 0..k {
            let img_row = &src[(y + ky) * w..(y + ky + 1) * w];
            for kx in 0..k {
                let kv = kernel.at(ky, kx);
                if kv == 0.0 {
                    continue;
                }
                for (o, &p) in out_row.iter_mut().zip(&img_row[kx..kx + ow]) {
                    *o += kv * p;
                }
            }
        }
    }
    Ok((ow, oh, out))
}

pub fn apply_bank(img: &GrayImage, bank: &FilterBank) -> Result<FilterResponseField> {
    let results: Vec<_> = bank
        .kernels()
        .par_iter()
        .map(|k| correlate_valid(img, k))
        .collect::<Result<_>>()?;
    let (width, height) = (results[0].0, results[0].1);
    Ok(FilterResponseField {
        width,
        height,
        support: bank.support(),
        channels: results.into_iter().map(|r| r.2).collect(),
        meta: bank.meta().to_vec(),
    })
}

/// Collapses an MR response field to 8-D descriptors: for every oriented
/// family and scale the maximum over orientations (edge scales first, then
/// bar scales), followed by the Gaussian and the LoG responses.
pub fn mr8_collapse(field: &FilterResponseField) -> Result<DescriptorField> {
    let bad = |msg: String| Error::Format {
        what: "MR response field",
        message: msg,
    };
    if field.channels.len() != 38 || field.meta.len() != 38 {
        return Err(bad(format!(
            "expected 38 channels, found {}",
            field.channels.len()
        )));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 6];
    let mut gaussian = None;
    let mut log = None;
    for (i, m) in field.meta.iter().enumerate() {
        match m.family {
            FilterFamily::Edge | FilterFamily::Bar => {
                if m.scale >= 3 || m.orientation.is_none() {
                    return Err(bad(format!("channel {i} has invalid scale/orientation")));
                }
                let g = if m.family == FilterFamily::Edge { 0 } else { 3 } + m.scale;
                groups[g].push(i);
            }
            FilterFamily::Gaussian => {
                if gaussian.replace(i).is_some() {
                    return Err(bad("more than one Gaussian channel".into()));
                }
            }
            FilterFamily::LoG => {
                if log.replace(i).is_some() {
                    return Err(bad("more than one LoG channel".into()));
                }
            }
        }
    }
    for (g, members) in groups.iter().enumerate() {
        let mut orients: Vec<_> = members
            .iter()
            .map(|&i| field.meta[i].orientation.unwrap())
            .collect();
        orients.sort_unstable();
        orients.dedup();
        if members.len() != MR_ORIENTATIONS || orients.len() != MR_ORIENTATIONS {
            return Err(bad(format!(
                "group {g} needs {MR_ORIENTATIONS} distinct orientations"
            )));
        }
    }
    let (gaussian, log) = match (gaussian, log) {
        (Some(g), Some(l)) => (g, l),
        _ => return Err(bad("missing isotropic channel".into())),
    };
    let n = field.width * field.height;
    let mut data = Vec::with_capacity(n * 8);
    for p in 0..n {
        for members in &groups {
            let m = members
                .iter()
                .map(|&c| field.channels[c][p])
                .fold(f64::NEG_INFINITY, f64::max);
            data.push(m);
        }
        data.push(field.channels[gaussian][p]);
        data.push(field.channels[log][p]);
    }
    DescriptorField::from_parts(
        field.width,
        field.height,
        8,
        1,
        field.support / 2,
        field.support,
        1.0,
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.gen())
    }

    #[test]
    fn lm_counts_and_normalization() {
        let bank = make_lm(&LmParams::default()).unwrap();
        assert_eq!(bank.len(), 48);
        let oriented = bank
            .meta()
            .iter()
            .filter(|m| m.family.is_oriented())
            .count();
        assert_eq!(oriented, 36);
        assert_eq!(bank.count_family(FilterFamily::LoG), 8);
        assert_eq!(bank.count_family(FilterFamily::Gaussian), 4);
        for (k, m) in bank.kernels().iter().zip(bank.meta()) {
            assert_eq!(k.size, 49);
            assert!((k.l1() - 1.0).abs() < 1e-10);
            if m.family == FilterFamily::Gaussian {
                assert!((k.sum() - 1.0).abs() < 1e-10);
            } else {
                assert!(k.sum().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lm_rejects_bad_arguments() {
        let even = LmParams {
            support: 48,
            ..Default::default()
        };
        assert!(make_lm(&even).is_err());
        let neg = LmParams {
            scales: [1.0, -2.0, 4.0],
            ..Default::default()
        };
        assert!(make_lm(&neg).is_err());
    }

    #[test]
    fn mr_bank_counts() {
        let bank = make_mr_bank();
        assert_eq!(bank.len(), 38);
        let iso = bank
            .meta()
            .iter()
            .filter(|m| !m.family.is_oriented())
            .count();
        assert_eq!(iso, 2);
        for (k, m) in bank.kernels().iter().zip(bank.meta()) {
            if m.family.is_oriented() {
                assert!(k.sum().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_image_zero_mean_kernels_vanish() {
        let bank = make_mr_bank_with(&MrParams {
            support: 7,
            ..Default::default()
        })
        .unwrap();
        let img = GrayImage::from_fn(12, 10, |_, _| 0.4);
        let field = apply_bank(&img, &bank).unwrap();
        assert_eq!((field.width, field.height), (6, 4));
        for (c, m) in field.channels.iter().zip(&field.meta) {
            if m.family != FilterFamily::Gaussian {
                assert!(c.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn impulse_response_is_flipped_kernel() {
        let data: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let kernel = Kernel::new(3, data).unwrap();
        let img = GrayImage::from_fn(7, 7, |x, y| if (x, y) == (3, 3) { 1.0 } else { 0.0 });
        let (ow, _, out) = correlate_valid(&img, &kernel).unwrap();
        // output pixel (x, y) sees the delta at kernel offset (3 - x, 3 - y)
        for y in 1..4 {
            for x in 1..4 {
                assert_eq!(out[y * ow + x], kernel.at(3 - y, 3 - x));
            }
        }
    }

    #[test]
    fn correlation_matches_double_loop() {
        let img = random_image(8, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kernel = Kernel::new(3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (ow, oh, out) = correlate_valid(&img, &kernel).unwrap();
        assert_eq!((ow, oh), (6, 6));
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += kernel.at(i, j) * img.get(x + j, y + i);
                    }
                }
                assert!((out[y * ow + x] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn image_smaller_than_support() {
        let img = random_image(5, 5, 0);
        assert!(matches!(
            apply_bank(&img, &make_mr_bank()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn mr8_collapse_matches_exhaustive_max() {
        let bank = make_mr_bank();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, h) = (4, 3);
        let channels: Vec<Vec<f64>> = (0..38)
            .map(|_| (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let field = FilterResponseField {
            width: w,
            height: h,
            support: 49,
            channels: channels.clone(),
            meta: bank.meta().to_vec(),
        };
        let out = mr8_collapse(&field).unwrap();
        assert_eq!(out.dim(), 8);
        for p in 0..w * h {
            let d = out.descriptor(p % w, p / w);
            for g in 0..6 {
                let mut best = f64::NEG_INFINITY;
                for o in 0..6 {
                    best = best.max(channels[g * 6 + o][p]);
                }
                assert_eq!(d[g], best);
            }
            assert_eq!(d[6], channels[36][p]);
            assert_eq!(d[7], channels[37][p]);
        }
    }

    #[test]
    fn mr8_rejects_wrong_layout() {
        let bank = make_lm(&LmParams {
            support: 5,
            ..Default::default()
        })
        .unwrap();
        let img = random_image(8, 8, 1);
        let field = apply_bank(&img, &bank).unwrap();
        assert!(mr8_collapse(&field).is_err());
    }
}
