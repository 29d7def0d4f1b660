//! Dense local descriptors.
//!
//! Every extractor produces a [`DescriptorField`]: a regular grid of
//! descriptors with the geometry needed to map each one back to image
//! coordinates. [`DescriptorSample`] is the flattened, positioned form that the
//! encoders consume.

use std::f64::consts::PI;
use std::path::Path;

use crate::corpus::{GrayImage, ScalePyramid};
use crate::filterbank::{self, FilterBank, LmParams, MrParams};
use crate::linalg::Matrix;
use crate::{io, Error, Result};

/// Dense grid of descriptors, row-major over the grid, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    grid_w: usize,
    grid_h: usize,
    dim: usize,
    stride: usize,
    offset: usize,
    receptive_field: usize,
    scale_factor: f64,
    data: Vec<f64>,
}

impl DescriptorField {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        grid_w: usize,
        grid_h: usize,
        dim: usize,
        stride: usize,
        offset: usize,
        receptive_field: usize,
        scale_factor: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        Error::check_dim(grid_w * grid_h * dim, data.len())?;
        if stride == 0 {
            return Err(Error::invalid("descriptor stride must be at least 1"));
        }
        if !(scale_factor > 0.0 && scale_factor.is_finite()) {
            return Err(Error::invalid("scale factor must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("descriptor field holds non-finite values"));
        }
        Ok(DescriptorField {
            grid_w,
            grid_h,
            dim,
            stride,
            offset,
            receptive_field,
            scale_factor,
            data,
        })
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }
    pub fn grid_h(&self) -> usize {
        self.grid_h
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn offset(&self) -> usize {
        self.offset
    }
    pub fn receptive_field(&self) -> usize {
        self.receptive_field
    }
    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn len(&self) -> usize {
        self.grid_w * self.grid_h
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_scale_factor(mut self, scale_factor: f64) -> Self {
        self.scale_factor = scale_factor;
        self
    }

    pub fn descriptor(&self, gx: usize, gy: usize) -> &[f64] {
        let i = (gy * self.grid_w + gx) * self.dim;
        &self.data[i..i + self.dim]
    }

    /// Centre of a grid cell in the coordinates of the image it was extracted from.
    pub fn cell_center(&self, gx: usize, gy: usize) -> (f64, f64) {
        (
            (self.offset + gx * self.stride) as f64,
            (self.offset + gy * self.stride) as f64,
        )
    }

    /// Flattens the field; positions are divided by the scale factor so they
    /// refer to the original (unscaled) image.
    pub fn to_sample(&self) -> DescriptorSample {
        let mut positions = Vec::with_capacity(self.len());
        for gy in 0..self.grid_h {
            for gx in 0..self.grid_w {
                let (x, y) = self.cell_center(gx, gy);
                positions.push(Position {
                    x: x / self.scale_factor,
                    y: y / self.scale_factor,
                    scale: self.scale_factor,
                });
            }
        }
        DescriptorSample {
            descriptors: Matrix::from_vec(self.len(), self.dim, self.data.clone())
                .expect("field geometry is consistent"),
            positions,
        }
    }
}

/// Location of a descriptor in original-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
}

/// Sequence of descriptors with their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSample {
    descriptors: Matrix,
    positions: Vec<Position>,
}

impl DescriptorSample {
    pub fn new(descriptors: Matrix, positions: Vec<Position>) -> Result<Self> {
        Error::check_dim(descriptors.rows(), positions.len())?;
        Ok(DescriptorSample {
            descriptors,
            positions,
        })
    }

    /// Sample without meaningful positions (all at the origin).
    pub fn unpositioned(descriptors: Matrix) -> Self {
        let positions = vec![
            Position {
                x: 0.0,
                y: 0.0,
                scale: 1.0
            };
            descriptors.rows()
        ];
        DescriptorSample {
            descriptors,
            positions,
        }
    }

    pub fn empty(dim: usize) -> Self {
        DescriptorSample {
            descriptors: Matrix::zeros(0, dim),
            positions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.descriptors.cols()
    }

    pub fn descriptors(&self) -> &Matrix {
        &self.descriptors
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        self.descriptors.row(i)
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn subset(&self, idx: &[usize]) -> DescriptorSample {
        DescriptorSample {
            descriptors: self.descriptors.select_rows(idx),
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
        }
    }

    /// Applies `f` to every descriptor, possibly changing the dimension.
    pub fn map_descriptors(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<DescriptorSample> {
        let rows: Vec<Vec<f64>> = self.descriptors.iter_rows().map(f).collect();
        let descriptors = if rows.is_empty() {
            Matrix::zeros(0, self.dim())
        } else {
            Matrix::from_rows(&rows)?
        };
        DescriptorSample::new(descriptors, self.positions.clone())
    }

    pub fn concat(parts: &[DescriptorSample]) -> Result<DescriptorSample> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("nothing to concatenate"));
        };
        let dim = first.dim();
        let mut data = Vec::new();
        let mut positions = Vec::new();
        for p in parts {
            Error::check_dim(dim, p.dim())?;
            data.extend_from_slice(p.descriptors.as_slice());
            positions.extend_from_slice(&p.positions);
        }
        DescriptorSample::new(Matrix::from_vec(positions.len(), dim, data)?, positions)
    }
}

fn grid_size(extent: usize, rf: usize, stride: usize) -> usize {
    if extent < rf {
        0
    } else {
        (extent - rf) / stride + 1
    }
}

fn check_fits(img: &GrayImage, rf: usize, what: &str) -> Result<()> {
    if img.width() < rf || img.height() < rf {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            message: format!("{what} needs at least {rf}x{rf} pixels"),
        });
    }
    Ok(())
}

/// Raw `size x size` intensity windows, row-major.
pub fn extract_patches(img: &GrayImage, size: usize, stride: usize) -> Result<DescriptorField> {
    if size.is_multiple_of(2) || size == 0 {
        return Err(Error::invalid(format!("patch size {size} is not odd")));
    }
    if stride == 0 {
        return Err(Error::invalid("patch stride must be at least 1"));
    }
    check_fits(img, size, "patch extraction")?;
    let gw = grid_size(img.width(), size, stride);
    let gh = grid_size(img.height(), size, stride);
    let mut data = Vec::with_capacity(gw * gh * size * size);
    for gy in 0..gh {
        for gx in 0..gw {
            let (x0, y0) = (gx * stride, gy * stride);
            for dy in 0..size {
                for dx in 0..size {
                    data.push(img.get(x0 + dx, y0 + dy));
                }
            }
        }
    }
    DescriptorField::from_parts(gw, gh, size * size, stride, size / 2, size, 1.0, data)
}

/// How LBP neighbours off the pixel grid are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LbpSampling {
    #[default]
    Bilinear,
    /// Round every neighbour to the closest pixel.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbpParams {
    pub radius: f64,
    pub neighbors: usize,
    /// Side of the square cells over which codes are histogrammed.
    pub cell: usize,
    /// Keep the bin that collects every non-uniform pattern (59-D vs 58-D).
    pub catch_all_bin: bool,
    pub sampling: LbpSampling,
}

impl Default for LbpParams {
    fn default() -> Self {
        LbpParams {
            radius: 1.0,
            neighbors: 8,
            cell: 8,
            catch_all_bin: true,
            sampling: LbpSampling::Bilinear,
        }
    }
}

pub const LBP_UNIFORM_BINS: usize = 58;

fn circular_transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

/// Bin of an 8-bit LBP code: uniform patterns (at most two circular bit
/// transitions) get bins `0..58` in increasing code order, the rest bin 58.
pub fn uniform_bin(code: u8) -> usize {
    static TABLE: std::sync::OnceLock<[u8; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [LBP_UNIFORM_BINS as u8; 256];
        let mut next = 0u8;
        for c in 0..=255u8 {
            if circular_transitions(c) <= 2 {
                t[c as usize] = next;
                next += 1;
            }
        }
        t
    });
    table[code as usize] as usize
}

/// Per-pixel LBP codes over the pixels whose full neighbourhood lies inside
/// the image. Bit `j` is set when the centre is strictly brighter than
/// neighbour `j`; neighbour `j` sits at angle `2*pi*j/8`, counter-clockwise
/// from the +x axis.
pub fn lbp_codes(
    img: &GrayImage,
    radius: f64,
    sampling: LbpSampling,
) -> Result<(usize, usize, Vec<u8>)> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("LBP radius must be positive"));
    }
    let margin = radius.ceil() as usize;
    if img.width() <= 2 * margin || img.height() <= 2 * margin {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            message: format!("LBP radius {radius} leaves no interior pixel"),
        });
    }
    let offsets: Vec<(f64, f64)> = (0..8)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / 8.0;
            let (dx, dy) = (radius * a.cos(), -radius * a.sin());
            let snap = |v: f64| {
                if (v - v.round()).abs() < 1e-9 {
                    v.round()
                } else {
                    v
                }
            };
            match sampling {
                LbpSampling::Bilinear => (snap(dx), snap(dy)),
                LbpSampling::Nearest => (dx.round(), dy.round()),
            }
        })
        .collect();
    let w = img.width() - 2 * margin;
    let h = img.height() - 2 * margin;
    let mut codes = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (x + margin, y + margin);
            let center = img.get(cx, cy);
            let mut code = 0u8;
            for (j, &(dx, dy)) in offsets.iter().enumerate() {
                let v = img.sample_bilinear(cx as f64 + dx, cy as f64 + dy);
                if center > v {
                    code |= 1 << j;
                }
            }
            codes.push(code);
        }
    }
    Ok((w, h, codes))
}

/// Uniform-pattern LBP histograms over non-overlapping cells.
pub fn extract_lbp(img: &GrayImage, params: &LbpParams) -> Result<DescriptorField> {
    if params.neighbors != 8 {
        return Err(Error::invalid(format!(
            "only 8-neighbour LBP is supported, got {}",
            params.neighbors
        )));
    }
    if params.cell == 0 || (params.cell as f64) < params.radius {
        return Err(Error::invalid("LBP cell must be at least the radius"));
    }
    let margin = params.radius.ceil() as usize;
    let rf = params.cell + 2 * margin;
    check_fits(img, rf, "LBP")?;
    let (cw, _ch, codes) = lbp_codes(img, params.radius, params.sampling)?;
    let gw = grid_size(img.width(), rf, params.cell);
    let gh = grid_size(img.height(), rf, params.cell);
    let dim = if params.catch_all_bin {
        LBP_UNIFORM_BINS + 1
    } else {
        LBP_UNIFORM_BINS
    };
    let norm = 1.0 / (params.cell * params.cell) as f64;
    let mut data = Vec::with_capacity(gw * gh * dim);
    for gy in 0..gh {
        for gx in 0..gw {
            let mut hist = vec![0.0; LBP_UNIFORM_BINS + 1];
            for y in gy * params.cell..(gy + 1) * params.cell {
                for x in gx * params.cell..(gx + 1) * params.cell {
                    hist[uniform_bin(codes[y * cw + x])] += norm;
                }
            }
            data.extend_from_slice(&hist[..dim]);
        }
    }
    DescriptorField::from_parts(gw, gh, dim, params.cell, rf / 2, rf, 1.0, data)
}

pub const DSIFT_DIM: usize = 128;
const SIFT_BINS: usize = 4;
const SIFT_ORIENTATIONS: usize = 8;
const SIFT_CLAMP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DsiftParams {
    pub step: usize,
    pub bin_size: usize,
}

impl Default for DsiftParams {
    fn default() -> Self {
        DsiftParams {
            step: 2,
            bin_size: 8,
        }
    }
}

impl DsiftParams {
    /// Pixels touched by one descriptor: the 4x4 spatial bins plus half a bin
    /// of bilinear spill on every side.
    pub fn receptive_field(&self) -> usize {
        (SIFT_BINS + 1) * self.bin_size
    }
}

/// Dense SIFT: 4x4 spatial bins x 8 orientations, bilinear in space and
/// orientation, L2-normalised, clamped at 0.2 and renormalised. Descriptors
/// with no gradient energy stay all-zero.
pub fn extract_dsift(img: &GrayImage, params: &DsiftParams) -> Result<DescriptorField> {
    let DsiftParams { step, bin_size } = *params;
    if step == 0 || bin_size == 0 {
        return Err(Error::invalid(
            "dense SIFT step and bin size must be positive",
        ));
    }
    let rf = params.receptive_field();
    check_fits(img, rf, "dense SIFT")?;
    let (w, h) = (img.width(), img.height());

    // Orientation-binned gradient magnitude maps.
    let mut maps = vec![vec![0.0; w * h]; SIFT_ORIENTATIONS];
    for y in 0..h {
        for x in 0..w {
            let gx = match x {
                0 => img.get(1, y) - img.get(0, y),
                _ if x == w - 1 => img.get(x, y) - img.get(x - 1, y),
                _ => 0.5 * (img.get(x + 1, y) - img.get(x - 1, y)),
            };
            let gy = match y {
                0 => img.get(x, 1) - img.get(x, 0),
                _ if y == h - 1 => img.get(x, y) - img.get(x, y - 1),
                _ => 0.5 * (img.get(x, y + 1) - img.get(x, y - 1)),
            };
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let o = angle / (2.0 * PI) * SIFT_ORIENTATIONS as f64;
            let o0 = (o.floor() as usize) % SIFT_ORIENTATIONS;
            let frac = o - o.floor();
            let o1 = (o0 + 1) % SIFT_ORIENTATIONS;
            maps[o0][y * w + x] += mag * (1.0 - frac);
            maps[o1][y * w + x] += mag * frac;
        }
    }

    // Separable triangular smoothing: after it, the value at a bin centre is
    // the bilinearly weighted sum of the pixels contributing to that bin.
    let b = bin_size as isize;
    let taps: Vec<(isize, f64)> = (-b + 1..b)
        .map(|d| (d, 1.0 - d.unsigned_abs() as f64 / bin_size as f64))
        .collect();
    let smooth = |src: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for &(d, t) in &taps {
                    let xx = x as isize + d;
                    if xx >= 0 && (xx as usize) < w {
                        s += t * src[y * w + xx as usize];
                    }
                }
                tmp[y * w + x] = s;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for &(d, t) in &taps {
                    let yy = y as isize + d;
                    if yy >= 0 && (yy as usize) < h {
                        s += t * tmp[yy as usize * w + x];
                    }
                }
                out[y * w + x] = s;
            }
        }
        out
    };
    let smoothed: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        maps.par_iter().map(|m| smooth(m)).collect()
    };

    let gw = grid_size(w, rf, step);
    let gh = grid_size(h, rf, step);
    let mut data = Vec::with_capacity(gw * gh * DSIFT_DIM);
    let mut desc = [0.0; DSIFT_DIM];
    for gy in 0..gh {
        for gx in 0..gw {
            let (x0, y0) = (gx * step, gy * step);
            for by in 0..SIFT_BINS {
                for bx in 0..SIFT_BINS {
                    let cx = x0 + (bx + 1) * bin_size;
                    let cy = y0 + (by + 1) * bin_size;
                    for o in 0..SIFT_ORIENTATIONS {
                        desc[(by * SIFT_BINS + bx) * SIFT_ORIENTATIONS + o] =
                            smoothed[o][cy * w + cx];
                    }
                }
            }
            normalize_sift(&mut desc);
            data.extend_from_slice(&desc);
        }
    }
    DescriptorField::from_parts(gw, gh, DSIFT_DIM, step, rf / 2, rf, 1.0, data)
}

fn normalize_sift(d: &mut [f64]) {
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        d.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in d.iter_mut() {
        *v = (*v / norm).min(SIFT_CLAMP);
    }
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d.iter_mut().for_each(|v| *v /= norm);
}

pub fn load_descriptor_field(path: impl AsRef<Path>) -> Result<DescriptorField> {
    io::read_descriptor_field(path)
}

pub fn save_descriptor_field(field: &DescriptorField, path: impl AsRef<Path>) -> Result<()> {
    io::write_descriptor_field(field, path)
}

/// Something that turns an image into a dense descriptor field.
pub trait Extractor: Send + Sync {
    fn extract(&self, img: &GrayImage) -> Result<DescriptorField>;
    fn dim(&self) -> usize;
}

/// The built-in extractors.
#[derive(Debug, Clone)]
pub enum DescriptorKind {
    Patch { size: usize, stride: usize },
    Lbp(LbpParams),
    Dsift(DsiftParams),
    Mr8 { bank: FilterBank },
    Lm { bank: FilterBank },
}

impl DescriptorKind {
    pub fn mr8() -> Self {
        DescriptorKind::Mr8 {
            bank: filterbank::make_mr_bank(),
        }
    }

    pub fn mr8_with(params: &MrParams) -> Result<Self> {
        Ok(DescriptorKind::Mr8 {
            bank: filterbank::make_mr_bank_with(params)?,
        })
    }

    pub fn lm(params: &LmParams) -> Result<Self> {
        Ok(DescriptorKind::Lm {
            bank: filterbank::make_lm(params)?,
        })
    }
}

impl Extractor for DescriptorKind {
    fn extract(&self, img: &GrayImage) -> Result<DescriptorField> {
        match self {
            DescriptorKind::Patch { size, stride } => extract_patches(img, *size, *stride),
            DescriptorKind::Lbp(p) => extract_lbp(img, p),
            DescriptorKind::Dsift(p) => extract_dsift(img, p),
            DescriptorKind::Mr8 { bank } => {
                filterbank::mr8_collapse(&filterbank::apply_bank(img, bank)?)
            }
            DescriptorKind::Lm { bank } => {
                Ok(filterbank::apply_bank(img, bank)?.into_descriptor_field())
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            DescriptorKind::Patch { size, .. } => size * size,
            DescriptorKind::Lbp(p) => LBP_UNIFORM_BINS + usize::from(p.catch_all_bin),
            DescriptorKind::Dsift(_) => DSIFT_DIM,
            DescriptorKind::Mr8 { .. } => 8,
            DescriptorKind::Lm { bank } => bank.len(),
        }
    }
}

/// Extracts descriptors at every pyramid level and concatenates them, with
/// positions expressed in original-image coordinates.
pub fn multiscale_collect(
    pyramid: &ScalePyramid,
    extractor: &dyn Extractor,
) -> Result<DescriptorSample> {
    let parts = pyramid
        .levels()
        .iter()
        .map(|level| {
            extractor
                .extract(&level.image)
                .map(|f| f.with_scale_factor(level.scale).to_sample())
        })
        .collect::<Result<Vec<_>>>()?;
    DescriptorSample::concat(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_pyramid, PyramidParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.gen())
    }

    #[test]
    fn patch_dimensions() {
        let img = noise(10, 10, 0);
        assert_eq!(extract_patches(&img, 3, 1).unwrap().dim(), 9);
        assert_eq!(extract_patches(&img, 7, 1).unwrap().dim(), 49);
        assert!(extract_patches(&img, 4, 1).is_err());
        assert!(extract_patches(&noise(2, 2, 0), 3, 1).is_err());
    }

    #[test]
    fn constant_image_constant_patches() {
        let img = GrayImage::from_fn(6, 5, |_, _| 0.25);
        let f = extract_patches(&img, 3, 1).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn ramp_patches_match_windows() {
        let img = GrayImage::from_fn(5, 5, |x, y| (5 * y + x) as f64 / 24.0);
        let f = extract_patches(&img, 3, 1).unwrap();
        assert_eq!((f.grid_w(), f.grid_h()), (3, 3));
        for gy in 0..3 {
            for gx in 0..3 {
                let expected: Vec<f64> = (0..3)
                    .flat_map(|dy| (0..3).map(move |dx| (5 * (gy + dy) + gx + dx) as f64 / 24.0))
                    .collect();
                assert_eq!(f.descriptor(gx, gy), &expected[..]);
            }
        }
        assert_eq!(f.cell_center(0, 0), (1.0, 1.0));
    }

    #[test]
    fn uniform_pattern_table() {
        let uniform = (0..=255u8)
            .filter(|&c| uniform_bin(c) < LBP_UNIFORM_BINS)
            .count();
        assert_eq!(uniform, 58);
        assert_eq!(uniform_bin(0), 0);
        assert_eq!(uniform_bin(0b0101_0101), LBP_UNIFORM_BINS);
    }

    #[test]
    fn lbp_constant_image_one_hot() {
        let img = GrayImage::from_fn(12, 12, |_, _| 0.5);
        let f = extract_lbp(&img, &LbpParams::default()).unwrap();
        assert_eq!(f.dim(), 59);
        let d = f.descriptor(0, 0);
        assert_eq!(d[uniform_bin(0)], 1.0);
        assert_eq!(d.iter().sum::<f64>(), 1.0);
        let drop = LbpParams {
            catch_all_bin: false,
            ..Default::default()
        };
        assert_eq!(extract_lbp(&img, &drop).unwrap().dim(), 58);
    }

    #[test]
    fn lbp_checkerboard_matches_bit_oracle() {
        let img = GrayImage::from_fn(4, 4, |x, y| ((x + y) % 2) as f64);
        let (w, h, codes) = lbp_codes(&img, 1.0, LbpSampling::Bilinear).unwrap();
        assert_eq!((w, h), (2, 2));
        let bilinear = |x: f64, y: f64| {
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let px = |xx: f64, yy: f64| img.get((xx as usize).min(3), (yy as usize).min(3));
            px(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + px(x0 + 1.0, y0) * fx * (1.0 - fy)
                + px(x0, y0 + 1.0) * (1.0 - fx) * fy
                + px(x0 + 1.0, y0 + 1.0) * fx * fy
        };
        for y in 0..2 {
            for x in 0..2 {
                let (cx, cy) = (x as f64 + 1.0, y as f64 + 1.0);
                let mut expected = 0u8;
                for j in 0..8 {
                    let a = 2.0 * PI * j as f64 / 8.0;
                    let mut nx = cx + a.cos();
                    let mut ny = cy - a.sin();
                    if (nx - nx.round()).abs() < 1e-9 {
                        nx = nx.round();
                    }
                    if (ny - ny.round()).abs() < 1e-9 {
                        ny = ny.round();
                    }
                    if img.get(x + 1, y + 1) > bilinear(nx, ny) {
                        expected |= 1 << j;
                    }
                }
                assert_eq!(codes[y * 2 + x], expected, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn lbp_rejects_bad_parameters() {
        let img = noise(20, 20, 1);
        let p = LbpParams {
            neighbors: 16,
            ..Default::default()
        };
        assert!(extract_lbp(&img, &p).is_err());
        let p = LbpParams {
            radius: 12.0,
            cell: 12,
            ..Default::default()
        };
        assert!(extract_lbp(&img, &p).is_err());
    }

    #[test]
    fn dsift_geometry() {
        let img = noise(50, 44, 2);
        let f = extract_dsift(&img, &DsiftParams::default()).unwrap();
        assert_eq!(f.dim(), 128);
        assert_eq!(f.receptive_field(), 40);
        assert_eq!((f.grid_w(), f.grid_h()), (6, 3));
        for gy in 0..f.grid_h() {
            for gx in 0..f.grid_w() {
                let n: f64 = f
                    .descriptor(gx, gy)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                assert!((n - 1.0).abs() < 1e-6);
                assert!(f.descriptor(gx, gy).iter().all(|&v| v >= 0.0));
            }
        }
        assert!(extract_dsift(&noise(39, 60, 0), &DsiftParams::default()).is_err());
    }

    #[test]
    fn dsift_constant_image_is_zero() {
        let img = GrayImage::from_fn(48, 48, |_, _| 0.7);
        let f = extract_dsift(&img, &DsiftParams::default()).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dsift_horizontal_ramp_has_single_orientation() {
        let img = GrayImage::from_fn(40, 40, |x, _| x as f64 / 40.0);
        let f = extract_dsift(&img, &DsiftParams::default()).unwrap();
        let d = f.descriptor(0, 0);
        for (i, &v) in d.iter().enumerate() {
            if i % 8 != 0 {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multiscale_positions_map_to_original() {
        let field = DescriptorField::from_parts(12, 12, 1, 1, 0, 1, 0.5, vec![0.0; 144]).unwrap();
        let sample = field.to_sample();
        let p = sample.positions()[10 * 12 + 10];
        assert_eq!((p.x, p.y, p.scale), (20.0, 20.0, 0.5));
    }

    #[test]
    fn multiscale_concatenates_levels() {
        let img = noise(32, 32, 5);
        let ext = DescriptorKind::Patch { size: 3, stride: 2 };
        let single = multiscale_collect(&ScalePyramid::single(img.clone()), &ext).unwrap();
        assert_eq!(single, ext.extract(&img).unwrap().to_sample());

        let params = PyramidParams {
            s_min: -1.0,
            s_max: 0.0,
            step: 1.0,
            max_area: 1 << 20,
        };
        let pyr = build_pyramid(&img, &params).unwrap();
        let all = multiscale_collect(&pyr, &ext).unwrap();
        let per_level: usize = pyr
            .levels()
            .iter()
            .map(|l| ext.extract(&l.image).unwrap().len())
            .sum();
        assert_eq!(all.len(), per_level);
    }
}
