//! Images, scale pyramids and dataset manifests.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Error, Result};

/// Luma weights applied to RGB input.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Single-channel image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image has zero area"));
        }
        Error::check_dim(width * height, data.len())?;
        if let Some(v) = data
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a generator; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image has zero area");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at a real-valued location; coordinates are clamped to the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resampling to the given size (pixel-center aligned).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        GrayImage::from_fn(width, height, |x, y| {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            self.sample_bilinear(src_x, src_y)
        })
    }
}

/// Binary pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        Error::check_dim(width * height, data.len())?;
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Whether the pixel containing a real-valued position is set. Positions
    /// up to half a pixel outside the mask snap to the border; anything
    /// further out is an error.
    pub fn contains_point(&self, x: f64, y: f64) -> Result<bool> {
        let snap = |v: f64, n: usize| -> Option<usize> {
            if !(v >= -0.5 && v < n as f64 + 0.5) {
                return None;
            }
            Some((v.round().max(0.0) as usize).min(n - 1))
        };
        match (snap(x, self.width), snap(y, self.height)) {
            (Some(px), Some(py)) => Ok(self.get(px, py)),
            _ => Err(Error::invalid(format!(
                "position ({x}, {y}) outside {}x{} mask",
                self.width, self.height
            ))),
        }
    }
}

pub fn rgb_to_luma(r: f64, g: f64, b: f64) -> f64 {
    LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
}

/// Loads a PNG/PPM/PGM raster and converts it to luma in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::Image {
            path: path.to_path_buf(),
            message: "zero-area image".into(),
        });
    }
    let data = if decoded.color().has_color() {
        let rgb = decoded.into_rgb8();
        rgb.pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                rgb_to_luma(r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0).clamp(0.0, 1.0)
            })
            .collect()
    } else {
        decoded
            .into_luma8()
            .pixels()
            .map(|p| p.0[0] as f64 / 255.0)
            .collect()
    };
    GrayImage::new(width, height, data)
}

/// Writes an 8-bit grayscale image; the format follows the file extension.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = image::GrayImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        image::Luma([(img.get(x as usize, y as usize) * 255.0).round() as u8])
    });
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Scale exponents and area cap of a pyramid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidParams {
    pub s_min: f64,
    pub s_max: f64,
    pub step: f64,
    pub max_area: usize,
}

impl Default for PyramidParams {
    fn default() -> Self {
        PyramidParams {
            s_min: -3.0,
            s_max: 1.5,
            step: 0.5,
            max_area: 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub scale: f64,
    pub image: GrayImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalePyramid {
    levels: Vec<PyramidLevel>,
}

impl ScalePyramid {
    pub fn single(image: GrayImage) -> Self {
        ScalePyramid {
            levels: vec![PyramidLevel { scale: 1.0, image }],
        }
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn scales(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.scale).collect()
    }
}

/// Rescales `img` by `2^s` for `s` in `s_min, s_min + step, ..., s_max`,
/// discarding levels whose area is strictly larger than `max_area`.
pub fn build_pyramid(img: &GrayImage, params: &PyramidParams) -> Result<ScalePyramid> {
    let PyramidParams {
        s_min,
        s_max,
        step,
        max_area,
    } = *params;
    if !(s_min.is_finite() && s_max.is_finite() && s_min <= s_max) {
        return Err(Error::invalid("pyramid needs s_min <= s_max"));
    }
    if !(step > 0.0) || max_area == 0 {
        return Err(Error::invalid("pyramid needs step > 0 and max_area > 0"));
    }
    let n_steps = ((s_max - s_min) / step + 1e-9).floor() as usize;
    let mut levels = Vec::new();
    for i in 0..=n_steps {
        let s = s_min + i as f64 * step;
        let scale = s.exp2();
        let w = ((img.width as f64 * scale).round() as usize).max(1);
        let h = ((img.height as f64 * scale).round() as usize).max(1);
        if w * h > max_area {
            continue;
        }
        let image = if s == 0.0 {
            img.clone()
        } else {
            img.resize_bilinear(w, h)
        };
        levels.push(PyramidLevel { scale, image });
    }
    if levels.is_empty() {
        return Err(Error::invalid("every pyramid level exceeds the area cap"));
    }
    Ok(ScalePyramid { levels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split id {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub labels: Vec<String>,
    pub split: Split,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Sorted label vocabulary.
    pub vocabulary: Vec<String>,
}

impl DatasetManifest {
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.vocabulary
            .binary_search_by(|l| l.as_str().cmp(label))
            .ok()
    }

    /// Label indices of an entry.
    pub fn entry_labels(&self, entry: &ManifestEntry) -> Vec<usize> {
        entry
            .labels
            .iter()
            .filter_map(|l| self.label_index(l))
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestEntry)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }
}

/// Parses a manifest from text. Relative paths are resolved against `base`.
/// Mask paths must exist on disk.
pub fn parse_manifest(text: &str, base: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let mut vocab = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Manifest {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(err(format!(
                "expected 3 or 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let image = base.join(fields[0]);
        if fields[0].is_empty() {
            return Err(err("empty image path".into()));
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(err(format!("duplicate image id {:?}", fields[0])));
        }
        let labels: Vec<String> = fields[1]
            .split(',')
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if labels.is_empty() {
            return Err(err("entry has no label".into()));
        }
        let split: Split = fields[2]
            .trim()
            .parse()
            .map_err(|e: Error| err(e.to_string()))?;
        let mask = match fields.get(3).map(|m| m.trim()).filter(|m| !m.is_empty()) {
            Some(m) => {
                let p = base.join(m);
                if !p.exists() {
                    return Err(err(format!("dangling mask path {}", p.display())));
                }
                Some(p)
            }
            None => None,
        };
        vocab.extend(labels.iter().cloned());
        entries.push(ManifestEntry {
            image,
            labels,
            split,
            mask,
        });
    }
    Ok(DatasetManifest {
        entries,
        vocabulary: vocab.into_iter().collect(),
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or_else(|| Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| ((x + 3 * y) % 17) as f64 / 16.0)
    }

    #[test]
    fn load_white_and_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.png");
        image::GrayImage::from_pixel(2, 2, image::Luma([255u8]))
            .save(&p)
            .unwrap();
        let img = load_image(&p).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));

        let p = dir.path().join("gray.pgm");
        image::GrayImage::from_pixel(1, 1, image::Luma([128u8]))
            .save(&p)
            .unwrap();
        let img = load_image(&p).unwrap();
        assert!((img.get(0, 0) - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn load_red_pixel_uses_luma_weights() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.ppm");
        image::RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0]))
            .save(&p)
            .unwrap();
        let img = load_image(&p).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-12);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&p), Err(Error::Image { .. })));
    }

    #[test]
    fn save_load_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ramp.png");
        let img = ramp(13, 7);
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn default_pyramid_has_ten_levels() {
        let pyr = build_pyramid(&ramp(100, 100), &PyramidParams::default()).unwrap();
        let scales = pyr.scales();
        assert_eq!(scales.len(), 10);
        assert!((scales[0] - 0.125).abs() < 1e-12);
        assert!((scales[9] - 2f64.powf(1.5)).abs() < 1e-12);
        assert!(scales.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cap_drops_upscaled_levels() {
        let img = GrayImage::from_fn(1024, 1024, |x, _| (x % 2) as f64);
        let pyr = build_pyramid(&img, &PyramidParams::default()).unwrap();
        let scales = pyr.scales();
        assert_eq!(scales.len(), 7);
        assert_eq!(*scales.last().unwrap(), 1.0);
        assert_eq!(pyr.levels().last().unwrap().image, img);
    }

    #[test]
    fn identity_pyramid() {
        let img = ramp(9, 5);
        let params = PyramidParams {
            s_min: 0.0,
            s_max: 0.0,
            ..Default::default()
        };
        let pyr = build_pyramid(&img, &params).unwrap();
        assert_eq!(pyr.levels().len(), 1);
        assert_eq!(pyr.levels()[0].image, img);
    }

    #[test]
    fn pyramid_errors() {
        let img = ramp(64, 64);
        let tiny = PyramidParams {
            max_area: 1,
            s_min: 0.0,
            s_max: 1.0,
            ..Default::default()
        };
        assert!(build_pyramid(&img, &tiny).is_err());
        let bad = PyramidParams {
            s_min: 1.0,
            s_max: 0.0,
            ..Default::default()
        };
        assert!(build_pyramid(&img, &bad).is_err());
    }

    #[test]
    fn manifest_basic() {
        let text = "# comment\na.png\tcat\ttrain\nb.png\tdog\tval\nc.png\tcat,dog\ttest\n";
        let m = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.vocabulary, vec!["cat", "dog"]);
        assert_eq!(m.entries[0].image, Path::new("/data/a.png"));
        assert_eq!(m.entry_labels(&m.entries[2]), vec![0, 1]);
    }

    #[test]
    fn manifest_errors() {
        let base = Path::new("/data");
        assert!(parse_manifest("a.png\tcat\tfoo\n", base).is_err());
        assert!(parse_manifest("a.png\tcat\ttrain\na.png\tdog\ttest\n", base).is_err());
        assert!(parse_manifest("a.png\tcat\ttrain\t/no/such/mask.pgm\n", base).is_err());
        assert!(parse_manifest("a.png\tcat\n", base).is_err());
    }

    #[test]
    fn manifest_dtd_shape() {
        let mut text = String::new();
        for c in 0..47 {
            for i in 0..120 {
                let split = ["train", "val", "test"][i % 3];
                text.push_str(&format!("c{c}/img{i}.jpg\tattr{c}\t{split}\n"));
            }
        }
        let m = parse_manifest(&text, Path::new(".")).unwrap();
        assert_eq!(m.vocabulary.len(), 47);
        for split in [Split::Train, Split::Val, Split::Test] {
            assert_eq!(m.split(split).count(), 1880);
        }
    }
}
