//! Binary artifact formats.
//!
//! * `TXDF` descriptor fields: magic, u32 version, u32 grid_w, grid_h, dim,
//!   stride, offset, receptive_field, f32 scale factor, then f32 values.
//! * `TXEV` encoded vectors: magic, u32 version, u32 kind tag, u32 dim, then
//!   f32 values. The kind tag keeps the encoder in its low byte and the
//!   applied post-processing flags in bits 8..11.
//! * `TXMD` model containers: magic, u32 version, u32 section count, then
//!   sections of u32 tag, u64 payload length and payload.
//!
//! Also PGM masks and label maps, and run-length proposal lists. All
//! integers are little-endian. File writes go through a temporary file in the
//! target directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::BinaryMask;
use crate::descriptors::DescriptorField;
use crate::encoders::{EncodedVector, EncoderKind, PostProcessSpec};
use crate::filterbank::{FilterBank, FilterFamily, Kernel, KernelMeta};
use crate::learn::{CalibrationParams, KernelKind, KernelModel, KernelSpec, LinearClassifier};
use crate::linalg::Matrix;
use crate::metrics::PixelLabelMap;
use crate::vocab::{Codebook, GmmModel, PcaWhitener};
use crate::{Error, Result};

const VERSION: u32 = 1;

/// Writes `bytes` to `path` atomically (temporary sibling, then rename).
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn strs(&mut self, v: &[String]) {
        self.usize(v.len());
        for s in v {
            self.str(s);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err(format!("count {v} too large")))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| self.err("array size overflows"))?;
        let raw = self.take(bytes)?;
        let v: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(self.err("non-finite value"));
        }
        Ok(v)
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| self.err("array size overflows"))?;
        let raw = self.take(bytes)?;
        let v: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(self.err("non-finite value"));
        }
        Ok(v)
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| self.err("matrix size overflows"))?;
        Matrix::from_vec(rows, cols, self.f64s(n)?)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.err("invalid UTF-8 string"))
    }
    fn strs(&mut self) -> Result<Vec<String>> {
        let n = self.usize()?;
        if n > self.buf.len() {
            return Err(self.err("string count exceeds input"));
        }
        (0..n).map(|_| self.str()).collect()
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(self.err("bad magic"));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(self.err(format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn to_u32(v: usize, name: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{name} {v} does not fit in 32 bits")))
}

pub fn encode_descriptor_field(field: &DescriptorField) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(b"TXDF");
    w.u32(VERSION);
    for (v, name) in [
        (field.grid_w(), "grid width"),
        (field.grid_h(), "grid height"),
        (field.dim(), "dimension"),
        (field.stride(), "stride"),
        (field.offset(), "offset"),
        (field.receptive_field(), "receptive field"),
    ] {
        w.u32(to_u32(v, name)?);
    }
    w.f32(field.scale_factor() as f32);
    for &v in field.data() {
        w.f32(v as f32);
    }
    Ok(w.buf)
}

pub fn decode_descriptor_field(bytes: &[u8]) -> Result<DescriptorField> {
    let mut r = Reader::new(bytes, "descriptor field");
    r.header(b"TXDF")?;
    let mut g = [0usize; 6];
    for v in &mut g {
        *v = r.u32()? as usize;
    }
    let scale = r.f32()? as f64;
    let n = g[0]
        .checked_mul(g[1])
        .and_then(|x| x.checked_mul(g[2]))
        .ok_or_else(|| r.err("size overflows"))?;
    if bytes.len() - r.pos != n * 4 {
        return Err(r.err(format!(
            "expected {} data bytes for a {}x{}x{} grid, found {}",
            n * 4,
            g[0],
            g[1],
            g[2],
            bytes.len() - r.pos
        )));
    }
    let data = r.f32s(n)?;
    r.finish()?;
    DescriptorField::from_parts(g[0], g[1], g[2], g[3], g[4], g[5], scale, data)
}

pub fn read_descriptor_field(path: impl AsRef<Path>) -> Result<DescriptorField> {
    let path = path.as_ref();
    decode_descriptor_field(&read_file(path)?).map_err(|e| annotate(e, path))
}

pub fn write_descriptor_field(field: &DescriptorField, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_descriptor_field(field)?)
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { what, message } => Error::Format {
            what,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

pub fn encode_vector(v: &EncodedVector) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(b"TXEV");
    w.u32(VERSION);
    w.u32(v.kind.tag() | v.post.bits() << 8);
    w.u32(to_u32(v.dim(), "dimension")?);
    for &x in &v.values {
        w.f32(x as f32);
    }
    Ok(w.buf)
}

/// Decodes a vector. The subvector length is not stored and comes back as `None`.
pub fn decode_vector(bytes: &[u8]) -> Result<EncodedVector> {
    let mut r = Reader::new(bytes, "encoded vector");
    r.header(b"TXEV")?;
    let tag = r.u32()?;
    let kind = EncoderKind::from_tag(tag & 0xff)
        .ok_or_else(|| r.err(format!("unknown encoder tag {tag}")))?;
    if tag >> 11 != 0 {
        return Err(r.err(format!("unknown flags in tag {tag:#x}")));
    }
    let post = PostProcessSpec::from_bits(tag >> 8);
    let dim = r.u32()? as usize;
    if bytes.len() - r.pos != dim * 4 {
        return Err(r.err(format!("expected {dim} values")));
    }
    let values = r.f32s(dim)?;
    r.finish()?;
    Ok(EncodedVector {
        values,
        kind,
        subvector_len: None,
        post,
    })
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<EncodedVector> {
    let path = path.as_ref();
    decode_vector(&read_file(path)?).map_err(|e| annotate(e, path))
}

pub fn write_vector(v: &EncodedVector, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_vector(v)?)
}

/// One typed entry of a model container.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSection {
    Whitener(PcaWhitener),
    Codebook(Codebook),
    Gmm(GmmModel),
    Classifier(LinearClassifier),
    /// One sigmoid per class.
    Calibration(Vec<CalibrationParams>),
    KernelModel(KernelModel),
    FilterBank(FilterBank),
}

impl ModelSection {
    fn tag(&self) -> u32 {
        match self {
            ModelSection::Whitener(_) => 1,
            ModelSection::Codebook(_) => 2,
            ModelSection::Gmm(_) => 3,
            ModelSection::Classifier(_) => 4,
            ModelSection::Calibration(_) => 5,
            ModelSection::KernelModel(_) => 6,
            ModelSection::FilterBank(_) => 7,
        }
    }
}

fn kernel_kind_tag(k: KernelKind) -> (u32, f64) {
    match k {
        KernelKind::Linear => (0, 0.0),
        KernelKind::Hellinger => (1, 0.0),
        KernelKind::AdditiveChi2 => (2, 0.0),
        KernelKind::ExpChi2 { lambda } => (3, lambda),
    }
}

fn write_section(w: &mut Writer, s: &ModelSection) {
    match s {
        ModelSection::Whitener(p) => {
            w.usize(p.input_dim());
            w.usize(p.target_dim());
            w.u8(u8::from(p.whiten));
            w.f64s(&p.mean);
            w.f64s(p.basis.as_slice());
            w.f64s(&p.eigenvalues);
        }
        ModelSection::Codebook(c) => {
            w.usize(c.len());
            w.usize(c.dim());
            w.f64s(c.centers().as_slice());
        }
        ModelSection::Gmm(g) => {
            w.usize(g.len());
            w.usize(g.dim());
            w.f64s(g.priors());
            w.f64s(g.means().as_slice());
            w.f64s(g.variances().as_slice());
        }
        ModelSection::Classifier(c) => {
            w.usize(c.num_classes());
            w.usize(c.dim());
            w.strs(&c.labels);
            w.f64s(c.weights.as_slice());
            w.f64s(&c.biases);
        }
        ModelSection::Calibration(v) => {
            w.usize(v.len());
            for p in v {
                w.f64(p.a);
                w.f64(p.b);
            }
        }
        ModelSection::KernelModel(m) => {
            let (tag, lambda) = kernel_kind_tag(m.spec.kind);
            w.u32(tag);
            w.f64(lambda);
            w.u8(u8::from(m.spec.normalize));
            w.usize(m.num_classes());
            w.usize(m.support.rows());
            w.usize(m.support.cols());
            w.strs(&m.labels);
            w.f64s(m.support.as_slice());
            w.f64s(m.coefs.as_slice());
            w.f64s(&m.biases);
        }
        ModelSection::FilterBank(b) => {
            w.usize(b.len());
            w.usize(b.support());
            for (k, m) in b.kernels().iter().zip(b.meta()) {
                w.u32(m.family.tag());
                w.u64(m.orientation.map_or(u64::MAX, |o| o as u64));
                w.usize(m.scale);
                w.f64(m.sigma);
                w.f64s(&k.data);
            }
        }
    }
}

fn read_section(r: &mut Reader<'_>, tag: u32) -> Result<ModelSection> {
    Ok(match tag {
        1 => {
            let (d, t) = (r.usize()?, r.usize()?);
            let whiten = r.u8()? != 0;
            let mean = r.f64s(d)?;
            let basis = r.matrix(d, t)?;
            let eigenvalues = r.f64s(t)?;
            ModelSection::Whitener(PcaWhitener {
                mean,
                basis,
                eigenvalues,
                whiten,
            })
        }
        2 => {
            let (k, d) = (r.usize()?, r.usize()?);
            ModelSection::Codebook(Codebook::new(r.matrix(k, d)?)?)
        }
        3 => {
            let (k, d) = (r.usize()?, r.usize()?);
            let priors = r.f64s(k)?;
            let means = r.matrix(k, d)?;
            let vars = r.matrix(k, d)?;
            ModelSection::Gmm(GmmModel::new(priors, means, vars)?)
        }
        4 => {
            let (c, d) = (r.usize()?, r.usize()?);
            let labels = r.strs()?;
            let weights = r.matrix(c, d)?;
            let biases = r.f64s(c)?;
            ModelSection::Classifier(LinearClassifier::new(weights, biases, labels)?)
        }
        5 => {
            let n = r.usize()?;
            let v = r.f64s(n.checked_mul(2).ok_or_else(|| r.err("count overflows"))?)?;
            ModelSection::Calibration(
                v.chunks(2)
                    .map(|p| CalibrationParams { a: p[0], b: p[1] })
                    .collect(),
            )
        }
        6 => {
            let kind = r.u32()?;
            let lambda = r.f64()?;
            let normalize = r.u8()? != 0;
            let kind = match kind {
                0 => KernelKind::Linear,
                1 => KernelKind::Hellinger,
                2 => KernelKind::AdditiveChi2,
                3 => KernelKind::ExpChi2 { lambda },
                t => return Err(r.err(format!("unknown kernel tag {t}"))),
            };
            let spec = KernelSpec { kind, normalize };
            spec.validate()?;
            let (c, n, d) = (r.usize()?, r.usize()?, r.usize()?);
            let labels = r.strs()?;
            Error::check_dim(c, labels.len())?;
            let support = r.matrix(n, d)?;
            let coefs = r.matrix(c, n)?;
            let biases = r.f64s(c)?;
            ModelSection::KernelModel(KernelModel {
                spec,
                support,
                coefs,
                biases,
                labels,
            })
        }
        7 => {
            let (n, support) = (r.usize()?, r.usize()?);
            let mut kernels = Vec::new();
            let mut meta = Vec::new();
            for _ in 0..n {
                let family = r.u32()?;
                let family = FilterFamily::from_tag(family)
                    .ok_or_else(|| r.err(format!("unknown family {family}")))?;
                let o = r.u64()?;
                let orientation = (o != u64::MAX).then_some(o as usize);
                let scale = r.usize()?;
                let sigma = r.f64()?;
                let size2 = support
                    .checked_mul(support)
                    .ok_or_else(|| r.err("support overflows"))?;
                kernels.push(Kernel::new(support, r.f64s(size2)?)?);
                meta.push(KernelMeta {
                    family,
                    orientation,
                    scale,
                    sigma,
                });
            }
            ModelSection::FilterBank(FilterBank::new(kernels, meta)?)
        }
        t => return Err(r.err(format!("unknown section tag {t}"))),
    })
}

pub fn encode_model(sections: &[ModelSection]) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(b"TXMD");
    w.u32(VERSION);
    w.u32(sections.len() as u32);
    for s in sections {
        let mut body = Writer::default();
        write_section(&mut body, s);
        w.u32(s.tag());
        w.u64(body.buf.len() as u64);
        w.buf.extend_from_slice(&body.buf);
    }
    w.buf
}

pub fn decode_model(bytes: &[u8]) -> Result<Vec<ModelSection>> {
    let mut r = Reader::new(bytes, "model container");
    r.header(b"TXMD")?;
    let n = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let tag = r.u32()?;
        let len = r.usize()?;
        let body = r.take(len)?;
        let mut sr = Reader::new(body, "model section");
        out.push(read_section(&mut sr, tag)?);
        sr.finish()?;
    }
    r.finish()?;
    Ok(out)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Vec<ModelSection>> {
    let path = path.as_ref();
    decode_model(&read_file(path)?).map_err(|e| annotate(e, path))
}

pub fn write_model(sections: &[ModelSection], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_model(sections))
}

/// Netpbm header fields: width, height, maxval, and the payload offset.
fn parse_pgm_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize)> {
    let err = |m: &str| Error::Format {
        what: "PGM",
        message: m.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err("only binary PGM (P5) is supported"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed header"))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("malformed header"));
    }
    if fields[2] == 0 || fields[2] > 65535 {
        return Err(err("maxval out of range"));
    }
    Ok((fields[0], fields[1], fields[2], pos + 1))
}

fn read_pgm_values(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let (w, h, maxval, off) = parse_pgm_header(bytes)?;
    let bpp = if maxval > 255 { 2 } else { 1 };
    let n = w * h;
    if bytes.len() - off != n * bpp {
        return Err(Error::Format {
            what: "PGM",
            message: format!(
                "expected {} data bytes, found {}",
                n * bpp,
                bytes.len() - off
            ),
        });
    }
    let data = &bytes[off..];
    let values = if bpp == 1 {
        data.iter().map(|&b| b as u16).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok((w, h, values))
}

/// Reads an 8- or 16-bit binary PGM as a mask; non-zero pixels are inside.
pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let (w, h, v) = read_pgm_values(&read_file(path)?).map_err(|e| annotate(e, path))?;
    BinaryMask::new(w, h, v.into_iter().map(|x| x != 0).collect())
}

pub fn write_mask_pgm(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    bytes.extend(mask.data().iter().map(|&b| if b { 255u8 } else { 0 }));
    write_atomic(path, &bytes)
}

/// Label maps are stored as 16-bit PGM (big-endian samples).
pub fn write_label_map(map: &PixelLabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n65535\n", map.width, map.height).into_bytes();
    for &l in &map.labels {
        bytes.extend_from_slice(&l.to_be_bytes());
    }
    write_atomic(path, &bytes)
}

/// Reads an 8- or 16-bit PGM label map.
pub fn read_label_map(path: impl AsRef<Path>) -> Result<PixelLabelMap> {
    let path = path.as_ref();
    let (w, h, v) = read_pgm_values(&read_file(path)?).map_err(|e| annotate(e, path))?;
    PixelLabelMap::new(w, h, v)
}

/// Parses `<region-id> <row> <col-start> <col-end>` lines (inclusive end)
/// into one mask per region id, ordered by id. Blank and `#` lines are skipped.
pub fn parse_rle_proposals(
    text: &str,
    width: usize,
    height: usize,
) -> Result<Vec<(u64, BinaryMask)>> {
    let mut regions: std::collections::BTreeMap<u64, BinaryMask> = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| Error::Format {
            what: "proposal list",
            message: format!("line {}: {m}", lineno + 1),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", f.len())));
        }
        let id: u64 = f[0]
            .parse()
            .map_err(|_| err(format!("bad region id {:?}", f[0])))?;
        let mut nums = [0usize; 3];
        for (n, s) in nums.iter_mut().zip(&f[1..]) {
            *n = s.parse().map_err(|_| err(format!("bad number {s:?}")))?;
        }
        let [row, c0, c1] = nums;
        if row >= height || c1 >= width || c0 > c1 {
            return Err(err(format!(
                "run {row} {c0}..={c1} outside a {width}x{height} image"
            )));
        }
        let m = regions
            .entry(id)
            .or_insert_with(|| BinaryMask::filled(width, height, false));
        for x in c0..=c1 {
            m.set(x, row, true);
        }
    }
    Ok(regions.into_iter().collect())
}

/// Inverse of [`parse_rle_proposals`].
pub fn format_rle_proposals(regions: &[(u64, BinaryMask)]) -> String {
    let mut out = String::new();
    for (id, m) in regions {
        for y in 0..m.height() {
            let mut x = 0;
            while x < m.width() {
                if m.get(x, y) {
                    let start = x;
                    while x + 1 < m.width() && m.get(x + 1, y) {
                        x += 1;
                    }
                    out.push_str(&format!("{id} {y} {start} {x}\n"));
                }
                x += 1;
            }
        }
    }
    out
}
