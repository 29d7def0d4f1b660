//! Pipeline configuration: a TOML tree with defaults for every field.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use texbank::corpus::PyramidParams;
use texbank::descriptors::{DescriptorKind, DsiftParams, LbpParams, LbpSampling};
use texbank::filterbank::LmParams;
use texbank::learn::{KernelKind, KernelSpec, SvmParams};
use texbank::{EncoderKind, PostProcessSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub descriptor: DescriptorConfig,
    pub vocab: VocabConfig,
    pub encoder: EncoderConfig,
    pub classifier: ClassifierConfig,
    pub segment: SegmentConfig,
    pub annosim: AnnosimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorName {
    Patch,
    Lbp,
    Dsift,
    Mr8,
    Lm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorConfig {
    pub kind: DescriptorName,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub lbp_radius: f64,
    pub lbp_cell: usize,
    pub lbp_catch_all: bool,
    pub lbp_nearest: bool,
    pub dsift_step: usize,
    pub dsift_bin_size: usize,
    /// Multi-scale extraction; a single level at the native size when absent.
    pub pyramid: Option<PyramidConfig>,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        let lbp = LbpParams::default();
        let dsift = DsiftParams::default();
        DescriptorConfig {
            kind: DescriptorName::Mr8,
            patch_size: 3,
            patch_stride: 1,
            lbp_radius: lbp.radius,
            lbp_cell: lbp.cell,
            lbp_catch_all: lbp.catch_all_bin,
            lbp_nearest: false,
            dsift_step: dsift.step,
            dsift_bin_size: dsift.bin_size,
            pyramid: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PyramidConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub step: f64,
    pub max_area: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        let p = PyramidParams::default();
        PyramidConfig {
            s_min: p.s_min,
            s_max: p.s_max,
            step: p.step,
            max_area: p.max_area,
        }
    }
}

impl PyramidConfig {
    pub fn params(&self) -> PyramidParams {
        PyramidParams {
            s_min: self.s_min,
            s_max: self.s_max,
            step: self.step,
            max_area: self.max_area,
        }
    }
}

impl DescriptorConfig {
    pub fn extractor(&self) -> Result<DescriptorKind> {
        Ok(match self.kind {
            DescriptorName::Patch => DescriptorKind::Patch {
                size: self.patch_size,
                stride: self.patch_stride,
            },
            DescriptorName::Lbp => DescriptorKind::Lbp(LbpParams {
                radius: self.lbp_radius,
                cell: self.lbp_cell,
                catch_all_bin: self.lbp_catch_all,
                sampling: if self.lbp_nearest {
                    LbpSampling::Nearest
                } else {
                    LbpSampling::Bilinear
                },
                ..LbpParams::default()
            }),
            DescriptorName::Dsift => DescriptorKind::Dsift(DsiftParams {
                step: self.dsift_step,
                bin_size: self.dsift_bin_size,
            }),
            DescriptorName::Mr8 => DescriptorKind::mr8(),
            DescriptorName::Lm => DescriptorKind::lm(&LmParams::default())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    /// Number of visual words or mixture components.
    pub k: usize,
    /// Descriptors drawn from each training image to fit the vocabulary.
    pub samples_per_image: usize,
    /// Optional PCA projection applied before clustering and encoding.
    pub pca_dim: Option<usize>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            k: 64,
            samples_per_image: 1000,
            pca_dim: None,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderName {
    Bovw,
    Kcb,
    Llc,
    Vlad,
    Fv,
}

impl EncoderName {
    pub fn kind(self) -> EncoderKind {
        match self {
            EncoderName::Bovw => EncoderKind::Bovw,
            EncoderName::Kcb => EncoderKind::Kcb,
            EncoderName::Llc => EncoderKind::Llc,
            EncoderName::Vlad => EncoderKind::Vlad,
            EncoderName::Fv => EncoderKind::Fv,
        }
    }

    pub fn uses_gmm(self) -> bool {
        self == EncoderName::Fv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderName,
    pub kcb_lambda: f64,
    pub llc_neighbors: usize,
    /// Spatial pyramid grid `[columns, rows]`; orderless pooling when absent.
    pub spp_grid: Option<[usize; 2]>,
    /// Post-processing overrides; the encoder's usual recipe otherwise.
    pub signed_sqrt: Option<bool>,
    pub intra_norm: Option<bool>,
    pub global_l2: Option<bool>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderName::Fv,
            kcb_lambda: 1.0,
            llc_neighbors: texbank::encoders::LLC_DEFAULT_NEIGHBORS,
            spp_grid: None,
            signed_sqrt: None,
            intra_norm: None,
            global_l2: None,
        }
    }
}

impl EncoderConfig {
    pub fn post(&self) -> PostProcessSpec {
        let base = PostProcessSpec::default_for(self.kind.kind());
        PostProcessSpec {
            signed_sqrt: self.signed_sqrt.unwrap_or(base.signed_sqrt),
            intra_norm: self.intra_norm.unwrap_or(base.intra_norm),
            global_l2: self.global_l2.unwrap_or(base.global_l2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelName {
    Linear,
    Hellinger,
    AdditiveChi2,
    ExpChi2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub kernel: KernelName,
    /// Bandwidth of the exponential chi-squared kernel; estimated from the
    /// training data when absent.
    pub chi2_lambda: Option<f64>,
    pub normalize: bool,
    pub c: f64,
    pub tol: f64,
    /// Map each linear classifier's median scores to +1 / -1.
    pub recalibrate: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let p = SvmParams::default();
        ClassifierConfig {
            kernel: KernelName::Linear,
            chi2_lambda: None,
            normalize: true,
            c: p.c,
            tol: p.tol,
            recalibrate: true,
        }
    }
}

impl ClassifierConfig {
    pub fn svm_params(&self, seed: u64) -> SvmParams {
        SvmParams {
            c: self.c,
            tol: self.tol,
            seed,
            ..SvmParams::default()
        }
    }

    /// `None` for the plain linear classifier.
    pub fn kernel_spec(
        &self,
        lambda: impl FnOnce() -> texbank::Result<f64>,
    ) -> Result<Option<KernelSpec>> {
        let kind = match self.kernel {
            KernelName::Linear => return Ok(None),
            KernelName::Hellinger => KernelKind::Hellinger,
            KernelName::AdditiveChi2 => KernelKind::AdditiveChi2,
            KernelName::ExpChi2 => KernelKind::ExpChi2 {
                lambda: match self.chi2_lambda {
                    Some(l) => l,
                    None => lambda()?,
                },
            },
        };
        let spec = KernelSpec {
            kind,
            normalize: self.normalize,
        };
        spec.validate()?;
        Ok(Some(spec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub divide_by_area: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            divide_by_area: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnosimConfig {
    pub alpha: f64,
    /// Share of images used to estimate attribute co-occurrence; the rest are simulated.
    pub seed_fraction: f64,
    pub votes: usize,
    pub rate: f64,
}

impl Default for AnnosimConfig {
    fn default() -> Self {
        AnnosimConfig {
            alpha: texbank::annosim::DEFAULT_ALPHA,
            seed_fraction: 0.5,
            votes: 5,
            rate: 0.01,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    /// SHA-256 over the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Canonical JSON form of the descriptor section alone, used as a cache key.
    pub fn descriptor_key(&self) -> Vec<u8> {
        serde_json::to_vec(&self.descriptor).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            PipelineConfig::parse("").unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::parse("sed = 1").is_err());
        assert!(PipelineConfig::parse("[vocab]\nkk = 3").is_err());
        assert!(PipelineConfig::parse("[encoder]\nkind = \"fisher\"").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c =
            PipelineConfig::parse("seed = 7\n[vocab]\nk = 16\n[descriptor.pyramid]\ns_max = 0.0")
                .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.vocab.k, 16);
        assert_eq!(c.vocab.samples_per_image, 1000);
        assert_eq!(c.descriptor.pyramid.unwrap().s_min, -3.0);
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.vocab.k = 65;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn post_overrides() {
        let mut e = EncoderConfig::default();
        assert!(e.post().signed_sqrt);
        e.signed_sqrt = Some(false);
        assert!(!e.post().signed_sqrt && e.post().global_l2);
    }
}
