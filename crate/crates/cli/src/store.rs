//! On-disk layout shared by the stages: per-directory JSON indexes,
//! descriptor loading and the optional descriptor cache.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::debug;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use texbank::corpus::{build_pyramid, load_image, ScalePyramid};
use texbank::descriptors::Extractor;
use texbank::{DescriptorField, DescriptorSample};

use crate::config::PipelineConfig;

pub const INDEX_FILE: &str = "index.json";
pub const CACHE_ENV: &str = "TEXBANK_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub id: String,
    pub labels: Vec<String>,
    pub split: String,
    pub width: usize,
    pub height: usize,
    /// Artifact files relative to the index directory.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Index {
    /// Sorted class names.
    pub vocabulary: Vec<String>,
    pub entries: Vec<IndexEntry>,
}

impl Index {
    pub fn load(dir: &Path) -> Result<Index> {
        let path = dir.join(INDEX_FILE);
        let bytes = std::fs::read(&path)
            .with_context(|| format!("missing upstream index {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        texbank::io::write_atomic(dir.join(INDEX_FILE), &bytes)?;
        Ok(())
    }

    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a IndexEntry> + 'a {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Index of the entry's first label in the vocabulary.
    pub fn class_of(&self, entry: &IndexEntry) -> Result<usize> {
        let Some(first) = entry.labels.first() else {
            bail!("entry {} has no label", entry.id);
        };
        self.vocabulary
            .iter()
            .position(|v| v == first)
            .with_context(|| format!("label {first:?} of {} is not in the vocabulary", entry.id))
    }
}

/// A filesystem-friendly identifier for the `i`-th manifest image.
pub fn entry_id(i: usize, image: &Path) -> String {
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let clean: String = stem
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{i:05}_{clean}")
}

pub fn load_sample(dir: &Path, entry: &IndexEntry) -> Result<DescriptorSample> {
    let parts = entry
        .files
        .iter()
        .map(|f| {
            let path = dir.join(f);
            texbank::io::read_descriptor_field(&path)
                .with_context(|| format!("reading {}", path.display()))
                .map(|field| field.to_sample())
        })
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        bail!("entry {} lists no descriptor files", entry.id);
    }
    Ok(DescriptorSample::concat(&parts)?)
}

/// Extracts the descriptor fields of one image, one per pyramid level,
/// consulting `cache` first when set.
pub fn extract_fields(
    image_path: &Path,
    cfg: &PipelineConfig,
    extractor: &dyn Extractor,
    cache: Option<&Path>,
) -> Result<(usize, usize, Vec<DescriptorField>)> {
    let img = load_image(image_path)?;
    let (w, h) = (img.width(), img.height());
    let key = match cache {
        Some(_) => {
            let mut hasher = Sha256::new();
            hasher.update(
                std::fs::read(image_path)
                    .with_context(|| format!("reading {}", image_path.display()))?,
            );
            hasher.update(cfg.descriptor_key());
            Some(hex::encode(hasher.finalize()))
        }
        None => None,
    };
    if let (Some(dir), Some(key)) = (cache, &key) {
        if let Some(fields) = cache_lookup(dir, key)? {
            debug!("cache hit for {}", image_path.display());
            return Ok((w, h, fields));
        }
    }
    let pyramid = match &cfg.descriptor.pyramid {
        Some(p) => build_pyramid(&img, &p.params())?,
        None => ScalePyramid::single(img),
    };
    let fields = pyramid
        .levels()
        .iter()
        .map(|level| {
            let f = extractor
                .extract(&level.image)?
                .with_scale_factor(level.scale);
            // stored fields are single precision; round now so cached and fresh runs agree
            Ok(texbank::io::decode_descriptor_field(
                &texbank::io::encode_descriptor_field(&f)?,
            )?)
        })
        .collect::<Result<Vec<_>>>()
        .with_context(|| format!("extracting descriptors from {}", image_path.display()))?;
    if let (Some(dir), Some(key)) = (cache, &key) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating cache {}", dir.display()))?;
        for (l, f) in fields.iter().enumerate() {
            texbank::io::write_descriptor_field(f, cache_file(dir, key, l))?;
        }
        // the marker goes last so a partial entry is never read back
        texbank::io::write_atomic(
            cache_file(dir, key, fields.len()).with_extension("done"),
            b"",
        )?;
    }
    Ok((w, h, fields))
}

fn cache_file(dir: &Path, key: &str, level: usize) -> PathBuf {
    dir.join(format!("{key}.{level}.txdf"))
}

fn cache_lookup(dir: &Path, key: &str) -> Result<Option<Vec<DescriptorField>>> {
    let done = std::fs::read_dir(dir).ok().and_then(|rd| {
        rd.filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .find(|n| n.starts_with(key) && n.ends_with(".done"))
    });
    let Some(done) = done else {
        return Ok(None);
    };
    let levels: usize = done
        .trim_start_matches(key)
        .trim_start_matches('.')
        .trim_end_matches(".done")
        .parse()
        .context("corrupt cache marker")?;
    let fields = (0..levels)
        .map(|l| Ok(texbank::io::read_descriptor_field(cache_file(dir, key, l))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(fields))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_sanitized_and_ordered() {
        assert_eq!(entry_id(3, Path::new("a/b c.png")), "00003_b_c");
        assert!(entry_id(9, Path::new("z.png")) < entry_id(10, Path::new("a.png")));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = texbank::synth::synth_texture(texbank::synth::SynthClass::Noise, 20, 0);
        let path = dir.path().join("a.png");
        texbank::corpus::save_image(&img, &path).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.descriptor.kind = crate::config::DescriptorName::Patch;
        let ex = cfg.descriptor.extractor().unwrap();
        let cache = dir.path().join("cache");
        let first = extract_fields(&path, &cfg, &ex, Some(&cache)).unwrap();
        assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 2);
        let second = extract_fields(&path, &cfg, &ex, Some(&cache)).unwrap();
        assert_eq!(first.2, second.2);
        assert_eq!(first.2, extract_fields(&path, &cfg, &ex, None).unwrap().2);
    }
}
