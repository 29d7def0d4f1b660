//! One function per subcommand.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use texbank::annosim::{self, GroundTruthMatrix, Strategy};
use texbank::corpus::{load_manifest, save_image};
use texbank::encoders::{postprocess, Encoder, Orderless, SpatialPyramid};
use texbank::io::{self, ModelSection};
use texbank::learn::{self, KernelModel, LinearClassifier};
use texbank::metrics::{self, ApVariant};
use texbank::segment::{greedy_paste, score_proposals, ScoreOptions};
use texbank::synth::{synth_dataset, SynthClass};
use texbank::vocab::{fit_gmm, fit_pca_whitener, kmeans, GmmParams, KmeansParams};
use texbank::{Codebook, DescriptorSample, GmmModel, Matrix, PcaWhitener};

use crate::config::PipelineConfig;
use crate::provenance::{self, Provenance, Upstream};
use crate::store::{self, Index, IndexEntry, CACHE_ENV};
use crate::UserError;

const VOCAB_FILE: &str = "vocab/vocab.txmd";
const MODEL_FILE: &str = "model/classifier.txmd";
const PREDICTIONS_FILE: &str = "predictions.csv";

pub struct Env {
    pub cfg: PipelineConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Env {
    pub fn new(cfg: PipelineConfig, out: PathBuf) -> Result<Env> {
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let hash = cfg.hash();
        Ok(Env { cfg, hash, out })
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn path(&self, given: Option<PathBuf>, default: &str) -> PathBuf {
        given.unwrap_or_else(|| self.out.join(default))
    }

    fn upstream(&self, artifact: &Path) -> Result<Upstream> {
        provenance::upstream(artifact, &self.out)
    }

    fn record(
        &self,
        artifact: &Path,
        command: &str,
        upstream: Vec<Upstream>,
        artifacts: Vec<String>,
    ) -> Result<()> {
        provenance::write(
            artifact,
            &Provenance {
                tool: format!("texbank {}", env!("CARGO_PKG_VERSION")),
                command: command.into(),
                config_hash: self.hash.clone(),
                seed: self.cfg.seed,
                upstream,
                artifacts,
            },
        )
    }
}

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    io::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn synth(env: &Env, per_class: usize, size: usize) -> Result<()> {
    if per_class == 0 {
        return Err(user("--per-class must be positive"));
    }
    let dir = env.dir("images")?;
    let data = synth_dataset(per_class, size, env.cfg.seed);
    let mut manifest = String::from("# image\tlabels\tsplit\n");
    let mut files = Vec::new();
    for (n, (img, c)) in data.iter().enumerate() {
        let i = n / SynthClass::ALL.len();
        let name = format!("{}_{i:03}.png", SynthClass::ALL[*c].name());
        save_image(img, dir.join(&name))?;
        // every third image of a class is held out
        let split = if i % 3 == 2 { "test" } else { "train" };
        manifest.push_str(&format!(
            "images/{name}\t{}\t{split}\n",
            SynthClass::ALL[*c].name()
        ));
        files.push(format!("images/{name}"));
    }
    let path = env.out.join("manifest.tsv");
    io::write_atomic(&path, manifest.as_bytes())?;
    env.record(&path, "synth", vec![], files)?;
    info!("wrote {} images and {}", data.len(), path.display());
    Ok(())
}

pub fn extract(env: &Env, manifest_path: &Path) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    if manifest.entries.is_empty() {
        return Err(user(format!("{} lists no images", manifest_path.display())));
    }
    let extractor = env.cfg.descriptor.extractor()?;
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let dir = env.dir("fields")?;
    info!(
        "extracting {}-D {:?} descriptors from {} images",
        texbank::descriptors::Extractor::dim(&extractor),
        env.cfg.descriptor.kind,
        manifest.entries.len()
    );
    let entries = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let id = store::entry_id(i, &e.image);
            let (width, height, fields) =
                store::extract_fields(&e.image, &env.cfg, &extractor, cache.as_deref())?;
            let mut files = Vec::with_capacity(fields.len());
            for (l, f) in fields.iter().enumerate() {
                let name = format!("{id}.{l}.txdf");
                io::write_descriptor_field(f, dir.join(&name))?;
                files.push(name);
            }
            Ok(IndexEntry {
                id,
                labels: e.labels.clone(),
                split: e.split.to_string(),
                width,
                height,
                files,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = Index {
        vocabulary: manifest.vocabulary.clone(),
        entries,
    };
    index.save(&dir)?;
    env.record(
        &dir,
        "extract",
        vec![env.upstream(manifest_path)?],
        vec![store::INDEX_FILE.into()],
    )?;
    info!("wrote {}", dir.display());
    Ok(())
}

/// The fitted vocabulary: an optional projection plus a codebook or a GMM.
struct Vocabulary {
    whitener: Option<PcaWhitener>,
    codebook: Option<Codebook>,
    gmm: Option<GmmModel>,
}

impl Vocabulary {
    fn from_sections(sections: Vec<ModelSection>) -> Result<Vocabulary> {
        let mut v = Vocabulary {
            whitener: None,
            codebook: None,
            gmm: None,
        };
        for s in sections {
            match s {
                ModelSection::Whitener(w) => v.whitener = Some(w),
                ModelSection::Codebook(c) => v.codebook = Some(c),
                ModelSection::Gmm(g) => v.gmm = Some(g),
                _ => {}
            }
        }
        Ok(v)
    }

    fn load(path: &Path) -> Result<Vocabulary> {
        let sections = io::read_model(path)
            .with_context(|| format!("loading vocabulary {}", path.display()))?;
        Self::from_sections(sections)
    }

    /// The configured orderless encoder, after checking that the vocabulary matches it.
    fn encoder(&self, cfg: &PipelineConfig) -> Result<Orderless<'_>> {
        let e = &cfg.encoder;
        let k = cfg.vocab.k;
        let enc = if e.kind.uses_gmm() {
            let g = self.gmm.as_ref().ok_or_else(|| {
                user("the FV encoder needs a GMM vocabulary; refit with --encoder fv")
            })?;
            if g.len() != k {
                return Err(user(format!(
                    "vocabulary has {} components but K = {k}",
                    g.len()
                )));
            }
            Orderless::Fv(g)
        } else {
            let cb = self.codebook.as_ref().ok_or_else(|| {
                user(format!("the {:?} encoder needs a k-means codebook", e.kind))
            })?;
            if cb.len() != k {
                return Err(user(format!("codebook has {} words but K = {k}", cb.len())));
            }
            match e.kind {
                crate::config::EncoderName::Bovw => Orderless::Bovw(cb),
                crate::config::EncoderName::Kcb => Orderless::Kcb {
                    codebook: cb,
                    lambda: e.kcb_lambda,
                },
                crate::config::EncoderName::Llc => Orderless::Llc {
                    codebook: cb,
                    neighbors: e.llc_neighbors,
                },
                _ => Orderless::Vlad(cb),
            }
        };
        Ok(enc)
    }

    fn prepare(&self, sample: DescriptorSample) -> Result<DescriptorSample> {
        Ok(match &self.whitener {
            Some(w) => w.transform(&sample)?,
            None => sample,
        })
    }
}

/// Fits and writes the vocabulary; returns its path.
pub fn fit_vocab(env: &Env, fields: Option<PathBuf>) -> Result<PathBuf> {
    let fields = env.path(fields, "fields");
    let index = Index::load(&fields)?;
    let train: Vec<&IndexEntry> = index.split("train").collect();
    if train.is_empty() {
        return Err(user(format!("{} has no training images", fields.display())));
    }
    let cfg = &env.cfg;
    let per_image = cfg.vocab.samples_per_image;
    // one random stream per image keeps the draw independent of scheduling
    let rows = train
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let s = store::load_sample(&fields, e)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut idx =
                rand::seq::index::sample(&mut rng, s.len(), per_image.min(s.len())).into_vec();
            idx.sort_unstable();
            Ok(s.subset(&idx).descriptors().clone())
        })
        .collect::<Result<Vec<Matrix>>>()?;
    let dim = rows[0].cols();
    let mut data = Vec::new();
    for m in &rows {
        if m.cols() != dim {
            return Err(user("descriptor dimensions differ between images"));
        }
        data.extend_from_slice(m.as_slice());
    }
    let mut pool = Matrix::from_vec(data.len() / dim, dim, data)?;
    let mut sections = Vec::new();
    if let Some(d) = cfg.vocab.pca_dim {
        let w = fit_pca_whitener(&pool, d)?;
        let projected: Vec<Vec<f64>> = pool.iter_rows().map(|r| w.project(r)).collect();
        pool = Matrix::from_rows(&projected)?;
        sections.push(ModelSection::Whitener(w));
    }
    let k = cfg.vocab.k;
    info!(
        "fitting K = {k} on {} descriptors of dimension {}",
        pool.rows(),
        pool.cols()
    );
    if cfg.encoder.kind.uses_gmm() {
        let fit = fit_gmm(
            &pool,
            &GmmParams {
                k,
                max_iters: cfg.vocab.max_iters,
                tol: cfg.vocab.tol,
                seed: cfg.seed,
            },
        )?;
        info!(
            "GMM converged after {} EM steps",
            fit.log_likelihood_history.len().saturating_sub(1)
        );
        sections.push(ModelSection::Gmm(fit.model));
    } else {
        let fit = kmeans(
            &pool,
            &KmeansParams {
                k,
                max_iters: cfg.vocab.max_iters,
                seed: cfg.seed,
            },
        )?;
        sections.push(ModelSection::Codebook(fit.codebook));
    }
    env.dir("vocab")?;
    let path = env.out.join(VOCAB_FILE);
    io::write_model(&sections, &path)?;
    env.record(&path, "fit-vocab", vec![env.upstream(&fields)?], vec![])?;
    info!("wrote {}", path.display());
    Ok(path)
}

pub fn encode(env: &Env, fields: Option<PathBuf>, vocab: Option<PathBuf>) -> Result<()> {
    let fields = env.path(fields, "fields");
    let index = Index::load(&fields)?;
    let vocab_path = match vocab {
        Some(p) => p,
        None if env.out.join(VOCAB_FILE).exists() => env.out.join(VOCAB_FILE),
        None => fit_vocab(env, Some(fields.clone()))?,
    };
    let vocab = Vocabulary::load(&vocab_path)?;
    let base = vocab.encoder(&env.cfg)?;
    let post = env.cfg.encoder.post();
    let grid = env.cfg.encoder.spp_grid;
    let dim = grid.map_or(1, |[gx, gy]| gx * gy) * base.dim();
    info!(
        "encoding {} images into {dim}-D {:?} vectors",
        index.entries.len(),
        base.kind()
    );
    let dir = env.dir("encoded")?;
    let entries = index
        .entries
        .par_iter()
        .map(|e| {
            let sample = vocab.prepare(store::load_sample(&fields, e)?)?;
            let v = match grid {
                Some([gx, gy]) => SpatialPyramid {
                    base: &base,
                    grid: (gx, gy),
                    image_size: (e.width, e.height),
                }
                .encode(&sample),
                None => base.encode(&sample),
            }
            .with_context(|| format!("encoding {}", e.id))?;
            let v = postprocess(&v, &post)?;
            if v.dim() != dim {
                bail!(
                    "internal: {} produced {} values, expected {dim}",
                    e.id,
                    v.dim()
                );
            }
            let name = format!("{}.txev", e.id);
            io::write_vector(&v, dir.join(&name))?;
            Ok(IndexEntry {
                files: vec![name],
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Index {
        vocabulary: index.vocabulary,
        entries,
    }
    .save(&dir)?;
    let upstream = vec![env.upstream(&fields)?, env.upstream(&vocab_path)?];
    env.record(&dir, "encode", upstream, vec![store::INDEX_FILE.into()])?;
    info!("wrote {}", dir.display());
    Ok(())
}

fn load_vectors(dir: &Path, entries: &[&IndexEntry]) -> Result<Matrix> {
    let rows = entries
        .par_iter()
        .map(|e| {
            let f = e
                .files
                .first()
                .ok_or_else(|| user(format!("{} lists no vector", e.id)))?;
            Ok(io::read_vector(dir.join(f))?.values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_rows(&rows)?)
}

pub fn train(env: &Env, encoded: Option<PathBuf>) -> Result<()> {
    let encoded = env.path(encoded, "encoded");
    let index = Index::load(&encoded)?;
    let train: Vec<&IndexEntry> = index.split("train").collect();
    if train.is_empty() {
        return Err(user(format!(
            "{} has no training vectors",
            encoded.display()
        )));
    }
    let x = load_vectors(&encoded, &train)?;
    let labels = train
        .iter()
        .map(|e| index.class_of(e))
        .collect::<Result<Vec<_>>>()?;
    let cfg = &env.cfg.classifier;
    let params = cfg.svm_params(env.cfg.seed);
    info!(
        "training {} one-vs-all classifiers on {} vectors of dimension {}",
        index.vocabulary.len(),
        x.rows(),
        x.cols()
    );
    let section = match cfg.kernel_spec(|| learn::estimate_chi2_lambda(&x))? {
        None => {
            let mut clf = learn::train_linear_svm_ova(&x, &labels, &index.vocabulary, &params)?;
            if cfg.recalibrate {
                clf = learn::recalibrate(&clf, &x, &labels)?;
            }
            ModelSection::Classifier(clf)
        }
        Some(spec) => {
            if cfg.recalibrate {
                warn!("recalibration applies to linear classifiers only; skipped");
            }
            ModelSection::KernelModel(KernelModel::fit(
                &x,
                &labels,
                &index.vocabulary,
                &spec,
                &params,
            )?)
        }
    };
    env.dir("model")?;
    let path = env.out.join(MODEL_FILE);
    io::write_model(&[section], &path)?;
    env.record(&path, "train", vec![env.upstream(&encoded)?], vec![])?;
    info!("wrote {}", path.display());
    Ok(())
}

enum Classifier {
    Linear(LinearClassifier),
    Kernel(KernelModel),
}

impl Classifier {
    fn load(path: &Path) -> Result<Classifier> {
        let sections = io::read_model(path)
            .with_context(|| format!("loading classifier {}", path.display()))?;
        for s in sections {
            match s {
                ModelSection::Classifier(c) => return Ok(Classifier::Linear(c)),
                ModelSection::KernelModel(k) => return Ok(Classifier::Kernel(k)),
                _ => {}
            }
        }
        Err(user(format!("{} holds no classifier", path.display())))
    }

    fn labels(&self) -> &[String] {
        match self {
            Classifier::Linear(c) => &c.labels,
            Classifier::Kernel(k) => &k.labels,
        }
    }

    fn scores(&self, x: &Matrix) -> Result<Matrix> {
        Ok(match self {
            Classifier::Linear(c) => {
                let rows = x
                    .iter_rows()
                    .map(|r| c.scores(r))
                    .collect::<texbank::Result<Vec<_>>>()?;
                Matrix::from_rows(&rows)?
            }
            Classifier::Kernel(k) => k.scores(x)?,
        })
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

pub fn predict(
    env: &Env,
    encoded: Option<PathBuf>,
    model: Option<PathBuf>,
    split: &str,
) -> Result<()> {
    if !["train", "val", "test", "all"].contains(&split) {
        return Err(user(format!("unknown split {split:?}")));
    }
    let encoded = env.path(encoded, "encoded");
    let model_path = env.path(model, MODEL_FILE);
    let index = Index::load(&encoded)?;
    let clf = Classifier::load(&model_path)?;
    let entries: Vec<&IndexEntry> = index
        .entries
        .iter()
        .filter(|e| split == "all" || e.split == split)
        .collect();
    if entries.is_empty() {
        return Err(user(format!("no {split} vectors in {}", encoded.display())));
    }
    let x = load_vectors(&encoded, &entries)?;
    let s = clf.scores(&x)?;
    let labels = clf.labels();
    let mut header = vec!["id".to_string(), "truth".into(), "prediction".into()];
    header.extend(labels.iter().map(|l| format!("score:{l}")));
    let rows: Vec<Vec<String>> = entries
        .iter()
        .zip(s.iter_rows())
        .map(|(e, sc)| {
            let mut r = vec![
                e.id.clone(),
                e.labels.first().cloned().unwrap_or_default(),
                labels[argmax(sc)].clone(),
            ];
            r.extend(sc.iter().map(|v| v.to_string()));
            r
        })
        .collect();
    let path = env.out.join(PREDICTIONS_FILE);
    write_csv(&path, &header, &rows)?;
    let upstream = vec![env.upstream(&encoded)?, env.upstream(&model_path)?];
    env.record(&path, "predict", upstream, vec![])?;
    info!("wrote {} predictions to {}", rows.len(), path.display());
    Ok(())
}

pub fn evaluate(env: &Env, predictions: Option<PathBuf>, allow_mismatch: bool) -> Result<()> {
    let path = env.path(predictions, PREDICTIONS_FILE);
    match provenance::read(&path)? {
        Some(record) => {
            let bad = provenance::lineage_mismatches(&record, &env.hash);
            if !bad.is_empty() {
                let msg = format!(
                    "lineage mismatch with the current config {}: {}",
                    env.hash,
                    bad.join("; ")
                );
                if !allow_mismatch {
                    return Err(user(format!(
                        "{msg} (pass --allow-lineage-mismatch to evaluate anyway)"
                    )));
                }
                warn!("{msg}");
            }
        }
        None => warn!(
            "{} has no provenance record; lineage not checked",
            path.display()
        ),
    }
    let mut reader =
        csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(ti), Some(pi)) = (col("truth"), col("prediction")) else {
        return Err(user(format!(
            "{} needs truth and prediction columns",
            path.display()
        )));
    };
    let score_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("score:").map(|c| (i, c.to_string())))
        .collect();
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    let mut scores = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let t = rec.get(ti).unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        truth.push(t.to_string());
        pred.push(rec.get(pi).unwrap_or("").trim().to_string());
        let s = score_cols
            .iter()
            .map(|(i, c)| {
                rec.get(*i)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map_err(|_| user(format!("bad score for class {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        scores.push(s);
    }
    if truth.is_empty() {
        return Err(user(format!("{} has no labelled rows", path.display())));
    }
    let classes: Vec<String> = truth
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let id = |l: &str| classes.iter().position(|c| c == l).unwrap_or(classes.len());
    let t: Vec<usize> = truth.iter().map(|l| id(l)).collect();
    let p: Vec<usize> = pred.iter().map(|l| id(l)).collect();
    let accuracy = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64;
    let mut report = vec![
        ("items".to_string(), t.len() as f64),
        ("accuracy".into(), accuracy),
        (
            "per_class_accuracy".into(),
            metrics::per_class_accuracy(&t, &p, classes.len())?,
        ),
    ];
    if !score_cols.is_empty() {
        for (variant, name) in [
            (ApVariant::Pascal08, "map"),
            (ApVariant::ElevenPoint, "map_11pt"),
        ] {
            let mut aps = Vec::new();
            for (j, (_, c)) in score_cols.iter().enumerate() {
                let positive: Vec<bool> = truth.iter().map(|l| l == c).collect();
                if !positive.contains(&true) {
                    continue;
                }
                let s: Vec<f64> = scores.iter().map(|r| r[j]).collect();
                aps.push(metrics::average_precision(&s, &positive, variant)?);
            }
            if !aps.is_empty() {
                report.push((name.into(), aps.iter().sum::<f64>() / aps.len() as f64));
            }
        }
    }
    for (k, v) in &report {
        println!("{k}\t{v}");
    }
    let out = env.out.join("report.csv");
    let rows: Vec<Vec<String>> = report
        .iter()
        .map(|(k, v)| vec![k.clone(), v.to_string()])
        .collect();
    write_csv(&out, &["metric".into(), "value".into()], &rows)?;
    env.record(&out, "evaluate", vec![env.upstream(&path)?], vec![])?;
    Ok(())
}

pub fn segment(
    env: &Env,
    image: &Path,
    proposals: &Path,
    vocab: Option<PathBuf>,
    model: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
) -> Result<()> {
    let vocab_path = env.path(vocab, VOCAB_FILE);
    let model_path = env.path(model, MODEL_FILE);
    let vocab = Vocabulary::load(&vocab_path)?;
    let encoder = vocab.encoder(&env.cfg)?;
    let Classifier::Linear(clf) = Classifier::load(&model_path)? else {
        return Err(user("segmentation needs a linear classifier"));
    };
    let extractor = env.cfg.descriptor.extractor()?;
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let (w, h, fields) = store::extract_fields(image, &env.cfg, &extractor, cache.as_deref())?;
    let parts: Vec<DescriptorSample> = fields.iter().map(|f| f.to_sample()).collect();
    let sample = vocab.prepare(DescriptorSample::concat(&parts)?)?;
    let text = std::fs::read_to_string(proposals)
        .with_context(|| format!("reading {}", proposals.display()))?;
    let regions = io::parse_rle_proposals(&text, w, h)?;
    let masks: Vec<_> = regions.iter().map(|(_, m)| m.clone()).collect();
    let opts = ScoreOptions {
        post: env.cfg.encoder.post(),
        divide_by_area: env.cfg.segment.divide_by_area,
    };
    let scored = score_proposals(&masks, &sample, &encoder, &clf, &opts)?;
    let result = greedy_paste(&scored, w, h)?;
    let dir = env.dir("segment")?;
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let map_path = dir.join(format!("{stem}.pgm"));
    io::write_label_map(&result.labels, &map_path)?;
    let rows: Vec<Vec<String>> = scored
        .iter()
        .map(|p| {
            vec![
                regions[p.index].0.to_string(),
                (p.class + 1).to_string(),
                clf.labels[p.class].clone(),
                p.score.to_string(),
            ]
        })
        .collect();
    let table = dir.join(format!("{stem}.csv"));
    let header = ["region", "label", "class", "score"].map(String::from);
    write_csv(&table, &header, &rows)?;
    let upstream = vec![
        env.upstream(image)?,
        env.upstream(proposals)?,
        env.upstream(&vocab_path)?,
        env.upstream(&model_path)?,
    ];
    env.record(
        &map_path,
        "segment",
        upstream,
        vec![table.display().to_string()],
    )?;
    info!(
        "{} of {} proposals scored; wrote {}",
        scored.len(),
        masks.len(),
        map_path.display()
    );
    if let Some(gt) = ground_truth {
        let gt = io::read_label_map(&gt)?;
        println!(
            "pixel_accuracy\t{}",
            metrics::pixel_accuracy(&result.labels, &gt, false)?
        );
        println!(
            "per_class_pixel_accuracy\t{}",
            metrics::pixel_accuracy(&result.labels, &gt, true)?
        );
    }
    Ok(())
}

/// Image ids, attribute names, key attribute per image and the 0/1 matrix.
type AttributeTable = (Vec<String>, Vec<String>, Vec<usize>, Vec<Vec<bool>>);

fn read_attribute_table(path: &Path) -> Result<AttributeTable> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "image" || &header[1] != "key" {
        return Err(user(format!(
            "{}: header must be image,key,<attributes>",
            path.display()
        )));
    }
    let attrs: Vec<String> = header.iter().skip(2).map(String::from).collect();
    let (mut ids, mut keys, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let key = attrs
            .iter()
            .position(|a| a == &rec[1])
            .ok_or_else(|| user(format!("line {line}: unknown key attribute {:?}", &rec[1])))?;
        let row = rec
            .iter()
            .skip(2)
            .map(|c| match c.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(user(format!("line {line}: expected 0 or 1, got {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(rec[0].to_string());
        keys.push(key);
        rows.push(row);
    }
    Ok((ids, attrs, keys, rows))
}

fn read_score_table(path: &Path, attrs: &[String], ids: &[String]) -> Result<Matrix> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.clone();
    if header.iter().skip(1).ne(attrs.iter().map(String::as_str)) {
        return Err(user("score table attributes differ from the ground truth"));
    }
    let mut by_id = std::collections::HashMap::new();
    for rec in r.records() {
        let rec = rec?;
        let v = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| user(format!("bad score {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        by_id.insert(rec[0].to_string(), v);
    }
    let rows = ids
        .iter()
        .map(|id| {
            by_id
                .remove(id)
                .ok_or_else(|| user(format!("no scores for image {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_rows(&rows)?)
}

pub fn annosim(
    env: &Env,
    ground_truth: &Path,
    scores: Option<&Path>,
    budgets: Option<Vec<usize>>,
) -> Result<()> {
    let cfg = &env.cfg.annosim;
    if !(0.0..1.0).contains(&cfg.seed_fraction) || cfg.seed_fraction == 0.0 {
        return Err(user("annosim.seed_fraction must lie in (0, 1)"));
    }
    let (ids, attrs, keys, rows) = read_attribute_table(ground_truth)?;
    let q = attrs.len();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(env.cfg.seed));
    if ids.len() < 2 {
        return Err(user(
            "need at least two images to split into seed and evaluation sets",
        ));
    }
    let cut = ((ids.len() as f64 * cfg.seed_fraction).round() as usize).clamp(1, ids.len() - 1);
    let (seed_idx, eval_idx) = order.split_at(cut);
    let subset = |idx: &[usize]| {
        GroundTruthMatrix::new(
            q,
            idx.iter().map(|&i| rows[i].clone()).collect(),
            idx.iter().map(|&i| keys[i]).collect(),
        )
    };
    let model = annosim::estimate_cooccurrence(&subset(seed_idx)?, cfg.alpha)?;
    let eval = subset(eval_idx)?;
    let score_matrix = match scores {
        Some(p) => {
            let eval_ids: Vec<String> = eval_idx.iter().map(|&i| ids[i].clone()).collect();
            Some(read_score_table(p, &attrs, &eval_ids)?)
        }
        None => None,
    };
    let strategy = match &score_matrix {
        Some(m) => Strategy::Posterior(m),
        None => Strategy::Prior,
    };
    let budgets = budgets.unwrap_or_else(|| (0..q).collect());
    let curve = annosim::budget_curve(&eval, &model, &budgets, strategy)?;
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|r| {
            vec![
                r.budget.to_string(),
                r.mean_recall.to_string(),
                r.fully_recovered.to_string(),
            ]
        })
        .collect();
    let path = env.out.join("annosim.csv");
    let header = ["budget", "mean_recall", "fully_recovered"].map(String::from);
    write_csv(&path, &header, &rows)?;
    let mut upstream = vec![env.upstream(ground_truth)?];
    if let Some(p) = scores {
        upstream.push(env.upstream(p)?);
    }
    env.record(&path, "annosim", upstream, vec![])?;
    let cost = annosim::annotation_cost(ids.len(), q, cfg.votes, cfg.rate)?;
    info!(
        "{} seed / {} simulated images; exhaustive annotation would cost {cost:.2}",
        seed_idx.len(),
        eval_idx.len()
    );
    info!("wrote {}", path.display());
    Ok(())
}
