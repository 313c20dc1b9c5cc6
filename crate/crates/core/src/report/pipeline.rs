use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tables::{
    create_dir, csv_io, emit_report, write_json, AnalysisKind, AnalysisResults, ClassificationScore, HeatmapRow,
    ReportFormat, RunResults, SkippedCell,
};
use super::{ClusteringParams, RunConfig};
use crate::aligner::{monotone_align, normalize_rows, project_with_survivors};
use crate::corpus_io::{
    encode_shared, load_manifest, read_embeddings, read_labels, read_similarity, write_embeddings, write_labels,
    write_similarity, CorpusManifest, DocumentEntry, Partition, PipelineType, SentenceEmbeddingSequence,
    SimilarityMatrix, TextVersion,
};
use crate::downstream::{agreement_table, macro_f1, mcc, spherical_kmeans, KMeansParams};
use crate::error::{Error, Result};
use crate::inference::{analyze, kappa_sweep, BootstrapParams, HypothesisSpec, InferenceSettings};
use crate::pooler::{pool_with_pagerank, PageRankParams};
use crate::segmenter::{segment_document_with, Segmentation, SegmenterParams};
use crate::simcorr::{
    correlation_table, pair_type_means, read_observations_file, similarity_matrix, write_observations, ConfigMeta,
    PairObservation,
};

/// Derives an order-independent seed from a root seed and a path of labels.
pub fn stage_seed(root: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn context<'a>(language: &'a str, document: Option<&str>, stage: &'static str) -> impl Fn(Error) -> Error + 'a {
    let document = document.map(str::to_string);
    move |e| match e {
        Error::Stage { .. } => e,
        other => other.in_stage(language, document.as_deref(), stage),
    }
}

fn load_embedding(manifest: &CorpusManifest, doc: &DocumentEntry, config: &str) -> Result<SentenceEmbeddingSequence> {
    let path = doc.embeddings.get(config).ok_or_else(|| Error::DanglingConfig {
        document: doc.document_id.clone(),
        config: config.to_string(),
    })?;
    read_embeddings(manifest.resolve(path))
}

fn originals<'a>(manifest: &'a CorpusManifest, language: &'a str) -> Vec<&'a DocumentEntry> {
    let mut docs: Vec<&DocumentEntry> = manifest.documents_of(language, TextVersion::Original).collect();
    docs.sort_by(|a, b| a.document_id.cmp(&b.document_id));
    docs
}

fn document<'a>(manifest: &'a CorpusManifest, id: &str) -> Result<&'a DocumentEntry> {
    manifest
        .documents
        .iter()
        .find(|d| d.document_id == id)
        .ok_or_else(|| Error::InvalidManifest(format!("unknown document `{id}`")))
}

pub fn config_meta(manifest: &CorpusManifest, language: &str) -> Result<BTreeMap<String, ConfigMeta>> {
    manifest
        .language_configs(language)
        .into_iter()
        .map(|c| {
            Ok((
                c.config_id.clone(),
                ConfigMeta::new(&c.config_id, c.pipeline_type()?, c.model_id()),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSegmentation {
    pub document_id: String,
    pub n: usize,
    pub change_points: Vec<usize>,
    pub penalty_used: f64,
    pub objective: f64,
}

impl DocumentSegmentation {
    pub fn segmentation(&self) -> Result<Segmentation> {
        Segmentation::new(self.change_points.clone(), self.n, self.penalty_used, self.objective)
    }
}

/// Segments every original document of `language` with its segmentation config.
pub fn segment_stage(
    manifest: &CorpusManifest,
    language: &str,
    params: &SegmenterParams,
) -> Result<Vec<DocumentSegmentation>> {
    let config = manifest
        .segmentation_config(language)
        .ok_or_else(|| Error::InvalidManifest(format!("no original-text config to segment `{language}`")))
        .map_err(context(language, None, "segment"))?;
    originals(manifest, language)
        .par_iter()
        .map(|doc| {
            let run = || -> Result<DocumentSegmentation> {
                let seq = load_embedding(manifest, doc, &config)?;
                let seg = segment_document_with(&seq, params)?;
                Ok(DocumentSegmentation {
                    document_id: doc.document_id.clone(),
                    n: seg.n,
                    change_points: seg.change_points,
                    penalty_used: seg.penalty_used,
                    objective: seg.objective,
                })
            };
            run().map_err(context(language, Some(&doc.document_id), "segment"))
        })
        .collect()
}

/// An original document, its translation, the sentence alignment between
/// them, and the paragraph boundaries that survive on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentAlignment {
    pub original: String,
    pub translation: Option<String>,
    pub source_len: usize,
    pub target_len: usize,
    pub total_score: Option<f64>,
    /// `[source_start, source_end, target_start, target_end]` per link.
    pub links: Vec<[usize; 4]>,
    pub source_change_points: Vec<usize>,
    pub target_change_points: Vec<usize>,
}

impl DocumentAlignment {
    pub fn n_paragraphs(&self) -> usize {
        self.source_change_points.len() + 1
    }

    fn segmentation(&self, version: TextVersion) -> Result<(&str, Segmentation)> {
        match version {
            TextVersion::Original => Ok((
                &self.original,
                Segmentation::new(self.source_change_points.clone(), self.source_len, f64::NAN, f64::NAN)?,
            )),
            TextVersion::Translated => {
                let t = self.translation.as_deref().ok_or_else(|| {
                    Error::InvalidManifest(format!("original `{}` has no translation", self.original))
                })?;
                Ok((
                    t,
                    Segmentation::new(self.target_change_points.clone(), self.target_len, f64::NAN, f64::NAN)?,
                ))
            }
        }
    }
}

/// Aligns each original with its translation and projects its segmentation.
/// Source boundaries that collapse in projection are dropped on both sides,
/// so paragraph `k` of a translation always pairs with paragraph `k` of its
/// original. Without translated-text configs the source is kept as is.
pub fn align_stage(
    manifest: &CorpusManifest,
    language: &str,
    segmentations: &[DocumentSegmentation],
    gap_penalty: f64,
) -> Result<Vec<DocumentAlignment>> {
    let needs_target = manifest
        .language_configs(language)
        .iter()
        .any(|c| c.applied_to == TextVersion::Translated);
    let configs = if needs_target {
        Some(
            manifest
                .alignment_configs(language)
                .ok_or_else(|| Error::InvalidManifest(format!("no alignment configs for `{language}`")))
                .map_err(context(language, None, "align"))?,
        )
    } else {
        None
    };
    segmentations
        .par_iter()
        .map(|s| {
            let run = || -> Result<DocumentAlignment> {
                let seg = s.segmentation()?;
                let Some(configs) = &configs else {
                    return Ok(DocumentAlignment {
                        original: s.document_id.clone(),
                        translation: None,
                        source_len: s.n,
                        target_len: 0,
                        total_score: None,
                        links: Vec::new(),
                        source_change_points: seg.change_points,
                        target_change_points: Vec::new(),
                    });
                };
                let orig = document(manifest, &s.document_id)?;
                let trans = manifest.translation_of(&s.document_id).ok_or_else(|| {
                    Error::InvalidManifest(format!("original `{}` has no translation", s.document_id))
                })?;
                let src = normalize_rows(&load_embedding(manifest, orig, &configs.source)?)?;
                let tgt = normalize_rows(&load_embedding(manifest, trans, &configs.target)?)?;
                if src.len() != s.n {
                    return Err(Error::InconsistentLengths(format!(
                        "segmentation covers {} sentences, `{}` embeddings have {}",
                        s.n,
                        configs.source,
                        src.len()
                    )));
                }
                let map = monotone_align(&src, &tgt, gap_penalty)?;
                let proj = project_with_survivors(&seg, &map)?;
                Ok(DocumentAlignment {
                    original: s.document_id.clone(),
                    translation: Some(trans.document_id.clone()),
                    source_len: map.source_len,
                    target_len: map.target_len,
                    total_score: Some(map.total_score),
                    links: map
                        .links
                        .iter()
                        .map(|l| [l.source.start, l.source.end, l.target.start, l.target.end])
                        .collect(),
                    source_change_points: proj.source_kept,
                    target_change_points: proj.target.change_points,
                })
            };
            run().map_err(context(language, Some(&s.document_id), "align"))
        })
        .collect()
}

/// Paragraph vectors of one language: every config, documents concatenated
/// in original-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledLanguage {
    pub language: String,
    /// `<original id>:<paragraph index>` for each row.
    pub item_ids: Vec<String>,
    pub paragraphs: BTreeMap<String, SentenceEmbeddingSequence>,
}

pub fn pool_stage(
    manifest: &CorpusManifest,
    language: &str,
    alignments: &[DocumentAlignment],
    pagerank: &PageRankParams,
) -> Result<PooledLanguage> {
    let item_ids = alignments
        .iter()
        .flat_map(|a| (0..a.n_paragraphs()).map(move |k| format!("{}:{k}", a.original)))
        .collect();
    let paragraphs = manifest
        .language_configs(language)
        .par_iter()
        .map(|c| {
            let mut data = Vec::new();
            let mut dim = 0;
            for a in alignments {
                let (doc_id, seg) =
                    a.segmentation(c.applied_to)
                        .map_err(context(language, Some(&a.original), "pool"))?;
                let run = || -> Result<SentenceEmbeddingSequence> {
                    let seq = load_embedding(manifest, document(manifest, doc_id)?, &c.config_id)?;
                    Ok(pool_with_pagerank(&seq, &seg, pagerank)?.vectors)
                };
                let pooled = run().map_err(context(language, Some(doc_id), "pool"))?;
                if dim != 0 && pooled.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        left: dim,
                        right: pooled.dim(),
                    })
                    .map_err(context(language, Some(doc_id), "pool"));
                }
                dim = pooled.dim();
                // Held at storage precision so that stages rerun from the
                // persisted paragraphs reproduce the same numbers.
                data.extend(pooled.as_slice().iter().map(|&v| v as f32 as f64));
            }
            let seq = SentenceEmbeddingSequence::new(language, c.config_id.clone(), dim, data)
                .map_err(context(language, None, "pool"))?;
            Ok((c.config_id.clone(), seq))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(PooledLanguage {
        language: language.to_string(),
        item_ids,
        paragraphs,
    })
}

pub fn similarity_stage(pooled: &PooledLanguage) -> Result<Vec<SimilarityMatrix>> {
    pooled
        .paragraphs
        .values()
        .map(|seq| similarity_matrix(&pooled.language, seq).map_err(context(&pooled.language, None, "simmat")))
        .collect()
}

pub fn correlate_stage(
    language: &str,
    matrices: &[SimilarityMatrix],
    meta: &BTreeMap<String, ConfigMeta>,
) -> Result<Vec<PairObservation>> {
    let (obs, dropped) = correlation_table(language, matrices, meta).map_err(context(language, None, "correlate"))?;
    for d in dropped {
        warn!(
            "{language}: dropped pair ({}, {}): {}",
            d.config_a, d.config_b, d.reason
        );
    }
    Ok(obs)
}

/// Spherical k-means partition of every config's paragraphs, with
/// `k = min(params.k, n / 2)`.
pub fn cluster_stage(
    pooled: &PooledLanguage,
    params: &ClusteringParams,
    seed: u64,
) -> Result<BTreeMap<String, Partition>> {
    let language = pooled.language.as_str();
    let n = pooled.item_ids.len();
    let k = params.k.min(n / 2);
    if k < 2 {
        return Err(Error::TooFewObservations { needed: 4, found: n }).map_err(context(language, None, "cluster"));
    }
    pooled
        .paragraphs
        .par_iter()
        .map(|(config, seq)| {
            let km = KMeansParams {
                k,
                restarts: params.restarts,
                max_iter: params.max_iter,
                seed: stage_seed(seed, &["kmeans", language, config]),
            };
            let res = spherical_kmeans(seq, &km).map_err(context(language, None, "cluster"))?;
            Ok((config.clone(), res.partition))
        })
        .collect()
}

fn classification_stage(
    manifest: &CorpusManifest,
    language: &str,
    meta: &BTreeMap<String, ConfigMeta>,
) -> Result<Option<(Vec<PairObservation>, Vec<ClassificationScore>)>> {
    let Some(inputs) = &manifest.downstream else {
        return Ok(None);
    };
    let Some(pred_files) = inputs.predictions.get(language) else {
        return Ok(None);
    };
    let gold = inputs
        .gold_labels
        .get(language)
        .map(|p| read_labels(manifest.resolve(p)))
        .transpose()?;
    let preds = pred_files
        .iter()
        .map(|(c, p)| Ok((c.clone(), read_labels(manifest.resolve(p))?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let items: Vec<String> = match (&gold, preds.values().next()) {
        (Some(g), _) => g.item_ids.clone(),
        (None, Some(p)) => p.item_ids.clone(),
        (None, None) => return Ok(None),
    };
    let aligned = |config: &str, l: &crate::corpus_io::LabeledItems| -> Result<Vec<String>> {
        let by_id: BTreeMap<&str, &str> = l
            .item_ids
            .iter()
            .map(String::as_str)
            .zip(l.labels.iter().map(String::as_str))
            .collect();
        items
            .iter()
            .map(|id| {
                by_id.get(id.as_str()).map(|s| s.to_string()).ok_or_else(|| {
                    Error::SizeMismatch(format!("predictions of `{config}` have no label for item `{id}`"))
                })
            })
            .collect()
    };
    let labels: BTreeMap<String, Vec<String>> = preds
        .iter()
        .map(|(c, l)| Ok((c.clone(), aligned(c, l)?)))
        .collect::<Result<_>>()?;
    let mut sets: Vec<&[String]> = labels.values().map(Vec::as_slice).collect();
    let gold_labels = gold.as_ref().map(|g| aligned("gold", g)).transpose()?;
    if let Some(g) = &gold_labels {
        sets.push(g);
    }
    let (encoded, _) = encode_shared(&sets);
    let partitions: BTreeMap<String, Partition> = labels
        .keys()
        .zip(&encoded)
        .map(|(c, e)| (c.clone(), Partition::new(e.clone())))
        .collect();
    let obs = agreement_table(language, &partitions, meta)?;
    let mut scores = Vec::new();
    if gold_labels.is_some() {
        let g = encoded.last().expect("gold encoded last");
        for (c, e) in labels.keys().zip(&encoded) {
            scores.push(ClassificationScore {
                language: language.to_string(),
                config_id: c.clone(),
                macro_f1: macro_f1(g, e)?,
                mcc: mcc(g, e)?,
            });
        }
    }
    Ok(Some((obs, scores)))
}

fn reduced_stage(
    manifest: &CorpusManifest,
    language: &str,
    meta: &BTreeMap<String, ConfigMeta>,
) -> Result<Option<Vec<PairObservation>>> {
    let Some(files) = manifest
        .downstream
        .as_ref()
        .and_then(|d| d.reduced_similarity.get(language))
    else {
        return Ok(None);
    };
    let matrices = files
        .iter()
        .map(|(c, p)| read_similarity(manifest.resolve(p), language, c))
        .collect::<Result<Vec<_>>>()?;
    let (obs, dropped) = correlation_table(language, &matrices, meta)?;
    for d in dropped {
        warn!(
            "{language} (reduced): dropped pair ({}, {}): {}",
            d.config_a, d.config_b, d.reason
        );
    }
    Ok(Some(obs))
}

/// Cache record of a language's pre-inference stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageStage {
    pub language: String,
    pub key: String,
    pub n_paragraphs: usize,
    pub analyses: Vec<AnalysisKind>,
    pub classification_scores: Vec<ClassificationScore>,
}

fn observation_path(lang_dir: &Path, kind: AnalysisKind) -> PathBuf {
    match kind {
        AnalysisKind::Similarity => lang_dir.join("correlations.csv"),
        AnalysisKind::Clustering => lang_dir.join("clustering").join("agreement.csv"),
        AnalysisKind::Classification => lang_dir.join("classification").join("agreement.csv"),
        AnalysisKind::Reduced => lang_dir.join("reduced").join("correlations.csv"),
    }
}

fn write_observation_file(path: &Path, obs: &[PairObservation], kind: AnalysisKind) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_observations(std::io::BufWriter::new(file), obs, kind.value_column())
}

type Observations = BTreeMap<AnalysisKind, Vec<PairObservation>>;

/// Reads a language's cached stage record and observation tables.
pub fn load_language_stage(
    lang_dir: &Path,
    types: &BTreeMap<String, PipelineType>,
) -> Result<(LanguageStage, Observations)> {
    let path = lang_dir.join("stage.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let stage: LanguageStage = serde_json::from_str(&text)?;
    let mut obs = BTreeMap::new();
    for &kind in &stage.analyses {
        obs.insert(
            kind,
            read_observations_file(&observation_path(lang_dir, kind), Some(types))?,
        );
    }
    Ok((stage, obs))
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    language: &'a str,
    segmenter: &'a SegmenterParams,
    gap_penalty: f64,
    pagerank: &'a PageRankParams,
    clustering: &'a Option<ClusteringParams>,
    seed: u64,
    segmentation_config: Option<String>,
    alignment: Option<crate::corpus_io::AlignmentConfigs>,
    configs: Vec<&'a crate::corpus_io::ConfigEntry>,
    documents: Vec<&'a DocumentEntry>,
    downstream: (
        Option<&'a PathBuf>,
        Option<&'a BTreeMap<String, PathBuf>>,
        Option<&'a BTreeMap<String, PathBuf>>,
    ),
}

/// Content hash of everything a language's pre-inference stages read.
/// `None` when a referenced file cannot be read; the stages then run and
/// report the failure themselves.
fn stage_key(manifest: &CorpusManifest, language: &str, config: &RunConfig) -> Option<String> {
    let ds = manifest.downstream.as_ref();
    let material = KeyMaterial {
        language,
        segmenter: &config.segmenter,
        gap_penalty: config.gap_penalty,
        pagerank: &config.pagerank,
        clustering: &config.clustering,
        seed: config.seed,
        segmentation_config: manifest.segmentation_config(language),
        alignment: manifest.alignment_configs(language),
        configs: manifest.language_configs(language),
        documents: manifest.documents.iter().filter(|d| d.language == language).collect(),
        downstream: (
            ds.and_then(|d| d.gold_labels.get(language)),
            ds.and_then(|d| d.predictions.get(language)),
            ds.and_then(|d| d.reduced_similarity.get(language)),
        ),
    };
    let mut h = Sha256::new();
    h.update(b"stage-v1\0");
    h.update(serde_json::to_vec(&material).ok()?);
    let mut files: Vec<&PathBuf> = material.documents.iter().flat_map(|d| d.embeddings.values()).collect();
    files.extend(material.downstream.0);
    files.extend(material.downstream.1.into_iter().flat_map(|m| m.values()));
    files.extend(material.downstream.2.into_iter().flat_map(|m| m.values()));
    for f in files {
        let bytes = fs::read(manifest.resolve(f)).ok()?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Some(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn type_map(manifest: &CorpusManifest, language: &str) -> BTreeMap<String, PipelineType> {
    manifest
        .language_configs(language)
        .into_iter()
        .filter_map(|c| Some((c.config_id.clone(), c.pipeline_type().ok()?)))
        .collect()
}

fn run_language(
    manifest: &CorpusManifest,
    config: &RunConfig,
    language: &str,
) -> Result<(LanguageStage, Observations)> {
    let dir = config.out_dir.join("languages").join(language);
    let key = stage_key(manifest, language, config);
    if let Some(key) = &key {
        match load_language_stage(&dir, &type_map(manifest, language)) {
            Ok((stage, obs)) if &stage.key == key => {
                info!("{language}: inputs unchanged, reusing cached stages");
                return Ok((stage, obs));
            }
            _ => {}
        }
    }
    let _ = fs::remove_file(dir.join("stage.json"));
    let ctx = |stage| context(language, None, stage);
    create_dir(&dir)?;
    let meta = config_meta(manifest, language).map_err(ctx("ingest"))?;

    let segs = segment_stage(manifest, language, &config.segmenter)?;
    write_json(&dir.join("segmentations.json"), &segs)?;
    let aligns = align_stage(manifest, language, &segs, config.gap_penalty)?;
    write_json(&dir.join("alignments.json"), &aligns)?;

    let pooled = pool_stage(manifest, language, &aligns, &config.pagerank)?;
    let par_dir = dir.join("paragraphs");
    create_dir(&par_dir)?;
    for (c, seq) in &pooled.paragraphs {
        write_embeddings(par_dir.join(format!("{language}.{c}.emb")), seq)?;
    }
    write_item_ids(&par_dir.join("items.csv"), &pooled.item_ids)?;

    let matrices = similarity_stage(&pooled)?;
    let sim_dir = dir.join("similarity");
    create_dir(&sim_dir)?;
    for m in &matrices {
        write_similarity(sim_dir.join(format!("{}.sim", m.config_id)), m)?;
    }
    let mut obs = BTreeMap::new();
    let similarity = correlate_stage(language, &matrices, &meta)?;
    write_observation_file(
        &observation_path(&dir, AnalysisKind::Similarity),
        &similarity,
        AnalysisKind::Similarity,
    )?;
    obs.insert(AnalysisKind::Similarity, similarity);

    if let Some(params) = &config.clustering {
        match cluster_stage(&pooled, params, config.seed) {
            Ok(partitions) => {
                let cdir = dir.join("clustering");
                create_dir(&cdir)?;
                for (c, p) in &partitions {
                    let labels: Vec<String> = p.assignments().iter().map(usize::to_string).collect();
                    write_labels(cdir.join(format!("{c}.csv")), &pooled.item_ids, &labels)?;
                }
                let agreement = agreement_table(language, &partitions, &meta).map_err(ctx("cluster"))?;
                write_observation_file(
                    &observation_path(&dir, AnalysisKind::Clustering),
                    &agreement,
                    AnalysisKind::Clustering,
                )?;
                obs.insert(AnalysisKind::Clustering, agreement);
            }
            Err(Error::Stage { source, .. }) if matches!(*source, Error::TooFewObservations { .. }) => {
                warn!("{language}: too few paragraphs to cluster ({source})");
            }
            Err(e) => return Err(e),
        }
    }

    let mut scores = Vec::new();
    if let Some((agreement, s)) = classification_stage(manifest, language, &meta).map_err(ctx("agree"))? {
        write_observation_file(
            &observation_path(&dir, AnalysisKind::Classification),
            &agreement,
            AnalysisKind::Classification,
        )?;
        obs.insert(AnalysisKind::Classification, agreement);
        scores = s;
    }
    if let Some(reduced) = reduced_stage(manifest, language, &meta).map_err(ctx("reduced"))? {
        write_observation_file(
            &observation_path(&dir, AnalysisKind::Reduced),
            &reduced,
            AnalysisKind::Reduced,
        )?;
        obs.insert(AnalysisKind::Reduced, reduced);
    }

    let stage = LanguageStage {
        language: language.to_string(),
        key: key.unwrap_or_default(),
        n_paragraphs: pooled.item_ids.len(),
        analyses: obs.keys().copied().collect(),
        classification_scores: scores,
    };
    write_json(&dir.join("stage.json"), &stage)?;
    Ok((stage, obs))
}

fn write_item_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["item_id"])?;
    for id in ids {
        w.write_record([id])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Cells that cannot be evaluated for lack of data are recorded, not fatal.
fn is_skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::Empty(_)
            | Error::TooFewConfigurations { .. }
            | Error::TooFewObservations { .. }
            | Error::NoCandidates(_)
            | Error::SingularDesign(_)
            | Error::DegenerateResample { .. }
            | Error::FitNotConverged
    )
}

/// Runs every configured hypothesis on every analysis and kappa.
pub fn run_inference(observations: &Observations, config: &RunConfig) -> Result<Vec<AnalysisResults>> {
    let mut out = Vec::new();
    for (&kind, obs) in observations {
        let mut languages: Vec<&str> = obs.iter().map(|o| o.language.as_str()).collect();
        languages.sort_unstable();
        languages.dedup();
        let settings = InferenceSettings {
            alpha: config.alpha,
            q: config.q,
            bootstrap: BootstrapParams {
                replicates: config.bootstrap_reps,
                seed: stage_seed(config.seed, &["inference", kind.as_str()]),
                ..BootstrapParams::default()
            },
            ..InferenceSettings::default()
        };
        let heatmap = pair_type_means(obs)?
            .into_iter()
            .map(|((language, pair_type), g)| HeatmapRow {
                language,
                pair_type,
                mean: g.mean,
                count: g.count,
            })
            .collect();
        let mut sweeps = Vec::new();
        let mut skipped = Vec::new();
        for &h in &config.hypotheses {
            let spec = HypothesisSpec::new(h, 1.0);
            let results: Vec<_> = languages
                .par_iter()
                .map(|&l| (l, analyze(l, obs, &spec, &settings)))
                .collect();
            let mut analyses = Vec::new();
            for (language, r) in results {
                match r {
                    Ok(a) => analyses.push(a),
                    Err(e) if is_skippable(&e) => {
                        warn!("{kind}/{language}/{h}: skipped ({e})");
                        skipped.push(SkippedCell {
                            language: language.to_string(),
                            hypothesis: h,
                            reason: e.to_string(),
                        });
                    }
                    Err(e) => return Err(e.in_stage(language, None, "test")),
                }
            }
            sweeps.extend(kappa_sweep(&analyses, &config.kappas, config.q)?);
        }
        out.push(AnalysisResults {
            analysis: kind,
            heatmap,
            sweeps,
            skipped,
            classification_scores: Vec::new(),
        });
    }
    Ok(out)
}

fn write_status(out_dir: &Path, complete: bool) -> Result<()> {
    write_json(
        &out_dir.join("status.json"),
        &serde_json::json!({ "complete": complete }),
    )
}

/// Runs every stage for every language, then inference, then the report.
/// On failure the files written so far stay in place and `status.json`
/// records the run as incomplete.
pub fn run_pipeline(config: &RunConfig) -> Result<RunResults> {
    config.validate()?;
    let manifest = load_manifest(&config.manifest)?;
    create_dir(&config.out_dir)?;
    write_status(&config.out_dir, false)?;
    write_json(&config.out_dir.join("run.json"), config)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let results = pool.install(|| -> Result<RunResults> {
        let mut languages = manifest.languages.clone();
        languages.sort();
        let staged: Vec<Result<(LanguageStage, Observations)>> = languages
            .par_iter()
            .map(|l| run_language(&manifest, config, l))
            .collect();
        let mut all: Observations = BTreeMap::new();
        let mut scores = Vec::new();
        for s in staged {
            let (stage, obs) = s?;
            scores.extend(stage.classification_scores);
            for (kind, o) in obs {
                all.entry(kind).or_default().extend(o);
            }
        }
        for (&kind, obs) in &all {
            write_observation_file(
                &config
                    .out_dir
                    .join("analyses")
                    .join(kind.as_str())
                    .join("observations.csv"),
                obs,
                kind,
            )?;
        }
        let mut analyses = run_inference(&all, config)?;
        for a in &mut analyses {
            if a.analysis == AnalysisKind::Classification {
                a.classification_scores = std::mem::take(&mut scores);
            }
        }
        Ok(RunResults {
            languages,
            kappas: config.kappas.clone(),
            alpha: config.alpha,
            q: config.q,
            hypotheses: config.hypotheses.clone(),
            analyses,
        })
    })?;
    write_json(&config.out_dir.join("results.json"), &results)?;
    write_status(&config.out_dir, true)?;
    emit_report(&config.out_dir, ReportFormat::Csv)?;
    Ok(results)
}
