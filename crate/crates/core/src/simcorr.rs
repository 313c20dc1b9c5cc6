//! Similarity matrices over pseudo-paragraphs and the correlations between them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{PipelineType, SentenceEmbeddingSequence, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Default number of matrix rows handled by one parallel task.
pub const DEFAULT_BLOCK: usize = 64;

/// Unordered pair of pipeline types, stored with the smaller letter first
/// under the O < M < X < T order (so `OT`, `MX`, `XT`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairType(PipelineType, PipelineType);

impl PairType {
    pub fn new(a: PipelineType, b: PipelineType) -> Self {
        if a <= b {
            PairType(a, b)
        } else {
            PairType(b, a)
        }
    }

    pub fn first(self) -> PipelineType {
        self.0
    }

    pub fn second(self) -> PipelineType {
        self.1
    }

    pub fn is_within(self) -> bool {
        self.0 == self.1
    }

    pub fn contains(self, t: PipelineType) -> bool {
        self.0 == t || self.1 == t
    }

    /// The ten pair types in canonical order.
    pub fn all() -> Vec<PairType> {
        use PipelineType::*;
        let types = [O, M, X, T];
        let mut out = Vec::with_capacity(10);
        for (i, &a) in types.iter().enumerate() {
            for &b in &types[i..] {
                out.push(PairType(a, b));
            }
        }
        out
    }
}

impl fmt::Display for PairType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.0.letter(), self.1.letter())
    }
}

impl FromStr for PairType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (
            chars.next().and_then(PipelineType::from_letter),
            chars.next().and_then(PipelineType::from_letter),
            chars.next(),
        ) {
            (Some(a), Some(b), None) => Ok(PairType::new(a, b)),
            _ => Err(Error::Parse {
                location: "pair type".into(),
                message: format!("unknown pair type {s:?}"),
            }),
        }
    }
}

impl Serialize for PairType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PairType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What the correlation stage needs to know about a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigMeta {
    pub config_id: String,
    pub pipeline_type: PipelineType,
    pub model: String,
}

impl ConfigMeta {
    pub fn new(config_id: impl Into<String>, pipeline_type: PipelineType, model: impl Into<String>) -> Self {
        Self {
            config_id: config_id.into(),
            pipeline_type,
            model: model.into(),
        }
    }
}

/// One agreement statistic between two configurations of a language. The
/// statistic is a Pearson correlation of similarity triangles or, for the
/// downstream tasks, an adjusted Rand index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairObservation {
    pub language: String,
    pub config_a: String,
    pub config_b: String,
    pub type_a: PipelineType,
    pub type_b: PipelineType,
    pub pair_type: PairType,
    pub same_model: bool,
    pub r: f64,
    pub n_entries: usize,
}

pub type CorrelationObservation = PairObservation;

impl PairObservation {
    /// Builds an observation with `config_a < config_b`, swapping if needed.
    pub fn new(language: &str, a: &ConfigMeta, b: &ConfigMeta, r: f64, n_entries: usize) -> Self {
        let (a, b) = if a.config_id <= b.config_id { (a, b) } else { (b, a) };
        Self {
            language: language.to_string(),
            config_a: a.config_id.clone(),
            config_b: b.config_id.clone(),
            type_a: a.pipeline_type,
            type_b: b.pipeline_type,
            pair_type: PairType::new(a.pipeline_type, b.pipeline_type),
            same_model: a.model == b.model && a.pipeline_type.text_version() != b.pipeline_type.text_version(),
            r,
            n_entries,
        }
    }

    /// The config of type `t` in this pair, if any (the first one for within-type pairs).
    pub fn config_of_type(&self, t: PipelineType) -> Option<&str> {
        if self.type_a == t {
            Some(&self.config_a)
        } else if self.type_b == t {
            Some(&self.config_b)
        } else {
            None
        }
    }
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(nx > 0.0) {
        return Err(Error::ZeroNorm { row: 0 });
    }
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(ny > 0.0) {
        return Err(Error::ZeroNorm { row: 1 });
    }
    Ok(cosine_with_norms(x, y, nx, ny))
}

fn cosine_with_norms(x: &[f64], y: &[f64], nx: f64, ny: f64) -> f64 {
    let d: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (d / (nx * ny)).clamp(-1.0, 1.0)
}

/// Cosine similarity matrix of the paragraph vectors of one language and config.
pub fn similarity_matrix(language: &str, paragraphs: &SentenceEmbeddingSequence) -> Result<SimilarityMatrix> {
    similarity_matrix_blocked(language, paragraphs, DEFAULT_BLOCK)
}

/// As [`similarity_matrix`], with rows split into parallel tasks of `block`
/// rows. Every entry is computed the same way, so the output does not depend
/// on `block` or on the worker count.
pub fn similarity_matrix_blocked(
    language: &str,
    paragraphs: &SentenceEmbeddingSequence,
    block: usize,
) -> Result<SimilarityMatrix> {
    if block == 0 {
        return Err(Error::InvalidParameter("block size must be positive".into()));
    }
    let n = paragraphs.len();
    let norms: Vec<f64> = paragraphs
        .rows()
        .enumerate()
        .map(|(row, x)| {
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx > 0.0 {
                Ok(nx)
            } else {
                Err(Error::ZeroNorm { row })
            }
        })
        .collect::<Result<_>>()?;
    let starts: Vec<usize> = (0..n).step_by(block).collect();
    let chunks: Vec<Vec<f32>> = starts
        .par_iter()
        .map(|&start| {
            let mut out = Vec::new();
            for i in start..(start + block).min(n) {
                let xi = paragraphs.row(i);
                for j in i + 1..n {
                    out.push(cosine_with_norms(xi, paragraphs.row(j), norms[i], norms[j]) as f32);
                }
            }
            out
        })
        .collect();
    SimilarityMatrix::new(language, paragraphs.config_id.clone(), n, chunks.concat())
}

/// Pearson correlation of two upper triangles, in float64 with pairwise sums.
pub fn upper_triangle_pearson(a: &SimilarityMatrix, b: &SimilarityMatrix) -> Result<f64> {
    if a.language != b.language {
        return Err(Error::InconsistentLengths(format!(
            "matrices belong to different languages ({} vs {})",
            a.language, b.language
        )));
    }
    if a.n_paragraphs() != b.n_paragraphs() {
        return Err(Error::SizeMismatch(format!(
            "{} has {} paragraphs, {} has {}",
            a.config_id,
            a.n_paragraphs(),
            b.config_id,
            b.n_paragraphs()
        )));
    }
    let x: Vec<f64> = a.upper_triangle().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.upper_triangle().iter().map(|&v| v as f64).collect();
    pearson(&x, &y)
}

/// Two-pass Pearson correlation with pairwise summation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch(format!("{} vs {} entries", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::TooFewObservations {
            needed: 3,
            found: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = pairwise_sum(x) / n;
    let my = pairwise_sum(y) / n;
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxx = pairwise_sum(&dx.iter().map(|v| v * v).collect::<Vec<_>>());
    let syy = pairwise_sum(&dy.iter().map(|v| v * v).collect::<Vec<_>>());
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    let sxy = pairwise_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// A configuration pair left out of the table, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedPair {
    pub config_a: String,
    pub config_b: String,
    pub reason: String,
}

/// All pairwise correlations for one language. Pairs whose correlation is
/// undefined (constant triangle) are dropped with a warning.
pub fn correlation_table(
    language: &str,
    matrices: &[SimilarityMatrix],
    meta: &BTreeMap<String, ConfigMeta>,
) -> Result<(Vec<PairObservation>, Vec<DroppedPair>)> {
    if matrices.len() < 2 {
        return Err(Error::TooFewConfigurations {
            needed: 2,
            found: matrices.len(),
        });
    }
    let mut sorted: Vec<&SimilarityMatrix> = matrices.iter().collect();
    sorted.sort_by(|a, b| a.config_id.cmp(&b.config_id));
    for m in &sorted {
        if !meta.contains_key(&m.config_id) {
            return Err(Error::DanglingConfig {
                document: language.to_string(),
                config: m.config_id.clone(),
            });
        }
    }
    let pairs: Vec<(usize, usize)> = (0..sorted.len())
        .flat_map(|i| (i + 1..sorted.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<std::result::Result<PairObservation, DroppedPair>>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (sorted[i], sorted[j]);
            match upper_triangle_pearson(a, b) {
                Ok(r) => Ok(Ok(PairObservation::new(
                    language,
                    &meta[&a.config_id],
                    &meta[&b.config_id],
                    r,
                    a.upper_triangle().len(),
                ))),
                Err(e @ (Error::ConstantInput | Error::TooFewObservations { .. })) => Ok(Err(DroppedPair {
                    config_a: a.config_id.clone(),
                    config_b: b.config_id.clone(),
                    reason: e.to_string(),
                })),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        match r? {
            Ok(o) => kept.push(o),
            Err(d) => {
                warn!(
                    "{language}: dropping pair ({}, {}): {}",
                    d.config_a, d.config_b, d.reason
                );
                dropped.push(d);
            }
        }
    }
    Ok((kept, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub mean: f64,
    pub count: usize,
}

/// Mean statistic per (language, pair type), each observation weighted equally.
pub fn pair_type_means(obs: &[PairObservation]) -> Result<BTreeMap<(String, PairType), GroupMean>> {
    if obs.is_empty() {
        return Err(Error::Empty("no observations to average".into()));
    }
    let mut groups: BTreeMap<(String, PairType), Vec<f64>> = BTreeMap::new();
    for o in obs {
        groups.entry((o.language.clone(), o.pair_type)).or_default().push(o.r);
    }
    Ok(groups
        .into_iter()
        .map(|(k, v)| {
            (
                k,
                GroupMean {
                    mean: pairwise_sum(&v) / v.len() as f64,
                    count: v.len(),
                },
            )
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRecord {
    language: String,
    config_a: String,
    config_b: String,
    pair_type: PairType,
    same_model: bool,
    #[serde(alias = "ari")]
    r: f64,
    n_entries: usize,
}

/// Writes observations as CSV with the given name for the statistic column
/// (`r` for correlations, `ari` for partition agreement).
pub fn write_observations<W: Write>(writer: W, obs: &[PairObservation], value_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "language",
        "config_a",
        "config_b",
        "pair_type",
        "same_model",
        value_column,
        "n_entries",
    ])?;
    for o in obs {
        w.write_record([
            o.language.as_str(),
            &o.config_a,
            &o.config_b,
            &o.pair_type.to_string(),
            if o.same_model { "true" } else { "false" },
            &format_float(o.r),
            &o.n_entries.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<observation table>", e))?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// [`read_observations`] on a file.
pub fn read_observations_file(
    path: &std::path::Path,
    known: Option<&BTreeMap<String, PipelineType>>,
) -> Result<Vec<PairObservation>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_observations(std::io::BufReader::new(file), known)
}

/// Reads an observation table. Config pipeline types come from `known` when
/// given; otherwise they are inferred from the pair types (a config in an
/// `OO` pair is O, the partner of a known O in an `OT` pair is T, and so on).
pub fn read_observations<R: Read>(
    reader: R,
    known: Option<&BTreeMap<String, PipelineType>>,
) -> Result<Vec<PairObservation>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    for (line, rec) in rdr.deserialize::<ObservationRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            location: format!("observation row {}", line + 2),
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    let types = match known {
        Some(k) => k.clone(),
        None => infer_types(&records)?,
    };
    records
        .into_iter()
        .map(|rec| {
            let lookup = |c: &str| {
                types.get(c).copied().ok_or_else(|| Error::DanglingConfig {
                    document: rec.language.clone(),
                    config: c.to_string(),
                })
            };
            let (ta, tb) = (lookup(&rec.config_a)?, lookup(&rec.config_b)?);
            if PairType::new(ta, tb) != rec.pair_type {
                return Err(Error::Parse {
                    location: format!("pair ({}, {})", rec.config_a, rec.config_b),
                    message: format!("pair type {} does not match configs {ta}{tb}", rec.pair_type),
                });
            }
            Ok(PairObservation {
                language: rec.language,
                config_a: rec.config_a,
                config_b: rec.config_b,
                type_a: ta,
                type_b: tb,
                pair_type: rec.pair_type,
                same_model: rec.same_model,
                r: rec.r,
                n_entries: rec.n_entries,
            })
        })
        .collect()
}

fn infer_types(records: &[ObservationRecord]) -> Result<BTreeMap<String, PipelineType>> {
    let mut types: BTreeMap<String, PipelineType> = BTreeMap::new();
    let assign = |types: &mut BTreeMap<String, PipelineType>, c: &str, t: PipelineType| -> Result<bool> {
        match types.get(c) {
            Some(&old) if old != t => Err(Error::Parse {
                location: format!("config {c}"),
                message: format!("appears as both {old} and {t}"),
            }),
            Some(_) => Ok(false),
            None => {
                types.insert(c.to_string(), t);
                Ok(true)
            }
        }
    };
    loop {
        let mut changed = false;
        for r in records {
            let (p, q) = (r.pair_type.first(), r.pair_type.second());
            if p == q {
                changed |= assign(&mut types, &r.config_a, p)?;
                changed |= assign(&mut types, &r.config_b, p)?;
                continue;
            }
            match (types.get(&r.config_a).copied(), types.get(&r.config_b).copied()) {
                (Some(ta), None) => {
                    let other = if ta == p { q } else { p };
                    changed |= assign(&mut types, &r.config_b, other)?;
                }
                (None, Some(tb)) => {
                    let other = if tb == p { q } else { p };
                    changed |= assign(&mut types, &r.config_a, other)?;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    let all: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| [r.config_a.as_str(), r.config_b.as_str()])
        .collect();
    if let Some(c) = all.into_iter().find(|c| !types.contains_key(*c)) {
        return Err(Error::Parse {
            location: format!("config {c}"),
            message: "pipeline type cannot be inferred; supply a manifest".into(),
        });
    }
    Ok(types)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;
    use PipelineType::*;

    fn rows_seq(rows: &[Vec<f64>]) -> SentenceEmbeddingSequence {
        SentenceEmbeddingSequence::from_rows("doc", "cfg", rows).unwrap()
    }

    fn random_seq(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SentenceEmbeddingSequence {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        rows_seq(&rows)
    }

    fn two_pass(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    fn matrix(cfg: &str, tri: Vec<f32>) -> SimilarityMatrix {
        let n = ((1.0 + (1.0 + 8.0 * tri.len() as f64).sqrt()) / 2.0).round() as usize;
        SimilarityMatrix::new("xx", cfg, n, tri).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn similarity_examples() {
        let m = similarity_matrix("xx", &rows_seq(&[vec![1.0, 2.0], vec![1.0, 2.0]])).unwrap();
        assert_eq!(m.upper_triangle(), &[1.0]);
        let eye = rows_seq(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(
            similarity_matrix("xx", &eye).unwrap().upper_triangle(),
            &[0.0, 0.0, 0.0]
        );
        let one = similarity_matrix("xx", &rows_seq(&[vec![1.0]])).unwrap();
        assert!(one.upper_triangle().is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_seq(&mut rng, 5, 4);
        let m = similarity_matrix("xx", &s).unwrap();
        for i in 0..5 {
            for j in i + 1..5 {
                let (a, b) = (s.row(i), s.row(j));
                let mut d = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for k in 0..4 {
                    d += a[k] * b[k];
                    na += a[k] * a[k];
                    nb += b[k] * b[k];
                }
                assert!((m.get(i, j) as f64 - d / (na.sqrt() * nb.sqrt())).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pearson_examples() {
        let a = matrix("a", vec![0.1, 0.5, -0.2, 0.9, 0.3, 0.0]);
        assert!((upper_triangle_pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let flipped = matrix("b", a.upper_triangle().iter().map(|v| -v).collect());
        assert!((upper_triangle_pearson(&a, &flipped).unwrap() + 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!((pearson(&x, &y).unwrap() - two_pass(&x, &y)).abs() < 1e-12);
        let c = matrix("c", vec![0.5; 6]);
        assert!(matches!(upper_triangle_pearson(&a, &c), Err(Error::ConstantInput)));
        let small = matrix("d", vec![0.5, 0.1, 0.2]);
        assert!(matches!(
            upper_triangle_pearson(&a, &small),
            Err(Error::SizeMismatch(_))
        ));
    }

    fn metas(spec: &[(&str, PipelineType, &str)]) -> BTreeMap<String, ConfigMeta> {
        spec.iter()
            .map(|&(c, t, m)| (c.to_string(), ConfigMeta::new(c, t, m)))
            .collect()
    }

    #[test]
    fn pair_types_and_counts() {
        assert_eq!(PairType::new(T, O).to_string(), "OT");
        assert_eq!(PairType::new(X, M).to_string(), "MX");
        assert_eq!(PairType::new(T, X).to_string(), "XT");
        let names: Vec<String> = PairType::all().iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["OO", "OM", "OX", "OT", "MM", "MX", "MT", "XX", "XT", "TT"]);
        for p in PairType::all() {
            assert_eq!(p.to_string().parse::<PairType>().unwrap(), p);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut spec = Vec::new();
        let names: Vec<String> = (0..6)
            .map(|i| format!("o{i}"))
            .chain((0..7).map(|i| format!("t{i}")))
            .collect();
        for (k, name) in names.iter().enumerate() {
            spec.push((name.as_str(), if k < 6 { O } else { T }, name.as_str()));
        }
        let meta = metas(&spec);
        let mats: Vec<SimilarityMatrix> = names
            .iter()
            .map(|c| {
                let mut s = random_seq(&mut rng, 6, 3);
                s.config_id = c.clone();
                similarity_matrix("bg", &s).unwrap()
            })
            .collect();
        let (obs, dropped) = correlation_table("bg", &mats, &meta).unwrap();
        assert!(dropped.is_empty());
        let count = |p: &str| obs.iter().filter(|o| o.pair_type.to_string() == p).count();
        assert_eq!((count("OO"), count("OT"), count("TT")), (15, 42, 21));
        assert_eq!(2 * (count("OO") + count("OT")), 114);
        assert!(obs.iter().all(|o| o.config_a < o.config_b));
    }

    #[test]
    fn same_model_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut spec = Vec::new();
        let ids: Vec<(String, String)> = (0..7).map(|i| (format!("m{i}"), format!("x{i}"))).collect();
        for (i, (m, x)) in ids.iter().enumerate() {
            let model = ["mA", "mB", "mC", "mD", "mE", "mF", "mG"][i];
            spec.push((m.as_str(), M, model));
            spec.push((x.as_str(), X, model));
        }
        let meta = metas(&spec);
        let mats: Vec<SimilarityMatrix> = meta
            .keys()
            .map(|c| {
                let mut s = random_seq(&mut rng, 5, 3);
                s.config_id = c.clone();
                similarity_matrix("de", &s).unwrap()
            })
            .collect();
        let (obs, _) = correlation_table("de", &mats, &meta).unwrap();
        let same: Vec<_> = obs.iter().filter(|o| o.same_model).collect();
        assert_eq!(same.len(), 7);
        assert!(same.iter().all(|o| o.pair_type.to_string() == "MX"));

        let two = metas(&[("a", O, "a"), ("b", O, "b")]);
        let mats: Vec<SimilarityMatrix> = ["a", "b"]
            .iter()
            .map(|c| {
                let mut s = random_seq(&mut rng, 4, 3);
                s.config_id = c.to_string();
                similarity_matrix("de", &s).unwrap()
            })
            .collect();
        assert_eq!(correlation_table("de", &mats, &two).unwrap().0.len(), 1);
    }

    #[test]
    fn constant_triangle_is_dropped() {
        let meta = metas(&[("a", O, "a"), ("b", O, "b"), ("c", T, "c")]);
        let mats = vec![
            matrix("a", vec![0.1, 0.2, 0.3]),
            matrix("b", vec![0.4, 0.4, 0.4]),
            matrix("c", vec![0.3, 0.1, 0.0]),
        ];
        let (obs, dropped) = correlation_table("xx", &mats, &meta).unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(dropped.len(), 2);
    }

    fn obs(lang: &str, a: &str, ta: PipelineType, b: &str, tb: PipelineType, r: f64) -> PairObservation {
        PairObservation::new(lang, &ConfigMeta::new(a, ta, a), &ConfigMeta::new(b, tb, b), r, 10)
    }

    #[test]
    fn means_examples() {
        let one = vec![obs("fr", "a", O, "b", O, 0.3)];
        let m = pair_type_means(&one).unwrap();
        assert_eq!(m[&("fr".to_string(), PairType::new(O, O))].mean, 0.3);
        let two = vec![obs("fr", "a", O, "b", O, 0.4), obs("fr", "a", O, "c", O, 0.6)];
        let m = pair_type_means(&two).unwrap();
        assert!((m[&("fr".to_string(), PairType::new(O, O))].mean - 0.5).abs() < 1e-15);
        assert!(pair_type_means(&[]).is_err());
    }

    #[test]
    fn means_match_hash_grouping() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let types = [O, M, X, T];
        let mut all = Vec::new();
        for k in 0..200 {
            let lang = ["fr", "de", "bg"][k % 3];
            let (ta, tb) = (types[rng.random_range(0..4)], types[rng.random_range(0..4)]);
            all.push(obs(
                lang,
                &format!("c{}", 2 * k),
                ta,
                &format!("c{}", 2 * k + 1),
                tb,
                rng.random_range(-1.0..1.0),
            ));
        }
        let mut oracle: HashMap<(String, String), (f64, usize)> = HashMap::new();
        for o in &all {
            let e = oracle.entry((o.language.clone(), o.pair_type.to_string())).or_default();
            e.0 += o.r;
            e.1 += 1;
        }
        let table = pair_type_means(&all).unwrap();
        assert_eq!(table.len(), oracle.len());
        for ((lang, p), g) in table {
            let (s, c) = oracle[&(lang, p.to_string())];
            assert_eq!(g.count, c);
            assert!((g.mean - s / c as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn observation_csv_round_trip_with_inference() {
        let rows = vec![
            obs("bg", "o1", O, "o2", O, 0.81),
            obs("bg", "o1", O, "t1", T, 0.62),
            obs("bg", "o2", O, "t1", T, 0.6),
            obs("bg", "m1", M, "o1", O, 0.7),
            obs("bg", "m1", M, "x1", X, 1.0 / 3.0),
        ];
        let mut buf = Vec::new();
        write_observations(&mut buf, &rows, "r").unwrap();
        let back = read_observations(buf.as_slice(), None).unwrap();
        assert_eq!(back, rows);

        // x1 only appears against m1, whose type is known from the OM pair
        let only_mixed = vec![obs("bg", "m1", M, "x1", X, 0.5)];
        let mut buf = Vec::new();
        write_observations(&mut buf, &only_mixed, "ari").unwrap();
        assert!(read_observations(buf.as_slice(), None).is_err());
        let known: BTreeMap<String, PipelineType> = [("m1".to_string(), M), ("x1".to_string(), X)].into();
        assert_eq!(read_observations(buf.as_slice(), Some(&known)).unwrap(), only_mixed);
    }

    fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(f)
    }

    #[test]
    fn correlation_table_thread_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec: Vec<(String, PipelineType)> = (0..9).map(|i| (format!("c{i}"), [O, T, M][i % 3])).collect();
        let meta: BTreeMap<String, ConfigMeta> = spec
            .iter()
            .map(|(c, t)| (c.clone(), ConfigMeta::new(c.clone(), *t, c.clone())))
            .collect();
        let mats: Vec<SimilarityMatrix> = spec
            .iter()
            .map(|(c, _)| {
                let mut s = random_seq(&mut rng, 40, 8);
                s.config_id = c.clone();
                similarity_matrix("xx", &s).unwrap()
            })
            .collect();
        let reference = in_pool(1, || correlation_table("xx", &mats, &meta).unwrap().0);
        for t in [2, 8] {
            let other = in_pool(t, || correlation_table("xx", &mats, &meta).unwrap().0);
            for (a, b) in reference.iter().zip(&other) {
                assert_eq!(a.r.to_bits(), b.r.to_bits());
            }
            assert_eq!(reference.len(), other.len());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cosine_scale_invariant(x in prop::collection::vec(0.1f64..2.0, 3), y in prop::collection::vec(-2.0f64..2.0, 3), a in 0.01f64..100.0, b in 0.01f64..100.0) {
            prop_assume!(y.iter().any(|v| v.abs() > 1e-3));
            let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * b).collect();
            prop_assert!((cosine_similarity(&xs, &ys).unwrap() - cosine_similarity(&x, &y).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn block_size_is_bit_exact(seed in any::<u64>(), n in 1usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_seq(&mut rng, n, 5);
            let whole = similarity_matrix_blocked("xx", &s, n.max(1)).unwrap();
            for b in [1, 64] {
                let m = similarity_matrix_blocked("xx", &s, b).unwrap();
                prop_assert_eq!(m.upper_triangle(), whole.upper_triangle());
            }
        }

        #[test]
        fn pearson_affine_invariant(seed in any::<u64>(), len in 3usize..60, scale in 0.01f64..50.0, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ys: Vec<f64> = y.iter().map(|v| scale * v + shift).collect();
            prop_assert!((pearson(&x, &y).unwrap() - pearson(&x, &ys).unwrap()).abs() < 1e-10);
            prop_assert!((pearson(&x, &y).unwrap() - two_pass(&x, &y)).abs() < 1e-12);
        }
    }
}
