use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const SIMILARITY_MAGIC: &[u8; 4] = b"SIM1";

/// Ordered per-sentence vectors of one document under one config.
///
/// Values are held as `f64`; the on-disk format is `f32`, so write-then-read
/// is exact for any sequence that was itself read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbeddingSequence {
    pub document_id: String,
    pub config_id: String,
    n: usize,
    d: usize,
    vectors: Vec<f64>,
}

impl SentenceEmbeddingSequence {
    /// Validates `n >= 1`, `d >= 1`, finite entries and nonzero row norms.
    pub fn new(
        document_id: impl Into<String>,
        config_id: impl Into<String>,
        d: usize,
        vectors: Vec<f64>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Empty("embedding dimension is 0".into()));
        }
        if vectors.is_empty() {
            return Err(Error::Empty("sequence has no sentences".into()));
        }
        if !vectors.len().is_multiple_of(d) {
            return Err(Error::SizeMismatch(format!(
                "{} values is not a multiple of d = {d}",
                vectors.len()
            )));
        }
        let n = vectors.len() / d;
        for (row, chunk) in vectors.chunks_exact(d).enumerate() {
            if let Some(col) = chunk.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col });
            }
            if chunk.iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroNorm { row });
            }
        }
        Ok(Self {
            document_id: document_id.into(),
            config_id: config_id.into(),
            n,
            d,
            vectors,
        })
    }

    pub fn from_rows(document_id: impl Into<String>, config_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                left: d,
                right: bad.len(),
            });
        }
        Self::new(document_id, config_id, d, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.vectors.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vectors
    }
}

/// Upper triangle (row-major, diagonal excluded) of a symmetric N x N cosine
/// similarity matrix. The diagonal is implicitly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub language: String,
    pub config_id: String,
    n_paragraphs: usize,
    upper_triangle: Vec<f32>,
}

impl SimilarityMatrix {
    pub fn new(
        language: impl Into<String>,
        config_id: impl Into<String>,
        n_paragraphs: usize,
        upper_triangle: Vec<f32>,
    ) -> Result<Self> {
        let expected = triangle_len(n_paragraphs);
        if upper_triangle.len() != expected {
            return Err(Error::SizeMismatch(format!(
                "N = {n_paragraphs} needs {expected} upper-triangle entries, got {}",
                upper_triangle.len()
            )));
        }
        if let Some(i) = upper_triangle
            .iter()
            .position(|v| !v.is_finite() || v.abs() > 1.0 + 1e-6)
        {
            return Err(Error::InvalidParameter(format!(
                "similarity entry {i} = {} outside [-1, 1]",
                upper_triangle[i]
            )));
        }
        Ok(Self {
            language: language.into(),
            config_id: config_id.into(),
            n_paragraphs,
            upper_triangle,
        })
    }

    pub fn n_paragraphs(&self) -> usize {
        self.n_paragraphs
    }

    pub fn upper_triangle(&self) -> &[f32] {
        &self.upper_triangle
    }

    /// Entry (i, j) of the full symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f32 {
        if i == j {
            return 1.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.upper_triangle[triangle_index(self.n_paragraphs, a, b)]
    }
}

pub(crate) fn triangle_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Offset of (i, j), i < j, in the row-major upper triangle.
pub(crate) fn triangle_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<()> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    Ok(())
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or(Error::Truncated {
        expected: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4-byte slice")))
}

fn f32_payload(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
}

pub fn encode_embeddings(seq: &SentenceEmbeddingSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * seq.vectors.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(seq.n as u32).to_le_bytes());
    out.extend_from_slice(&(seq.d as u32).to_le_bytes());
    for &v in &seq.vectors {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], document_id: &str, config_id: &str) -> Result<SentenceEmbeddingSequence> {
    check_magic(bytes, EMBEDDING_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let d = read_u32(bytes, 8)? as usize;
    let expected = 12 + 4 * n * d;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::SizeMismatch(format!(
            "header declares {n} x {d} values but {} trailing bytes follow",
            bytes.len() - expected
        )));
    }
    let values: Vec<f64> = f32_payload(&bytes[12..]).map(f64::from).collect();
    SentenceEmbeddingSequence::new(document_id, config_id, d, values)
}

/// Reads an `EMB1` file. The document and config ids are taken from the file stem
/// (`<document>.<config>.emb`, or the whole stem when there is no inner dot).
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<SentenceEmbeddingSequence> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (doc, config) = stem.rsplit_once('.').unwrap_or((stem.as_str(), ""));
    decode_embeddings(&bytes, doc, config)
}

pub fn write_embeddings(path: impl AsRef<Path>, seq: &SentenceEmbeddingSequence) -> Result<()> {
    write_file(path.as_ref(), &encode_embeddings(seq))
}

pub fn encode_similarity(matrix: &SimilarityMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * matrix.upper_triangle.len());
    out.extend_from_slice(SIMILARITY_MAGIC);
    out.extend_from_slice(&(matrix.n_paragraphs as u32).to_le_bytes());
    for &v in &matrix.upper_triangle {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_similarity(bytes: &[u8], language: &str, config_id: &str) -> Result<SimilarityMatrix> {
    check_magic(bytes, SIMILARITY_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    let expected = triangle_len(n);
    if !payload.len().is_multiple_of(4) || payload.len() / 4 != expected {
        return Err(Error::SizeMismatch(format!(
            "SIM1 header declares N = {n} ({expected} values) but payload holds {} bytes",
            payload.len()
        )));
    }
    SimilarityMatrix::new(language, config_id, n, f32_payload(payload).collect())
}

/// Reads a `SIM1` file; language and config come from the caller since the
/// format does not store them.
pub fn read_similarity(path: impl AsRef<Path>, language: &str, config_id: &str) -> Result<SimilarityMatrix> {
    let path = path.as_ref();
    decode_similarity(&read_file(path)?, language, config_id)
}

pub fn write_similarity(path: impl AsRef<Path>, matrix: &SimilarityMatrix) -> Result<()> {
    write_file(path.as_ref(), &encode_similarity(matrix))
}
