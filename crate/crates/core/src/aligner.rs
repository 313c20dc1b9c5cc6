//! Monotone sentence alignment between a document and its translation.
//!
//! A path through the source x target grid starts at (0, 0) and ends at
//! (n - 1, m - 1). A diagonal move enters a new one-to-one link and earns the
//! cosine similarity of that cell; vertical and horizontal moves extend the
//! current link on the source or target side and cost `gap_penalty`. A
//! vertical run may not be followed directly by a horizontal one (or vice
//! versa), so links are one-to-one, many-to-one or one-to-many.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus_io::SentenceEmbeddingSequence;
use crate::error::{Error, Result};
use crate::segmenter::Segmentation;

pub const DEFAULT_GAP_PENALTY: f64 = -0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentLink {
    pub source: Range<usize>,
    pub target: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub links: Vec<AlignmentLink>,
    pub total_score: f64,
    pub source_len: usize,
    pub target_len: usize,
}

impl AlignmentMap {
    /// The link containing source sentence `i`.
    pub fn link_of_source(&self, i: usize) -> Option<&AlignmentLink> {
        let idx = self.links.partition_point(|l| l.source.end <= i);
        self.links.get(idx).filter(|l| l.source.contains(&i))
    }

    pub fn transposed(&self) -> AlignmentMap {
        AlignmentMap {
            links: self
                .links
                .iter()
                .map(|l| AlignmentLink {
                    source: l.target.clone(),
                    target: l.source.clone(),
                })
                .collect(),
            total_score: self.total_score,
            source_len: self.target_len,
            target_len: self.source_len,
        }
    }
}

/// Scales every row to unit Euclidean norm.
pub fn normalize_rows(seq: &SentenceEmbeddingSequence) -> Result<SentenceEmbeddingSequence> {
    let mut out = Vec::with_capacity(seq.as_slice().len());
    for (row, x) in seq.rows().enumerate() {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::ZeroNorm { row });
        }
        out.extend(x.iter().map(|v| v / norm));
    }
    SentenceEmbeddingSequence::new(seq.document_id.clone(), seq.config_id.clone(), seq.dim(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Diagonal = 0,
    Vertical = 1,
    Horizontal = 2,
}

const MOVES: [Move; 3] = [Move::Diagonal, Move::Vertical, Move::Horizontal];

/// Optimal monotone alignment of two unit-normalized sequences.
pub fn monotone_align(
    src: &SentenceEmbeddingSequence,
    tgt: &SentenceEmbeddingSequence,
    gap_penalty: f64,
) -> Result<AlignmentMap> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::Empty("alignment needs two non-empty sequences".into()));
    }
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            left: src.dim(),
            right: tgt.dim(),
        });
    }
    if !(gap_penalty <= 0.0 && gap_penalty.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gap penalty must be a non-positive number, got {gap_penalty}"
        )));
    }
    let (n, m) = (src.len(), tgt.len());
    let sim = |i: usize, j: usize| -> f64 { src.row(i).iter().zip(tgt.row(j)).map(|(a, b)| a * b).sum() };

    // score[(i * m + j) * 3 + state]: best path ending in cell (i, j) whose
    // last move was `state`; back[..] the state of the predecessor cell.
    let mut score = vec![f64::NEG_INFINITY; n * m * 3];
    let mut back = vec![u8::MAX; n * m * 3];
    let at = |i: usize, j: usize, s: Move| (i * m + j) * 3 + s as usize;
    score[at(0, 0, Move::Diagonal)] = sim(0, 0);

    for i in 0..n {
        for j in 0..m {
            if i > 0 && j > 0 {
                let s = sim(i, j);
                let (best, from) = argmax_states(&score, at(i - 1, j - 1, Move::Diagonal), &MOVES);
                score[at(i, j, Move::Diagonal)] = best + s;
                back[at(i, j, Move::Diagonal)] = from;
            }
            if i > 0 {
                let (best, from) =
                    argmax_states(&score, at(i - 1, j, Move::Diagonal), &[Move::Diagonal, Move::Vertical]);
                score[at(i, j, Move::Vertical)] = best + gap_penalty;
                back[at(i, j, Move::Vertical)] = from;
            }
            if j > 0 {
                let (best, from) = argmax_states(
                    &score,
                    at(i, j - 1, Move::Diagonal),
                    &[Move::Diagonal, Move::Horizontal],
                );
                score[at(i, j, Move::Horizontal)] = best + gap_penalty;
                back[at(i, j, Move::Horizontal)] = from;
            }
        }
    }

    let (total_score, mut state) = argmax_states(&score, at(n - 1, m - 1, Move::Diagonal), &MOVES);
    if !total_score.is_finite() {
        return Err(Error::InvalidParameter("alignment produced a non-finite score".into()));
    }

    // Walk back to (0, 0), collecting the move that entered each cell.
    let mut cells = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        let mv = MOVES[state as usize];
        cells.push((i, j, mv));
        if i == 0 && j == 0 {
            break;
        }
        let prev = back[at(i, j, mv)];
        match mv {
            Move::Diagonal => {
                i -= 1;
                j -= 1;
            }
            Move::Vertical => i -= 1,
            Move::Horizontal => j -= 1,
        }
        state = prev;
    }
    cells.reverse();

    let mut links: Vec<AlignmentLink> = Vec::new();
    for (i, j, mv) in cells {
        match (mv, links.last_mut()) {
            (Move::Vertical, Some(link)) => link.source.end = i + 1,
            (Move::Horizontal, Some(link)) => link.target.end = j + 1,
            _ => links.push(AlignmentLink {
                source: i..i + 1,
                target: j..j + 1,
            }),
        }
    }
    Ok(AlignmentMap {
        links,
        total_score,
        source_len: n,
        target_len: m,
    })
}

/// Best state among `allowed` at the cell whose diagonal slot is `base`.
/// Strict comparison keeps the earlier state on ties (diagonal, vertical,
/// horizontal).
fn argmax_states(score: &[f64], base: usize, allowed: &[Move]) -> (f64, u8) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = allowed[0] as u8;
    for &s in allowed {
        let v = score[base + s as usize];
        if v > best {
            best = v;
            arg = s as u8;
        }
    }
    (best, arg)
}

/// Result of carrying a source segmentation across an alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub target: Segmentation,
    /// Source change points whose projection produced a new target boundary,
    /// so that `source_kept` and `target` have the same number of segments.
    pub source_kept: Vec<usize>,
}

/// Maps each source change point to the first target index of the link that
/// contains it; collapsed or leading boundaries are dropped.
pub fn project_segmentation(src_seg: &Segmentation, align: &AlignmentMap) -> Result<Segmentation> {
    Ok(project_with_survivors(src_seg, align)?.target)
}

pub fn project_with_survivors(src_seg: &Segmentation, align: &AlignmentMap) -> Result<Projection> {
    if src_seg.n != align.source_len {
        return Err(Error::InconsistentLengths(format!(
            "segmentation covers {} sentences but the alignment source has {}",
            src_seg.n, align.source_len
        )));
    }
    let mut target_cps = Vec::new();
    let mut kept = Vec::new();
    for &cp in &src_seg.change_points {
        let link = align
            .link_of_source(cp)
            .ok_or_else(|| Error::IndexOutOfRange(format!("source index {cp} not covered by alignment")))?;
        let t = link.target.start;
        if t > 0 && target_cps.last().is_none_or(|&last| t > last) {
            target_cps.push(t);
            kept.push(cp);
        }
    }
    Ok(Projection {
        target: Segmentation::new(target_cps, align.target_len, src_seg.penalty_used, f64::NAN)?,
        source_kept: kept,
    })
}
