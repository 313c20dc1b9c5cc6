//! Centrality-weighted pooling of sentence embeddings into paragraph vectors.
//!
//! Sentences form a complete graph weighted by cosine similarity (negative
//! similarities truncated to zero). PageRank over the whole document gives
//! each sentence a weight; a paragraph vector is the weight-normalized
//! average of its sentences.

use serde::{Deserialize, Serialize};

use crate::corpus_io::SentenceEmbeddingSequence;
use crate::error::{Error, Result};
use crate::numeric::SquareMatrix;
use crate::segmenter::Segmentation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageRankParams {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankParams {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-9,
            max_iter: 1000,
        }
    }
}

/// Per-sentence nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityWeights(pub Vec<f64>);

impl CentralityWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Paragraph vectors of one document under one config.
#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphEmbeddingSet {
    pub document_id: String,
    pub config_id: String,
    pub vectors: SentenceEmbeddingSequence,
    pub source_segmentation: Segmentation,
}

/// Truncated-cosine adjacency: `max(0, cos(x_i, x_j))` off the diagonal, 0 on it.
pub fn sentence_graph(seq: &SentenceEmbeddingSequence) -> Result<SquareMatrix> {
    let n = seq.len();
    let norms: Vec<f64> = seq
        .rows()
        .enumerate()
        .map(|(row, x)| {
            let nn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nn > 0.0 {
                Ok(nn)
            } else {
                Err(Error::ZeroNorm { row })
            }
        })
        .collect::<Result<_>>()?;
    let mut g = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = seq.row(i).iter().zip(seq.row(j)).map(|(a, b)| a * b).sum();
            let w = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0).max(0.0);
            g.set(i, j, w);
            g.set(j, i, w);
        }
    }
    Ok(g)
}

/// Weighted PageRank with uniform teleportation; zero-out-weight rows
/// teleport uniformly. Stops when the L1 change between iterates drops below `tol`.
pub fn pagerank(graph: &SquareMatrix, damping: f64, tol: f64) -> Result<CentralityWeights> {
    pagerank_with(
        graph,
        &PageRankParams {
            damping,
            tol,
            ..PageRankParams::default()
        },
    )
}

pub fn pagerank_with(graph: &SquareMatrix, params: &PageRankParams) -> Result<CentralityWeights> {
    let n = graph.n;
    if n == 0 {
        return Err(Error::Empty("PageRank on an empty graph".into()));
    }
    let d = params.damping;
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::InvalidParameter(format!("damping must lie in (0, 1), got {d}")));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {}",
            params.tol
        )));
    }
    if graph.data.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidParameter(
            "edge weights must be finite and nonnegative".into(),
        ));
    }
    let out_weight: Vec<f64> = (0..n).map(|i| (0..n).map(|j| graph.get(i, j)).sum()).collect();
    let uniform = 1.0 / n as f64;
    let mut rank = vec![uniform; n];
    let mut next = vec![0.0; n];
    for _ in 0..params.max_iter {
        let dangling: f64 = (0..n).filter(|&i| out_weight[i] == 0.0).map(|i| rank[i]).sum();
        let base = (1.0 - d) * uniform + d * dangling * uniform;
        next.iter_mut().for_each(|v| *v = base);
        for i in 0..n {
            if out_weight[i] == 0.0 {
                continue;
            }
            let share = d * rank[i] / out_weight[i];
            for (j, v) in next.iter_mut().enumerate() {
                *v += share * graph.get(i, j);
            }
        }
        let change: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if change < params.tol {
            let total: f64 = rank.iter().sum();
            rank.iter_mut().for_each(|v| *v /= total);
            return Ok(CentralityWeights(rank));
        }
    }
    Err(Error::NonConvergence {
        iterations: params.max_iter,
    })
}

/// Weighted mean of each segment's sentences, weights renormalized within the
/// segment. A segment whose weights sum to zero falls back to the plain mean.
pub fn pool_document(
    seq: &SentenceEmbeddingSequence,
    seg: &Segmentation,
    weights: &CentralityWeights,
) -> Result<ParagraphEmbeddingSet> {
    if seg.n != seq.len() || weights.0.len() != seq.len() {
        return Err(Error::InconsistentLengths(format!(
            "{} sentences, segmentation over {}, {} weights",
            seq.len(),
            seg.n,
            weights.0.len()
        )));
    }
    let d = seq.dim();
    let mut out = Vec::with_capacity(seg.num_segments() * d);
    for range in seg.segments() {
        if range.is_empty() {
            return Err(Error::Empty("empty segment".into()));
        }
        let w = &weights.0[range.clone()];
        let total: f64 = w.iter().sum();
        let mut acc = vec![0.0; d];
        if total > 0.0 {
            for (i, &wi) in range.clone().zip(w) {
                for (a, x) in acc.iter_mut().zip(seq.row(i)) {
                    *a += wi * x;
                }
            }
            acc.iter_mut().for_each(|a| *a /= total);
        } else {
            for i in range.clone() {
                for (a, x) in acc.iter_mut().zip(seq.row(i)) {
                    *a += x;
                }
            }
            let len = range.len() as f64;
            acc.iter_mut().for_each(|a| *a /= len);
        }
        out.extend(acc);
    }
    Ok(ParagraphEmbeddingSet {
        document_id: seq.document_id.clone(),
        config_id: seq.config_id.clone(),
        vectors: SentenceEmbeddingSequence::new(seq.document_id.clone(), seq.config_id.clone(), d, out)?,
        source_segmentation: seg.clone(),
    })
}

/// Graph, PageRank and pooling in one call.
pub fn pool_with_pagerank(
    seq: &SentenceEmbeddingSequence,
    seg: &Segmentation,
    params: &PageRankParams,
) -> Result<ParagraphEmbeddingSet> {
    let weights = pagerank_with(&sentence_graph(seq)?, params)?;
    pool_document(seq, seg, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(rows: &[Vec<f64>]) -> SentenceEmbeddingSequence {
        SentenceEmbeddingSequence::from_rows("d", "c", rows).unwrap()
    }

    /// Power iteration on the explicit dense Google matrix.
    pub(crate) fn dense_oracle(g: &SquareMatrix, damping: f64) -> Vec<f64> {
        let n = g.n;
        let mut google = vec![vec![0.0; n]; n];
        for i in 0..n {
            let out: f64 = (0..n).map(|j| g.get(i, j)).sum();
            for j in 0..n {
                let p = if out > 0.0 { g.get(i, j) / out } else { 1.0 / n as f64 };
                google[i][j] = damping * p + (1.0 - damping) / n as f64;
            }
        }
        let mut r = vec![1.0 / n as f64; n];
        for _ in 0..100_000 {
            let next: Vec<f64> = (0..n).map(|j| (0..n).map(|i| r[i] * google[i][j]).sum()).collect();
            let diff: f64 = next.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum();
            r = next;
            if diff < 1e-15 {
                break;
            }
        }
        r
    }

    #[test]
    fn graph_examples() {
        let g = sentence_graph(&seq(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(g.get(0, 1), 0.0);
        let g = sentence_graph(&seq(&[vec![0.3, 0.4], vec![0.3, 0.4]])).unwrap();
        assert!((g.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(g.get(0, 0), 0.0);
        // cos = -0.3
        let x = vec![1.0, 0.0];
        let y = vec![-0.3, (1.0f64 - 0.09).sqrt()];
        let g = sentence_graph(&seq(&[x, y])).unwrap();
        assert_eq!(g.get(0, 1), 0.0);
    }

    #[test]
    fn identical_sentences_get_uniform_weights() {
        let s = seq(&vec![vec![0.2, 0.5, 0.1]; 5]);
        let w = pagerank(&sentence_graph(&s).unwrap(), 0.85, 1e-9).unwrap();
        for v in w.as_slice() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_weight_is_one() {
        let w = pagerank(&SquareMatrix::zeros(1), 0.85, 1e-9).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
    }

    #[test]
    fn asymmetric_four_node_graph_matches_oracle() {
        let mut g = SquareMatrix::zeros(4);
        for (i, j, w) in [(0, 1, 0.9), (1, 2, 0.3), (2, 0, 0.5), (2, 3, 0.7), (0, 3, 0.2)] {
            g.set(i, j, w);
        }
        // node 3 has no out-edges and teleports uniformly
        let w = pagerank(&g, 0.85, 1e-9).unwrap();
        let oracle = dense_oracle(&g, 0.85);
        for (a, b) in w.as_slice().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn non_convergence_is_signalled() {
        let mut g = SquareMatrix::zeros(3);
        g.set(0, 1, 1.0);
        g.set(1, 2, 1.0);
        let params = PageRankParams {
            max_iter: 2,
            ..PageRankParams::default()
        };
        assert!(matches!(
            pagerank_with(&g, &params),
            Err(Error::NonConvergence { iterations: 2 })
        ));
    }

    #[test]
    fn pooling_examples() {
        let s = seq(&[vec![1.0, 2.0], vec![3.0, 1.0], vec![2.0, 2.0], vec![0.5, 0.5]]);
        let seg = Segmentation::new(vec![1], 4, 1.0, 0.0).unwrap();
        let w = CentralityWeights(vec![0.1, 0.2, 0.3, 0.4]);
        let p = pool_document(&s, &seg, &w).unwrap();
        assert_eq!(p.vectors.row(0), &[1.0, 2.0]);
        // hand-computed: (0.2*(3,1) + 0.3*(2,2) + 0.4*(0.5,0.5)) / 0.9
        let expected = [(0.6 + 0.6 + 0.2) / 0.9, (0.2 + 0.6 + 0.2) / 0.9];
        for (a, b) in p.vectors.row(1).iter().zip(expected) {
            assert!((a - b).abs() < 1e-10);
        }
        let same = seq(&vec![vec![0.7, -0.1]; 3]);
        let one = Segmentation::whole(3);
        let p = pool_document(&same, &one, &CentralityWeights(vec![0.5, 0.25, 0.25])).unwrap();
        for (a, b) in p.vectors.row(0).iter().zip([0.7, -0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weight_segment_uses_plain_mean() {
        let s = seq(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = pool_document(&s, &Segmentation::whole(2), &CentralityWeights(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.vectors.row(0), &[0.5, 0.5]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weights_form_distribution_and_match_oracle(seed in any::<u64>(), n in 1usize..=10, d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let s = seq(&rows);
            let g = sentence_graph(&s).unwrap();
            let w = pagerank(&g, 0.85, 1e-9).unwrap();
            let total: f64 = w.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(w.as_slice().iter().all(|&v| v >= 0.0));
            for (a, b) in w.as_slice().iter().zip(dense_oracle(&g, 0.85)) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn pooled_vector_is_the_weighted_combination(seed in any::<u64>(), n in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(0.1..1.0)).collect()).collect();
            let s = seq(&rows);
            let cps: Vec<usize> = (1..n).filter(|_| rng.random_bool(0.3)).collect();
            let seg = Segmentation::new(cps, n, 1.0, 0.0).unwrap();
            let w = pagerank(&sentence_graph(&s).unwrap(), 0.85, 1e-9).unwrap();
            let p = pool_document(&s, &seg, &w).unwrap();
            for (k, r) in seg.segments().enumerate() {
                let total: f64 = w.as_slice()[r.clone()].iter().sum();
                for c in 0..3 {
                    let v: f64 = r.clone().map(|i| w.as_slice()[i] / total * rows[i][c]).sum();
                    prop_assert!((p.vectors.row(k)[c] - v).abs() < 1e-12);
                    let lo = r.clone().map(|i| rows[i][c]).fold(f64::INFINITY, f64::min);
                    let hi = r.clone().map(|i| rows[i][c]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(p.vectors.row(k)[c] >= lo - 1e-12 && p.vectors.row(k)[c] <= hi + 1e-12);
                }
            }
        }
    }
}
