//! Penalized kernel change-point segmentation (PELT) over sentence embeddings.
//!
//! The within-segment cost is the empirical RKHS variance under a Gaussian
//! kernel,
//!
//! ```text
//! C(a, b) = (b - a + 1) - 1/(b - a + 1) * sum_{i, j in [a, b]} exp(-|x_i - x_j|^2 / (2 s2))
//! ```
//!
//! and the segmentation minimizes `sum_k C(segment_k) + penalty * K` over all
//! partitions whose segments hold at least `min_size` sentences. Block sums
//! of the Gram matrix come from a 2-D prefix sum, so each cost is O(1).

use serde::{Deserialize, Serialize};

use crate::corpus_io::SentenceEmbeddingSequence;
use crate::error::{Error, Result};
use crate::numeric::median_in_place;

/// Relative slack used when comparing DP values for ties.
const TIE_EPS: f64 = 1e-12;

/// Change-point partition of `n` sentences.
///
/// `change_points` holds exclusive segment ends `0 < t_1 < ... < t_K < n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub change_points: Vec<usize>,
    pub n: usize,
    pub penalty_used: f64,
    /// Achieved penalized cost; `NaN` when the segmentation was not produced
    /// by optimization (for instance a projected one).
    pub objective: f64,
}

impl Segmentation {
    pub fn new(change_points: Vec<usize>, n: usize, penalty_used: f64, objective: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("segmentation of zero sentences".into()));
        }
        let mut prev = 0;
        for &cp in &change_points {
            if cp <= prev || cp >= n {
                return Err(Error::IndexOutOfRange(format!(
                    "change points {change_points:?} are not strictly increasing inside (0, {n})"
                )));
            }
            prev = cp;
        }
        Ok(Self {
            change_points,
            n,
            penalty_used,
            objective,
        })
    }

    /// A single segment covering everything.
    pub fn whole(n: usize) -> Self {
        Self {
            change_points: Vec::new(),
            n,
            penalty_used: 0.0,
            objective: f64::NAN,
        }
    }

    pub fn num_segments(&self) -> usize {
        self.change_points.len() + 1
    }

    /// Half-open sentence ranges of each segment, in order.
    pub fn segments(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let starts = std::iter::once(0).chain(self.change_points.iter().copied());
        let ends = self.change_points.iter().copied().chain(std::iter::once(self.n));
        starts.zip(ends).map(|(a, b)| a..b)
    }

    pub fn min_segment_len(&self) -> usize {
        self.segments().map(|r| r.len()).min().unwrap_or(0)
    }
}

/// RBF Gram matrix of one document plus its 2-D prefix sums.
#[derive(Debug, Clone)]
pub struct KernelContext {
    n: usize,
    bandwidth: f64,
    gram: Vec<f64>,
    prefix: Vec<f64>,
}

impl KernelContext {
    pub fn new(seq: &SentenceEmbeddingSequence, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        let n = seq.len();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            gram[i * n + i] = 1.0;
            for j in i + 1..n {
                let k = (-squared_distance(seq.row(i), seq.row(j)) / (2.0 * bandwidth)).exp();
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }
        let w = n + 1;
        let mut prefix = vec![0.0; w * w];
        for i in 0..n {
            let mut row_acc = 0.0;
            for j in 0..n {
                row_acc += gram[i * n + j];
                prefix[(i + 1) * w + (j + 1)] = prefix[i * w + (j + 1)] + row_acc;
            }
        }
        Ok(Self {
            n,
            bandwidth,
            gram,
            prefix,
        })
    }

    pub fn from_sequence(seq: &SentenceEmbeddingSequence) -> Result<Self> {
        Self::new(seq, median_bandwidth(seq))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn gram(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.n + j]
    }

    /// Sum of the Gram block `[a, b] x [a, b]` (inclusive bounds).
    fn block_sum(&self, a: usize, b: usize) -> f64 {
        let w = self.n + 1;
        let p = &self.prefix;
        p[(b + 1) * w + (b + 1)] - p[a * w + (b + 1)] - p[(b + 1) * w + a] + p[a * w + a]
    }

    /// Cost of an inclusive segment without bounds checks.
    fn cost_unchecked(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let len = (b - a + 1) as f64;
        (len - self.block_sum(a, b) / len).max(0.0)
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median of pairwise squared Euclidean distances over `i < j`, with a
/// fallback of 1.0 for a single sentence or a zero median.
pub fn median_bandwidth(seq: &SentenceEmbeddingSequence) -> f64 {
    let n = seq.len();
    let mut d2 = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d2.push(squared_distance(seq.row(i), seq.row(j)));
        }
    }
    match median_in_place(&mut d2) {
        Some(m) if m > 0.0 && m.is_finite() => m,
        _ => 1.0,
    }
}

/// Kernel cost `C(a, b)` of the inclusive segment `[a, b]`. `C(a, a) = 0`.
pub fn segment_cost(ctx: &KernelContext, a: usize, b: usize) -> Result<f64> {
    if a > b || b >= ctx.n {
        return Err(Error::IndexOutOfRange(format!(
            "segment [{a}, {b}] in a sequence of {}",
            ctx.n
        )));
    }
    Ok(ctx.cost_unchecked(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeltOptions {
    pub penalty: f64,
    pub min_size: usize,
    /// Disable to run the plain O(n^2) optimal-partitioning recursion.
    pub prune: bool,
}

impl PeltOptions {
    pub fn new(penalty: f64, min_size: usize) -> Self {
        Self {
            penalty,
            min_size,
            prune: true,
        }
    }
}

/// Globally optimal penalized segmentation with segments of at least `min_size`.
pub fn pelt_segment(seq: &SentenceEmbeddingSequence, penalty: f64, min_size: usize) -> Result<Segmentation> {
    let ctx = KernelContext::from_sequence(seq)?;
    pelt_with_context(&ctx, &PeltOptions::new(penalty, min_size))
}

pub fn pelt_with_context(ctx: &KernelContext, opts: &PeltOptions) -> Result<Segmentation> {
    let n = ctx.n;
    let beta = opts.penalty;
    let min_size = opts.min_size;
    if n == 0 {
        return Err(Error::Empty("cannot segment an empty sequence".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("penalty must be positive, got {beta}")));
    }
    if min_size == 0 {
        return Err(Error::InvalidParameter("min_size must be at least 1".into()));
    }
    if min_size > n {
        return Err(Error::InfeasibleSegmentation { min_size, n });
    }

    // best[t]: optimal penalized cost of the prefix [0, t), with the leading
    // segment not charged a penalty.
    let mut best = vec![f64::INFINITY; n + 1];
    let mut count = vec![usize::MAX; n + 1];
    let mut last = vec![0usize; n + 1];
    best[0] = 0.0;
    count[0] = 0;

    // (candidate start, time at which it was found dominated)
    let mut candidates: Vec<(usize, Option<usize>)> = vec![(0, None)];

    for t in min_size..=n {
        let mut value = f64::INFINITY;
        let mut cps = usize::MAX;
        let mut arg = 0;
        for &(s, _) in &candidates {
            if t - s < min_size || !best[s].is_finite() {
                continue;
            }
            let charge = if s == 0 { 0.0 } else { beta };
            let v = best[s] + ctx.cost_unchecked(s, t - 1) + charge;
            let c = count[s] + usize::from(s > 0);
            let eps = TIE_EPS * value.abs().max(1.0);
            let better = v < value - eps || ((v - value).abs() <= eps && (c < cps || (c == cps && s < arg)));
            if better {
                value = v;
                cps = c;
                arg = s;
            }
        }
        best[t] = value;
        count[t] = cps;
        last[t] = arg;

        if opts.prune && value.is_finite() {
            // A start s whose segment up to t already costs more than
            // best[t] + penalty can never beat splitting at t, as long as the
            // segment starting at t is long enough. Drop it once that holds
            // for all futures.
            for (s, dominated) in candidates.iter_mut() {
                if dominated.is_none() && *s < t && best[*s].is_finite() {
                    let charge = if *s == 0 { 0.0 } else { beta };
                    let v = best[*s] + ctx.cost_unchecked(*s, t - 1) + charge;
                    if v > value + beta + TIE_EPS * value.abs().max(1.0) {
                        *dominated = Some(t);
                    }
                }
            }
            candidates.retain(|&(_, d)| d.is_none_or(|at| t < at + min_size));
        }
        candidates.push((t, None));
    }

    if !best[n].is_finite() {
        return Err(Error::InfeasibleSegmentation { min_size, n });
    }
    let mut cps = Vec::new();
    let mut t = n;
    while t > 0 {
        let s = last[t];
        if s > 0 {
            cps.push(s);
        }
        t = s;
    }
    cps.reverse();
    Segmentation::new(cps, n, beta, best[n])
}

/// Parameters of the document-level segmentation policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterParams {
    pub penalty: f64,
    pub fallback_penalty: f64,
    pub min_frac: f64,
}

impl Default for SegmenterParams {
    fn default() -> Self {
        Self {
            penalty: 1.0,
            fallback_penalty: 0.5,
            min_frac: 1.0 / 20.0,
        }
    }
}

impl SegmenterParams {
    /// `max(1, floor(n * min_frac))`.
    pub fn min_size(&self, n: usize) -> usize {
        ((n as f64 * self.min_frac + 1e-9).floor() as usize).max(1)
    }
}

/// Segments with penalty 1 and minimum segment length `max(1, floor(n / 20))`,
/// retrying with penalty 0.5 when the first pass yields a single segment.
pub fn segment_document(seq: &SentenceEmbeddingSequence) -> Result<Segmentation> {
    segment_document_with(seq, &SegmenterParams::default())
}

pub fn segment_document_with(seq: &SentenceEmbeddingSequence, params: &SegmenterParams) -> Result<Segmentation> {
    let ctx = KernelContext::from_sequence(seq)?;
    let min_size = params.min_size(seq.len());
    let first = pelt_with_context(&ctx, &PeltOptions::new(params.penalty, min_size))?;
    if !first.change_points.is_empty() {
        return Ok(first);
    }
    pelt_with_context(&ctx, &PeltOptions::new(params.fallback_penalty, min_size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Shifted by +1 so literal zeros stay valid embeddings; the kernel cost
    // only sees differences.
    fn seq_1d(values: &[f64]) -> SentenceEmbeddingSequence {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v + 1.0]).collect();
        SentenceEmbeddingSequence::from_rows("d", "c", &rows).unwrap()
    }

    // Independent oracle: the cost straight from its definition, and an
    // exhaustive search over every subset of change points.
    fn direct_cost(seq: &SentenceEmbeddingSequence, s2: f64, a: usize, b: usize) -> f64 {
        let len = (b - a + 1) as f64;
        let mut sum = 0.0;
        for i in a..=b {
            for j in a..=b {
                let d: f64 = seq.row(i).iter().zip(seq.row(j)).map(|(x, y)| (x - y).powi(2)).sum();
                sum += (-d / (2.0 * s2)).exp();
            }
        }
        len - sum / len
    }

    fn brute_force(seq: &SentenceEmbeddingSequence, beta: f64, min_size: usize) -> Option<(f64, Vec<usize>)> {
        let n = seq.len();
        let s2 = median_bandwidth(seq);
        let mut best: Option<(f64, Vec<usize>)> = None;
        for mask in 0u32..(1 << (n - 1)) {
            let cps: Vec<usize> = (1..n).filter(|i| mask >> (i - 1) & 1 == 1).collect();
            let bounds: Vec<usize> = std::iter::once(0).chain(cps.iter().copied()).chain([n]).collect();
            if bounds.windows(2).any(|w| w[1] - w[0] < min_size) {
                continue;
            }
            let v: f64 = bounds
                .windows(2)
                .map(|w| direct_cost(seq, s2, w[0], w[1] - 1))
                .sum::<f64>()
                + beta * cps.len() as f64;
            if best.as_ref().is_none_or(|(b, _)| v < *b - 1e-12) {
                best = Some((v, cps));
            }
        }
        best
    }

    #[test]
    fn bandwidth_single_pair() {
        assert_eq!(median_bandwidth(&seq_1d(&[0.0, 2.0])), 4.0);
    }

    #[test]
    fn bandwidth_degenerate_fallback() {
        assert_eq!(median_bandwidth(&seq_1d(&[3.0; 5])), 1.0);
        assert_eq!(median_bandwidth(&seq_1d(&[3.0])), 1.0);
    }

    #[test]
    fn bandwidth_matches_sorted_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let seq = SentenceEmbeddingSequence::from_rows("d", "c", &rows).unwrap();
        let mut d: Vec<f64> = Vec::new();
        for i in 0..5 {
            for j in i + 1..5 {
                d.push(rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum());
            }
        }
        d.sort_by(f64::total_cmp);
        assert_eq!(d.len(), 10);
        assert_eq!(median_bandwidth(&seq), (d[4] + d[5]) / 2.0);
    }

    #[test]
    fn cost_examples() {
        let ctx = KernelContext::new(&seq_1d(&[0.0, 2.0]), 4.0).unwrap();
        assert_eq!(segment_cost(&ctx, 0, 0).unwrap(), 0.0);
        let expected = 2.0 - 0.5 * (2.0 + 2.0 * (-0.5f64).exp());
        assert!((segment_cost(&ctx, 0, 1).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.3935).abs() < 1e-4);
        let same = KernelContext::from_sequence(&seq_1d(&[1.5, 1.5])).unwrap();
        assert_eq!(segment_cost(&same, 0, 1).unwrap(), 0.0);
        assert!(segment_cost(&ctx, 1, 2).is_err());
        assert!(segment_cost(&ctx, 1, 0).is_err());
    }

    #[test]
    fn constant_sequence_has_no_change_points() {
        let seg = pelt_segment(&seq_1d(&[0.25; 10]), 1.0, 1).unwrap();
        assert!(seg.change_points.is_empty());
        assert_eq!(seg.objective, 0.0);
    }

    #[test]
    fn dominating_penalty_gives_one_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..9).map(|_| rng.random_range(-5.0..5.0)).collect();
        let seg = pelt_segment(&seq_1d(&v), 10.0 * 9.0, 1).unwrap();
        assert!(seg.change_points.is_empty());
    }

    #[test]
    fn step_signal_matches_exhaustive_optimum() {
        let s = seq_1d(&[0.0, 0.0, 0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0, 10.0]);
        let seg = pelt_segment(&s, 0.1, 1).unwrap();
        assert_eq!(seg.change_points, vec![5]);
        let (obj, cps) = brute_force(&s, 0.1, 1).unwrap();
        assert_eq!(cps, vec![5]);
        assert!((seg.objective - obj).abs() < 1e-9);
    }

    #[test]
    fn min_size_larger_than_sequence() {
        assert!(matches!(
            pelt_segment(&seq_1d(&[1.0, 2.0]), 1.0, 3),
            Err(Error::InfeasibleSegmentation { .. })
        ));
    }

    #[test]
    fn fallback_penalty_on_constant_document() {
        let seg = segment_document(&seq_1d(&[4.0; 12])).unwrap();
        assert_eq!(seg.num_segments(), 1);
        assert_eq!(seg.penalty_used, 0.5);
    }

    #[test]
    fn primary_penalty_kept_when_it_splits() {
        let mut v = vec![0.0; 6];
        v.extend([10.0; 6]);
        v.extend([-10.0; 6]);
        let seg = segment_document(&seq_1d(&v)).unwrap();
        assert_eq!(seg.change_points, vec![6, 12]);
        assert_eq!(seg.penalty_used, 1.0);
    }

    #[test]
    fn two_regime_document_needs_fallback_penalty() {
        let s = seq_1d(&[0.57, -0.48, 0.64, -0.30, 0.70, 0.95, 1.70, 0.71]);
        let (obj1, cps1) = brute_force(&s, 1.0, 1).unwrap();
        let (obj05, cps05) = brute_force(&s, 0.5, 1).unwrap();
        assert!(cps1.is_empty());
        assert_eq!(cps05, vec![4]);
        let seg = segment_document(&s).unwrap();
        assert_eq!(seg.change_points, cps05);
        assert_eq!(seg.penalty_used, 0.5);
        assert!((seg.objective - obj05).abs() < 1e-9);
        let first = pelt_segment(&s, 1.0, 1).unwrap();
        assert!((first.objective - obj1).abs() < 1e-9);
    }

    #[test]
    fn min_size_policy() {
        let p = SegmenterParams::default();
        assert_eq!(p.min_size(5), 1);
        assert_eq!(p.min_size(20), 1);
        assert_eq!(p.min_size(39), 1);
        assert_eq!(p.min_size(40), 2);
        assert_eq!(p.min_size(60), 3);
    }

    #[test]
    fn segments_cover_range() {
        let seg = Segmentation::new(vec![2, 5], 7, 1.0, 0.0).unwrap();
        let r: Vec<_> = seg.segments().collect();
        assert_eq!(r, vec![0..2, 2..5, 5..7]);
        assert!(Segmentation::new(vec![3, 3], 7, 1.0, 0.0).is_err());
        assert!(Segmentation::new(vec![7], 7, 1.0, 0.0).is_err());
    }

    fn random_seq(seed: u64, n: usize, d: usize) -> SentenceEmbeddingSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let shift = if i * 3 / n == 1 { 2.0 } else { 0.0 };
                (0..d).map(|_| rng.random_range(-1.0..1.0) + shift).collect()
            })
            .collect();
        SentenceEmbeddingSequence::from_rows("d", "c", &rows).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pruning_never_changes_objective(seed in any::<u64>(), n in 1usize..30, d in 1usize..4,
                                           beta in 0.05f64..4.0, min_size in 1usize..4) {
            prop_assume!(min_size <= n);
            let ctx = KernelContext::from_sequence(&random_seq(seed, n, d)).unwrap();
            let pruned = pelt_with_context(&ctx, &PeltOptions { penalty: beta, min_size, prune: true }).unwrap();
            let full = pelt_with_context(&ctx, &PeltOptions { penalty: beta, min_size, prune: false }).unwrap();
            prop_assert!((pruned.objective - full.objective).abs() < 1e-9);
            prop_assert_eq!(&pruned.change_points, &full.change_points);
            prop_assert!(pruned.min_segment_len() >= min_size);
        }

        #[test]
        fn cost_is_translation_invariant(seed in any::<u64>(), n in 2usize..10, shift in -50.0f64..50.0) {
            let seq = random_seq(seed, n, 3);
            let shifted: Vec<f64> = seq.as_slice().iter().map(|v| v + shift).collect();
            let moved = SentenceEmbeddingSequence::new("d", "c", 3, shifted).unwrap();
            let a = KernelContext::new(&seq, 0.7).unwrap();
            let b = KernelContext::new(&moved, 0.7).unwrap();
            for i in 0..n {
                for j in i..n {
                    prop_assert!((segment_cost(&a, i, j).unwrap() - segment_cost(&b, i, j).unwrap()).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn more_penalty_never_more_change_points(seed in any::<u64>(), n in 2usize..25,
                                                  b1 in 0.05f64..3.0, extra in 0.0f64..3.0) {
            let ctx = KernelContext::from_sequence(&random_seq(seed, n, 2)).unwrap();
            let lo = pelt_with_context(&ctx, &PeltOptions::new(b1, 1)).unwrap();
            let hi = pelt_with_context(&ctx, &PeltOptions::new(b1 + extra, 1)).unwrap();
            prop_assert!(hi.change_points.len() <= lo.change_points.len());
        }

        #[test]
        fn matches_exhaustive_search(seed in any::<u64>(), n in 1usize..10, d in 1usize..4,
                                     beta in 0.1f64..5.0, min_size in 1usize..3) {
            prop_assume!(min_size <= n);
            let seq = random_seq(seed, n, d);
            let seg = pelt_segment(&seq, beta, min_size).unwrap();
            let (obj, _) = brute_force(&seq, beta, min_size).unwrap();
            prop_assert!((seg.objective - obj).abs() < 1e-9);
        }
    }
}
