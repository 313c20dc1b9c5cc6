//! Partition-level agreement: spherical k-means, the adjusted Rand index,
//! macro-F1 and multiclass MCC, and ARI observation tables that feed the
//! invariance tests.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{Partition, SentenceEmbeddingSequence};
use crate::error::{Error, Result};
use crate::simcorr::{ConfigMeta, PairObservation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 20,
            restarts: 8,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub partition: Partition,
    /// Unit centroids, row-major `k x d`.
    pub centroids: Vec<Vec<f64>>,
    /// Sum over points of the cosine similarity to their centroid.
    pub objective: f64,
    /// Objective after every assignment/update round of the winning restart.
    pub trace: Vec<f64>,
}

fn unit_rows(points: &SentenceEmbeddingSequence) -> Result<Vec<Vec<f64>>> {
    points
        .rows()
        .enumerate()
        .map(|(row, x)| {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                Ok(x.iter().map(|v| v / n).collect())
            } else {
                Err(Error::ZeroNorm { row })
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index and similarity of the most similar centroid (lowest index on ties).
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let s = dot(x, mu);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

/// k-means++ seeding with cosine distance `1 - cos`.
fn seed_centroids(x: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut centroids = vec![x[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = x.iter().map(|p| (1.0 - dot(p, &centroids[0])).max(0.0)).collect();
    while centroids.len() < k {
        let weights: Vec<f64> = dist.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = x[pick].clone();
        for (d, p) in dist.iter_mut().zip(x) {
            *d = d.min((1.0 - dot(p, &c)).max(0.0));
        }
        centroids.push(c);
    }
    centroids
}

fn run_once(x: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let d = x[0].len();
    let mut centroids = seed_centroids(x, k, rng);
    let mut assign: Vec<usize> = x.iter().map(|p| nearest(p, &centroids).0).collect();
    let objective = |assign: &[usize], centroids: &[Vec<f64>]| -> f64 {
        x.iter().zip(assign).map(|(p, &c)| dot(p, &centroids[c])).sum()
    };
    let mut trace = vec![objective(&assign, &centroids)];
    for _ in 0..max_iter {
        // update
        let mut sums = vec![vec![0.0; d]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in x.iter().zip(&assign) {
            sizes[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if sizes[c] == 0 {
                continue;
            }
            let norm = sums[c].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-300 {
                centroids[c] = sums[c].iter().map(|v| v / norm).collect();
            }
        }
        // empty clusters restart at the point farthest from its centroid
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let (far, _) = x
                .iter()
                .zip(&assign)
                .enumerate()
                .filter(|(_, (_, &a))| sizes[a] > 1)
                .map(|(i, (p, &a))| (i, dot(p, &centroids[a])))
                .fold(
                    (usize::MAX, f64::INFINITY),
                    |acc, (i, s)| if s < acc.1 { (i, s) } else { acc },
                );
            if far == usize::MAX {
                break;
            }
            sizes[assign[far]] -= 1;
            centroids[c] = x[far].clone();
            assign[far] = c;
            sizes[c] = 1;
        }
        // assignment
        let next: Vec<usize> = x.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = next != assign;
        assign = next;
        trace.push(objective(&assign, &centroids));
        if !changed {
            break;
        }
    }
    KMeansResult {
        objective: objective(&assign, &centroids),
        partition: Partition::new(assign),
        centroids,
        trace,
    }
}

/// Spherical k-means with k-means++ seeding; the best of `restarts` runs wins
/// (earliest restart on ties). Deterministic given the seed.
pub fn spherical_kmeans(points: &SentenceEmbeddingSequence, params: &KMeansParams) -> Result<KMeansResult> {
    let n = points.len();
    if params.k == 0 || n < params.k {
        return Err(Error::TooFewPoints { k: params.k, n });
    }
    let x = unit_rows(points)?;
    let runs: Vec<KMeansResult> = (0..params.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(r as u64);
            run_once(&x, params.k, params.max_iter, &mut rng)
        })
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.objective > runs[best].objective {
            best = i;
        }
    }
    let mut out = runs.into_iter().nth(best).expect("at least one restart");
    out.partition = Partition::with_k(out.partition.assignments().to_vec(), params.k)?;
    Ok(out)
}

fn choose2(m: u64) -> f64 {
    (m * m.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the contingency table. Returns 1 when the
/// chance-corrected denominator vanishes, which only happens for two
/// identical trivial partitions.
pub fn adjusted_rand_index(p1: &Partition, p2: &Partition) -> Result<f64> {
    let (a, b) = (p1.assignments(), p2.assignments());
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(format!("{} vs {} items", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            found: a.len(),
        });
    }
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&m| choose2(m)).sum();
    let sa: f64 = rows.values().map(|&m| choose2(m)).sum();
    let sb: f64 = cols.values().map(|&m| choose2(m)).sum();
    let expected = sa * sb / choose2(a.len() as u64);
    let max = 0.5 * (sa + sb);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

fn check_lengths<L>(gold: &[L], pred: &[L]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::SizeMismatch(format!(
            "{} gold vs {} predicted labels",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Empty("no labels".into()));
    }
    Ok(())
}

/// Unweighted mean of per-class F1 over the classes present in `gold`.
pub fn macro_f1<L: Ord>(gold: &[L], pred: &[L]) -> Result<f64> {
    check_lengths(gold, pred)?;
    let classes: BTreeSet<&L> = gold.iter().collect();
    let mut total = 0.0;
    for c in &classes {
        let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
        for (g, p) in gold.iter().zip(pred) {
            match (g == *c, p == *c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        total += 2.0 * tp as f64 / (2 * tp + fp + fnn) as f64;
    }
    Ok(total / classes.len() as f64)
}

/// Multiclass Matthews correlation coefficient; 0 when undefined.
pub fn mcc<L: Ord>(gold: &[L], pred: &[L]) -> Result<f64> {
    check_lengths(gold, pred)?;
    let mut t: BTreeMap<&L, f64> = BTreeMap::new();
    let mut p: BTreeMap<&L, f64> = BTreeMap::new();
    let mut correct = 0.0;
    for (g, q) in gold.iter().zip(pred) {
        *t.entry(g).or_default() += 1.0;
        *p.entry(q).or_default() += 1.0;
        if g == q {
            correct += 1.0;
        }
    }
    let s = gold.len() as f64;
    let pt: f64 = t.iter().map(|(k, tv)| tv * p.get(k).copied().unwrap_or(0.0)).sum();
    let pp: f64 = p.values().map(|v| v * v).sum();
    let tt: f64 = t.values().map(|v| v * v).sum();
    let denom = ((s * s - pp) * (s * s - tt)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((correct * s - pt) / denom)
}

/// One ARI observation per unordered configuration pair.
pub fn agreement_table(
    language: &str,
    partitions: &BTreeMap<String, Partition>,
    meta: &BTreeMap<String, ConfigMeta>,
) -> Result<Vec<PairObservation>> {
    if partitions.len() < 2 {
        return Err(Error::TooFewConfigurations {
            needed: 2,
            found: partitions.len(),
        });
    }
    let ids: Vec<&String> = partitions.keys().collect();
    let n = partitions[ids[0]].len();
    for id in &ids {
        if partitions[*id].len() != n {
            return Err(Error::SizeMismatch(format!(
                "{id} partitions {} items, {} partitions {n}",
                partitions[*id].len(),
                ids[0]
            )));
        }
        if !meta.contains_key(*id) {
            return Err(Error::DanglingConfig {
                document: language.to_string(),
                config: id.to_string(),
            });
        }
    }
    let mut out = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let ari = adjusted_rand_index(&partitions[ids[i]], &partitions[ids[j]])?;
            out.push(PairObservation::new(language, &meta[ids[i]], &meta[ids[j]], ari, n));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::PipelineType::{O, T};
    use proptest::prelude::*;
    use rand::Rng;

    fn seq(rows: &[Vec<f64>]) -> SentenceEmbeddingSequence {
        SentenceEmbeddingSequence::from_rows("d", "c", rows).unwrap()
    }

    /// Pair-counting Rand statistics straight from the definition.
    pub(crate) fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => both += 1.0,
                    (true, false) => only_a += 1.0,
                    (false, true) => only_b += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let pairs = both + only_a + only_b + neither;
        let (sa, sb) = (both + only_a, both + only_b);
        let expected = sa * sb / pairs;
        let max = 0.5 * (sa + sb);
        if max == expected {
            1.0
        } else {
            (both - expected) / (max - expected)
        }
    }

    #[test]
    fn ari_examples() {
        let p = Partition::new(vec![0, 0, 1, 1, 2]);
        assert_eq!(adjusted_rand_index(&p, &p).unwrap(), 1.0);
        let relabeled = Partition::new(vec![2, 2, 0, 0, 1]);
        assert!((adjusted_rand_index(&p, &relabeled).unwrap() - 1.0).abs() < 1e-15);
        let a = Partition::new(vec![0, 0, 1, 1]);
        let b = Partition::new(vec![0, 1, 0, 1]);
        // index 0, sums 2 and 2 over 6 pairs: (0 - 2/3) / (2 - 2/3) = -0.5
        assert!((adjusted_rand_index(&a, &b).unwrap() + 0.5).abs() < 1e-15);
        assert!((ari_oracle(&[0, 0, 1, 1], &[0, 1, 0, 1]) + 0.5).abs() < 1e-15);
        assert!(adjusted_rand_index(&a, &Partition::new(vec![0, 1])).is_err());
        assert!(adjusted_rand_index(&Partition::new(vec![0]), &Partition::new(vec![0])).is_err());
    }

    #[test]
    fn f1_and_mcc_examples() {
        let g = [0, 1, 1, 0, 2, 2];
        assert_eq!(macro_f1(&g, &g).unwrap(), 1.0);
        assert!((mcc(&g, &g).unwrap() - 1.0).abs() < 1e-15);
        let bin = [0, 1, 0, 1, 1];
        let inv: Vec<i32> = bin.iter().map(|v| 1 - v).collect();
        assert_eq!(macro_f1(&bin, &inv).unwrap(), 0.0);
        assert!((mcc(&bin, &inv).unwrap() + 1.0).abs() < 1e-15);
        // class 2 predicted as 1 once: per-class F1 1, 0.8, 2/3
        let gold = [0, 0, 1, 1, 2, 2];
        let pred = [0, 0, 1, 1, 2, 1];
        let expected = (1.0 + 0.8 + 2.0 / 3.0) / 3.0;
        assert!((macro_f1(&gold, &pred).unwrap() - expected).abs() < 1e-15);
        assert_eq!(mcc(&[1, 1, 1], &[1, 1, 1]).unwrap(), 0.0);
        assert!(macro_f1(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn kmeans_examples() {
        let pts = seq(&[vec![1.0, 0.1], vec![0.2, 1.0], vec![-1.0, 0.3], vec![0.1, -1.0]]);
        let r = spherical_kmeans(
            &pts,
            &KMeansParams {
                k: 4,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((r.objective - 4.0).abs() < 1e-12);
        let mut labels = r.partition.assignments().to_vec();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3]);

        let same = seq(&vec![vec![3.0, 4.0]; 5]);
        let r = spherical_kmeans(
            &same,
            &KMeansParams {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((r.centroids[0][0] - 0.6).abs() < 1e-12 && (r.centroids[0][1] - 0.8).abs() < 1e-12);

        assert!(matches!(
            spherical_kmeans(
                &same,
                &KMeansParams {
                    k: 6,
                    ..Default::default()
                }
            ),
            Err(Error::TooFewPoints { k: 6, n: 5 })
        ));
    }

    #[test]
    fn agreement_types() {
        let meta: BTreeMap<String, ConfigMeta> = [("o1", O), ("o2", O), ("t1", T)]
            .iter()
            .map(|&(c, t)| (c.to_string(), ConfigMeta::new(c, t, c)))
            .collect();
        let parts: BTreeMap<String, Partition> = meta
            .keys()
            .map(|c| (c.clone(), Partition::new(vec![0, 0, 1, 1, 2])))
            .collect();
        let obs = agreement_table("xx", &parts, &meta).unwrap();
        let types: Vec<String> = obs.iter().map(|o| o.pair_type.to_string()).collect();
        assert_eq!(types, ["OO", "OT", "OT"]);
        assert!(obs.iter().all(|o| o.r == 1.0 && o.n_entries == 5));
    }

    proptest! {
        #[test]
        fn ari_matches_pair_counting(a in prop::collection::vec(0usize..4, 2..12), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..4)).collect();
            let ari = adjusted_rand_index(&Partition::new(a.clone()), &Partition::new(b.clone())).unwrap();
            prop_assert!((ari - ari_oracle(&a, &b)).abs() < 1e-12);
            let sym = adjusted_rand_index(&Partition::new(b.clone()), &Partition::new(a.clone())).unwrap();
            prop_assert_eq!(ari, sym);
            let perm: Vec<usize> = b.iter().map(|v| (v + 1) % 4).collect();
            prop_assert!((adjusted_rand_index(&Partition::new(a), &Partition::new(perm)).unwrap() - ari).abs() < 1e-12);
        }

        #[test]
        fn kmeans_objective_never_decreases(seed in any::<u64>(), n in 3usize..30, k in 1usize..4) {
            prop_assume!(k <= n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let r = spherical_kmeans(&seq(&rows), &KMeansParams { k, seed, restarts: 2, ..Default::default() }).unwrap();
            for w in r.trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9);
            }
        }
    }
}
