//! Browser demo: three small operations over synthetic data.
//!
//! Each `*_demo` function has a native counterpart returning a typed result,
//! which the wasm exports serialize to JSON for the page in `www/`.

use invariance_lab::aligner::{monotone_align, normalize_rows};
use invariance_lab::corpus_io::{PipelineType, SentenceEmbeddingSequence};
use invariance_lab::inference::{run_hypothesis, Decision, HypothesisName, HypothesisSpec, InferenceSettings};
use invariance_lab::segmenter::pelt_segment;
use invariance_lab::simcorr::{ConfigMeta, PairObservation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DIM: usize = 8;

fn topic_rows(rng: &mut ChaCha8Rng, lengths: &[usize], noise: f64) -> Vec<Vec<f64>> {
    let jitter = Normal::new(0.0, noise).unwrap();
    let mut rows = Vec::new();
    for &len in lengths {
        let centre: Vec<f64> = (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..len {
            rows.push(centre.iter().map(|c| c + jitter.sample(rng)).collect());
        }
    }
    rows
}

#[derive(Debug, Serialize)]
pub struct SegmentDemo {
    pub n: usize,
    pub planted: Vec<usize>,
    pub change_points: Vec<usize>,
    pub objective: f64,
}

/// Segments a document of four planted topics at penalty `beta`.
pub fn segment(beta: f64, seed: u64) -> Result<SegmentDemo, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths = [5, 7, 4, 6];
    let rows = topic_rows(&mut rng, &lengths, 0.45);
    let planted = lengths
        .iter()
        .scan(0, |acc, l| {
            *acc += l;
            Some(*acc)
        })
        .take(lengths.len() - 1)
        .collect();
    let seq = SentenceEmbeddingSequence::from_rows("demo", "demo", &rows).map_err(|e| e.to_string())?;
    let seg = pelt_segment(&seq, beta, 1).map_err(|e| e.to_string())?;
    Ok(SegmentDemo {
        n: rows.len(),
        planted,
        change_points: seg.change_points,
        objective: seg.objective,
    })
}

#[derive(Debug, Serialize)]
pub struct AlignDemo {
    pub source_len: usize,
    pub target_len: usize,
    /// `[source_start, source_end, target_start, target_end]`, ends exclusive.
    pub links: Vec<[usize; 4]>,
    pub score: f64,
    /// Source sentences the simulated translator merged with their successor.
    pub merged: Vec<usize>,
}

/// Aligns a source text with a translation that merges some sentence pairs.
pub fn align(gap_penalty: f64, seed: u64) -> Result<AlignDemo, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = topic_rows(&mut rng, &[1; 12], 0.0);
    let jitter = Normal::new(0.0, 0.15).unwrap();
    let mut target = Vec::new();
    let mut merged = Vec::new();
    let mut i = 0;
    while i < source.len() {
        let mut row = source[i].clone();
        if i + 1 < source.len() && rng.random_bool(0.25) {
            row.iter_mut().zip(&source[i + 1]).for_each(|(a, b)| *a += b);
            merged.push(i);
            i += 1;
        }
        target.push(
            row.into_iter()
                .map(|v| v + jitter.sample(&mut rng))
                .collect::<Vec<f64>>(),
        );
        i += 1;
    }
    let unit = |rows: &[Vec<f64>]| {
        SentenceEmbeddingSequence::from_rows("demo", "demo", rows)
            .and_then(|s| normalize_rows(&s))
            .map_err(|e| e.to_string())
    };
    let map = monotone_align(&unit(&source)?, &unit(&target)?, gap_penalty).map_err(|e| e.to_string())?;
    Ok(AlignDemo {
        source_len: map.source_len,
        target_len: map.target_len,
        links: map
            .links
            .iter()
            .map(|l| [l.source.start, l.source.end, l.target.start, l.target.end])
            .collect(),
        score: map.total_score,
        merged,
    })
}

#[derive(Debug, Serialize)]
pub struct VerdictDemo {
    pub kappa: f64,
    pub d_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub delta: f64,
    pub sigma_l: f64,
    pub decision: Decision,
}

/// Tests translation invariance on simulated correlations from 6 original and
/// 7 translated configurations, with true gap `shift` between the two.
pub fn verdict(kappa: f64, shift: f64, seed: u64) -> Result<VerdictDemo, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut metas = Vec::new();
    for (t, n) in [(PipelineType::O, 6), (PipelineType::T, 7)] {
        for i in 0..n {
            let id = format!("{}{i}", t.letter());
            metas.push(ConfigMeta::new(id.clone(), t, id));
        }
    }
    let u_dist = Normal::new(0.0, 0.1).unwrap();
    let e_dist = Normal::new(0.0, 0.05).unwrap();
    let u: Vec<f64> = metas.iter().map(|_| u_dist.sample(&mut rng)).collect();
    let mut obs = Vec::new();
    for i in 0..metas.len() {
        for j in i + 1..metas.len() {
            let both_original = metas[i].pipeline_type == PipelineType::O && metas[j].pipeline_type == PipelineType::O;
            let mu = if both_original { 0.6 } else { 0.6 - shift };
            let r = mu + u[i] + u[j] + e_dist.sample(&mut rng);
            obs.push(PairObservation::new("demo", &metas[i], &metas[j], r, 100));
        }
    }
    let spec = HypothesisSpec::new(HypothesisName::Baseline, kappa);
    let res = run_hypothesis("demo", &obs, &spec, &InferenceSettings::default()).map_err(|e| e.to_string())?;
    Ok(VerdictDemo {
        kappa,
        d_hat: res.d_hat,
        ci_lo: res.ci_lo,
        ci_hi: res.ci_hi,
        delta: res.delta,
        sigma_l: res.sigma_l,
        decision: res.decision,
    })
}

fn to_js<T: Serialize>(value: Result<T, String>) -> Result<String, JsValue> {
    value
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn segment_demo(beta: f64, seed: u32) -> Result<String, JsValue> {
    to_js(segment(beta, seed.into()))
}

#[wasm_bindgen]
pub fn align_demo(gap_penalty: f64, seed: u32) -> Result<String, JsValue> {
    to_js(align(gap_penalty, seed.into()))
}

#[wasm_bindgen]
pub fn verdict_demo(kappa: f64, shift: f64, seed: u32) -> Result<String, JsValue> {
    to_js(verdict(kappa, shift, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moderate_penalty_finds_planted_topics() {
        let out = segment(1.0, 3).unwrap();
        assert_eq!(out.n, 22);
        assert_eq!(out.change_points, out.planted);
    }

    #[test]
    fn huge_penalty_gives_one_segment() {
        assert!(segment(1e6, 3).unwrap().change_points.is_empty());
    }

    #[test]
    fn links_tile_both_texts() {
        for seed in 0..10 {
            let out = align(-0.2, seed).unwrap();
            let mut s = 0;
            let mut t = 0;
            for l in &out.links {
                assert_eq!((l[0], l[2]), (s, t));
                assert!(l[1] - l[0] == 1 || l[3] - l[2] == 1);
                s = l[1];
                t = l[3];
            }
            assert_eq!((s, t), (out.source_len, out.target_len));
        }
    }

    #[test]
    fn merged_sentences_become_two_to_one_links() {
        let out = align(-0.2, 5).unwrap();
        for &m in &out.merged {
            assert!(
                out.links.iter().any(|l| l[0] == m && l[1] == m + 2),
                "merge at {m}: {:?}",
                out.links
            );
        }
    }

    #[test]
    fn large_shift_is_distorted_and_wider_margin_never_hurts() {
        assert_eq!(verdict(1.0, 0.5, 1).unwrap().decision, Decision::Distorted);
        let tight = verdict(0.5, 0.0, 2).unwrap();
        let loose = verdict(4.0, 0.0, 2).unwrap();
        assert_eq!(tight.d_hat, loose.d_hat);
        assert_eq!(loose.decision, Decision::Invariant);
    }

    #[test]
    fn json_exports_parse() {
        let v: serde_json::Value = serde_json::from_str(&segment_demo(1.0, 1).unwrap()).unwrap();
        assert!(v["change_points"].is_array());
    }
}
