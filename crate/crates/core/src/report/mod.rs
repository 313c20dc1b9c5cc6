//! End-to-end orchestration and report emission.
//!
//! [`run_pipeline`] turns a manifest into a run directory:
//!
//! ```text
//! run.json                      the configuration used
//! status.json                   {"complete": bool}
//! results.json                  every verdict, every kappa, every analysis
//! summary.json                  decision counts per analysis, hypothesis and kappa
//! languages/<lang>/             segmentations, alignments, paragraphs/, similarity/,
//!                               correlations.csv, optional clustering/, classification/,
//!                               reduced/, and stage.json (cache record)
//! analyses/<analysis>/          observations.csv, verdicts/, sensitivity*.csv, heatmap.csv
//! ```
//!
//! [`emit_report`] regenerates the tables under `analyses/` and `summary.json`
//! from `results.json`.

mod pipeline;
mod tables;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aligner::DEFAULT_GAP_PENALTY;
use crate::error::{Error, Result};
use crate::inference::HypothesisName;
use crate::pooler::PageRankParams;
use crate::segmenter::SegmenterParams;

pub use pipeline::{
    align_stage, cluster_stage, config_meta, correlate_stage, load_language_stage, pool_stage, run_inference,
    run_pipeline, segment_stage, similarity_stage, stage_seed, DocumentAlignment, DocumentSegmentation, LanguageStage,
    PooledLanguage,
};
pub use tables::{
    emit_report, heatmap_rows, read_results, read_verdicts, recount, sensitivity_rows, verdict_rows, write_verdicts,
    AnalysisKind, AnalysisResults, ClassificationScore, HeatmapRow, ReportFormat, RunResults, SensitivityRow,
    SkippedCell, Summary, SummaryCell, VerdictRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringParams {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self {
            k: 20,
            restarts: 8,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub kappas: Vec<f64>,
    pub alpha: f64,
    pub q: f64,
    pub seed: u64,
    pub bootstrap_reps: usize,
    pub segmenter: SegmenterParams,
    pub gap_penalty: f64,
    pub pagerank: PageRankParams,
    /// `None` disables the clustering analysis.
    pub clustering: Option<ClusteringParams>,
    pub hypotheses: Vec<HypothesisName>,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            out_dir: out_dir.into(),
            kappas: vec![0.5, 1.0, 1.5, 2.0],
            alpha: 0.05,
            q: 0.05,
            seed: 0,
            bootstrap_reps: 2000,
            segmenter: SegmenterParams::default(),
            gap_penalty: DEFAULT_GAP_PENALTY,
            pagerank: PageRankParams::default(),
            clustering: Some(ClusteringParams::default()),
            hypotheses: HypothesisName::ALL.to_vec(),
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParameter(what));
        if self.kappas.is_empty() {
            return bad("at least one kappa is required".into());
        }
        if let Some(k) = self.kappas.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return bad(format!("kappa must be positive and finite, got {k}"));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha must lie in (0, 0.5), got {}", self.alpha));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad(format!("q must lie in (0, 1], got {}", self.q));
        }
        if self.bootstrap_reps < 10 {
            return bad(format!(
                "need at least 10 bootstrap replicates, got {}",
                self.bootstrap_reps
            ));
        }
        let s = &self.segmenter;
        if !(s.penalty > 0.0 && s.fallback_penalty > 0.0 && s.penalty.is_finite() && s.fallback_penalty.is_finite()) {
            return bad("segmentation penalties must be positive".into());
        }
        if !(s.min_frac >= 0.0 && s.min_frac <= 0.5) {
            return bad(format!("min_frac must lie in [0, 0.5], got {}", s.min_frac));
        }
        if !(self.gap_penalty <= 0.0 && self.gap_penalty.is_finite()) {
            return bad(format!("gap penalty must be non-positive, got {}", self.gap_penalty));
        }
        let p = &self.pagerank;
        if !(p.damping > 0.0 && p.damping < 1.0 && p.tol > 0.0 && p.max_iter > 0) {
            return bad("PageRank needs damping in (0, 1), positive tolerance and iterations".into());
        }
        if let Some(c) = &self.clustering {
            if c.k < 2 || c.restarts == 0 || c.max_iter == 0 {
                return bad("clustering needs k >= 2, restarts >= 1 and max_iter >= 1".into());
            }
        }
        if self.hypotheses.is_empty() {
            return bad("no hypotheses selected".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(())
    }
}
