use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{Backend, Decision, DecisionCounts, HypothesisName, HypothesisResult, Sidedness, SweepRow};
use crate::simcorr::PairType;

/// Which observation table a set of verdicts was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    /// Correlations between paragraph similarity matrices.
    Similarity,
    /// ARI between k-means partitions of the paragraph embeddings.
    Clustering,
    /// ARI between supplied classifier predictions.
    Classification,
    /// Correlations between supplied reduced-space similarity matrices.
    Reduced,
}

impl AnalysisKind {
    pub const ALL: [AnalysisKind; 4] = [
        AnalysisKind::Similarity,
        AnalysisKind::Clustering,
        AnalysisKind::Classification,
        AnalysisKind::Reduced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisKind::Similarity => "similarity",
            AnalysisKind::Clustering => "clustering",
            AnalysisKind::Classification => "classification",
            AnalysisKind::Reduced => "reduced",
        }
    }

    /// Column name of the observation value in persisted tables.
    pub fn value_column(self) -> &'static str {
        match self {
            AnalysisKind::Similarity | AnalysisKind::Reduced => "r",
            AnalysisKind::Clustering | AnalysisKind::Classification => "ari",
        }
    }
}

impl fmt::Display for AnalysisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnalysisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnalysisKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse {
                location: "analysis".into(),
                message: format!("unknown analysis {s:?}"),
            })
    }
}

/// A (language, hypothesis) cell that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub language: String,
    pub hypothesis: HypothesisName,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScore {
    pub language: String,
    pub config_id: String,
    pub macro_f1: f64,
    pub mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub language: String,
    pub pair_type: PairType,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResults {
    pub analysis: AnalysisKind,
    pub heatmap: Vec<HeatmapRow>,
    /// One row per (hypothesis, kappa), hypotheses in run order.
    pub sweeps: Vec<SweepRow>,
    pub skipped: Vec<SkippedCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classification_scores: Vec<ClassificationScore>,
}

/// Everything inference produced; the input of [`emit_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub languages: Vec<String>,
    pub kappas: Vec<f64>,
    pub alpha: f64,
    pub q: f64,
    pub hypotheses: Vec<HypothesisName>,
    pub analyses: Vec<AnalysisResults>,
}

/// One language's verdict on one hypothesis at one kappa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub language: String,
    /// Ordered-pair count of the reference and candidate observations.
    pub n: usize,
    #[serde(rename = "n_O")]
    pub n_o: usize,
    #[serde(rename = "n_T")]
    pub n_t: usize,
    #[serde(rename = "D_hat")]
    pub d_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Non-inferiority (one-sided) or equivalence (two-sided) p-value.
    pub p: f64,
    pub decision: Decision,
    pub backend: Backend,
    pub bh_decision: Decision,
    pub delta: f64,
    pub p_dist: f64,
}

impl From<&HypothesisResult> for VerdictRow {
    fn from(r: &HypothesisResult) -> Self {
        Self {
            language: r.language.clone(),
            n: r.reported_n(),
            n_o: r.n_o,
            n_t: r.n_t,
            d_hat: r.d_hat,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            p: r.p_inv,
            decision: r.decision,
            backend: r.backend,
            bh_decision: r.bh_decision,
            delta: r.delta,
            p_dist: r.p_dist,
        }
    }
}

pub fn verdict_rows(sweep: &SweepRow) -> Vec<VerdictRow> {
    sweep.results.iter().map(VerdictRow::from).collect()
}

pub fn write_verdicts(path: &Path, rows: &[VerdictRow], format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
            for row in rows {
                w.serialize(row)?;
            }
            if rows.is_empty() {
                w.write_record(VERDICT_COLUMNS)?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        ReportFormat::Structured => write_json(path, &rows),
    }
}

const VERDICT_COLUMNS: [&str; 13] = [
    "language",
    "n",
    "n_O",
    "n_T",
    "D_hat",
    "ci_lo",
    "ci_hi",
    "p",
    "decision",
    "backend",
    "bh_decision",
    "delta",
    "p_dist",
];

/// Reads a verdict table written in either format (chosen by extension).
pub fn read_verdicts(path: &Path) -> Result<Vec<VerdictRow>> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        });
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(VERDICT_COLUMNS.iter().copied()) {
        return Err(Error::Parse {
            location: path.display().to_string(),
            message: format!("unexpected verdict columns {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Decision counts recomputed from verdict rows.
pub fn recount(rows: &[VerdictRow], sidedness: Sidedness) -> (DecisionCounts, DecisionCounts) {
    (
        DecisionCounts::tally(sidedness, rows.iter().map(|r| r.decision)),
        DecisionCounts::tally(sidedness, rows.iter().map(|r| r.bh_decision)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Structured,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "structured" | "json" => Ok(ReportFormat::Structured),
            other => Err(Error::Parse {
                location: "format".into(),
                message: format!("unknown report format {other:?}"),
            }),
        }
    }
}

/// A row of the kappa-sensitivity table: one decision category of one
/// hypothesis, with its count at every kappa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub hypothesis: HypothesisName,
    pub adjustment: String,
    pub decision: Decision,
    pub counts: Vec<usize>,
}

pub fn sensitivity_rows(
    analysis: &AnalysisResults,
    hypotheses: &[HypothesisName],
    kappas: &[f64],
) -> Vec<SensitivityRow> {
    let mut out = Vec::new();
    for &h in hypotheses {
        let sweeps: Vec<&SweepRow> = kappas
            .iter()
            .filter_map(|&k| analysis.sweeps.iter().find(|s| s.hypothesis == h && s.kappa == k))
            .collect();
        if sweeps.len() != kappas.len() {
            continue;
        }
        let sidedness = h.sidedness();
        for (adjustment, bh) in [("none", false), ("bh", true)] {
            for &d in Decision::categories(sidedness) {
                out.push(SensitivityRow {
                    hypothesis: h,
                    adjustment: adjustment.to_string(),
                    decision: d,
                    counts: sweeps
                        .iter()
                        .map(|s| if bh { s.bh_counts.get(d) } else { s.counts.get(d) })
                        .collect(),
                });
            }
        }
    }
    out
}

fn kappa_label(k: f64) -> String {
    format!("{k}")
}

fn write_sensitivity(path: &Path, rows: &[SensitivityRow], kappas: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["hypothesis".to_string(), "adjustment".into(), "decision".into()];
    header.extend(kappas.iter().map(|&k| format!("kappa={}", kappa_label(k))));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.hypothesis.as_str().to_string(),
            r.adjustment.clone(),
            r.decision.as_str().to_string(),
        ];
        rec.extend(r.counts.iter().map(usize::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Language x pair-type mean table, rows sorted by language.
pub fn heatmap_rows(analysis: &AnalysisResults) -> (Vec<PairType>, Vec<(String, Vec<Option<f64>>)>) {
    let columns: Vec<PairType> = PairType::all()
        .into_iter()
        .filter(|t| analysis.heatmap.iter().any(|c| c.pair_type == *t))
        .collect();
    let mut by_lang: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    for cell in &analysis.heatmap {
        let row = by_lang
            .entry(&cell.language)
            .or_insert_with(|| vec![None; columns.len()]);
        let j = columns
            .iter()
            .position(|t| *t == cell.pair_type)
            .expect("column exists");
        row[j] = Some(cell.mean);
    }
    (columns, by_lang.into_iter().map(|(l, v)| (l.to_string(), v)).collect())
}

fn write_heatmap_csv(path: &Path, analysis: &AnalysisResults) -> Result<()> {
    let (columns, rows) = heatmap_rows(analysis);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["language".to_string()];
    header.extend(columns.iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    for (lang, values) in rows {
        let mut rec = vec![lang];
        rec.extend(
            values
                .iter()
                .map(|v| v.map(crate::simcorr::format_float).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub kappa: f64,
    pub n_languages: usize,
    pub counts: DecisionCounts,
    pub bh_counts: DecisionCounts,
}

/// Decision counts across languages for every analysis, hypothesis and kappa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub languages: Vec<String>,
    pub kappas: Vec<f64>,
    pub alpha: f64,
    pub q: f64,
    pub analyses: BTreeMap<AnalysisKind, BTreeMap<HypothesisName, Vec<SummaryCell>>>,
    pub skipped: BTreeMap<AnalysisKind, usize>,
}

impl Summary {
    pub fn from_results(results: &RunResults) -> Self {
        let mut analyses = BTreeMap::new();
        let mut skipped = BTreeMap::new();
        for a in &results.analyses {
            let mut per_h: BTreeMap<HypothesisName, Vec<SummaryCell>> = BTreeMap::new();
            for s in &a.sweeps {
                per_h.entry(s.hypothesis).or_default().push(SummaryCell {
                    kappa: s.kappa,
                    n_languages: s.results.len(),
                    counts: s.counts.clone(),
                    bh_counts: s.bh_counts.clone(),
                });
            }
            analyses.insert(a.analysis, per_h);
            skipped.insert(a.analysis, a.skipped.len());
        }
        Summary {
            languages: results.languages.clone(),
            kappas: results.kappas.clone(),
            alpha: results.alpha,
            q: results.q,
            analyses,
            skipped,
        }
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            location: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn read_results(run_dir: &Path) -> Result<RunResults> {
    let status = run_dir.join("status.json");
    let complete = fs::read_to_string(&status)
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("complete").and_then(|c| c.as_bool()))
        .unwrap_or(false);
    if !complete {
        return Err(Error::IncompleteRun(format!(
            "{} has no completed run",
            run_dir.display()
        )));
    }
    let path = run_dir.join("results.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes verdict, sensitivity and heatmap tables for every analysis plus
/// `summary.json`. Returns the written paths.
pub fn emit_report(run_dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let results = read_results(run_dir)?;
    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Structured => "json",
    };
    let mut written = Vec::new();
    for a in &results.analyses {
        let dir = run_dir.join("analyses").join(a.analysis.as_str());
        let verdict_dir = dir.join("verdicts");
        create_dir(&verdict_dir)?;
        for s in &a.sweeps {
            let path = verdict_dir.join(format!("{}_k{}.{ext}", s.hypothesis.as_str(), kappa_label(s.kappa)));
            write_verdicts(&path, &verdict_rows(s), format)?;
            written.push(path);
        }
        let sens = sensitivity_rows(a, &results.hypotheses, &results.kappas);
        let path = dir.join(format!("sensitivity.{ext}"));
        match format {
            ReportFormat::Csv => write_sensitivity(&path, &sens, &results.kappas)?,
            ReportFormat::Structured => write_json(&path, &sens)?,
        }
        written.push(path);
        let path = dir.join(format!("heatmap.{ext}"));
        match format {
            ReportFormat::Csv => write_heatmap_csv(&path, a)?,
            ReportFormat::Structured => write_json(&path, &a.heatmap)?,
        }
        written.push(path);
        if !a.classification_scores.is_empty() {
            let path = dir.join(format!("scores.{ext}"));
            match format {
                ReportFormat::Csv => {
                    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
                    for s in &a.classification_scores {
                        w.serialize(s)?;
                    }
                    w.flush().map_err(|e| Error::io(&path, e))?;
                }
                ReportFormat::Structured => write_json(&path, &a.classification_scores)?,
            }
            written.push(path);
        }
    }
    let path = run_dir.join("summary.json");
    write_json(&path, &Summary::from_results(&results))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::decide;

    fn row(lang: &str, lo: f64, hi: f64, delta: f64, sidedness: Sidedness) -> VerdictRow {
        let d = decide(lo, hi, delta, sidedness);
        VerdictRow {
            language: lang.into(),
            n: 114,
            n_o: 6,
            n_t: 7,
            d_hat: (lo + hi) / 2.0,
            ci_lo: lo,
            ci_hi: hi,
            p: 0.012_345_678_901_234_5,
            decision: d,
            backend: Backend::MixedModel,
            bh_decision: Decision::Indeterminate,
            delta,
            p_dist: 1.0 / 3.0,
        }
    }

    #[test]
    fn verdict_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            row("bg", -0.1, 0.05, 0.2, Sidedness::OneSided),
            row("fr", 0.3, 0.5, 0.2, Sidedness::OneSided),
            row("xx", f64::MIN_POSITIVE, 1e-300, 0.1, Sidedness::TwoSided),
        ];
        for (name, fmt) in [("v.csv", ReportFormat::Csv), ("v.json", ReportFormat::Structured)] {
            let path = dir.path().join(name);
            write_verdicts(&path, &rows, fmt).unwrap();
            assert_eq!(read_verdicts(&path).unwrap(), rows);
        }
        let text = fs::read_to_string(dir.path().join("v.csv")).unwrap();
        assert!(text.starts_with("language,n,n_O,n_T,D_hat,ci_lo,ci_hi,p,decision,backend,bh_decision,delta,p_dist\n"));
        assert!(text.contains("bg,114,6,7,"));
    }

    #[test]
    fn empty_verdict_table_keeps_its_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_verdicts(&path, &[], ReportFormat::Csv).unwrap();
        assert!(read_verdicts(&path).unwrap().is_empty());
    }

    #[test]
    fn wrong_columns_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "language,n\nbg,3\n").unwrap();
        assert!(matches!(read_verdicts(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn incomplete_runs_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(dir.path(), ReportFormat::Csv),
            Err(Error::IncompleteRun(_))
        ));
        fs::write(dir.path().join("status.json"), r#"{"complete": false}"#).unwrap();
        assert!(matches!(
            emit_report(dir.path(), ReportFormat::Csv),
            Err(Error::IncompleteRun(_))
        ));
    }

    #[test]
    fn analysis_and_format_names_parse() {
        for k in AnalysisKind::ALL {
            assert_eq!(k.as_str().parse::<AnalysisKind>().unwrap(), k);
        }
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Structured);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
