use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invariance_lab::aligner::{monotone_align, normalize_rows};
use invariance_lab::corpus_io::{
    load_manifest, read_embeddings, read_labels, read_similarity, write_labels, write_similarity, Partition,
    PipelineType, SentenceEmbeddingSequence,
};
use invariance_lab::downstream::agreement_table;
use invariance_lab::inference::{
    analyze, kappa_sweep, BootstrapParams, HypothesisName, HypothesisSpec, InferenceSettings,
};
use invariance_lab::pooler::PageRankParams;
use invariance_lab::report::{
    align_stage, cluster_stage, config_meta, correlate_stage, emit_report, pool_stage, run_pipeline, segment_stage,
    similarity_stage, verdict_rows, write_verdicts, ClusteringParams, DocumentAlignment, DocumentSegmentation,
    PooledLanguage, ReportFormat, RunConfig,
};
use invariance_lab::segmenter::SegmenterParams;
use invariance_lab::simcorr::{read_observations_file, write_observations};
use invariance_lab::synth::{generate_corpus, SynthSpec};
use invariance_lab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "invariance-lab",
    version,
    about = "Translation-invariance tests for document embeddings"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage from a manifest and write the report.
    Run(RunArgs),
    /// Segment the original documents of one language.
    Segment(SegmentArgs),
    /// Align originals with translations and project their segmentations.
    Align(AlignArgs),
    /// Pool sentences into paragraph embeddings for every config.
    Pool(PoolArgs),
    /// Paragraph cosine-similarity matrices.
    Simmat(SimmatArgs),
    /// Pairwise correlations between similarity matrices.
    Correlate(CorrelateArgs),
    /// Spherical k-means partitions of paragraph embeddings.
    Cluster(ClusterArgs),
    /// Pairwise ARI between partitions.
    Agree(AgreeArgs),
    /// Test one hypothesis on an observation table.
    Test(TestArgs),
    /// Re-emit the tables of a completed run.
    Report(ReportArgs),
    /// Write a synthetic bilingual corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Manifest {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    language: String,
}

#[derive(Args)]
struct SegmentFlags {
    /// Penalty per change point.
    #[arg(long, alias = "beta", default_value_t = 1.0)]
    penalty: f64,
    /// Penalty retried when the first pass finds no change point.
    #[arg(long, alias = "fallback-beta", default_value_t = 0.5)]
    fallback_penalty: f64,
    /// Minimum segment length as a fraction of the document.
    #[arg(long, default_value_t = 0.05)]
    min_frac: f64,
}

impl From<&SegmentFlags> for SegmenterParams {
    fn from(f: &SegmentFlags) -> Self {
        SegmenterParams {
            penalty: f.penalty,
            fallback_penalty: f.fallback_penalty,
            min_frac: f.min_frac,
        }
    }
}

#[derive(Args)]
struct PageRankFlags {
    #[arg(long, default_value_t = 0.85)]
    damping: f64,
    #[arg(long, default_value_t = 1e-9)]
    pr_tol: f64,
}

impl From<&PageRankFlags> for PageRankParams {
    fn from(f: &PageRankFlags) -> Self {
        PageRankParams {
            damping: f.damping,
            tol: f.pr_tol,
            ..PageRankParams::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2")]
    kappa: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    bootstrap_reps: usize,
    #[command(flatten)]
    segment: SegmentFlags,
    #[arg(long, default_value_t = -0.2, allow_hyphen_values = true)]
    gap_penalty: f64,
    #[command(flatten)]
    pagerank: PageRankFlags,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Skip the k-means clustering analysis.
    #[arg(long)]
    no_clustering: bool,
    /// Comma-separated subset of baseline,best_model,multilingual,om_ot_equivalence.
    #[arg(long, value_delimiter = ',')]
    hypotheses: Option<Vec<String>>,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    input: Manifest,
    #[command(flatten)]
    flags: SegmentFlags,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

/// Either aligns a whole language from the manifest (`--manifest`,
/// `--language`, `--segmentations`) or two embedding files directly
/// (`--source`, `--target`).
#[derive(Args)]
struct AlignArgs {
    #[arg(long, requires_all = ["language", "segmentations"], required_unless_present = "source")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    language: Option<String>,
    /// Output of `segment`.
    #[arg(long)]
    segmentations: Option<PathBuf>,
    #[arg(long, requires = "target", conflicts_with = "manifest")]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, default_value_t = -0.2, allow_hyphen_values = true)]
    gap_penalty: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PoolArgs {
    #[command(flatten)]
    input: Manifest,
    /// Output of `align`.
    #[arg(long)]
    alignments: PathBuf,
    #[command(flatten)]
    pagerank: PageRankFlags,
    /// Output directory for `<language>.<config>.emb` and `items.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimmatArgs {
    #[arg(long)]
    language: String,
    /// Directory written by `pool`.
    #[arg(long)]
    paragraphs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    input: Manifest,
    /// Directory of `<config>.sim` files.
    #[arg(long)]
    similarity: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    language: String,
    #[arg(long)]
    paragraphs: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Output directory for `<config>.csv` label files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AgreeArgs {
    #[command(flatten)]
    input: Manifest,
    /// Directory of `<config>.csv` label files (item_id, label).
    #[arg(long)]
    partitions: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    /// Observation table (`correlate` or `agree` output).
    #[arg(long)]
    observations: PathBuf,
    /// baseline, best, multilingual, omot or all.
    #[arg(long, default_value = "baseline")]
    hypothesis: String,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    kappa: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    /// Root seed for the bootstrap.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    bootstrap_reps: usize,
    /// Output directory for verdict tables.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    docs: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_paragraphs(language: &str, dir: &Path) -> Result<PooledLanguage> {
    let mut paragraphs = BTreeMap::new();
    let prefix = format!("{language}.");
    for path in sorted_files(dir, "emb")? {
        let s = stem(&path);
        let Some(config) = s.strip_prefix(&prefix) else {
            continue;
        };
        let seq = read_embeddings(&path)?;
        let seq = SentenceEmbeddingSequence::new(language, config, seq.dim(), seq.as_slice().to_vec())?;
        paragraphs.insert(config.to_string(), seq);
    }
    let items = read_labels_column(&dir.join("items.csv"))?;
    Ok(PooledLanguage {
        language: language.to_string(),
        item_ids: items,
        paragraphs,
    })
}

fn read_labels_column(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    r.records()
        .map(|rec| Ok(rec?.get(0).unwrap_or_default().to_string()))
        .collect()
}

fn hypotheses(names: &Option<Vec<String>>) -> Result<Vec<HypothesisName>> {
    match names {
        None => Ok(HypothesisName::ALL.to_vec()),
        Some(v) => v.iter().map(|s| s.parse()).collect(),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let mut config = RunConfig::new(&a.manifest, &a.out);
            config.kappas = a.kappa;
            config.alpha = a.alpha;
            config.q = a.q;
            config.seed = a.seed;
            config.bootstrap_reps = a.bootstrap_reps;
            config.segmenter = (&a.segment).into();
            config.gap_penalty = a.gap_penalty;
            config.pagerank = (&a.pagerank).into();
            config.clustering = (!a.no_clustering).then_some(ClusteringParams {
                k: a.k,
                restarts: a.restarts,
                ..ClusteringParams::default()
            });
            config.hypotheses = hypotheses(&a.hypotheses)?;
            config.threads = cli.threads;
            let results = run_pipeline(&config)?;
            for analysis in &results.analyses {
                for sweep in analysis.sweeps.iter().filter(|s| s.kappa == 1.0) {
                    let counts: Vec<String> = sweep.counts.0.iter().map(|(d, n)| format!("{d}={n}")).collect();
                    println!(
                        "{:<15} {:<18} {}",
                        analysis.analysis,
                        sweep.hypothesis,
                        counts.join(" ")
                    );
                }
            }
            println!("report written to {}", a.out.display());
        }
        Command::Segment(a) => {
            let m = load_manifest(&a.input.manifest)?;
            write_json(&a.out, &segment_stage(&m, &a.input.language, &(&a.flags).into())?)?;
        }
        Command::Align(a) => match (&a.source, &a.target, &a.manifest, &a.language, &a.segmentations) {
            (Some(src), Some(tgt), ..) => {
                let src = normalize_rows(&read_embeddings(src)?)?;
                let tgt = normalize_rows(&read_embeddings(tgt)?)?;
                write_json(&a.out, &monotone_align(&src, &tgt, a.gap_penalty)?)?;
            }
            (_, _, Some(manifest), Some(language), Some(segmentations)) => {
                let m = load_manifest(manifest)?;
                let segs: Vec<DocumentSegmentation> = read_json(segmentations)?;
                write_json(&a.out, &align_stage(&m, language, &segs, a.gap_penalty)?)?;
            }
            _ => unreachable!("clap enforces one of the two input modes"),
        },
        Command::Pool(a) => {
            let m = load_manifest(&a.input.manifest)?;
            let aligns: Vec<DocumentAlignment> = read_json(&a.alignments)?;
            let pooled = pool_stage(&m, &a.input.language, &aligns, &(&a.pagerank).into())?;
            mkdir(&a.out)?;
            for (c, seq) in &pooled.paragraphs {
                invariance_lab::corpus_io::write_embeddings(a.out.join(format!("{}.{c}.emb", a.input.language)), seq)?;
            }
            let mut w = csv::Writer::from_path(a.out.join("items.csv")).map_err(|e| Error::Parse {
                location: "items.csv".into(),
                message: e.to_string(),
            })?;
            w.write_record(["item_id"])?;
            for id in &pooled.item_ids {
                w.write_record([id])?;
            }
            w.flush().map_err(|e| Error::Io {
                path: a.out.join("items.csv"),
                source: e,
            })?;
        }
        Command::Simmat(a) => {
            let pooled = load_paragraphs(&a.language, &a.paragraphs)?;
            mkdir(&a.out)?;
            for m in similarity_stage(&pooled)? {
                write_similarity(a.out.join(format!("{}.sim", m.config_id)), &m)?;
            }
        }
        Command::Correlate(a) => {
            let m = load_manifest(&a.input.manifest)?;
            let lang = &a.input.language;
            let matrices = sorted_files(&a.similarity, "sim")?
                .iter()
                .map(|p| read_similarity(p, lang, &stem(p)))
                .collect::<Result<Vec<_>>>()?;
            let obs = correlate_stage(lang, &matrices, &config_meta(&m, lang)?)?;
            write_observations(create(&a.out)?, &obs, "r")?;
        }
        Command::Cluster(a) => {
            let pooled = load_paragraphs(&a.language, &a.paragraphs)?;
            let params = ClusteringParams {
                k: a.k,
                restarts: a.restarts,
                ..ClusteringParams::default()
            };
            mkdir(&a.out)?;
            for (c, p) in cluster_stage(&pooled, &params, a.seed)? {
                let labels: Vec<String> = p.assignments().iter().map(usize::to_string).collect();
                write_labels(a.out.join(format!("{c}.csv")), &pooled.item_ids, &labels)?;
            }
        }
        Command::Agree(a) => {
            let m = load_manifest(&a.input.manifest)?;
            let lang = &a.input.language;
            let mut items = Vec::new();
            let mut names = Vec::new();
            for p in sorted_files(&a.partitions, "csv")? {
                names.push(stem(&p));
                items.push(read_labels(&p)?);
            }
            let sets: Vec<&[String]> = items.iter().map(|l| l.labels.as_slice()).collect();
            let (encoded, _) = invariance_lab::corpus_io::encode_shared(&sets);
            let partitions: BTreeMap<String, Partition> = names
                .into_iter()
                .zip(encoded)
                .map(|(n, e)| (n, Partition::new(e)))
                .collect();
            let obs = agreement_table(lang, &partitions, &config_meta(&m, lang)?)?;
            write_observations(create(&a.out)?, &obs, "ari")?;
        }
        Command::Test(a) => {
            let obs = read_observations_file(&a.observations, None::<&BTreeMap<String, PipelineType>>)?;
            let names: Vec<HypothesisName> = if a.hypothesis == "all" {
                HypothesisName::ALL.to_vec()
            } else {
                vec![a.hypothesis.parse()?]
            };
            let settings = InferenceSettings {
                alpha: a.alpha,
                q: a.q,
                bootstrap: BootstrapParams {
                    replicates: a.bootstrap_reps,
                    seed: a.seed,
                    ..BootstrapParams::default()
                },
                ..InferenceSettings::default()
            };
            let mut languages: Vec<&str> = obs.iter().map(|o| o.language.as_str()).collect();
            languages.sort_unstable();
            languages.dedup();
            let format: ReportFormat = a.format.parse()?;
            let ext = if format == ReportFormat::Csv { "csv" } else { "json" };
            mkdir(&a.out)?;
            for name in names {
                let spec = HypothesisSpec::new(name, 1.0);
                let analyses = languages
                    .iter()
                    .map(|l| analyze(l, &obs, &spec, &settings))
                    .collect::<Result<Vec<_>>>()?;
                for sweep in kappa_sweep(&analyses, &a.kappa, a.q)? {
                    let path = a.out.join(format!("{}_k{}.{ext}", name.as_str(), sweep.kappa));
                    write_verdicts(&path, &verdict_rows(&sweep), format)?;
                    println!("{}", path.display());
                }
            }
        }
        Command::Report(a) => {
            for p in emit_report(&a.run, a.format.parse()?)? {
                println!("{}", p.display());
            }
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                seed: a.seed,
                docs_per_language: a.docs,
                ..SynthSpec::default()
            };
            println!("{}", generate_corpus(&a.out, &spec)?.display());
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
