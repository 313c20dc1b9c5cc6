use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("document `{document}` references undeclared config `{config}`")]
    DanglingConfig { document: String, config: String },
    #[error("config `{config}`: model group `{model_group}` cannot be applied to `{applied_to}` text")]
    IllegalConfig {
        config: String,
        model_group: String,
        applied_to: String,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("zero-norm vector at row {row}")]
    ZeroNorm { row: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("no feasible segmentation: min_size {min_size} exceeds sequence length {n}")]
    InfeasibleSegmentation { min_size: usize, n: usize },
    #[error("inconsistent lengths: {0}")]
    InconsistentLengths(String),
    #[error("power iteration did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("constant input: correlation undefined")]
    ConstantInput,
    #[error("too few configurations: need {needed}, found {found}")]
    TooFewConfigurations { needed: usize, found: usize },
    #[error("too few observations: need {needed}, found {found}")]
    TooFewObservations { needed: usize, found: usize },
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("variance-components fit did not converge")]
    FitNotConverged,
    #[error("bootstrap could not form a non-degenerate resample after {retries} retries")]
    DegenerateResample { retries: usize },
    #[error("no candidate observations: {0}")]
    NoCandidates(String),
    #[error("too few points for clustering: k = {k}, n = {n}")]
    TooFewPoints { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("incomplete run: {0}")]
    IncompleteRun(String),
    #[error("[{language}{}] {stage}: {source}", document.as_deref().map(|d| format!("/{d}")).unwrap_or_default())]
    Stage {
        language: String,
        document: Option<String>,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, language: &str, document: Option<&str>, stage: &'static str) -> Self {
        Error::Stage {
            language: language.to_string(),
            document: document.map(str::to_string),
            stage,
            source: Box::new(self),
        }
    }
}
