use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelGroup {
    OriginalLanguage,
    EnglishPosttranslation,
    Multilingual,
}

impl fmt::Display for ModelGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelGroup::OriginalLanguage => "original_language",
            ModelGroup::EnglishPosttranslation => "english_posttranslation",
            ModelGroup::Multilingual => "multilingual",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextVersion {
    Original,
    Translated,
}

impl fmt::Display for TextVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextVersion::Original => "original",
            TextVersion::Translated => "translated",
        })
    }
}

/// Which embedding pipeline produced a similarity matrix.
///
/// The declaration order (O, M, X, T) is the order in which letters appear
/// in pair-type names such as `OM`, `MX` or `XT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineType {
    /// Original-language model on original text.
    O,
    /// Multilingual model on original text.
    M,
    /// Multilingual model on translated text.
    X,
    /// English model on translated text.
    T,
}

impl PipelineType {
    /// Total over legal `(model_group, applied_to)` cells; the two cells that
    /// pair a monolingual model with the wrong text version are rejected.
    pub fn derive(group: ModelGroup, applied_to: TextVersion) -> Option<Self> {
        match (group, applied_to) {
            (ModelGroup::OriginalLanguage, TextVersion::Original) => Some(PipelineType::O),
            (ModelGroup::EnglishPosttranslation, TextVersion::Translated) => Some(PipelineType::T),
            (ModelGroup::Multilingual, TextVersion::Original) => Some(PipelineType::M),
            (ModelGroup::Multilingual, TextVersion::Translated) => Some(PipelineType::X),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            PipelineType::O => 'O',
            PipelineType::M => 'M',
            PipelineType::X => 'X',
            PipelineType::T => 'T',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'O' => Some(PipelineType::O),
            'M' => Some(PipelineType::M),
            'X' => Some(PipelineType::X),
            'T' => Some(PipelineType::T),
            _ => None,
        }
    }

    pub fn text_version(self) -> TextVersion {
        match self {
            PipelineType::O | PipelineType::M => TextVersion::Original,
            PipelineType::X | PipelineType::T => TextVersion::Translated,
        }
    }
}

impl fmt::Display for PipelineType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEntry {
    pub config_id: String,
    pub model_group: ModelGroup,
    pub applied_to: TextVersion,
    /// Underlying model identity. Two configs sharing a model but applied to
    /// different text versions form a same-model pair. Defaults to the config id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl ConfigEntry {
    pub fn model_id(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.config_id)
    }

    pub fn pipeline_type(&self) -> Result<PipelineType> {
        PipelineType::derive(self.model_group, self.applied_to).ok_or_else(|| Error::IllegalConfig {
            config: self.config_id.clone(),
            model_group: self.model_group.to_string(),
            applied_to: self.applied_to.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentEntry {
    pub document_id: String,
    pub language: String,
    pub version: TextVersion,
    /// For translated documents: the id of the original they translate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_of: Option<String>,
    /// config id -> embedding file, relative to the manifest directory.
    pub embeddings: BTreeMap<String, PathBuf>,
}

/// Configs used to align an original document with its translation. The two
/// sides normally share one multilingual encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentConfigs {
    pub source: String,
    pub target: String,
}

/// Optional downstream inputs, keyed by language.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamInputs {
    /// Gold labels per paragraph item.
    #[serde(default)]
    pub gold_labels: BTreeMap<String, PathBuf>,
    /// Classifier predictions per config.
    #[serde(default)]
    pub predictions: BTreeMap<String, BTreeMap<String, PathBuf>>,
    /// Externally reduced similarity matrices (`SIM1`) per config.
    #[serde(default)]
    pub reduced_similarity: BTreeMap<String, BTreeMap<String, PathBuf>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub languages: Vec<String>,
    pub documents: Vec<DocumentEntry>,
    pub configs: Vec<ConfigEntry>,
    /// language -> config used for change-point segmentation. Defaults to the
    /// first original-text config (O before M, then by id) available for the language.
    #[serde(default)]
    pub segmentation: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentConfigs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream: Option<DownstreamInputs>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let mut manifest: CorpusManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("{origin}:{}:{}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        manifest.validate()?;
        manifest.base_dir = PathBuf::new();
        Ok(manifest)
    }

    pub fn config(&self, id: &str) -> Option<&ConfigEntry> {
        self.configs.iter().find(|c| c.config_id == id)
    }

    pub fn pipeline_type(&self, config_id: &str) -> Option<PipelineType> {
        self.config(config_id).and_then(|c| c.pipeline_type().ok())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn documents_of<'a>(
        &'a self,
        language: &'a str,
        version: TextVersion,
    ) -> impl Iterator<Item = &'a DocumentEntry> + 'a {
        self.documents
            .iter()
            .filter(move |d| d.language == language && d.version == version)
    }

    pub fn translation_of(&self, original_id: &str) -> Option<&DocumentEntry> {
        self.documents
            .iter()
            .find(|d| d.translation_of.as_deref() == Some(original_id))
    }

    /// Configs with embeddings for every document of the matching text version
    /// in `language`, sorted by id.
    pub fn language_configs(&self, language: &str) -> Vec<&ConfigEntry> {
        let mut out: Vec<&ConfigEntry> = self
            .configs
            .iter()
            .filter(|c| {
                let mut docs = self.documents_of(language, c.applied_to).peekable();
                docs.peek().is_some() && docs.all(|d| d.embeddings.contains_key(&c.config_id))
            })
            .collect();
        out.sort_by(|a, b| a.config_id.cmp(&b.config_id));
        out
    }

    pub fn segmentation_config(&self, language: &str) -> Option<String> {
        if let Some(c) = self.segmentation.get(language) {
            return Some(c.clone());
        }
        let mut originals: Vec<_> = self
            .language_configs(language)
            .into_iter()
            .filter(|c| c.applied_to == TextVersion::Original)
            .collect();
        originals.sort_by_key(|c| (c.pipeline_type().ok(), c.config_id.clone()));
        originals.first().map(|c| c.config_id.clone())
    }

    /// Explicit alignment configs, or the first multilingual model with both
    /// an original-text and a translated-text config in `language`.
    pub fn alignment_configs(&self, language: &str) -> Option<AlignmentConfigs> {
        if let Some(a) = &self.alignment {
            return Some(a.clone());
        }
        let configs = self.language_configs(language);
        for m in configs
            .iter()
            .filter(|c| c.pipeline_type().ok() == Some(PipelineType::M))
        {
            if let Some(x) = configs
                .iter()
                .find(|c| c.pipeline_type().ok() == Some(PipelineType::X) && c.model_id() == m.model_id())
            {
                return Some(AlignmentConfigs {
                    source: m.config_id.clone(),
                    target: x.config_id.clone(),
                });
            }
        }
        None
    }

    fn validate(&self) -> Result<()> {
        let mut config_ids = BTreeSet::new();
        for (i, c) in self.configs.iter().enumerate() {
            if !config_ids.insert(c.config_id.as_str()) {
                return Err(Error::InvalidManifest(format!(
                    "configs[{i}]: duplicate config id `{}`",
                    c.config_id
                )));
            }
            c.pipeline_type()?;
        }
        let languages: BTreeSet<&str> = self.languages.iter().map(String::as_str).collect();
        let mut doc_ids = BTreeSet::new();
        for (i, d) in self.documents.iter().enumerate() {
            if !doc_ids.insert(d.document_id.as_str()) {
                return Err(Error::DuplicateDocument(d.document_id.clone()));
            }
            if !languages.contains(d.language.as_str()) {
                return Err(Error::InvalidManifest(format!(
                    "documents[{i}] (`{}`): undeclared language `{}`",
                    d.document_id, d.language
                )));
            }
            for config in d.embeddings.keys() {
                let Some(entry) = self.config(config) else {
                    return Err(Error::DanglingConfig {
                        document: d.document_id.clone(),
                        config: config.clone(),
                    });
                };
                if entry.applied_to != d.version {
                    return Err(Error::InvalidManifest(format!(
                        "documents[{i}] (`{}`): config `{config}` applies to {} text but the document is {}",
                        d.document_id, entry.applied_to, d.version
                    )));
                }
            }
        }
        for (i, d) in self.documents.iter().enumerate() {
            match (d.version, &d.translation_of) {
                (TextVersion::Translated, Some(src)) => {
                    let ok = self.documents.iter().any(|o| {
                        &o.document_id == src && o.version == TextVersion::Original && o.language == d.language
                    });
                    if !ok {
                        return Err(Error::InvalidManifest(format!(
                            "documents[{i}] (`{}`): translation_of `{src}` is not an original document of language `{}`",
                            d.document_id, d.language
                        )));
                    }
                }
                (TextVersion::Translated, None) => {
                    return Err(Error::InvalidManifest(format!(
                        "documents[{i}] (`{}`): translated document without translation_of",
                        d.document_id
                    )))
                }
                (TextVersion::Original, Some(_)) => {
                    return Err(Error::InvalidManifest(format!(
                        "documents[{i}] (`{}`): original document cannot declare translation_of",
                        d.document_id
                    )))
                }
                (TextVersion::Original, None) => {}
            }
        }
        for (lang, config) in &self.segmentation {
            let entry = self.config(config).ok_or_else(|| Error::DanglingConfig {
                document: format!("segmentation[{lang}]"),
                config: config.clone(),
            })?;
            if entry.applied_to != TextVersion::Original {
                return Err(Error::InvalidManifest(format!(
                    "segmentation[{lang}]: config `{config}` must apply to original text"
                )));
            }
        }
        if let Some(a) = &self.alignment {
            for (side, config, version) in [
                ("source", &a.source, TextVersion::Original),
                ("target", &a.target, TextVersion::Translated),
            ] {
                let entry = self.config(config).ok_or_else(|| Error::DanglingConfig {
                    document: format!("alignment.{side}"),
                    config: config.clone(),
                })?;
                if entry.applied_to != version {
                    return Err(Error::InvalidManifest(format!(
                        "alignment.{side}: config `{config}` must apply to {version} text"
                    )));
                }
            }
        }
        if let Some(ds) = &self.downstream {
            for (lang, preds) in ds.predictions.iter().chain(&ds.reduced_similarity) {
                for config in preds.keys() {
                    if self.config(config).is_none() {
                        return Err(Error::DanglingConfig {
                            document: format!("downstream[{lang}]"),
                            config: config.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = CorpusManifest::from_json(&text, &path.display().to_string())?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}
