//! Synthetic bilingual corpora with a known topic structure.
//!
//! Each original document is a run of topic blocks; a sentence is its topic
//! vector plus noise in a shared latent space. Translation keeps the sentence
//! order, occasionally merges two adjacent sentences into one, and adds a
//! language-specific perturbation. Every configuration sees the latent
//! sentences through its own fixed linear map plus observation noise, so
//! configurations agree with each other only up to their idiosyncrasies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus_io::{
    write_embeddings, ConfigEntry, CorpusManifest, DocumentEntry, ModelGroup, SentenceEmbeddingSequence, TextVersion,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Language code and the strength of its translation perturbation.
    pub languages: Vec<(String, f64)>,
    pub docs_per_language: usize,
    pub n_original_models: usize,
    pub n_english_models: usize,
    pub n_multilingual_models: usize,
    pub dim: usize,
    pub topics_per_doc: (usize, usize),
    pub sentences_per_topic: (usize, usize),
    /// Probability that a sentence is merged with the next one in translation.
    pub merge_prob: f64,
    pub model_distortion: f64,
    pub model_noise: f64,
    pub sentence_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            languages: vec![("aa".into(), 0.15), ("bb".into(), 0.6)],
            docs_per_language: 5,
            n_original_models: 3,
            n_english_models: 3,
            n_multilingual_models: 3,
            dim: 16,
            topics_per_doc: (3, 5),
            sentences_per_topic: (3, 6),
            merge_prob: 0.1,
            model_distortion: 0.35,
            model_noise: 0.25,
            sentence_noise: 0.35,
            seed: 7,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// A configuration's view: `x -> A x + noise` with `A = I + s G / sqrt(d)`.
struct Lens {
    a: Vec<f64>,
    noise: f64,
}

impl Lens {
    fn new(rng: &mut ChaCha8Rng, d: usize, distortion: f64, noise: f64) -> Self {
        let g = gaussian(rng, d * d);
        let scale = distortion / (d as f64).sqrt();
        let mut a: Vec<f64> = g.iter().map(|v| v * scale).collect();
        for i in 0..d {
            a[i * d + i] += 1.0;
        }
        Self { a, noise }
    }

    fn apply(&self, rng: &mut ChaCha8Rng, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..d)
            .map(|i| {
                let v: f64 = (0..d).map(|j| self.a[i * d + j] * x[j]).sum();
                let e: f64 = StandardNormal.sample(rng);
                v + self.noise * e
            })
            .collect()
    }
}

/// Writes embeddings and a manifest under `dir`; returns the manifest path.
pub fn generate_corpus(dir: &Path, spec: &SynthSpec) -> Result<PathBuf> {
    if spec.dim == 0 || spec.docs_per_language == 0 || spec.languages.is_empty() {
        return Err(Error::InvalidParameter("empty synthetic corpus".into()));
    }
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let emb_dir = dir.join("embeddings");

    let mut configs = Vec::new();
    let mut lenses: BTreeMap<String, Lens> = BTreeMap::new();
    let mut add =
        |configs: &mut Vec<ConfigEntry>, rng: &mut ChaCha8Rng, id: String, group, applied, model: Option<String>| {
            lenses.insert(id.clone(), Lens::new(rng, d, spec.model_distortion, spec.model_noise));
            configs.push(ConfigEntry {
                config_id: id,
                model_group: group,
                applied_to: applied,
                model,
            });
        };
    for i in 0..spec.n_original_models {
        add(
            &mut configs,
            &mut rng,
            format!("orig{i}"),
            ModelGroup::OriginalLanguage,
            TextVersion::Original,
            None,
        );
    }
    for i in 0..spec.n_english_models {
        add(
            &mut configs,
            &mut rng,
            format!("eng{i}"),
            ModelGroup::EnglishPosttranslation,
            TextVersion::Translated,
            None,
        );
    }
    for i in 0..spec.n_multilingual_models {
        let model = format!("multi{i}");
        add(
            &mut configs,
            &mut rng,
            format!("{model}-src"),
            ModelGroup::Multilingual,
            TextVersion::Original,
            Some(model.clone()),
        );
        add(
            &mut configs,
            &mut rng,
            format!("{model}-tgt"),
            ModelGroup::Multilingual,
            TextVersion::Translated,
            Some(model),
        );
    }
    // Same-model configs share their lens: the encoder is identical across versions.
    for i in 0..spec.n_multilingual_models {
        let src = format!("multi{i}-src");
        let a = lenses[&src].a.clone();
        lenses.get_mut(&format!("multi{i}-tgt")).expect("added").a = a;
    }

    let mut documents = Vec::new();
    for (lang, perturbation) in &spec.languages {
        for k in 0..spec.docs_per_language {
            let n_topics = rng.random_range(spec.topics_per_doc.0..=spec.topics_per_doc.1);
            let mut latent: Vec<Vec<f64>> = Vec::new();
            for _ in 0..n_topics {
                let topic: Vec<f64> = gaussian(&mut rng, d);
                let len = rng.random_range(spec.sentences_per_topic.0..=spec.sentences_per_topic.1);
                for _ in 0..len {
                    let eps = gaussian(&mut rng, d);
                    latent.push(
                        topic
                            .iter()
                            .zip(&eps)
                            .map(|(t, e)| t + spec.sentence_noise * e)
                            .collect(),
                    );
                }
            }
            let mut translated: Vec<Vec<f64>> = Vec::new();
            let mut i = 0;
            while i < latent.len() {
                let mut s = latent[i].clone();
                if i + 1 < latent.len() && rng.random_bool(spec.merge_prob) {
                    s = s.iter().zip(&latent[i + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
                    i += 1;
                }
                let eps = gaussian(&mut rng, d);
                translated.push(s.iter().zip(&eps).map(|(a, e)| a + perturbation * e).collect());
                i += 1;
            }

            let orig_id = format!("{lang}-doc{k}");
            let trans_id = format!("{orig_id}-en");
            let mut orig_files = BTreeMap::new();
            let mut trans_files = BTreeMap::new();
            for c in &configs {
                let (doc_id, sentences, files) = match c.applied_to {
                    TextVersion::Original => (&orig_id, &latent, &mut orig_files),
                    TextVersion::Translated => (&trans_id, &translated, &mut trans_files),
                };
                let lens = &lenses[&c.config_id];
                let rows: Vec<Vec<f64>> = sentences.iter().map(|x| lens.apply(&mut rng, x)).collect();
                let seq = SentenceEmbeddingSequence::from_rows(doc_id.clone(), c.config_id.clone(), &rows)?;
                let rel = PathBuf::from("embeddings").join(format!("{doc_id}.{}.emb", c.config_id));
                write_embeddings(emb_dir.join(format!("{doc_id}.{}.emb", c.config_id)), &seq)?;
                files.insert(c.config_id.clone(), rel);
            }
            documents.push(DocumentEntry {
                document_id: orig_id.clone(),
                language: lang.clone(),
                version: TextVersion::Original,
                translation_of: None,
                embeddings: orig_files,
            });
            documents.push(DocumentEntry {
                document_id: trans_id,
                language: lang.clone(),
                version: TextVersion::Translated,
                translation_of: Some(orig_id),
                embeddings: trans_files,
            });
        }
    }
    let manifest = CorpusManifest {
        languages: spec.languages.iter().map(|(l, _)| l.clone()).collect(),
        documents,
        configs,
        segmentation: BTreeMap::new(),
        alignment: None,
        downstream: None,
        base_dir: PathBuf::new(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
