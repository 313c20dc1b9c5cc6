use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bootstrap::{cluster_bootstrap, BootstrapOutcome, BootstrapParams};
use super::decision::{decide, normal_estimate, Decision, Estimate, Sidedness};
use super::fdr::bh_adjust;
use super::mixed::{fit_variance_components_with, FitOptions, VarianceComponentsFit};
use super::spec::{HypothesisName, HypothesisSpec};
use crate::corpus_io::PipelineType;
use crate::error::{Error, Result};
use crate::simcorr::{PairObservation, PairType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    MixedModel,
    Bootstrap,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::MixedModel => "mixed_model",
            Backend::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub alpha: f64,
    pub q: f64,
    pub bootstrap: BootstrapParams,
    pub fit: FitOptions,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            q: 0.05,
            bootstrap: BootstrapParams::default(),
            fit: FitOptions::default(),
        }
    }
}

/// Seed for one (language, hypothesis) cell, independent of processing order.
pub fn derive_seed(root: u64, language: &str, hypothesis: HypothesisName) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(language.as_bytes());
    h.update([0u8]);
    h.update(hypothesis.as_str().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// `mu[a] - mu[b]` from a converged fit, with normal-theory interval and p-values.
pub fn estimate_difference(
    fit: &VarianceComponentsFit,
    reference: PairType,
    candidate: PairType,
    alpha: f64,
    delta: f64,
    sidedness: Sidedness,
) -> Result<Estimate> {
    if !fit.converged {
        return Err(Error::FitNotConverged);
    }
    let (d, se) = fit.difference(reference, candidate)?;
    Ok(normal_estimate(d, se, alpha, delta, sidedness))
}

/// Everything about one (language, hypothesis) that does not depend on kappa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisAnalysis {
    pub language: String,
    pub spec: HypothesisSpec,
    pub n_obs: usize,
    pub n_o: usize,
    pub n_t: usize,
    pub n_ref_configs: usize,
    pub n_cand_configs: usize,
    pub sigma_l: f64,
    pub margin_fit_converged: bool,
    pub backend: Backend,
    pub alpha: f64,
    pub d_hat: f64,
    pub se: Option<f64>,
    pub bootstrap: Option<BootstrapOutcome>,
    pub best_config: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub language: String,
    pub hypothesis: HypothesisName,
    pub kappa: f64,
    /// Unordered observation count of the reference and candidate families.
    pub n_obs: usize,
    pub n_o: usize,
    pub n_t: usize,
    pub n_ref_configs: usize,
    pub n_cand_configs: usize,
    pub sigma_l: f64,
    pub delta: f64,
    pub d_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub se: Option<f64>,
    pub p_inv: f64,
    pub p_dist: f64,
    pub decision: Decision,
    pub backend: Backend,
    pub bh_decision: Decision,
    pub best_config: Option<String>,
}

impl HypothesisResult {
    /// Observation count under ordered-pair counting, as tables report it.
    pub fn reported_n(&self) -> usize {
        2 * self.n_obs
    }

    pub fn sidedness(&self) -> Sidedness {
        HypothesisSpec::new(self.hypothesis, self.kappa).sidedness
    }
}

impl HypothesisAnalysis {
    pub fn at_kappa(&self, kappa: f64) -> HypothesisResult {
        let delta = kappa * self.sigma_l;
        let sidedness = self.spec.sidedness;
        let est = match &self.bootstrap {
            Some(b) => b.estimate(self.alpha, delta, sidedness),
            None => normal_estimate(self.d_hat, self.se.unwrap_or(0.0), self.alpha, delta, sidedness),
        };
        let decision = decide(est.ci_lo, est.ci_hi, delta, sidedness);
        HypothesisResult {
            language: self.language.clone(),
            hypothesis: self.spec.name,
            kappa,
            n_obs: self.n_obs,
            n_o: self.n_o,
            n_t: self.n_t,
            n_ref_configs: self.n_ref_configs,
            n_cand_configs: self.n_cand_configs,
            sigma_l: self.sigma_l,
            delta,
            d_hat: est.d_hat,
            ci_lo: est.ci_lo,
            ci_hi: est.ci_hi,
            se: est.se,
            p_inv: est.p_inv,
            p_dist: est.p_dist,
            decision,
            backend: self.backend,
            bh_decision: decision,
            best_config: self.best_config.clone(),
        }
    }
}

fn distinct_configs<'a>(obs: impl Iterator<Item = &'a PairObservation>) -> usize {
    obs.flat_map(|o| [o.config_a.as_str(), o.config_b.as_str()])
        .collect::<BTreeSet<_>>()
        .len()
}

/// Fits (or bootstraps) one hypothesis for one language.
pub fn analyze(
    language: &str,
    obs: &[PairObservation],
    spec: &HypothesisSpec,
    settings: &InferenceSettings,
) -> Result<HypothesisAnalysis> {
    let lang: Vec<&PairObservation> = obs.iter().filter(|o| o.language == language).collect();
    let mut types: BTreeMap<&str, PipelineType> = BTreeMap::new();
    for o in &lang {
        types.insert(&o.config_a, o.type_a);
        types.insert(&o.config_b, o.type_b);
    }
    let count_type = |t| types.values().filter(|&&v| v == t).count();
    let relevant: Vec<PairObservation> = lang
        .iter()
        .filter(|o| spec.is_reference(o) || spec.is_candidate(o))
        .map(|o| (*o).clone())
        .collect();
    let n_ref = relevant.iter().filter(|o| spec.is_reference(o)).count();
    if n_ref == 0 || n_ref == relevant.len() {
        return Err(Error::Empty(format!(
            "{language}/{}: needs both {} and {} observations",
            spec.name, spec.reference, spec.candidate
        )));
    }
    let margin_obs: Vec<PairObservation> = lang
        .iter()
        .filter(|o| spec.is_margin(o))
        .map(|o| (*o).clone())
        .collect();
    let margin_fit = fit_variance_components_with(
        &margin_obs,
        &FitOptions {
            fix_sigma2_cfg_zero: false,
            ..settings.fit
        },
    )?;
    if !margin_fit.converged {
        warn!(
            "{language}/{}: margin fit did not converge; using its estimates",
            spec.name
        );
    }

    let bootstrap_params = BootstrapParams {
        seed: derive_seed(settings.bootstrap.seed, language, spec.name),
        ..settings.bootstrap
    };
    let mixed = if spec.select_best {
        None
    } else {
        match fit_variance_components_with(&relevant, &settings.fit) {
            Ok(fit) if fit.converged => Some(fit),
            Ok(_) => {
                warn!(
                    "{language}/{}: mixed model did not converge, using the bootstrap",
                    spec.name
                );
                None
            }
            Err(Error::SingularDesign(why)) => {
                warn!("{language}/{}: singular design ({why}), using the bootstrap", spec.name);
                None
            }
            Err(e) => return Err(e),
        }
    };
    let (backend, d_hat, se, boot) = match mixed {
        Some(fit) => {
            let (d, se) = fit.difference(spec.reference, spec.candidate)?;
            (Backend::MixedModel, d, Some(se), None)
        }
        None => {
            let out = cluster_bootstrap(&relevant, spec, &bootstrap_params)?;
            (Backend::Bootstrap, out.d_hat, None, Some(out))
        }
    };
    Ok(HypothesisAnalysis {
        language: language.to_string(),
        spec: *spec,
        n_obs: relevant.len(),
        n_o: count_type(PipelineType::O),
        n_t: count_type(PipelineType::T),
        n_ref_configs: distinct_configs(relevant.iter().filter(|o| spec.is_reference(o))),
        n_cand_configs: distinct_configs(relevant.iter().filter(|o| spec.is_candidate(o))),
        sigma_l: margin_fit.sigma_l(),
        margin_fit_converged: margin_fit.converged,
        backend,
        alpha: settings.alpha,
        d_hat,
        se,
        best_config: boot.as_ref().and_then(|b| b.best_config.clone()),
        bootstrap: boot,
    })
}

pub fn run_hypothesis(
    language: &str,
    obs: &[PairObservation],
    spec: &HypothesisSpec,
    settings: &InferenceSettings,
) -> Result<HypothesisResult> {
    Ok(analyze(language, obs, spec, settings)?.at_kappa(spec.kappa))
}

/// Benjamini-Hochberg across the rows of one hypothesis at one kappa,
/// applied separately to the invariance and the distortion p-values.
/// A verdict whose supporting p-value is not rejected becomes indeterminate.
pub fn apply_bh(results: &mut [HypothesisResult], q: f64) -> Result<()> {
    let inv: Vec<f64> = results.iter().map(|r| r.p_inv).collect();
    let dist: Vec<f64> = results.iter().map(|r| r.p_dist).collect();
    let rej_inv = bh_adjust(&inv, q)?;
    let rej_dist = bh_adjust(&dist, q)?;
    for (k, r) in results.iter_mut().enumerate() {
        let keep = (r.decision.is_invariance() && rej_inv[k]) || (r.decision.is_distortion() && rej_dist[k]);
        r.bh_decision = if keep { r.decision } else { Decision::Indeterminate };
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionCounts(pub BTreeMap<String, usize>);

impl DecisionCounts {
    pub fn tally(sidedness: Sidedness, decisions: impl Iterator<Item = Decision>) -> Self {
        let mut map: BTreeMap<String, usize> = Decision::categories(sidedness)
            .iter()
            .map(|d| (d.as_str().to_string(), 0))
            .collect();
        for d in decisions {
            *map.entry(d.as_str().to_string()).or_default() += 1;
        }
        DecisionCounts(map)
    }

    pub fn get(&self, d: Decision) -> usize {
        self.0.get(d.as_str()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hypothesis: HypothesisName,
    pub kappa: f64,
    pub results: Vec<HypothesisResult>,
    pub counts: DecisionCounts,
    pub bh_counts: DecisionCounts,
}

/// Decisions at every kappa for analyses of one hypothesis (one per
/// language), reusing the fits.
pub fn kappa_sweep(analyses: &[HypothesisAnalysis], kappas: &[f64], q: f64) -> Result<Vec<SweepRow>> {
    let Some(first) = analyses.first() else {
        return Ok(Vec::new());
    };
    if analyses.iter().any(|a| a.spec.name != first.spec.name) {
        return Err(Error::InvalidParameter("kappa sweep mixes hypotheses".into()));
    }
    if let Some(k) = kappas.iter().find(|k| !(**k > 0.0)) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {k}")));
    }
    kappas
        .iter()
        .map(|&kappa| {
            let mut results: Vec<HypothesisResult> = analyses.iter().map(|a| a.at_kappa(kappa)).collect();
            apply_bh(&mut results, q)?;
            let sidedness = first.spec.sidedness;
            Ok(SweepRow {
                hypothesis: first.spec.name,
                kappa,
                counts: DecisionCounts::tally(sidedness, results.iter().map(|r| r.decision)),
                bh_counts: DecisionCounts::tally(sidedness, results.iter().map(|r| r.bh_decision)),
                results,
            })
        })
        .collect()
}
