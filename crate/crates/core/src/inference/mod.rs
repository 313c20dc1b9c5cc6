//! Margin-calibrated invariance testing over pair observations.
//!
//! The reference-minus-candidate difference of mean agreement is estimated
//! either from a crossed random-effects fit or from a configuration-level
//! cluster bootstrap, and its 90% interval is placed against a margin
//! `delta = kappa * sigma_L`, where `sigma_L` is the marginal spread of the
//! margin family.

mod bootstrap;
mod decision;
mod fdr;
mod mixed;
mod run;
mod spec;

pub use bootstrap::{cluster_bootstrap, BootstrapOutcome, BootstrapParams};
pub use decision::{decide, normal_estimate, normal_p_values, z_quantile, Decision, Estimate, Sidedness};
pub use fdr::bh_adjust;
pub use mixed::{
    fit_variance_components, fit_variance_components_with, FitOptions, VarianceComponentsFit, VARIANCE_FLOOR,
};
pub use run::{
    analyze, apply_bh, derive_seed, estimate_difference, kappa_sweep, run_hypothesis, Backend, DecisionCounts,
    HypothesisAnalysis, HypothesisResult, InferenceSettings, SweepRow,
};
pub use spec::{select_best_t_config, HypothesisName, HypothesisSpec};
