use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::decision::Sidedness;
use crate::corpus_io::PipelineType::{self, M, O, T, X};
use crate::error::{Error, Result};
use crate::simcorr::{PairObservation, PairType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisName {
    Baseline,
    BestModel,
    Multilingual,
    OmOtEquivalence,
}

impl HypothesisName {
    pub const ALL: [HypothesisName; 4] = [
        HypothesisName::Baseline,
        HypothesisName::BestModel,
        HypothesisName::Multilingual,
        HypothesisName::OmOtEquivalence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HypothesisName::Baseline => "baseline",
            HypothesisName::BestModel => "best_model",
            HypothesisName::Multilingual => "multilingual",
            HypothesisName::OmOtEquivalence => "om_ot_equivalence",
        }
    }

    pub fn sidedness(self) -> Sidedness {
        HypothesisSpec::new(self, 1.0).sidedness
    }

    /// Column label such as `OO-OT`.
    pub fn comparison(self) -> &'static str {
        match self {
            HypothesisName::Baseline => "OO-OT",
            HypothesisName::BestModel => "OO-OT_best",
            HypothesisName::Multilingual => "MM-MX",
            HypothesisName::OmOtEquivalence => "OM-OT",
        }
    }
}

impl fmt::Display for HypothesisName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HypothesisName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => HypothesisName::Baseline,
            "best" | "best_model" => HypothesisName::BestModel,
            "multilingual" => HypothesisName::Multilingual,
            "omot" | "om_ot_equivalence" => HypothesisName::OmOtEquivalence,
            other => {
                return Err(Error::Parse {
                    location: "hypothesis".into(),
                    message: format!("unknown hypothesis {other:?}"),
                })
            }
        })
    }
}

/// Which observations are compared, how, and against which margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub name: HypothesisName,
    pub reference: PairType,
    pub candidate: PairType,
    /// Keep only candidate observations pairing a model with itself across text versions.
    pub candidate_same_model_only: bool,
    /// Pick the candidate configuration of type `T` with the highest mean (re-done per bootstrap replicate).
    pub select_best: bool,
    /// Pair family whose fitted marginal spread sets the margin.
    pub margin_family: PairType,
    pub sidedness: Sidedness,
    pub kappa: f64,
}

fn pt(a: PipelineType, b: PipelineType) -> PairType {
    PairType::new(a, b)
}

impl HypothesisSpec {
    pub fn new(name: HypothesisName, kappa: f64) -> Self {
        let base = HypothesisSpec {
            name,
            reference: pt(O, O),
            candidate: pt(O, T),
            candidate_same_model_only: false,
            select_best: false,
            margin_family: pt(O, O),
            sidedness: Sidedness::OneSided,
            kappa,
        };
        match name {
            HypothesisName::Baseline => base,
            HypothesisName::BestModel => HypothesisSpec {
                select_best: true,
                ..base
            },
            HypothesisName::Multilingual => HypothesisSpec {
                reference: pt(M, M),
                candidate: pt(M, X),
                candidate_same_model_only: true,
                margin_family: pt(M, M),
                ..base
            },
            HypothesisName::OmOtEquivalence => HypothesisSpec {
                reference: pt(O, M),
                sidedness: Sidedness::TwoSided,
                ..base
            },
        }
    }

    pub fn with_kappa(self, kappa: f64) -> Self {
        HypothesisSpec { kappa, ..self }
    }

    pub fn is_reference(&self, o: &PairObservation) -> bool {
        o.pair_type == self.reference
    }

    pub fn is_candidate(&self, o: &PairObservation) -> bool {
        o.pair_type == self.candidate && (!self.candidate_same_model_only || o.same_model)
    }

    pub fn is_margin(&self, o: &PairObservation) -> bool {
        o.pair_type == self.margin_family
    }
}

/// The configuration of type T with the highest mean statistic over its OT
/// observations; ties go to the lexicographically smaller id.
pub fn select_best_t_config(obs: &[PairObservation]) -> Result<String> {
    let mut groups: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
    for o in obs.iter().filter(|o| o.pair_type == pt(O, T)) {
        let t = o.config_of_type(T).expect("OT pair has a T side");
        let e = groups.entry(t).or_default();
        e.0 += o.r;
        e.1 += 1;
    }
    let mut best: Option<(&str, f64)> = None;
    for (cfg, (sum, n)) in groups {
        let m = sum / n as f64;
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((cfg, m));
        }
    }
    best.map(|(c, _)| c.to_string())
        .ok_or_else(|| Error::NoCandidates("no OT observations to select from".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcorr::ConfigMeta;
    use proptest::prelude::*;

    fn ot(o: &str, t: &str, r: f64) -> PairObservation {
        PairObservation::new("xx", &ConfigMeta::new(o, O, o), &ConfigMeta::new(t, T, t), r, 3)
    }

    #[test]
    fn best_config_examples() {
        let obs = vec![
            ot("o1", "t1", 0.8),
            ot("o2", "t1", 0.8),
            ot("o1", "t2", 0.6),
            ot("o2", "t2", 0.6),
        ];
        assert_eq!(select_best_t_config(&obs).unwrap(), "t1");
        assert_eq!(select_best_t_config(&obs[..1]).unwrap(), "t1");
        let tie = vec![ot("o1", "tb", 0.7), ot("o1", "ta", 0.7)];
        assert_eq!(select_best_t_config(&tie).unwrap(), "ta");
        assert!(matches!(select_best_t_config(&[]), Err(Error::NoCandidates(_))));
    }

    #[test]
    fn filters() {
        let mm = HypothesisSpec::new(HypothesisName::Multilingual, 1.0);
        let m = ConfigMeta::new("m1", M, "labse");
        let x_same = ConfigMeta::new("x1", X, "labse");
        let x_other = ConfigMeta::new("x2", X, "e5");
        assert!(mm.is_candidate(&PairObservation::new("xx", &m, &x_same, 0.5, 3)));
        assert!(!mm.is_candidate(&PairObservation::new("xx", &m, &x_other, 0.5, 3)));
        let omot = HypothesisSpec::new(HypothesisName::OmOtEquivalence, 1.0);
        assert_eq!(omot.reference.to_string(), "OM");
        assert_eq!(omot.margin_family.to_string(), "OO");
        for n in HypothesisName::ALL {
            assert_eq!(n.as_str().parse::<HypothesisName>().unwrap(), n);
        }
    }

    proptest! {
        #[test]
        fn selection_survives_monotone_transforms(values in prop::collection::vec(-1.0f64..1.0, 1..8), a in 0.1f64..5.0, b in -2.0f64..2.0) {
            let obs: Vec<PairObservation> = values.iter().enumerate().map(|(i, &v)| ot("o1", &format!("t{i}"), v)).collect();
            let transformed: Vec<PairObservation> = obs.iter().map(|o| PairObservation { r: (a * o.r + b).exp(), ..o.clone() }).collect();
            prop_assert_eq!(select_best_t_config(&obs).unwrap(), select_best_t_config(&transformed).unwrap());
        }
    }
}
