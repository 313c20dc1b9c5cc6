use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    OneSided,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Invariant,
    Equivalent,
    Indeterminate,
    Distorted,
    Inferior,
    Superior,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Invariant => "invariant",
            Decision::Equivalent => "equivalent",
            Decision::Indeterminate => "indeterminate",
            Decision::Distorted => "distorted",
            Decision::Inferior => "inferior",
            Decision::Superior => "superior",
        }
    }

    /// The categories a hypothesis of this sidedness can produce, in report order.
    pub fn categories(sidedness: Sidedness) -> &'static [Decision] {
        match sidedness {
            Sidedness::OneSided => &[Decision::Invariant, Decision::Indeterminate, Decision::Distorted],
            Sidedness::TwoSided => &[
                Decision::Equivalent,
                Decision::Indeterminate,
                Decision::Inferior,
                Decision::Superior,
            ],
        }
    }

    /// Positive findings of no meaningful difference.
    pub fn is_invariance(self) -> bool {
        matches!(self, Decision::Invariant | Decision::Equivalent)
    }

    /// Positive findings of a difference beyond the margin.
    pub fn is_distortion(self) -> bool {
        matches!(self, Decision::Distorted | Decision::Inferior | Decision::Superior)
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "invariant" => Decision::Invariant,
            "equivalent" => Decision::Equivalent,
            "indeterminate" => Decision::Indeterminate,
            "distorted" => Decision::Distorted,
            "inferior" => Decision::Inferior,
            "superior" => Decision::Superior,
            other => {
                return Err(Error::Parse {
                    location: "decision".into(),
                    message: format!("unknown decision {other:?}"),
                })
            }
        })
    }
}

/// Places a confidence interval relative to the margin `delta`.
pub fn decide(ci_lo: f64, ci_hi: f64, delta: f64, sidedness: Sidedness) -> Decision {
    debug_assert!(ci_lo <= ci_hi && delta > 0.0);
    match sidedness {
        Sidedness::OneSided => {
            if ci_hi < delta {
                Decision::Invariant
            } else if ci_lo > delta {
                Decision::Distorted
            } else {
                Decision::Indeterminate
            }
        }
        Sidedness::TwoSided => {
            if -delta < ci_lo && ci_hi < delta {
                Decision::Equivalent
            } else if ci_lo > delta {
                Decision::Inferior
            } else if ci_hi < -delta {
                Decision::Superior
            } else {
                Decision::Indeterminate
            }
        }
    }
}

/// Point estimate, interval and the two p-values of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub d_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub se: Option<f64>,
    /// Evidence for invariance (one-sided) or equivalence (TOST).
    pub p_inv: f64,
    /// Evidence for a difference beyond the margin in the direction of `d_hat`.
    pub p_dist: f64,
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn z_quantile(alpha: f64) -> f64 {
    std_normal().inverse_cdf(1.0 - alpha)
}

/// `Phi(num / se)`, with the limits taken when `se` is zero.
fn phi_ratio(num: f64, se: f64) -> f64 {
    if se > 0.0 {
        std_normal().cdf(num / se)
    } else if num > 0.0 {
        1.0
    } else if num < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Normal-theory p-values for `D` with standard error `se` against margin `delta`.
pub fn normal_p_values(d: f64, se: f64, delta: f64, sidedness: Sidedness) -> (f64, f64) {
    match sidedness {
        Sidedness::OneSided => {
            let p_inv = phi_ratio(d - delta, se);
            (p_inv, 1.0 - p_inv)
        }
        Sidedness::TwoSided => {
            let lower = phi_ratio(d - delta, se);
            let upper = 1.0 - phi_ratio(d + delta, se);
            let p_dist = if d >= 0.0 { 1.0 - lower } else { 1.0 - upper };
            (lower.max(upper), p_dist)
        }
    }
}

/// Normal-theory interval and p-values from a point estimate and its standard error.
pub fn normal_estimate(d: f64, se: f64, alpha: f64, delta: f64, sidedness: Sidedness) -> Estimate {
    let z = z_quantile(alpha);
    let (p_inv, p_dist) = normal_p_values(d, se, delta, sidedness);
    Estimate {
        d_hat: d,
        ci_lo: d - z * se,
        ci_hi: d + z * se,
        se: Some(se),
        p_inv,
        p_dist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_rules() {
        assert_eq!(decide(-0.10, 0.05, 0.10, Sidedness::OneSided), Decision::Invariant);
        assert_eq!(decide(0.15, 0.30, 0.10, Sidedness::OneSided), Decision::Distorted);
        assert_eq!(decide(0.05, 0.15, 0.10, Sidedness::OneSided), Decision::Indeterminate);
        assert_eq!(decide(-0.30, -0.15, 0.10, Sidedness::TwoSided), Decision::Superior);
        assert_eq!(decide(0.15, 0.30, 0.10, Sidedness::TwoSided), Decision::Inferior);
        assert_eq!(decide(-0.05, 0.05, 0.10, Sidedness::TwoSided), Decision::Equivalent);
        assert_eq!(decide(-0.15, 0.05, 0.10, Sidedness::TwoSided), Decision::Indeterminate);
        // boundaries are strict
        assert_eq!(decide(0.0, 0.10, 0.10, Sidedness::OneSided), Decision::Indeterminate);
    }

    #[test]
    fn p_value_examples() {
        let (p, q) = normal_p_values(0.2, 0.05, 0.2, Sidedness::OneSided);
        assert!((p - 0.5).abs() < 1e-15 && (q - 0.5).abs() < 1e-15);
        let se = 0.03;
        let (p, _) = normal_p_values(0.2 - 1.6448536269514722 * se, se, 0.2, Sidedness::OneSided);
        assert!((p - 0.05).abs() < 1e-9);
        let (p, _) = normal_p_values(0.0, 0.0, 0.01, Sidedness::OneSided);
        assert_eq!(p, 0.0);
        let e = normal_estimate(0.0, 0.0, 0.05, 0.01, Sidedness::OneSided);
        assert_eq!(decide(e.ci_lo, e.ci_hi, 0.01, Sidedness::OneSided), Decision::Invariant);
        assert!((z_quantile(0.05) - 1.6448536269514722).abs() < 1e-9);
    }

    #[test]
    fn tost_takes_the_larger_tail() {
        let (p, _) = normal_p_values(0.05, 0.1, 0.1, Sidedness::TwoSided);
        let lower = std_normal().cdf(-0.5);
        let upper = 1.0 - std_normal().cdf(1.5);
        assert!((p - lower.max(upper)).abs() < 1e-15);
    }

    #[test]
    fn decisions_agree_with_p_values() {
        for k in 0..200 {
            let d = -0.3 + 0.003 * k as f64;
            let e = normal_estimate(d, 0.04, 0.05, 0.1, Sidedness::OneSided);
            let dec = decide(e.ci_lo, e.ci_hi, 0.1, Sidedness::OneSided);
            if (e.p_inv - 0.05).abs() > 1e-9 {
                assert_eq!(dec == Decision::Invariant, e.p_inv < 0.05);
            }
            if (e.p_dist - 0.05).abs() > 1e-9 {
                assert_eq!(dec == Decision::Distorted, e.p_dist < 0.05);
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for d in Decision::categories(Sidedness::OneSided)
            .iter()
            .chain(Decision::categories(Sidedness::TwoSided))
        {
            assert_eq!(d.as_str().parse::<Decision>().unwrap(), *d);
        }
    }

    fn rank(d: Decision) -> i32 {
        match d {
            Decision::Invariant | Decision::Equivalent => 2,
            Decision::Indeterminate => 1,
            _ => 0,
        }
    }

    proptest::proptest! {
        #[test]
        fn one_sided_rules(lo in -1.0f64..1.0, width in 0.0f64..1.0, delta in 0.001f64..1.0) {
            let hi = lo + width;
            let want = if hi < delta {
                Decision::Invariant
            } else if lo > delta {
                Decision::Distorted
            } else {
                Decision::Indeterminate
            };
            proptest::prop_assert_eq!(decide(lo, hi, delta, Sidedness::OneSided), want);
        }

        #[test]
        fn two_sided_rules(lo in -1.0f64..1.0, width in 0.0f64..1.0, delta in 0.001f64..1.0) {
            let hi = lo + width;
            let want = if -delta < lo && hi < delta {
                Decision::Equivalent
            } else if lo > delta {
                Decision::Inferior
            } else if hi < -delta {
                Decision::Superior
            } else {
                Decision::Indeterminate
            };
            proptest::prop_assert_eq!(decide(lo, hi, delta, Sidedness::TwoSided), want);
        }

        #[test]
        fn a_wider_margin_never_hurts(
            lo in -1.0f64..1.0,
            width in 0.0f64..1.0,
            d1 in 0.001f64..1.0,
            extra in 0.0f64..1.0,
        ) {
            let hi = lo + width;
            for side in [Sidedness::OneSided, Sidedness::TwoSided] {
                let narrow = decide(lo, hi, d1, side);
                let wide = decide(lo, hi, d1 + extra, side);
                proptest::prop_assert!(rank(wide) >= rank(narrow), "{narrow:?} -> {wide:?}");
            }
        }

        #[test]
        fn normal_interval_brackets_the_estimate(
            d in -1.0f64..1.0,
            se in 1e-4f64..0.5,
            delta in 0.001f64..1.0,
        ) {
            let e = normal_estimate(d, se, 0.05, delta, Sidedness::OneSided);
            proptest::prop_assert!(e.ci_lo <= d && d <= e.ci_hi);
            let phi = std_normal().cdf((d - delta) / se);
            proptest::prop_assert!((e.p_inv - phi).abs() < 1e-12);
            proptest::prop_assert!((e.p_dist - (1.0 - phi)).abs() < 1e-12);
        }
    }
}
