//! Benjamini-Hochberg step-up procedure.

use crate::error::{Error, Result};

/// Rejection flags at false-discovery level `q`: reject the `k` smallest
/// p-values, `k` being the largest rank with `p_(k) <= k q / m`.
pub fn bh_adjust(p_values: &[f64], q: f64) -> Result<Vec<bool>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let cutoff = (1..=m)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 * q / m as f64)
        .unwrap_or(0);
    let mut reject = vec![false; m];
    for &i in &order[..cutoff] {
        reject[i] = true;
    }
    Ok(reject)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(
            bh_adjust(&[0.001, 0.011, 0.021, 0.031, 0.041], 0.05).unwrap(),
            vec![true; 5]
        );
        assert_eq!(bh_adjust(&[0.2, 0.5], 0.05).unwrap(), vec![false; 2]);
        assert_eq!(bh_adjust(&[0.04, 0.04, 0.04], 0.05).unwrap(), vec![true; 3]);
        assert_eq!(
            bh_adjust(&[0.01, 0.04, 0.03, 0.5], 0.05).unwrap(),
            vec![true, false, false, false]
        );
        assert!(bh_adjust(&[], 0.05).unwrap().is_empty());
        assert!(bh_adjust(&[1.2], 0.05).is_err());
    }

    proptest! {
        #[test]
        fn rejections_are_a_prefix_of_the_sorted_order(p in prop::collection::vec(0.0f64..=1.0, 0..12)) {
            let r = bh_adjust(&p, 0.05).unwrap();
            for i in 0..p.len() {
                for j in 0..p.len() {
                    if r[i] && p[j] < p[i] {
                        prop_assert!(r[j]);
                    }
                }
            }
        }
    }
}
