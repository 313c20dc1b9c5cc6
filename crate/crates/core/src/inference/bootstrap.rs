//! Configuration-level cluster bootstrap.
//!
//! Resampling units are configurations, or for same-model comparisons the
//! group of configurations sharing one model. Units are redrawn with
//! replacement inside strata of identical pipeline-type composition, and the
//! observation set induced by the drawn units is rebuilt: every observation
//! between two drawn positions, plus the observations internal to each drawn
//! unit. Replicate `b` draws from its own ChaCha stream, so results do not
//! depend on scheduling.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decision::{Estimate, Sidedness};
use super::spec::HypothesisSpec;
use crate::corpus_io::PipelineType;
use crate::error::{Error, Result};
use crate::numeric::quantile_sorted;
use crate::simcorr::PairObservation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapParams {
    pub replicates: usize,
    pub seed: u64,
    /// Redraws allowed per replicate when a family comes out empty.
    pub max_retries: usize,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self {
            replicates: 2000,
            seed: 0,
            max_retries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub d_hat: f64,
    /// Replicate differences in ascending order.
    pub replicates: Vec<f64>,
    /// Selected candidate configuration on the original data, when the
    /// hypothesis selects one.
    pub best_config: Option<String>,
}

impl BootstrapOutcome {
    /// Percentile interval at levels `alpha` and `1 - alpha`, with add-one
    /// smoothed replicate-count p-values against `delta`.
    pub fn estimate(&self, alpha: f64, delta: f64, sidedness: Sidedness) -> Estimate {
        let b = self.replicates.len() as f64;
        let frac = |count: usize| (1.0 + count as f64) / (b + 1.0);
        let at_least = |x: f64| self.replicates.len() - self.replicates.partition_point(|&d| d < x);
        let at_most = |x: f64| self.replicates.partition_point(|&d| d <= x);
        let (p_inv, p_dist) = match sidedness {
            Sidedness::OneSided => (frac(at_least(delta)), frac(at_most(delta))),
            Sidedness::TwoSided => {
                let p_inv = frac(at_least(delta)).max(frac(at_most(-delta)));
                let p_dist = if self.d_hat >= 0.0 {
                    frac(at_most(delta))
                } else {
                    frac(at_least(-delta))
                };
                (p_inv, p_dist)
            }
        };
        Estimate {
            d_hat: self.d_hat,
            ci_lo: quantile_sorted(&self.replicates, alpha),
            ci_hi: quantile_sorted(&self.replicates, 1.0 - alpha),
            se: None,
            p_inv,
            p_dist,
        }
    }
}

#[derive(Clone, Copy)]
enum Role {
    Reference,
    /// Candidate observation; the payload indexes the selectable config (or 0).
    Candidate(usize),
}

struct Layout {
    /// Units grouped by stratum; each unit is a list of config indices.
    strata: Vec<Vec<usize>>,
    /// Observations induced by a pair of unit slots `(u, v)`, `u <= v`.
    /// For `u == v` these are the observations internal to the unit.
    between: HashMap<(usize, usize), Vec<(Role, f64)>>,
    n_selectable: usize,
    selectable_names: Vec<String>,
}

#[derive(Default)]
struct Accumulator {
    ref_sum: f64,
    ref_n: usize,
    cand_sum: Vec<f64>,
    cand_n: Vec<usize>,
}

impl Accumulator {
    fn new(k: usize) -> Self {
        Self {
            cand_sum: vec![0.0; k],
            cand_n: vec![0; k],
            ..Default::default()
        }
    }

    fn add(&mut self, items: &[(Role, f64)]) {
        for &(role, r) in items {
            match role {
                Role::Reference => {
                    self.ref_sum += r;
                    self.ref_n += 1;
                }
                Role::Candidate(k) => {
                    self.cand_sum[k] += r;
                    self.cand_n[k] += 1;
                }
            }
        }
    }

    /// Difference of family means, selecting the best candidate slot if asked.
    fn difference(&self, select_best: bool) -> Option<(f64, Option<usize>)> {
        if self.ref_n == 0 {
            return None;
        }
        let ref_mean = self.ref_sum / self.ref_n as f64;
        if select_best {
            let mut best: Option<(usize, f64)> = None;
            for k in 0..self.cand_n.len() {
                if self.cand_n[k] == 0 {
                    continue;
                }
                let m = self.cand_sum[k] / self.cand_n[k] as f64;
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some((k, m));
                }
            }
            best.map(|(k, m)| (ref_mean - m, Some(k)))
        } else {
            let n: usize = self.cand_n.iter().sum();
            if n == 0 {
                return None;
            }
            Some((ref_mean - self.cand_sum.iter().sum::<f64>() / n as f64, None))
        }
    }
}

fn build_layout(obs: &[PairObservation], spec: &HypothesisSpec) -> Result<Layout> {
    let mut configs: BTreeMap<&str, PipelineType> = BTreeMap::new();
    for o in obs {
        configs.insert(&o.config_a, o.type_a);
        configs.insert(&o.config_b, o.type_b);
    }
    let ids: Vec<&str> = configs.keys().copied().collect();
    let index = |c: &str| ids.binary_search(&c).expect("config listed");

    // Union configurations joined by a same-model candidate observation.
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    if spec.candidate_same_model_only {
        for o in obs.iter().filter(|o| spec.is_candidate(o)) {
            let (a, b) = (
                find(&mut parent, index(&o.config_a)),
                find(&mut parent, index(&o.config_b)),
            );
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut units: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..ids.len() {
        let root = find(&mut parent, i);
        units.entry(root).or_default().push(i);
    }
    let units: Vec<Vec<usize>> = units.into_values().collect();
    let mut unit_of = vec![0usize; ids.len()];
    for (u, members) in units.iter().enumerate() {
        for &c in members {
            unit_of[c] = u;
        }
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (u, members) in units.iter().enumerate() {
        let mut key: Vec<char> = members.iter().map(|&c| configs[ids[c]].letter()).collect();
        key.sort();
        strata.entry(key.into_iter().collect()).or_default().push(u);
    }

    let selectable_names: Vec<String> = if spec.select_best {
        let mut v: Vec<String> = obs
            .iter()
            .filter(|o| spec.is_candidate(o))
            .filter_map(|o| o.config_of_type(PipelineType::T).map(str::to_string))
            .collect();
        v.sort();
        v.dedup();
        v
    } else {
        Vec::new()
    };
    let mut between: HashMap<(usize, usize), Vec<(Role, f64)>> = HashMap::new();
    for o in obs {
        let role = if spec.is_reference(o) {
            Role::Reference
        } else if spec.is_candidate(o) {
            if spec.select_best {
                let t = o.config_of_type(PipelineType::T).expect("candidate has a T side");
                Role::Candidate(selectable_names.binary_search(&t.to_string()).expect("listed"))
            } else {
                Role::Candidate(0)
            }
        } else {
            continue;
        };
        let (u, v) = (unit_of[index(&o.config_a)], unit_of[index(&o.config_b)]);
        between.entry((u.min(v), u.max(v))).or_default().push((role, o.r));
    }
    Ok(Layout {
        strata: strata.into_values().collect(),
        between,
        n_selectable: selectable_names.len().max(1),
        selectable_names,
    })
}

impl Layout {
    fn accumulate(&self, draw: &[usize]) -> Accumulator {
        let mut acc = Accumulator::new(self.n_selectable);
        for (p, &u) in draw.iter().enumerate() {
            if let Some(items) = self.between.get(&(u, u)) {
                acc.add(items);
            }
            for &v in &draw[p + 1..] {
                // A unit drawn twice pairs with its copy through its internal observations.
                if let Some(items) = self.between.get(&(u.min(v), u.max(v))) {
                    acc.add(items);
                }
            }
        }
        acc
    }

    fn original(&self) -> Vec<usize> {
        self.strata.iter().flatten().copied().collect()
    }

    fn resample(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut draw = Vec::new();
        for units in &self.strata {
            for _ in 0..units.len() {
                draw.push(units[rng.random_range(0..units.len())]);
            }
        }
        draw
    }
}

/// Bootstrap distribution of the reference-minus-candidate mean difference.
pub fn cluster_bootstrap(
    obs: &[PairObservation],
    spec: &HypothesisSpec,
    params: &BootstrapParams,
) -> Result<BootstrapOutcome> {
    if params.replicates == 0 {
        return Err(Error::InvalidParameter("bootstrap needs at least one replicate".into()));
    }
    let relevant: Vec<PairObservation> = obs
        .iter()
        .filter(|o| spec.is_reference(o) || spec.is_candidate(o))
        .cloned()
        .collect();
    let layout = build_layout(&relevant, spec)?;
    let (d_hat, best) = layout
        .accumulate(&layout.original())
        .difference(spec.select_best)
        .ok_or_else(|| Error::Empty(format!("{}: reference or candidate family is empty", spec.name)))?;

    let mut replicates: Vec<f64> = (0..params.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(b as u64);
            for _ in 0..=params.max_retries {
                let draw = layout.resample(&mut rng);
                if let Some((d, _)) = layout.accumulate(&draw).difference(spec.select_best) {
                    return Ok(d);
                }
            }
            Err(Error::DegenerateResample {
                retries: params.max_retries,
            })
        })
        .collect::<Result<_>>()?;
    replicates.sort_by(f64::total_cmp);
    Ok(BootstrapOutcome {
        d_hat,
        replicates,
        best_config: best.map(|k| layout.selectable_names[k].clone()),
    })
}
