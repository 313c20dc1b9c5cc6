//! Crossed multi-membership random-effects model for pair observations:
//!
//! `r_p = mu[type(p)] + u[cfg1(p)] + u[cfg2(p)] + e_p`,
//! `u ~ (0, s2_cfg)` per configuration and `e ~ (0, s2_resid)`.
//!
//! Fitted by REML. With `lambda = s2_cfg / s2_resid` the marginal covariance
//! is `s2_resid * H` where `H = I + lambda Z Z'`, `Z` being the n x c
//! membership matrix. The residual variance profiles out in closed form,
//! leaving a one-dimensional search over `ln lambda`. Every quantity involving
//! `H^{-1}` is evaluated in configuration space through
//! `H^{-1} = I - lambda Z (I + lambda Z'Z)^{-1} Z'`, so the cost per
//! likelihood evaluation is cubic in the number of configurations and linear
//! in the number of observations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Cholesky, SquareMatrix};
use crate::simcorr::{PairObservation, PairType};

pub const VARIANCE_FLOOR: f64 = 1e-12;

const LN_LAMBDA_MIN: f64 = -13.815510557964274; // ln 1e-6
const LN_LAMBDA_MAX: f64 = 13.815510557964274;
const GRID_POINTS: usize = 49;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Pin the configuration variance at zero (ordinary least squares).
    pub fix_sigma2_cfg_zero: bool,
    /// Iteration budget of the refinement step.
    pub max_iter: usize,
    /// Bracket width on the `ln lambda` scale at which refinement stops.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fix_sigma2_cfg_zero: false,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponentsFit {
    pub families: Vec<PairType>,
    pub mu_by_type: Vec<f64>,
    /// Row-major covariance of `mu_by_type`.
    pub cov_mu: Vec<f64>,
    pub sigma2_cfg: f64,
    pub sigma2_resid: f64,
    pub converged: bool,
    pub restricted_loglik: f64,
    pub n_obs: usize,
    pub n_configs: usize,
}

impl VarianceComponentsFit {
    /// Marginal standard deviation of one observation, `sqrt(2 s2_cfg + s2_resid)`.
    pub fn sigma_l(&self) -> f64 {
        (2.0 * self.sigma2_cfg + self.sigma2_resid).sqrt()
    }

    fn index(&self, t: PairType) -> Result<usize> {
        self.families
            .iter()
            .position(|&f| f == t)
            .ok_or_else(|| Error::Empty(format!("no {t} observations in the fit")))
    }

    pub fn mu(&self, t: PairType) -> Result<f64> {
        Ok(self.mu_by_type[self.index(t)?])
    }

    /// `mu[a] - mu[b]` and its standard error.
    pub fn difference(&self, a: PairType, b: PairType) -> Result<(f64, f64)> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        let f = self.families.len();
        let var = self.cov_mu[i * f + i] + self.cov_mu[j * f + j] - 2.0 * self.cov_mu[i * f + j];
        Ok((self.mu_by_type[i] - self.mu_by_type[j], var.max(0.0).sqrt()))
    }
}

/// Sufficient statistics of the design, precomputed once per fit.
struct Design {
    n: usize,
    f: usize,
    c: usize,
    counts: Vec<f64>,
    ztz: SquareMatrix,
    /// c x f, row-major.
    ztx: Vec<f64>,
    zty: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
}

struct Evaluation {
    loglik: f64,
    beta: Vec<f64>,
    xthx: SquareMatrix,
    s2_resid: f64,
}

impl Design {
    fn evaluate(&self, lambda: f64) -> Result<Evaluation> {
        let (f, c) = (self.f, self.c);
        let mut m = SquareMatrix::identity(c);
        for k in 0..c * c {
            m.data[k] += lambda * self.ztz.data[k];
        }
        let chol_m = Cholesky::new(&m)
            .ok_or_else(|| Error::SingularDesign("configuration system not positive definite".into()))?;
        // A = M^{-1} Z'X column by column, b = M^{-1} Z'y
        let mut a = vec![0.0; c * f];
        for col in 0..f {
            let rhs: Vec<f64> = (0..c).map(|r| self.ztx[r * f + col]).collect();
            for (r, v) in chol_m.solve(&rhs).into_iter().enumerate() {
                a[r * f + col] = v;
            }
        }
        let b = chol_m.solve(&self.zty);

        let mut xthx = SquareMatrix::zeros(f);
        let mut xthy = self.xty.clone();
        for i in 0..f {
            xthx.set(i, i, self.counts[i]);
            for j in 0..f {
                let s: f64 = (0..c).map(|r| self.ztx[r * f + i] * a[r * f + j]).sum();
                xthx.add(i, j, -lambda * s);
            }
            let s: f64 = (0..c).map(|r| self.ztx[r * f + i] * b[r]).sum();
            xthy[i] -= lambda * s;
        }
        let yhy = self.yty - lambda * self.zty.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>();
        let chol_x =
            Cholesky::new(&xthx).ok_or_else(|| Error::SingularDesign("fixed-effect information matrix".into()))?;
        let beta = chol_x.solve(&xthy);
        let rss = (yhy - beta.iter().zip(&xthy).map(|(p, q)| p * q).sum::<f64>()).max(0.0);
        let df = (self.n - f) as f64;
        let s2 = (rss / df).max(f64::MIN_POSITIVE);
        let loglik = -0.5
            * (df * s2.ln() + chol_m.log_det() + chol_x.log_det() + df * (1.0 + (2.0 * std::f64::consts::PI).ln()));
        Ok(Evaluation {
            loglik,
            beta,
            xthx,
            s2_resid: rss / df,
        })
    }
}

pub fn fit_variance_components(obs: &[PairObservation]) -> Result<VarianceComponentsFit> {
    fit_variance_components_with(obs, &FitOptions::default())
}

pub fn fit_variance_components_with(obs: &[PairObservation], opts: &FitOptions) -> Result<VarianceComponentsFit> {
    let families: Vec<PairType> = {
        let mut v: Vec<PairType> = obs.iter().map(|o| o.pair_type).collect();
        v.sort();
        v.dedup();
        v
    };
    let configs: BTreeMap<&str, usize> = {
        let mut v: Vec<&str> = obs
            .iter()
            .flat_map(|o| [o.config_a.as_str(), o.config_b.as_str()])
            .collect();
        v.sort();
        v.dedup();
        v.into_iter().enumerate().map(|(i, c)| (c, i)).collect()
    };
    let (n, f, c) = (obs.len(), families.len(), configs.len());
    if c < 2 {
        return Err(Error::TooFewConfigurations { needed: 2, found: c });
    }
    if n < 3 || n <= f {
        return Err(Error::TooFewObservations {
            needed: 3.max(f + 1),
            found: n,
        });
    }
    if obs.iter().any(|o| !o.r.is_finite()) {
        return Err(Error::InvalidParameter("non-finite observation".into()));
    }

    let fam_of: Vec<usize> = obs
        .iter()
        .map(|o| families.binary_search(&o.pair_type).expect("family listed"))
        .collect();
    let mut counts = vec![0.0; f];
    let mut sums = vec![0.0; f];
    for (o, &k) in obs.iter().zip(&fam_of) {
        counts[k] += 1.0;
        sums[k] += o.r;
    }
    let ols: Vec<f64> = sums.iter().zip(&counts).map(|(s, n)| s / n).collect();
    // Centering on the family means keeps the normal equations well scaled.
    let y: Vec<f64> = obs.iter().zip(&fam_of).map(|(o, &k)| o.r - ols[k]).collect();

    let mut ztz = SquareMatrix::zeros(c);
    let mut ztx = vec![0.0; c * f];
    let mut zty = vec![0.0; c];
    let mut xty = vec![0.0; f];
    let mut yty = 0.0;
    for ((o, &k), &yi) in obs.iter().zip(&fam_of).zip(&y) {
        let (p, q) = (configs[o.config_a.as_str()], configs[o.config_b.as_str()]);
        ztz.add(p, p, 1.0);
        ztz.add(q, q, 1.0);
        ztz.add(p, q, 1.0);
        ztz.add(q, p, 1.0);
        for r in [p, q] {
            ztx[r * f + k] += 1.0;
            zty[r] += yi;
        }
        xty[k] += yi;
        yty += yi * yi;
    }
    let design = Design {
        n,
        f,
        c,
        counts: counts.clone(),
        ztz,
        ztx,
        zty,
        xty,
        yty,
    };

    let finish = |lambda: f64, converged: bool| -> Result<VarianceComponentsFit> {
        let ev = design.evaluate(lambda)?;
        let inv = Cholesky::new(&ev.xthx)
            .ok_or_else(|| Error::SingularDesign("fixed-effect information matrix".into()))?
            .inverse();
        Ok(VarianceComponentsFit {
            families: families.clone(),
            mu_by_type: ols.iter().zip(&ev.beta).map(|(m, b)| m + b).collect(),
            cov_mu: inv.data.iter().map(|v| v * ev.s2_resid).collect(),
            sigma2_cfg: (lambda * ev.s2_resid).max(VARIANCE_FLOOR),
            sigma2_resid: ev.s2_resid.max(VARIANCE_FLOOR),
            converged,
            restricted_loglik: ev.loglik,
            n_obs: n,
            n_configs: c,
        })
    };

    // Zero spread around the family means: nothing to apportion.
    if yty <= 1e-24 * n as f64 {
        let mut fit = finish(0.0, true)?;
        fit.cov_mu.iter_mut().for_each(|v| *v = 0.0);
        fit.sigma2_resid = VARIANCE_FLOOR;
        return Ok(fit);
    }
    if opts.fix_sigma2_cfg_zero {
        let mut fit = finish(0.0, true)?;
        fit.sigma2_cfg = 0.0;
        return Ok(fit);
    }

    let objective = |t: f64| -> Result<f64> { Ok(design.evaluate(t.exp())?.loglik) };
    let step = (LN_LAMBDA_MAX - LN_LAMBDA_MIN) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|k| LN_LAMBDA_MIN + step * k as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&t| objective(t)).collect::<Result<_>>()?;
    let mut best = 0;
    for k in 1..GRID_POINTS {
        if values[k] > values[best] {
            best = k;
        }
    }
    let at_zero = design.evaluate(0.0)?.loglik;
    if best == 0 && at_zero >= values[0] - 1e-12 {
        return finish(0.0, true);
    }
    if best == GRID_POINTS - 1 {
        return finish(grid[best].exp(), true);
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[best + 1];
    let (t_star, l_star, iters) = golden_max(&objective, lo, hi, opts.tol, opts.max_iter)?;
    if at_zero >= l_star {
        return finish(0.0, true);
    }
    let h = 1e-3;
    let curvature = (objective(t_star + h)? - 2.0 * l_star + objective(t_star - h)?) / (h * h);
    let converged = iters < opts.max_iter && curvature < -1e-8;
    finish(t_star.exp(), converged)
}

/// Golden-section maximization on `[lo, hi]`; returns (argmax, max, iterations).
fn golden_max(
    f: &dyn Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64, usize)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut iters = 0;
    while hi - lo > tol && iters < max_iter {
        iters += 1;
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1, iters) } else { (x2, f2, iters) })
}
