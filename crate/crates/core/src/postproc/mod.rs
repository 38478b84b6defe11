//! Surface suppression of anomaly scores.
//!
//! `A_pores = max(0, A - lambda * G_sigma(|grad V_hat|_1))`, with `(lambda, sigma)`
//! chosen to minimize the mean absolute difference between `A` and the
//! scaled surface field. For fixed `sigma` the optimal `lambda` is a weighted
//! median, so the search is exact in `lambda` and a grid in `sigma`.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scorer::ScoreVolume;
use crate::volgrid::{gaussian_blur3d, gradient_l1, Mask, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocParams {
    pub lambda: f64,
    pub sigma: f64,
}

impl PostprocParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0 && self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid(format!("invalid post-processing params {self:?}")));
        }
        Ok(())
    }
}

/// Candidate sigmas, parsed from `lo:hi:n` (linear) or `lo:hi:nlog` (log-spaced),
/// or a comma-separated list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaGrid(pub Vec<f64>);

impl Default for SigmaGrid {
    fn default() -> Self {
        SigmaGrid::log_spaced(0.5, 8.0, 8)
    }
}

impl SigmaGrid {
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Self {
        if n == 1 {
            return SigmaGrid(vec![lo]);
        }
        let r = (hi / lo).ln();
        SigmaGrid((0..n).map(|i| lo * (r * i as f64 / (n - 1) as f64).exp()).collect())
    }

    pub fn linear(lo: f64, hi: f64, n: usize) -> Self {
        if n == 1 {
            return SigmaGrid(vec![lo]);
        }
        SigmaGrid((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
    }
}

impl FromStr for SigmaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse sigma grid {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let grid = if parts.len() == 3 {
            let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
            let (count, log) = match parts[2].trim().strip_suffix("log") {
                Some(c) => (c, true),
                None => (parts[2].trim(), false),
            };
            let n: usize = count.parse().map_err(|_| bad())?;
            if n == 0 || !(lo >= 0.0) || !(hi >= lo) || (log && lo <= 0.0) {
                return Err(bad());
            }
            if log {
                SigmaGrid::log_spaced(lo, hi, n)
            } else {
                SigmaGrid::linear(lo, hi, n)
            }
        } else {
            let vals: std::result::Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
            SigmaGrid(vals.map_err(|_| bad())?)
        };
        if grid.0.is_empty() || grid.0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(bad());
        }
        Ok(grid)
    }
}

/// `G_sigma(|grad V_hat|_1)`.
pub fn surface_field<T: Scalar>(recon: &Volume<T>, sigma: f64) -> Result<Volume<T>> {
    Ok(gaussian_blur3d(&gradient_l1(recon)?, sigma))
}

fn subtract_clamped<T: Scalar>(a: &Volume<T>, field: &Volume<T>, lambda: f64) -> Volume<T> {
    let lam = T::of(lambda);
    a.like(
        a.data()
            .iter()
            .zip(field.data())
            .map(|(&x, &b)| (x - lam * b).max(T::zero()))
            .collect(),
    )
}

pub fn suppress_surface<T: Scalar>(sv: &ScoreVolume<T>, p: PostprocParams) -> Result<Volume<T>> {
    p.validate()?;
    let field = surface_field(sv.recon()?, p.sigma)?;
    Ok(subtract_clamped(&sv.score, &field, p.lambda))
}

fn selected<'a, T: Scalar>(
    a: &'a Volume<T>,
    b: &'a Volume<T>,
    domain: Option<&'a Mask>,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.data()
        .iter()
        .zip(b.data())
        .enumerate()
        .filter(move |(i, _)| domain.is_none_or(|m| m.data()[*i]))
        .map(|(_, (x, y))| (x.as_f64(), y.as_f64()))
}

/// Mean of `|A - lambda * B|` over the domain (whole volume when `None`).
pub fn l1_objective<T: Scalar>(a: &Volume<T>, b: &Volume<T>, lambda: f64, domain: Option<&Mask>) -> f64 {
    let (sum, n) = selected(a, b, domain).fold((0.0, 0usize), |(s, n), (x, y)| (s + (x - lambda * y).abs(), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Exact minimizer of `mean |A_i - lambda B_i|`: the lower weighted median of
/// `A_i / B_i` over voxels with `B_i > 0`, weighted by `B_i`.
pub fn optimal_lambda<T: Scalar>(a: &Volume<T>, b: &Volume<T>, domain: Option<&Mask>) -> Result<f64> {
    a.ensure_same_grid(b)?;
    if let Some(m) = domain {
        m.ensure_same_grid(a)?;
    }
    let mut pairs: Vec<(f64, f64)> = selected(a, b, domain)
        .filter(|&(_, w)| w > 0.0)
        .map(|(x, w)| (x / w, w))
        .collect();
    if pairs.is_empty() {
        return Err(Error::degenerate("surface field is identically zero"));
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for &(r, w) in &pairs {
        acc += w;
        if acc >= 0.5 * total {
            return Ok(r);
        }
    }
    Ok(pairs.last().expect("non-empty").0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaTrial {
    pub sigma: f64,
    pub lambda: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocFit {
    pub params: PostprocParams,
    pub objective: f64,
    /// One entry per grid sigma whose surface field was non-zero.
    pub trials: Vec<SigmaTrial>,
}

/// Grid search over sigma with the exact lambda per sigma; ties pick the smaller sigma.
pub fn optimize_params<T: Scalar>(sv: &ScoreVolume<T>, grid: &SigmaGrid, domain: Option<&Mask>) -> Result<PostprocFit> {
    if grid.0.is_empty() {
        return Err(Error::invalid("empty sigma grid"));
    }
    let grad = gradient_l1(sv.recon()?)?;
    let mut sigmas = grid.0.clone();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    let trials: Vec<Option<SigmaTrial>> = sigmas
        .par_iter()
        .map(|&sigma| {
            let b = gaussian_blur3d(&grad, sigma);
            let lambda = optimal_lambda(&sv.score, &b, domain).ok()?;
            let objective = l1_objective(&sv.score, &b, lambda, domain);
            Some(SigmaTrial {
                sigma,
                lambda,
                objective,
            })
        })
        .collect();
    let trials: Vec<SigmaTrial> = trials.into_iter().flatten().collect();
    let best = trials
        .iter()
        .fold(None::<&SigmaTrial>, |best, t| match best {
            Some(b) if b.objective <= t.objective => Some(b),
            _ => Some(t),
        })
        .ok_or_else(|| Error::degenerate("surface field is zero for every sigma"))?;
    Ok(PostprocFit {
        params: PostprocParams {
            lambda: best.lambda,
            sigma: best.sigma,
        },
        objective: best.objective,
        trials: trials.clone(),
    })
}
