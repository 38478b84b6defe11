use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{summarize_folds, FoldSummary};

/// `linspace(0.1, 0.9, 4)`.
pub fn default_alpha_beta_axis() -> Vec<f64> {
    (0..4).map(|i| 0.1 + 0.8 * i as f64 / 3.0).collect()
}

/// Eight focusing exponents from 1/3 to 2.
pub fn default_gamma_axis() -> Vec<f64> {
    vec![1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0, 4.0 / 3.0, 1.5, 5.0 / 3.0, 2.0]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    /// Hard Dice at the threshold calibrated by the cell's loss.
    #[default]
    Dice,
    /// One minus the cell's focal Tversky loss on the validation volume.
    Tversky,
    Ap,
    Auc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_alpha_beta_axis")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_alpha_beta_axis")]
    pub beta: Vec<f64>,
    #[serde(default = "default_gamma_axis")]
    pub gamma: Vec<f64>,
    /// Gamma held fixed while alpha and beta are searched.
    #[serde(default = "default_fixed_gamma")]
    pub fixed_gamma: f64,
    #[serde(default)]
    pub metric: MetricName,
    #[serde(default)]
    pub protocol: SearchProtocol,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchProtocol {
    /// Alpha and beta at the fixed gamma, then gamma at their optimum.
    #[default]
    TwoPhase,
    /// The full alpha x beta x gamma product.
    Full,
}

fn default_fixed_gamma() -> f64 {
    0.5
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            alpha: default_alpha_beta_axis(),
            beta: default_alpha_beta_axis(),
            gamma: default_gamma_axis(),
            fixed_gamma: default_fixed_gamma(),
            metric: MetricName::Dice,
            protocol: SearchProtocol::TwoPhase,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [("alpha", &self.alpha), ("beta", &self.beta), ("gamma", &self.gamma)] {
            if axis.is_empty() {
                return Err(Error::invalid(format!("grid axis {name} is empty")));
            }
            if axis.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid(format!("grid axis {name} must be positive and finite")));
            }
        }
        if !(self.fixed_gamma.is_finite() && self.fixed_gamma > 0.0) {
            return Err(Error::invalid("fixed gamma must be positive"));
        }
        Ok(())
    }

    /// Cells of the full product in lexicographic `(alpha, beta, gamma)` order.
    pub fn cells(&self) -> Vec<CellParams> {
        let sorted = |a: &[f64]| {
            let mut v = a.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (a, b, g) = (sorted(&self.alpha), sorted(&self.beta), sorted(&self.gamma));
        let mut out = Vec::with_capacity(a.len() * b.len() * g.len());
        for &alpha in &a {
            for &beta in &b {
                for &gamma in &g {
                    out.push(CellParams { alpha, beta, gamma });
                }
            }
        }
        out
    }

    pub fn phase_one(&self) -> GridSpec {
        GridSpec {
            gamma: vec![self.fixed_gamma],
            ..self.clone()
        }
    }

    fn phase_two(&self, at: CellParams) -> GridSpec {
        GridSpec {
            alpha: vec![at.alpha],
            beta: vec![at.beta],
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub params: CellParams,
    /// One entry per fold; `None` where the evaluation failed.
    pub fold_values: Vec<Option<f64>>,
    pub summary: Option<FoldSummary>,
    pub errors: Vec<String>,
}

impl CellResult {
    pub fn is_valid(&self) -> bool {
        self.summary.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub metric: MetricName,
    pub folds: usize,
    pub cells: Vec<CellResult>,
    /// Index into `cells`.
    pub best: Option<usize>,
    pub evaluations: usize,
    pub config_hash: String,
    pub seed: u64,
}

impl CrossValReport {
    pub fn best_cell(&self) -> Option<&CellResult> {
        self.best.map(|i| &self.cells[i])
    }
}

/// Evaluates `metric(cell, fold)` for every cell and fold. Failures mark the
/// cell invalid without stopping the search. The best cell has the highest
/// fold mean; ties go to the lexicographically smallest parameters.
pub fn run_grid_search<F>(
    grid: &GridSpec,
    folds: usize,
    config_hash: &str,
    seed: u64,
    metric: F,
) -> Result<CrossValReport>
where
    F: Fn(&CellParams, usize) -> Result<f64> + Sync,
{
    grid.validate()?;
    if folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let values: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            metric(&cells[c], f).and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::degenerate(format!("metric returned {v}")))
                }
            })
        })
        .collect();
    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|&params| CellResult {
            params,
            fold_values: vec![None; folds],
            summary: None,
            errors: Vec::new(),
        })
        .collect();
    for (&(c, f), v) in jobs.iter().zip(values) {
        match v {
            Ok(x) => results[c].fold_values[f] = Some(x),
            Err(e) => {
                log::warn!("cell {:?} fold {f} failed: {e}", cells[c]);
                results[c].errors.push(format!("fold {f}: {e}"));
            }
        }
    }
    for r in results.iter_mut() {
        if r.errors.is_empty() {
            let vals: Vec<f64> = r.fold_values.iter().map(|v| v.expect("no errors")).collect();
            r.summary = Some(summarize_folds(&vals)?);
        }
    }
    // cells are in lexicographic order, so keeping the first maximum breaks ties
    let mut best: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(s) = r.summary {
            match best {
                Some(b) if results[b].summary.expect("valid").mean >= s.mean => {}
                _ => best = Some(i),
            }
        }
    }
    Ok(CrossValReport {
        metric: grid.metric,
        folds,
        evaluations: jobs.len(),
        cells: results,
        best,
        config_hash: config_hash.to_string(),
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseReport {
    /// Alpha and beta searched with gamma fixed.
    pub phase_one: CrossValReport,
    /// Gamma searched at the phase-one optimum.
    pub phase_two: CrossValReport,
    pub selected: CellParams,
}

/// Searches alpha and beta at the fixed gamma, then gamma at the best
/// (alpha, beta).
pub fn run_two_phase_search<F>(
    grid: &GridSpec,
    folds: usize,
    config_hash: &str,
    seed: u64,
    metric: F,
) -> Result<TwoPhaseReport>
where
    F: Fn(&CellParams, usize) -> Result<f64> + Sync,
{
    let phase_one = run_grid_search(&grid.phase_one(), folds, config_hash, seed, &metric)?;
    let at = phase_one
        .best_cell()
        .ok_or_else(|| Error::degenerate("no valid cell in the alpha/beta search"))?
        .params;
    let phase_two = run_grid_search(&grid.phase_two(at), folds, config_hash, seed, &metric)?;
    let selected = phase_two
        .best_cell()
        .ok_or_else(|| Error::degenerate("no valid cell in the gamma search"))?
        .params;
    Ok(TwoPhaseReport {
        phase_one,
        phase_two,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 5e-3
    }

    /// Peaks at alpha 0.633, beta 0.1 and gamma 1, with a fold-dependent offset.
    fn synthetic(p: &CellParams, fold: usize) -> Result<f64> {
        let d = (p.alpha - 0.633).powi(2) + (p.beta - 0.1).powi(2) + 0.1 * (p.gamma - 1.0).powi(2);
        Ok(0.9 - d + 0.01 * fold as f64)
    }

    #[test]
    fn default_axes() {
        let ab = default_alpha_beta_axis();
        assert_eq!(ab.len(), 4);
        assert!(close(ab[0], 0.1) && close(ab[1], 0.367) && close(ab[2], 0.633) && close(ab[3], 0.9));
        let g = default_gamma_axis();
        assert_eq!(g.len(), 8);
        assert!(close(g[0], 1.0 / 3.0) && g[7] == 2.0);
    }

    #[test]
    fn alpha_beta_grid_records_eighty_evaluations() {
        let calls = AtomicUsize::new(0);
        let grid = GridSpec::default().phase_one();
        let r = run_grid_search(&grid, 5, "h", 0, |p, f| {
            calls.fetch_add(1, Ordering::Relaxed);
            synthetic(p, f)
        })
        .unwrap();
        assert_eq!(r.evaluations, 80);
        assert_eq!(calls.load(Ordering::Relaxed), 80);
        assert_eq!(r.cells.len(), 16);
        let best = r.best_cell().unwrap().params;
        assert!(close(best.alpha, 0.633) && close(best.beta, 0.1));
    }

    #[test]
    fn two_phase_finds_injected_optimum() {
        let r = run_two_phase_search(&GridSpec::default(), 5, "h", 0, synthetic).unwrap();
        assert!(r.phase_one.cells.iter().all(|c| c.params.gamma == 0.5));
        assert_eq!(r.phase_two.cells.len(), 8);
        assert!(close(r.selected.alpha, 0.633) && close(r.selected.beta, 0.1) && r.selected.gamma == 1.0);
    }

    #[test]
    fn single_cell_grid() {
        let grid = GridSpec {
            alpha: vec![0.3],
            beta: vec![0.7],
            gamma: vec![2.0],
            ..Default::default()
        };
        let r = run_grid_search(&grid, 3, "h", 0, |_, _| Ok(0.1)).unwrap();
        assert_eq!(r.best, Some(0));
        assert_eq!(r.evaluations, 3);
    }

    #[test]
    fn ties_pick_the_smallest_parameters() {
        let grid = GridSpec {
            alpha: vec![0.9, 0.1],
            beta: vec![0.5, 0.2],
            gamma: vec![1.0],
            ..Default::default()
        };
        let r = run_grid_search(&grid, 2, "h", 0, |_, _| Ok(0.5)).unwrap();
        let b = r.best_cell().unwrap().params;
        assert_eq!((b.alpha, b.beta), (0.1, 0.2));
    }

    #[test]
    fn failures_mark_cells_invalid() {
        let grid = GridSpec {
            alpha: vec![0.1, 0.5],
            beta: vec![0.1],
            gamma: vec![1.0],
            ..Default::default()
        };
        let r = run_grid_search(&grid, 2, "h", 0, |p, f| {
            if p.alpha == 0.5 && f == 1 {
                Err(Error::degenerate("boom"))
            } else {
                Ok(p.alpha)
            }
        })
        .unwrap();
        assert!(r.cells[0].is_valid());
        assert!(!r.cells[1].is_valid());
        assert_eq!(r.cells[1].fold_values, vec![Some(0.5), None]);
        assert_eq!(r.best, Some(0));
        let nan = run_grid_search(&grid, 2, "h", 0, |_, _| Ok(f64::NAN)).unwrap();
        assert_eq!(nan.best, None);
    }

    #[test]
    fn summaries_match_stored_fold_values() {
        let r = run_grid_search(&GridSpec::default().phase_one(), 5, "h", 0, synthetic).unwrap();
        for c in &r.cells {
            let vals: Vec<f64> = c.fold_values.iter().map(|v| v.unwrap()).collect();
            assert_eq!(c.summary.unwrap(), summarize_folds(&vals).unwrap());
        }
    }

    #[test]
    fn empty_axis_rejected() {
        let grid = GridSpec {
            beta: vec![],
            ..Default::default()
        };
        assert!(run_grid_search(&grid, 5, "h", 0, synthetic).is_err());
    }
}
