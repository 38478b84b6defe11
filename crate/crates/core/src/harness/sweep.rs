use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Role};
use super::pipeline::{eval_domain, eval_options, fit_scorer, postprocess, score_with, LoadedVolume};
use super::report::CurveRow;
use super::derive_seed;
use crate::degrade::{degrade_volume, DegradeSpec};
use crate::error::{Error, Result};
use crate::evalkit::evaluate_volume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub exposure: f64,
    pub projections: f64,
    /// Means over the test volumes; `None` when the cell failed.
    pub auc_raw: Option<f64>,
    pub ap_raw: Option<f64>,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub exposures: Vec<f64>,
    pub projections: Vec<f64>,
    /// Exposure-major order.
    pub cells: Vec<SweepCell>,
    pub test_volumes: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip)]
    pub curves: Vec<CurveRow>,
}

impl SweepReport {
    pub fn cell(&self, exposure: f64, projections: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.exposure == exposure && c.projections == projections)
    }
}

struct CellOutcome {
    auc_raw: f64,
    ap_raw: f64,
    auc: Option<f64>,
    ap: Option<f64>,
    curves: Vec<CurveRow>,
}

/// Fits the scorer once on the training volumes, then for every
/// (exposure, projection) pair degrades each test volume and runs
/// score, post-processing and evaluation on it.
pub fn run_degradation_sweep(
    cfg: &ExperimentConfig,
    vols: &[LoadedVolume],
    exposures: &[f64],
    projections: &[f64],
) -> Result<SweepReport> {
    if exposures.is_empty() || projections.is_empty() {
        return Err(Error::invalid("sweep needs at least one exposure and one projection fraction"));
    }
    let train: Vec<&LoadedVolume> = vols.iter().filter(|v| v.role == Role::Train).collect();
    let test: Vec<&LoadedVolume> = vols.iter().filter(|v| v.role == Role::Test).collect();
    if test.is_empty() {
        return Err(Error::invalid("sweep needs at least one roster entry with role \"test\""));
    }
    let scorer = fit_scorer(cfg, &train, derive_seed(cfg.seed, 3000))?;
    let pairs: Vec<(f64, f64)> = exposures
        .iter()
        .flat_map(|&e| projections.iter().map(move |&p| (e, p)))
        .collect();
    let run_cell = |e: f64, p: f64| -> Result<CellOutcome> {
        let mut per_volume = Vec::new();
        let mut curves = Vec::new();
        for (k, v) in test.iter().enumerate() {
            let spec = DegradeSpec {
                exposure_fraction: e,
                projection_fraction: p,
                // the same noise stream for every cell of a volume
                seed: derive_seed(cfg.seed, 4000 + k as u64),
                ..cfg.stages.degrade
            };
            let d = degrade_volume(&v.volume, &spec)?;
            let sv = score_with(cfg, &scorer, &v.name, &d)?;
            let s = postprocess(cfg, sv, &v.object)?;
            let dom = eval_domain(cfg, v);
            let opts = eval_options(cfg, derive_seed(cfg.seed, 5000 + k as u64));
            let raw = evaluate_volume(&s.raw, &v.labels, dom, opts)?;
            let tag = format!("e={e:?},p={p:?}/{}", v.name);
            let post = s
                .post
                .as_ref()
                .map(|(pv, _)| evaluate_volume(pv, &v.labels, dom, opts))
                .transpose()?;
            curves.extend(CurveRow::from_curves(
                &format!("{tag}/raw"),
                &raw.decimated(cfg.stages.eval.max_curve_points),
            ));
            if let Some(pc) = &post {
                curves.extend(CurveRow::from_curves(
                    &format!("{tag}/post"),
                    &pc.decimated(cfg.stages.eval.max_curve_points),
                ));
            }
            per_volume.push((raw.auc, raw.ap, post.map(|c| (c.auc, c.ap))));
        }
        let n = per_volume.len() as f64;
        let mean = |f: &dyn Fn(&(f64, f64, Option<(f64, f64)>)) -> f64| per_volume.iter().map(f).sum::<f64>() / n;
        let has_post = per_volume.iter().all(|v| v.2.is_some());
        Ok(CellOutcome {
            auc_raw: mean(&|v| v.0),
            ap_raw: mean(&|v| v.1),
            auc: has_post.then(|| mean(&|v| v.2.expect("post").0)),
            ap: has_post.then(|| mean(&|v| v.2.expect("post").1)),
            curves,
        })
    };
    let outcomes: Vec<Result<CellOutcome>> = pairs.par_iter().map(|&(e, p)| run_cell(e, p)).collect();
    let mut cells = Vec::new();
    let mut curves = Vec::new();
    for (&(exposure, projections), o) in pairs.iter().zip(outcomes) {
        match o {
            Ok(o) => {
                cells.push(SweepCell {
                    exposure,
                    projections,
                    auc_raw: Some(o.auc_raw),
                    ap_raw: Some(o.ap_raw),
                    auc: o.auc,
                    ap: o.ap,
                    error: None,
                });
                curves.extend(o.curves);
            }
            Err(e) => {
                log::warn!("sweep cell ({exposure}, {projections}) failed: {e}");
                cells.push(SweepCell {
                    exposure,
                    projections,
                    auc_raw: None,
                    ap_raw: None,
                    auc: None,
                    ap: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(SweepReport {
        exposures: exposures.to_vec(),
        projections: projections.to_vec(),
        cells,
        test_volumes: test.iter().map(|v| v.name.clone()).collect(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        curves,
    })
}
