use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EvalDomain, ExperimentConfig, Role, ScorerKind, VolumeSource};
use super::grid::{CellParams, MetricName};
use super::report::CurveRow;
use super::{derive_seed, make_folds, Fold};
use crate::error::{Error, Result};
use crate::evalkit::{
    evaluate_volume, summarize_folds, welch_ttest, EvalCurves, EvalOptions, FoldSummary, FtlParams, SoftCounts,
    WelchResult,
};
use crate::labeler::{extract_pore_labels, object_mask};
use crate::patchflow::plan_patches;
use crate::postproc::{optimize_params, suppress_surface, PostprocParams};
use crate::scorer::{fit_pca_scorer, import_scores, score_volume, AnomalyScorer, IdentityScorer, PcaScorer, ScoreVolume};
use crate::volgrid::{generate_phantom, load_mask, load_volume, Mask, Volume};

/// A roster entry with its pore labels and object mask.
#[derive(Clone, Debug)]
pub struct LoadedVolume {
    pub name: String,
    pub role: Role,
    pub volume: Volume<f64>,
    pub labels: Mask,
    pub object: Mask,
}

pub fn load_roster(cfg: &ExperimentConfig) -> Result<Vec<LoadedVolume>> {
    cfg.roster
        .par_iter()
        .map(|entry| {
            let (volume, labels) = match &entry.source {
                VolumeSource::File { volume, labels } => {
                    let v: Volume<f64> = load_volume(cfg.resolve(volume))?;
                    let l = match labels {
                        Some(p) => load_mask(cfg.resolve(p))?,
                        None => extract_pore_labels(&v, &cfg.stages.label)?.mask,
                    };
                    l.ensure_same_grid(&v)?;
                    (v, l)
                }
                VolumeSource::Phantom { spec, scatter } => {
                    let mut spec = spec.clone();
                    if let Some(s) = scatter {
                        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                        spec.scatter_pores(s.count, (s.radius_min, s.radius_max), s.gap, &mut rng)?;
                    }
                    generate_phantom::<f64>(&spec)?
                }
            };
            let object = object_mask(&volume)?;
            Ok(LoadedVolume {
                name: entry.name.clone(),
                role: entry.role,
                volume,
                labels,
                object,
            })
        })
        .collect()
}

pub(crate) enum FittedScorer {
    Pca(PcaScorer),
    Identity,
    Import {
        score: String,
        recon: Option<String>,
    },
}

pub(crate) fn fit_scorer(cfg: &ExperimentConfig, train: &[&LoadedVolume], seed: u64) -> Result<FittedScorer> {
    Ok(match &cfg.stages.scorer.kind {
        ScorerKind::Pca => {
            // everything but labelled pores is normal appearance
            let normal: Vec<Mask> = train.iter().map(|v| v.labels.not()).collect();
            let pairs: Vec<(&Volume<f64>, &Mask)> = train.iter().zip(&normal).map(|(v, m)| (&v.volume, m)).collect();
            FittedScorer::Pca(fit_pca_scorer(&pairs, &cfg.stages.scorer.pca, seed)?)
        }
        ScorerKind::Identity => FittedScorer::Identity,
        ScorerKind::Import {
            score_template,
            recon_template,
        } => FittedScorer::Import {
            score: score_template.clone(),
            recon: recon_template.clone(),
        },
    })
}

pub(crate) fn score_with(
    cfg: &ExperimentConfig,
    scorer: &FittedScorer,
    name: &str,
    v: &Volume<f64>,
) -> Result<ScoreVolume<f64>> {
    let run = |s: &dyn AnomalyScorer<f64>| {
        let grid = plan_patches(v.dims(), cfg.stages.scorer.patch_size, cfg.stages.scorer.stride)?;
        score_volume(s, v, &grid)
    };
    match scorer {
        FittedScorer::Pca(p) => run(p),
        FittedScorer::Identity => run(&IdentityScorer),
        FittedScorer::Import { score, recon } => {
            let path = |t: &str| cfg.resolve(&PathBuf::from(t.replace("{name}", name)));
            let recon = recon.as_deref().map(path);
            let (sv, _) = import_scores::<f64>(path(score), recon.as_deref())?;
            sv.score.ensure_same_grid(v)?;
            Ok(sv)
        }
    }
}

/// Raw and (when enabled) surface-suppressed scores for one volume.
pub(crate) struct Scored {
    pub raw: Volume<f64>,
    pub post: Option<(Volume<f64>, PostprocParams)>,
}

impl Scored {
    pub fn best(&self) -> &Volume<f64> {
        self.post.as_ref().map_or(&self.raw, |p| &p.0)
    }
}

pub(crate) fn postprocess(cfg: &ExperimentConfig, sv: ScoreVolume<f64>, object: &Mask) -> Result<Scored> {
    let stage = &cfg.stages.postproc;
    if !stage.enabled {
        return Ok(Scored { raw: sv.score, post: None });
    }
    let domain = stage.object_domain.then_some(object);
    let fit = optimize_params(&sv, &stage.sigma_grid, domain)?;
    let post = suppress_surface(&sv, fit.params)?;
    Ok(Scored {
        raw: sv.score,
        post: Some((post, fit.params)),
    })
}

pub(crate) fn eval_domain<'a>(cfg: &ExperimentConfig, v: &'a LoadedVolume) -> Option<&'a Mask> {
    match cfg.stages.eval.domain {
        EvalDomain::All => None,
        EvalDomain::Object => Some(&v.object),
    }
}

pub(crate) fn eval_options(cfg: &ExperimentConfig, seed: u64) -> EvalOptions {
    EvalOptions {
        max_voxels: cfg.stages.eval.max_voxels,
        seed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub auc: f64,
    pub ap: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl From<&EvalCurves> for RankMetrics {
    fn from(c: &EvalCurves) -> Self {
        RankMetrics {
            auc: c.auc,
            ap: c.ap,
            positives: c.positives,
            negatives: c.negatives,
        }
    }
}

/// Scores sorted in descending order with a running positive count, for
/// constant-time confusion counts at any threshold.
#[derive(Clone, Debug)]
pub(crate) struct RankedSet {
    desc: Vec<f64>,
    cum_pos: Vec<u64>,
}

impl RankedSet {
    fn new(parts: &[(&Volume<f64>, &Mask, Option<&Mask>)]) -> Self {
        let mut pairs: Vec<(f64, bool)> = Vec::new();
        for (score, labels, domain) in parts {
            for i in 0..score.len() {
                if domain.is_none_or(|d| d.data()[i]) {
                    pairs.push((score.data()[i], labels.data()[i]));
                }
            }
        }
        pairs.par_sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
        let mut cum_pos = Vec::with_capacity(pairs.len() + 1);
        cum_pos.push(0);
        let mut acc = 0;
        for p in &pairs {
            acc += p.1 as u64;
            cum_pos.push(acc);
        }
        RankedSet {
            desc: pairs.into_iter().map(|p| p.0).collect(),
            cum_pos,
        }
    }

    fn positives(&self) -> u64 {
        *self.cum_pos.last().expect("non-empty prefix")
    }

    /// Hard counts for the prediction `score > t`.
    fn counts(&self, t: f64) -> SoftCounts {
        let k = self.desc.partition_point(|&s| s > t);
        let tp = self.cum_pos[k];
        SoftCounts {
            tp: tp as f64,
            fn_: (self.positives() - tp) as f64,
            fp: (k as u64 - tp) as f64,
        }
    }

    fn range(&self) -> Option<(f64, f64)> {
        Some((*self.desc.last()?, *self.desc.first()?))
    }
}

/// Dice of hard counts; an empty prediction of an empty target scores 1.
fn hard_dice(c: SoftCounts) -> f64 {
    let denom = 2.0 * c.tp + c.fn_ + c.fp;
    if denom == 0.0 {
        1.0
    } else {
        2.0 * c.tp / denom
    }
}

struct ValEntry {
    name: String,
    ranked: RankedSet,
    raw: RankMetrics,
    post: Option<RankMetrics>,
    params: Option<PostprocParams>,
    raw_curves: EvalCurves,
    post_curves: Option<EvalCurves>,
}

/// Everything a fold needs to evaluate any grid cell cheaply: pooled ranked
/// training scores for threshold calibration and ranked validation scores.
pub struct FoldCache {
    fold: Fold,
    names: Vec<String>,
    train: RankedSet,
    candidates: Vec<f64>,
    val: Vec<ValEntry>,
}

impl FoldCache {
    pub fn prepare(cfg: &ExperimentConfig, vols: &[&LoadedVolume], fold: Fold) -> Result<Self> {
        let train: Vec<&LoadedVolume> = fold.train.iter().map(|&i| vols[i]).collect();
        let scorer = fit_scorer(cfg, &train, derive_seed(cfg.seed, 1000 + fold.index as u64))?;
        let run = |v: &LoadedVolume| -> Result<Scored> {
            let sv = score_with(cfg, &scorer, &v.name, &v.volume)?;
            postprocess(cfg, sv, &v.object)
        };
        let train_scored: Vec<Scored> = train.iter().map(|v| run(v)).collect::<Result<_>>()?;
        let parts: Vec<(&Volume<f64>, &Mask, Option<&Mask>)> = train
            .iter()
            .zip(&train_scored)
            .map(|(v, s)| (s.best(), &v.labels, eval_domain(cfg, v)))
            .collect();
        let ranked_train = RankedSet::new(&parts);
        let (lo, hi) = ranked_train
            .range()
            .ok_or_else(|| Error::degenerate("training domain is empty"))?;
        let m = cfg.stages.eval.threshold_candidates.max(1);
        let candidates: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / m as f64).collect();
        let mut val = Vec::new();
        for &i in &fold.validation {
            let v = vols[i];
            let s = run(v)?;
            let dom = eval_domain(cfg, v);
            let opts = eval_options(cfg, derive_seed(cfg.seed, 2000 + i as u64));
            let raw_curves = evaluate_volume(&s.raw, &v.labels, dom, opts)?;
            let post_curves = s
                .post
                .as_ref()
                .map(|(p, _)| evaluate_volume(p, &v.labels, dom, opts))
                .transpose()?;
            val.push(ValEntry {
                name: v.name.clone(),
                ranked: RankedSet::new(&[(s.best(), &v.labels, dom)]),
                raw: (&raw_curves).into(),
                post: post_curves.as_ref().map(RankMetrics::from),
                params: s.post.as_ref().map(|p| p.1),
                raw_curves: raw_curves.decimated(cfg.stages.eval.max_curve_points),
                post_curves: post_curves.map(|c| c.decimated(cfg.stages.eval.max_curve_points)),
            });
        }
        Ok(FoldCache {
            names: vols.iter().map(|v| v.name.clone()).collect(),
            fold,
            train: ranked_train,
            candidates,
            val,
        })
    }

    /// Threshold minimizing the loss on pooled training scores; ties go to the
    /// lowest candidate.
    pub fn calibrate(&self, ftl: &FtlParams) -> Result<f64> {
        ftl.validate()?;
        let mut best = (f64::INFINITY, self.candidates[0]);
        for &t in &self.candidates {
            let l = self.train.counts(t).focal_tversky(ftl);
            if l < best.0 {
                best = (l, t);
            }
        }
        Ok(best.1)
    }

    /// Mean over validation volumes of `metric` for a loss configuration.
    pub fn metric(&self, cell: &CellParams, metric: MetricName, smooth: f64) -> Result<f64> {
        let ftl = FtlParams {
            alpha: cell.alpha,
            beta: cell.beta,
            gamma: cell.gamma,
            smooth,
        };
        let t = self.calibrate(&ftl)?;
        let vals: Vec<f64> = self
            .val
            .iter()
            .map(|e| match metric {
                MetricName::Dice => hard_dice(e.ranked.counts(t)),
                MetricName::Tversky => 1.0 - e.ranked.counts(t).focal_tversky(&ftl),
                MetricName::Ap => e.post.unwrap_or(e.raw).ap,
                MetricName::Auc => e.post.unwrap_or(e.raw).auc,
            })
            .collect();
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Shared fold caches behind a `metric(cell, fold)` closure for grid search.
pub struct PipelineMetric {
    pub caches: Vec<FoldCache>,
    pub metric: MetricName,
    pub smooth: f64,
}

impl PipelineMetric {
    pub fn prepare(cfg: &ExperimentConfig, vols: &[LoadedVolume], metric: MetricName) -> Result<Self> {
        Ok(PipelineMetric {
            caches: prepare_folds(cfg, vols)?,
            metric,
            smooth: cfg.stages.eval.ftl.smooth,
        })
    }

    pub fn evaluate(&self, cell: &CellParams, fold: usize) -> Result<f64> {
        self.caches
            .get(fold)
            .ok_or_else(|| Error::invalid(format!("no fold {fold}")))?
            .metric(cell, self.metric, self.smooth)
    }
}

fn prepare_folds(cfg: &ExperimentConfig, vols: &[LoadedVolume]) -> Result<Vec<FoldCache>> {
    let train: Vec<&LoadedVolume> = vols.iter().filter(|v| v.role == Role::Train).collect();
    let folds = make_folds(train.len(), cfg.folds, derive_seed(cfg.seed, 1))?;
    folds
        .into_par_iter()
        .map(|f| FoldCache::prepare(cfg, &train, f))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeOutcome {
    pub name: String,
    pub raw: RankMetrics,
    pub post: Option<RankMetrics>,
    pub postproc: Option<PostprocParams>,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub index: usize,
    pub training: Vec<String>,
    pub validation: Vec<VolumeOutcome>,
    pub threshold: f64,
    /// Fold means over validation volumes, keyed by metric name.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XvalReport {
    pub folds: Vec<FoldReport>,
    pub summary: BTreeMap<String, FoldSummary>,
    /// Welch's test of post-processed against raw per-fold values.
    pub post_vs_raw: BTreeMap<String, WelchResult>,
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip)]
    pub curves: Vec<CurveRow>,
}

/// Cross-validated pipeline run with the loss configured in the eval stage.
pub fn run_cross_validation(cfg: &ExperimentConfig, vols: &[LoadedVolume]) -> Result<XvalReport> {
    let caches = prepare_folds(cfg, vols)?;
    let mut folds = Vec::new();
    let mut curves = Vec::new();
    for c in &caches {
        let t = c.calibrate(&cfg.stages.eval.ftl)?;
        let mut outcomes = Vec::new();
        for e in &c.val {
            outcomes.push(VolumeOutcome {
                name: e.name.clone(),
                raw: e.raw,
                post: e.post,
                postproc: e.params,
                dice: hard_dice(e.ranked.counts(t)),
            });
            let tag = format!("fold{}/{}", c.fold.index, e.name);
            curves.extend(CurveRow::from_curves(&format!("{tag}/raw"), &e.raw_curves));
            if let Some(pc) = &e.post_curves {
                curves.extend(CurveRow::from_curves(&format!("{tag}/post"), pc));
            }
        }
        let mean = |f: &dyn Fn(&VolumeOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / outcomes.len() as f64;
        let mut metrics = BTreeMap::new();
        metrics.insert("auc_raw".to_string(), mean(&|o| o.raw.auc));
        metrics.insert("ap_raw".to_string(), mean(&|o| o.raw.ap));
        metrics.insert("dice".to_string(), mean(&|o| o.dice));
        if outcomes.iter().all(|o| o.post.is_some()) {
            metrics.insert("auc".to_string(), mean(&|o| o.post.expect("post").auc));
            metrics.insert("ap".to_string(), mean(&|o| o.post.expect("post").ap));
        }
        folds.push(FoldReport {
            index: c.fold.index,
            training: c.fold.train.iter().map(|&i| c.names[i].clone()).collect(),
            validation: outcomes,
            threshold: t,
            metrics,
        });
    }
    let column = |k: &str| -> Option<Vec<f64>> { folds.iter().map(|f| f.metrics.get(k).copied()).collect() };
    let mut summary = BTreeMap::new();
    for k in ["auc", "ap", "auc_raw", "ap_raw", "dice"] {
        if let Some(vals) = column(k) {
            summary.insert(k.to_string(), summarize_folds(&vals)?);
        }
    }
    let mut post_vs_raw = BTreeMap::new();
    for k in ["auc", "ap"] {
        if let (Some(a), Some(b)) = (column(k), column(&format!("{k}_raw"))) {
            if let Ok(w) = welch_ttest(&a, &b) {
                post_vs_raw.insert(k.to_string(), w);
            }
        }
    }
    Ok(XvalReport {
        folds,
        summary,
        post_vs_raw,
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        curves,
    })
}
