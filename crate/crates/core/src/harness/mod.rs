//! Experiment orchestration: folds, grid search, cross-validation, degradation
//! sweeps and report emission.

mod config;
mod grid;
mod pipeline;
mod report;
mod sweep;

pub use config::{
    EvalDomain, EvalStage, ExperimentConfig, PostprocStage, RosterEntry, Role, ScatterSpec, ScorerKind, ScorerStage,
    StageConfig, VolumeSource,
};
pub use grid::{
    default_alpha_beta_axis, default_gamma_axis, run_grid_search, run_two_phase_search, CellParams, CellResult,
    CrossValReport, GridSpec, MetricName, SearchProtocol, TwoPhaseReport,
};
pub use pipeline::{
    load_roster, run_cross_validation, FoldCache, FoldReport, LoadedVolume, PipelineMetric, RankMetrics,
    VolumeOutcome, XvalReport,
};
pub use report::{emit_report, CurveRow, Report};
pub use sweep::{run_degradation_sweep, SweepCell, SweepReport};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Independent seed for a named sub-task, so adding a stage never shifts the
/// random numbers another stage sees.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffles `0..n` with `seed`, then item `j` of the shuffled order validates
/// in fold `j % k`.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if n < k {
        return Err(Error::InsufficientSamples { needed: k, available: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|f| {
            let mut validation: Vec<usize> = order.iter().enumerate().filter(|(j, _)| j % k == f).map(|(_, &i)| i).collect();
            validation.sort_unstable();
            let train = (0..n).filter(|i| !validation.contains(i)).collect();
            Fold {
                index: f,
                train,
                validation,
            }
        })
        .collect())
}
