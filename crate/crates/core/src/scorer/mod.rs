//! Voxel-wise anomaly scoring through the patch pipeline.
//!
//! A scorer maps a patch to `(score, reconstruction)`. The built-in
//! [`PcaScorer`] reconstructs small sub-patches from a principal subspace
//! fitted on normal material; its absolute residual is the anomaly score.

mod pca;

pub use pca::{fit_pca_scorer, PcaScorer, PcaSpec};

use std::path::Path;

use crate::error::{Error, Result};
use crate::labeler::{connected_components, filter_small_pores, PoreMask};
use crate::patchflow::{map_patches, PatchGrid};
use crate::scalar::Scalar;
use crate::volgrid::{load_volume, save_volume, Mask, Volume};

pub trait AnomalyScorer<T: Scalar>: Send + Sync {
    /// Returns `(score, reconstruction)` on the grid of `patch`.
    fn score(&self, patch: &Volume<T>) -> Result<(Volume<T>, Volume<T>)>;
}

/// Reconstructs its input exactly, so every score is zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityScorer;

impl<T: Scalar> AnomalyScorer<T> for IdentityScorer {
    fn score(&self, patch: &Volume<T>) -> Result<(Volume<T>, Volume<T>)> {
        Ok((patch.map(|_| T::zero()), patch.clone()))
    }
}

/// Anomaly score `A` with the reconstruction it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVolume<T> {
    pub score: Volume<T>,
    pub recon: Option<Volume<T>>,
}

impl<T: Scalar> ScoreVolume<T> {
    pub fn new(score: Volume<T>, recon: Option<Volume<T>>) -> Result<Self> {
        if let Some(r) = &recon {
            score.ensure_same_grid(r)?;
        }
        if let Some(i) = score.data().iter().position(|&a| a < T::zero()) {
            return Err(Error::invalid(format!("negative anomaly score at voxel {i}")));
        }
        Ok(Self { score, recon })
    }

    pub fn recon(&self) -> Result<&Volume<T>> {
        self.recon
            .as_ref()
            .ok_or_else(|| Error::invalid("score volume has no reconstruction"))
    }

    pub fn save(&self, score_path: impl AsRef<Path>, recon_path: Option<&Path>) -> Result<()> {
        save_volume(&self.score, score_path)?;
        if let (Some(r), Some(p)) = (&self.recon, recon_path) {
            save_volume(r, p)?;
        }
        Ok(())
    }
}

/// Scores every patch of `grid` and mean-aggregates both outputs.
pub fn score_volume<T: Scalar, S: AnomalyScorer<T> + ?Sized>(
    scorer: &S,
    v: &Volume<T>,
    grid: &PatchGrid,
) -> Result<ScoreVolume<T>> {
    if v.dims() != grid.dims {
        return Err(Error::DimsMismatch(v.dims(), grid.dims));
    }
    let [score, recon] = map_patches(v, grid, |p| {
        let (s, r) = scorer.score(p)?;
        if s.dims() != p.dims() || r.dims() != p.dims() {
            return Err(Error::DimsMismatch(s.dims(), p.dims()));
        }
        Ok([s, r])
    })?;
    ScoreVolume::new(score, Some(recon))
}

/// Loads an externally produced score volume, clamping negative scores to
/// zero. Returns the volume and how many voxels were clamped.
pub fn import_scores<T: Scalar>(
    score_path: impl AsRef<Path>,
    recon_path: Option<&Path>,
) -> Result<(ScoreVolume<T>, usize)> {
    let mut score: Volume<T> = load_volume(score_path)?;
    let recon = recon_path.map(load_volume::<T>).transpose()?;
    let mut clamped = 0;
    for a in score.data_mut() {
        if *a < T::zero() {
            *a = T::zero();
            clamped += 1;
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} negative anomaly scores to zero");
    }
    Ok((ScoreVolume::new(score, recon)?, clamped))
}

/// Voxels whose score exceeds `threshold`.
pub fn binarize_scores<T: Scalar>(score: &Volume<T>, threshold: f64) -> Mask {
    Mask::threshold(score, |a| a.as_f64() > threshold)
}

/// Thresholds the score, then applies the connectivity filter and size rule.
pub fn scores_to_labels<T: Scalar>(sv: &ScoreVolume<T>, threshold: f64, min_dims: usize) -> Result<PoreMask> {
    if !threshold.is_finite() {
        return Err(Error::invalid("threshold must be finite"));
    }
    let raw = binarize_scores(&sv.score, threshold);
    let kept = filter_small_pores(connected_components(&raw), min_dims);
    Ok(PoreMask::from_components(&raw, kept))
}
