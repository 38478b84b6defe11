//! Losses and metrics: focal Tversky, Dice, deep supervision, ROC/PR, Welch's t-test.

mod ranking;
mod stats;

pub use ranking::{
    evaluate_ranking, evaluate_volume, pr_ap, roc_auc, stratified_subsample, CurvePoint, EvalCurves, EvalOptions,
    DEFAULT_MAX_EVAL_VOXELS,
};
pub use stats::{summarize_folds, welch_ttest, FoldSummary, WelchResult};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volgrid::{Mask, Volume};

pub const DEFAULT_SMOOTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtlParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default = "default_smooth")]
    pub smooth: f64,
}

fn default_smooth() -> f64 {
    DEFAULT_SMOOTH
}

impl FtlParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        FtlParams {
            alpha,
            beta,
            gamma,
            smooth: DEFAULT_SMOOTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.alpha) && ok(self.beta) && ok(self.gamma) && ok(self.smooth)) {
            return Err(Error::invalid(format!("FTL params must be positive and finite: {self:?}")));
        }
        Ok(())
    }
}

/// Soft confusion counts; TN is not needed by any loss here.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SoftCounts {
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub fp: f64,
}

impl SoftCounts {
    fn add(self, o: SoftCounts) -> SoftCounts {
        SoftCounts {
            tp: self.tp + o.tp,
            fn_: self.fn_ + o.fn_,
            fp: self.fp + o.fp,
        }
    }

    pub fn tversky_index(&self, alpha: f64, beta: f64, smooth: f64) -> f64 {
        (self.tp + smooth) / (self.tp + alpha * self.fn_ + beta * self.fp + smooth)
    }

    pub fn focal_tversky(&self, p: &FtlParams) -> f64 {
        (1.0 - self.tversky_index(p.alpha, p.beta, p.smooth)).max(0.0).powf(p.gamma)
    }

    /// `2TP / (2TP + FN + FP)` with the same additive smoothing as the loss.
    pub fn dice(&self, smooth: f64) -> f64 {
        (2.0 * self.tp + 2.0 * smooth) / (2.0 * self.tp + self.fn_ + self.fp + 2.0 * smooth)
    }
}

const COUNT_CHUNK: usize = 1 << 14;

/// Soft counts over slices. Chunks are summed in a fixed order so the result
/// does not depend on the thread count.
pub fn soft_counts_slice(pred: &[f64], target: &[bool]) -> Result<SoftCounts> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            found: pred.len(),
        });
    }
    if let Some(i) = pred.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid(format!("prediction {} at index {i} is outside [0, 1]", pred[i])));
    }
    let partial: Vec<SoftCounts> = pred
        .par_chunks(COUNT_CHUNK)
        .zip(target.par_chunks(COUNT_CHUNK))
        .map(|(p, t)| {
            p.iter().zip(t).fold(SoftCounts::default(), |c, (&p, &t)| {
                if t {
                    SoftCounts {
                        tp: c.tp + p,
                        fn_: c.fn_ + (1.0 - p),
                        ..c
                    }
                } else {
                    SoftCounts { fp: c.fp + p, ..c }
                }
            })
        })
        .collect();
    Ok(partial.into_iter().fold(SoftCounts::default(), SoftCounts::add))
}

pub fn soft_counts<T: Scalar>(pred: &Volume<T>, target: &Mask) -> Result<SoftCounts> {
    target.ensure_same_grid(pred)?;
    let p: Vec<f64> = pred.data().iter().map(|v| v.as_f64()).collect();
    soft_counts_slice(&p, target.data())
}

pub fn focal_tversky_loss<T: Scalar>(pred: &Volume<T>, target: &Mask, p: &FtlParams) -> Result<f64> {
    p.validate()?;
    Ok(soft_counts(pred, target)?.focal_tversky(p))
}

pub fn soft_dice<T: Scalar>(pred: &Volume<T>, target: &Mask) -> Result<f64> {
    Ok(soft_counts(pred, target)?.dice(DEFAULT_SMOOTH))
}

/// Hard Dice; two empty masks score 1.
pub fn dice_score(pred: &Mask, target: &Mask) -> Result<f64> {
    pred.ensure_same_dims(target)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    })
}

/// Weighted mean of per-stage losses with weights `1, 1/2, 1/4, ...`.
pub fn deep_supervision_combine(stage_losses: &[f64]) -> Result<f64> {
    if stage_losses.is_empty() {
        return Err(Error::invalid("deep supervision needs at least one stage"));
    }
    let (num, den) = stage_losses
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(n, d), (i, &l)| {
            let w = 0.5f64.powi(i as i32);
            (n + w * l, d + w)
        });
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(bits: &[bool]) -> Mask {
        Mask::new([bits.len(), 1, 1], [10.0; 3], bits.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_has_no_errors() {
        let t = [true, false, true, true];
        let p: Vec<f64> = t.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let c = soft_counts_slice(&p, &t).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp), (3.0, 0.0, 0.0));
        let v = Volume::<f64>::from_vec([4, 1, 1], p);
        assert!(focal_tversky_loss(&v, &mask(&t), &FtlParams::new(0.7, 0.3, 2.0)).unwrap() < 1e-12);
    }

    #[test]
    fn zero_prediction_misses_everything() {
        let t = [true, false, true];
        let c = soft_counts_slice(&[0.0; 3], &t).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp), (0.0, 2.0, 0.0));
    }

    #[test]
    fn counts_match_voxel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pred = Volume::<f64>::from_fn([3; 3], |_, _, _| rng.random_range(0.0..=1.0));
        let target = Mask::from_fn([3; 3], |_, _, _| rng.random_bool(0.4));
        let c = soft_counts(&pred, &target).unwrap();
        let (mut tp, mut fn_, mut fp) = (0.0, 0.0, 0.0);
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    let p = pred.get(x, y, z);
                    let t = if target.get(x, y, z) { 1.0 } else { 0.0 };
                    tp += p * t;
                    fn_ += (1.0 - p) * t;
                    fp += p * (1.0 - t);
                }
            }
        }
        assert!((c.tp - tp).abs() < 1e-12 && (c.fn_ - fn_).abs() < 1e-12 && (c.fp - fp).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_prediction_errors() {
        assert!(soft_counts_slice(&[1.5], &[true]).is_err());
        assert!(soft_counts_slice(&[0.5, 0.5], &[true]).is_err());
    }

    #[test]
    fn hand_computed_loss() {
        let c = SoftCounts {
            tp: 2.0,
            fn_: 1.0,
            fp: 1.0,
        };
        let p = FtlParams {
            smooth: 0.0,
            ..FtlParams::new(0.7, 0.3, 2.0)
        };
        assert!((c.tversky_index(0.7, 0.3, 0.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.focal_tversky(&p) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn half_weights_give_dice_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = FtlParams::new(0.5, 0.5, 1.0);
        for _ in 0..50 {
            let c = SoftCounts {
                tp: rng.random_range(0.0..50.0),
                fn_: rng.random_range(0.0..50.0),
                fp: rng.random_range(0.0..50.0),
            };
            let dice_loss = 1.0 - 2.0 * c.tp / (2.0 * c.tp + c.fn_ + c.fp);
            assert!((c.focal_tversky(&p) - dice_loss).abs() < 1e-6);
            assert!((c.focal_tversky(&p) + c.dice(p.smooth) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_prediction_of_empty_target() {
        let v = Volume::<f64>::zeros([4, 1, 1]);
        let m = mask(&[false; 4]);
        assert_eq!(focal_tversky_loss(&v, &m, &FtlParams::new(0.6, 0.1, 1.0)).unwrap(), 0.0);
        assert_eq!(dice_score(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let v = Volume::<f64>::zeros([2, 1, 1]);
        let m = mask(&[true, false]);
        assert!(focal_tversky_loss(&v, &m, &FtlParams::new(0.0, 0.5, 1.0)).is_err());
        assert!(focal_tversky_loss(&v, &m, &FtlParams::new(0.5, 0.5, f64::NAN)).is_err());
    }

    #[test]
    fn hard_dice_cases() {
        let a = mask(&[true, true, false, false]);
        let b = mask(&[false, false, true, true]);
        let c = mask(&[true, false, true, false]);
        assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_score(&a, &b).unwrap(), 0.0);
        assert_eq!(dice_score(&a, &c).unwrap(), 0.5);
    }

    #[test]
    fn deep_supervision_weights() {
        assert!((deep_supervision_combine(&[0.4; 5]).unwrap() - 0.4).abs() < 1e-15);
        assert!((deep_supervision_combine(&[3.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!((deep_supervision_combine(&[3.0, 2.0, 1.0]).unwrap() - 17.0 / 7.0).abs() < 1e-15);
        assert!(deep_supervision_combine(&[]).is_err());
    }

    #[test]
    fn counts_are_thread_count_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let a = soft_counts_slice(&p, &t).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| soft_counts_slice(&p, &t).unwrap());
        assert_eq!(a, b);
    }

    mod properties {
        use super::super::*;
        use proptest::prelude::*;

        fn counts() -> impl Strategy<Value = SoftCounts> {
            (0.0f64..100.0, 0.0f64..100.0, 0.0f64..100.0).prop_map(|(tp, fn_, fp)| SoftCounts { tp, fn_, fp })
        }

        proptest! {
            #[test]
            fn loss_is_in_unit_interval(c in counts(), a in 0.01f64..1.0, b in 0.01f64..1.0, g in 0.1f64..4.0) {
                let l = c.focal_tversky(&FtlParams::new(a, b, g));
                prop_assert!((0.0..=1.0).contains(&l));
            }

            #[test]
            fn loss_decreases_with_gamma(t in 0.01f64..0.99, g in 0.1f64..3.0, dg in 0.01f64..2.0) {
                // tp/(tp + fn) = t with alpha = 1, beta irrelevant
                let c = SoftCounts { tp: t, fn_: 1.0 - t, fp: 0.0 };
                let p = |gamma| FtlParams { smooth: 1e-300, ..FtlParams::new(1.0, 0.5, gamma) };
                prop_assert!(c.focal_tversky(&p(g + dg)) < c.focal_tversky(&p(g)));
            }

            #[test]
            fn loss_decreases_with_true_positives(c in counts(), dtp in 0.01f64..10.0, a in 0.05f64..1.0, b in 0.05f64..1.0, g in 0.2f64..3.0) {
                prop_assume!(c.fn_ + c.fp > 1e-3);
                let p = FtlParams::new(a, b, g);
                let more = SoftCounts { tp: c.tp + dtp, ..c };
                prop_assert!(more.focal_tversky(&p) < c.focal_tversky(&p));
            }
        }
    }
}
