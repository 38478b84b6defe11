use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volgrid::{Mask, Volume};

/// Above this many voxels, curve sweeps use a stratified subsample.
pub const DEFAULT_MAX_EVAL_VOXELS: usize = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCurves {
    /// (FPR, TPR), from (0, 0) at threshold +inf to (1, 1).
    pub roc: Vec<CurvePoint>,
    /// (recall, precision), one point per distinct score.
    pub pr: Vec<CurvePoint>,
    pub auc: f64,
    pub ap: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl EvalCurves {
    /// Keeps at most `max_points` evenly spaced points per curve, always
    /// including both ends. Summary metrics are unchanged.
    pub fn decimated(&self, max_points: usize) -> EvalCurves {
        fn thin(c: &[CurvePoint], m: usize) -> Vec<CurvePoint> {
            if c.len() <= m || m < 2 {
                return c.to_vec();
            }
            let mut idx: Vec<usize> = (0..m).map(|i| i * (c.len() - 1) / (m - 1)).collect();
            idx.dedup();
            idx.into_iter().map(|i| c[i]).collect()
        }
        EvalCurves {
            roc: thin(&self.roc, max_points),
            pr: thin(&self.pr, max_points),
            ..self.clone()
        }
    }
}

/// Distinct scores in descending order with cumulative (tp, fp) after each group.
struct Sweep {
    groups: Vec<(f64, u64, u64)>,
    positives: u64,
    negatives: u64,
}

fn sweep(scores: &[f64], labels: &[bool]) -> Result<Sweep> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(i));
    }
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    order.par_sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, &(s, l)) in order.iter().enumerate() {
        if l {
            tp += 1;
        } else {
            fp += 1;
        }
        if i + 1 == order.len() || order[i + 1].0 != s {
            groups.push((s, tp, fp));
        }
    }
    Ok(Sweep {
        groups,
        positives: tp,
        negatives: fp,
    })
}

fn roc_from(sw: &Sweep) -> Result<(Vec<CurvePoint>, f64)> {
    if sw.positives == 0 || sw.negatives == 0 {
        return Err(Error::degenerate("ROC needs both classes"));
    }
    let (p, n) = (sw.positives as f64, sw.negatives as f64);
    let mut pts = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: f64::INFINITY,
    }];
    // trapezoid area accumulated in integers: sum of dfp * (tp_prev + tp)
    let mut area2: u128 = 0;
    let (mut ptp, mut pfp) = (0u64, 0u64);
    for &(s, tp, fp) in &sw.groups {
        area2 += (fp - pfp) as u128 * (tp + ptp) as u128;
        pts.push(CurvePoint {
            x: fp as f64 / n,
            y: tp as f64 / p,
            threshold: s,
        });
        ptp = tp;
        pfp = fp;
    }
    let auc = area2 as f64 / (2.0 * p * n);
    Ok((pts, auc))
}

fn pr_from(sw: &Sweep) -> Result<(Vec<CurvePoint>, f64)> {
    if sw.positives == 0 {
        return Err(Error::degenerate("PR needs at least one positive"));
    }
    let p = sw.positives as f64;
    let mut pts = Vec::with_capacity(sw.groups.len());
    let mut ap = 0.0;
    let mut ptp = 0u64;
    for &(s, tp, fp) in &sw.groups {
        let precision = tp as f64 / (tp + fp) as f64;
        // every positive in a tied group sees the precision at the end of the group
        ap += (tp - ptp) as f64 * precision;
        pts.push(CurvePoint {
            x: tp as f64 / p,
            y: precision,
            threshold: s,
        });
        ptp = tp;
    }
    Ok((pts, ap / p))
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(Vec<CurvePoint>, f64)> {
    roc_from(&sweep(scores, labels)?)
}

pub fn pr_ap(scores: &[f64], labels: &[bool]) -> Result<(Vec<CurvePoint>, f64)> {
    pr_from(&sweep(scores, labels)?)
}

pub fn evaluate_ranking(scores: &[f64], labels: &[bool]) -> Result<EvalCurves> {
    let sw = sweep(scores, labels)?;
    let (roc, auc) = roc_from(&sw)?;
    let (pr, ap) = pr_from(&sw)?;
    Ok(EvalCurves {
        roc,
        pr,
        auc,
        ap,
        positives: sw.positives as usize,
        negatives: sw.negatives as usize,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// `None` always evaluates every voxel.
    pub max_voxels: Option<usize>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_voxels: Some(DEFAULT_MAX_EVAL_VOXELS),
            seed: 0,
        }
    }
}

impl EvalOptions {
    pub fn exact() -> Self {
        EvalOptions {
            max_voxels: None,
            seed: 0,
        }
    }
}

/// Sorted indices of a seeded subsample of `labels` of about `max` items that
/// keeps the class proportions. Every index is returned when already small enough.
pub fn stratified_subsample(labels: &[bool], max: usize, seed: u64) -> Vec<usize> {
    if labels.len() <= max {
        return (0..labels.len()).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frac = max as f64 / labels.len() as f64;
    let mut out = Vec::with_capacity(max);
    for class in [true, false] {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let k = ((members.len() as f64 * frac).round() as usize).clamp(1, members.len());
        out.extend(sample(&mut rng, members.len(), k).into_iter().map(|j| members[j]));
    }
    out.sort_unstable();
    out
}

/// Voxel-wise curves of a score volume against ground-truth labels, optionally
/// restricted to a domain mask.
pub fn evaluate_volume<T: Scalar>(
    score: &Volume<T>,
    labels: &Mask,
    domain: Option<&Mask>,
    opts: EvalOptions,
) -> Result<EvalCurves> {
    labels.ensure_same_grid(score)?;
    let idx: Vec<usize> = match domain {
        Some(d) => {
            d.ensure_same_grid(score)?;
            (0..score.len()).filter(|&i| d.data()[i]).collect()
        }
        None => (0..score.len()).collect(),
    };
    let lab: Vec<bool> = idx.iter().map(|&i| labels.data()[i]).collect();
    let keep = match opts.max_voxels {
        Some(m) if lab.len() > m => stratified_subsample(&lab, m, opts.seed),
        _ => (0..lab.len()).collect(),
    };
    let s: Vec<f64> = keep.iter().map(|&j| score.data()[idx[j]].as_f64()).collect();
    let l: Vec<bool> = keep.iter().map(|&j| lab[j]).collect();
    evaluate_ranking(&s, &l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mann_whitney(s: &[f64], l: &[bool]) -> f64 {
        let mut num = 0.0;
        let (mut p, mut n) = (0usize, 0usize);
        for i in 0..s.len() {
            if l[i] {
                p += 1;
            } else {
                n += 1;
            }
        }
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / (p * n) as f64
    }

    fn rank_precision(s: &[f64], l: &[bool]) -> f64 {
        // precision at each positive counts every item scoring at least as high
        let p = l.iter().filter(|&&b| b).count() as f64;
        let mut total = 0.0;
        for i in 0..s.len() {
            if l[i] {
                let above = (0..s.len()).filter(|&j| s[j] >= s[i]).count() as f64;
                let pos_above = (0..s.len()).filter(|&j| s[j] >= s[i] && l[j]).count() as f64;
                total += pos_above / above;
            }
        }
        total / p
    }

    const L: [bool; 4] = [true, false, true, false];
    const S: [f64; 4] = [0.9, 0.6, 0.4, 0.1];

    #[test]
    fn small_example() {
        let (_, auc) = roc_auc(&S, &L).unwrap();
        let (_, ap) = pr_ap(&S, &L).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(mann_whitney(&S, &L), 0.75);
    }

    #[test]
    fn perfect_separation() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        assert_eq!(roc_auc(&s, &l).unwrap().1, 1.0);
        assert_eq!(pr_ap(&s, &l).unwrap().1, 1.0);
    }

    #[test]
    fn inverted_labels_complement_auc() {
        let inv: Vec<bool> = L.iter().map(|b| !b).collect();
        let a = roc_auc(&S, &L).unwrap().1;
        let b = roc_auc(&S, &inv).unwrap().1;
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_tied_gives_prevalence() {
        let s = [0.3; 10];
        let l = [true, false, false, true, false, false, false, true, false, false];
        let c = evaluate_ranking(&s, &l).unwrap();
        assert!((c.ap - 0.3).abs() < 1e-15);
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.pr.len(), 1);
    }

    #[test]
    fn curve_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s: Vec<f64> = (0..200).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
        let l: Vec<bool> = s.iter().map(|&v| rng.random_bool(v * 0.8 + 0.1)).collect();
        let c = evaluate_ranking(&s, &l).unwrap();
        assert_eq!((c.roc[0].x, c.roc[0].y), (0.0, 0.0));
        let last = c.roc.last().unwrap();
        assert_eq!((last.x, last.y), (1.0, 1.0));
        assert!(c.roc.windows(2).all(|w| w[0].threshold > w[1].threshold));
        assert!(c.pr.windows(2).all(|w| w[0].x <= w[1].x));
        assert_eq!(c.positives + c.negatives, 200);
    }

    #[test]
    fn single_class_errors() {
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[false, false]).is_err());
        assert!(pr_ap(&[0.1, 0.2], &[false, false]).is_err());
        assert!(pr_ap(&[0.1, 0.2], &[true, false]).is_ok());
        assert!(roc_auc(&[0.1, f64::NAN], &[true, false]).is_err());
    }

    #[test]
    fn brute_force_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let n = rng.random_range(2..=50);
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64 * 0.1).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            l[0] = true;
            l[1] = false;
            let c = evaluate_ranking(&s, &l).unwrap();
            assert!((c.auc - mann_whitney(&s, &l)).abs() < 1e-12);
            assert!((c.ap - rank_precision(&s, &l)).abs() < 1e-12);
        }
    }

    #[test]
    fn subsample_keeps_proportions() {
        let labels: Vec<bool> = (0..10_000).map(|i| i % 10 == 0).collect();
        let keep = stratified_subsample(&labels, 1000, 3);
        assert_eq!(keep.len(), 1000);
        assert_eq!(keep.iter().filter(|&&i| labels[i]).count(), 100);
        assert!(keep.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(keep, stratified_subsample(&labels, 1000, 3));
        assert_eq!(stratified_subsample(&labels, 20_000, 3).len(), 10_000);
    }

    #[test]
    fn volume_evaluation_with_domain() {
        let score = Volume::<f64>::from_vec([4, 1, 1], vec![0.9, 0.6, 0.4, 0.1]);
        let labels = Mask::new([4, 1, 1], [10.0; 3], L.to_vec()).unwrap();
        let all = evaluate_volume(&score, &labels, None, EvalOptions::exact()).unwrap();
        assert!((all.ap - 5.0 / 6.0).abs() < 1e-15);
        let dom = Mask::new([4, 1, 1], [10.0; 3], vec![true, true, false, true]).unwrap();
        let sub = evaluate_volume(&score, &labels, Some(&dom), EvalOptions::exact()).unwrap();
        assert_eq!(sub.auc, 1.0);
        let tiny = EvalOptions {
            max_voxels: Some(2),
            seed: 1,
        };
        let c = evaluate_volume(&score, &labels, None, tiny).unwrap();
        assert_eq!(c.positives + c.negatives, 2);
    }

    #[test]
    fn decimation_keeps_ends() {
        let s: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let l: Vec<bool> = (0..1000).map(|i| i % 3 == 0).collect();
        let c = evaluate_ranking(&s, &l).unwrap();
        let d = c.decimated(10);
        assert_eq!(d.roc.len(), 10);
        assert_eq!(d.roc[0], c.roc[0]);
        assert_eq!(d.roc.last(), c.roc.last());
        assert_eq!(d.auc, c.auc);
    }
}
