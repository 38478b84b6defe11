use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnomalyScorer;
use crate::error::{Error, Result};
use crate::patchflow::{map_patches, plan_patches};
use crate::scalar::Scalar;
use crate::volgrid::{linear_index, Dims, Mask, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaSpec {
    /// Edge of the vectorized sub-patch.
    pub patch_edge: usize,
    pub components: usize,
    /// Sub-patch stride used when scoring.
    pub stride: usize,
    /// Upper bound on training sub-patches drawn.
    pub samples: usize,
}

impl Default for PcaSpec {
    fn default() -> Self {
        Self {
            patch_edge: 8,
            components: 4,
            stride: 4,
            samples: 4000,
        }
    }
}

/// Mean plus orthonormal principal directions of sub-patch vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaScorer {
    pub patch_edge: usize,
    pub stride: usize,
    pub mean: Vec<f64>,
    /// Row-major `k x edge^3`.
    pub basis: Vec<Vec<f64>>,
}

impl PcaScorer {
    pub fn components(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Projection of `x` onto the affine principal subspace.
    pub fn reconstruct_vector(&self, x: &[f64]) -> Vec<f64> {
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let mut out = self.mean.clone();
        for b in &self.basis {
            let c: f64 = b.iter().zip(&centred).map(|(u, v)| u * v).sum();
            for (o, u) in out.iter_mut().zip(b) {
                *o += c * u;
            }
        }
        out
    }

    pub fn residual_vector(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.reconstruct_vector(x)).map(|(a, r)| a - r).collect()
    }

    /// Largest entry of `|B B^T - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.basis.len();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = self.basis[i].iter().zip(&self.basis[j]).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

impl<T: Scalar> AnomalyScorer<T> for PcaScorer {
    fn score(&self, patch: &Volume<T>) -> Result<(Volume<T>, Volume<T>)> {
        let e = self.patch_edge;
        let grid = plan_patches(patch.dims(), e, self.stride)?;
        let [recon] = map_patches(patch, &grid, |sub| {
            let x: Vec<f64> = sub.data().iter().map(|v| v.as_f64()).collect();
            let r = self.reconstruct_vector(&x);
            Ok([sub.like(r.into_iter().map(T::of).collect())])
        })?;
        let score = patch.like(
            patch
                .data()
                .iter()
                .zip(recon.data())
                .map(|(&v, &r)| (v - r).abs())
                .collect(),
        );
        Ok((score, recon))
    }
}

/// Summed-volume table over a mask, padded by one on the low side of each axis.
struct MaskIntegral {
    dims: Dims,
    table: Vec<u32>,
}

impl MaskIntegral {
    fn new(m: &Mask) -> Self {
        let d = m.dims();
        let dims = [d[0] + 1, d[1] + 1, d[2] + 1];
        let mut table = vec![0u32; dims.iter().product()];
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    let at = |a: usize, b: usize, c: usize| table[linear_index(dims, a, b, c)] as i64;
                    let s = m.get(x, y, z) as i64 + at(x, y + 1, z + 1) + at(x + 1, y, z + 1) + at(x + 1, y + 1, z)
                        - at(x, y, z + 1)
                        - at(x, y + 1, z)
                        - at(x + 1, y, z)
                        + at(x, y, z);
                    table[linear_index(dims, x + 1, y + 1, z + 1)] = s as u32;
                }
            }
        }
        Self { dims, table }
    }

    /// Set voxels in the box `[o, o + e)`.
    fn count(&self, o: [usize; 3], e: usize) -> u32 {
        let at = |x: usize, y: usize, z: usize| self.table[linear_index(self.dims, x, y, z)] as i64;
        let [x0, y0, z0] = o;
        let [x1, y1, z1] = [x0 + e, y0 + e, z0 + e];
        (at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0)) as u32
    }
}

fn sub_patch<T: Scalar>(v: &Volume<T>, o: [usize; 3], e: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(e * e * e);
    for z in 0..e {
        for y in 0..e {
            for x in 0..e {
                out.push(v.get(o[0] + x, o[1] + y, o[2] + z).as_f64());
            }
        }
    }
    out
}

/// Fits the subspace on sub-patches lying entirely inside each volume's mask.
///
/// At least `10 * components` candidate positions must exist. If the sample
/// covariance has lower rank than requested, fewer components are kept.
pub fn fit_pca_scorer<T: Scalar>(volumes: &[(&Volume<T>, &Mask)], spec: &PcaSpec, seed: u64) -> Result<PcaScorer> {
    let e = spec.patch_edge;
    let d = e * e * e;
    if e == 0 || spec.stride == 0 || spec.stride > e {
        return Err(Error::invalid("PCA sub-patch edge and stride must satisfy 1 <= stride <= edge"));
    }
    if spec.components >= d {
        return Err(Error::invalid(format!("need components < {d}")));
    }
    let full = (e * e * e) as u32;
    let mut candidates: Vec<(usize, [usize; 3])> = Vec::new();
    for (vi, (v, m)) in volumes.iter().enumerate() {
        m.ensure_same_grid(v)?;
        let dims = v.dims();
        if dims.iter().any(|&n| n < e) {
            continue;
        }
        let integral = MaskIntegral::new(m);
        for z in 0..=dims[2] - e {
            for y in 0..=dims[1] - e {
                for x in 0..=dims[0] - e {
                    if integral.count([x, y, z], e) == full {
                        candidates.push((vi, [x, y, z]));
                    }
                }
            }
        }
    }
    let needed = 10 * spec.components.max(1);
    if candidates.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            available: candidates.len(),
        });
    }
    let n = spec.samples.max(needed).min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, candidates.len(), n).into_vec();
    picks.sort_unstable();

    let mut x = DMatrix::<f64>::zeros(n, d);
    for (row, &ci) in picks.iter().enumerate() {
        let (vi, o) = candidates[ci];
        for (col, val) in sub_patch(volumes[vi].0, o, e).into_iter().enumerate() {
            x[(row, col)] = val;
        }
    }
    let mean: Vec<f64> = (0..d).map(|c| x.column(c).mean()).collect();
    for c in 0..d {
        let m = mean[c];
        x.column_mut(c).add_scalar_mut(-m);
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0).max(1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-9 + 1e-12;
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    let k = spec.components.min(rank);
    if k < spec.components {
        log::warn!(
            "sample covariance has rank {rank}; keeping {k} of {} components",
            spec.components
        );
    }
    let basis = order[..k]
        .iter()
        .map(|&i| {
            let col = eig.eigenvectors.column(i);
            // fix the sign so the largest-magnitude entry is positive
            let pivot = col.iter().cloned().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            let s = if pivot < 0.0 { -1.0 } else { 1.0 };
            col.iter().map(|v| s * v).collect()
        })
        .collect();
    Ok(PcaScorer {
        patch_edge: e,
        stride: spec.stride,
        mean,
        basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn full_mask(dims: Dims) -> Mask {
        Mask::from_fn(dims, |_, _, _| true)
    }

    fn small_spec(k: usize) -> PcaSpec {
        PcaSpec {
            patch_edge: 4,
            components: k,
            stride: 2,
            samples: 500,
        }
    }

    #[test]
    fn constant_training_reproduces_constant_input() {
        let v = Volume::<f64>::filled([16; 3], 0.7);
        let m = full_mask(v.dims());
        let s = fit_pca_scorer(&[(&v, &m)], &small_spec(4), 1).unwrap();
        assert!(s.mean.iter().all(|&x| (x - 0.7).abs() < 1e-12));
        assert_eq!(s.components(), 0);
        let (a, _) = s.score(&Volume::<f64>::filled([10; 3], 0.7)).unwrap();
        assert!(a.data().iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn rank_one_data_is_reproduced() {
        // every sub-patch of a ramp is the same ramp plus a constant offset
        let v = Volume::<f64>::from_fn([16; 3], |x, _, _| 0.1 * x as f64);
        let m = full_mask(v.dims());
        let s = fit_pca_scorer(&[(&v, &m)], &small_spec(1), 2).unwrap();
        assert_eq!(s.components(), 1);
        let x = sub_patch(&v, [5, 3, 7], 4);
        assert!(s.residual_vector(&x).iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn basis_is_orthonormal_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Volume::<f64>::from_fn([14; 3], |_, _, _| rng.random_range(0.0..1.0));
        let m = full_mask(v.dims());
        let s = fit_pca_scorer(&[(&v, &m)], &small_spec(8), 3).unwrap();
        assert_eq!(s.components(), 8);
        assert!(s.orthonormality_error() < 1e-6);
    }

    #[test]
    fn residual_ignores_subspace_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = Volume::<f64>::from_fn([14; 3], |_, _, _| rng.random_range(0.0..1.0));
        let m = full_mask(v.dims());
        let s = fit_pca_scorer(&[(&v, &m)], &small_spec(6), 4).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut shifted = x.clone();
            for b in &s.basis {
                let c = rng.random_range(-3.0..3.0);
                for (o, u) in shifted.iter_mut().zip(b) {
                    *o += c * u;
                }
            }
            let r0 = s.residual_vector(&x);
            let r1 = s.residual_vector(&shifted);
            assert!(r0.iter().zip(&r1).all(|(a, b)| (a - b).abs() < 1e-5));
        }
    }

    #[test]
    fn too_few_candidates_is_an_error() {
        let v = Volume::<f64>::zeros([6, 6, 6]);
        let m = full_mask(v.dims());
        assert!(matches!(
            fit_pca_scorer(&[(&v, &m)], &small_spec(4), 0),
            Err(Error::InsufficientSamples { needed: 40, available: 27 })
        ));
    }

    #[test]
    fn candidates_respect_the_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = Volume::<f64>::from_fn([20; 3], |_, _, _| rng.random_range(0.0..1.0));
        let m = Mask::from_fn(v.dims(), |x, _, _| x < 10);
        let integral = MaskIntegral::new(&m);
        assert_eq!(integral.count([6, 0, 0], 4), 64);
        assert_eq!(integral.count([7, 3, 2], 4), 48);
        assert!(fit_pca_scorer(&[(&v, &m)], &small_spec(4), 1).is_ok());
    }

    #[test]
    fn fitting_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let v = Volume::<f32>::from_fn([16; 3], |_, _, _| rng.random_range(0.0..1.0));
        let m = full_mask(v.dims());
        let a = fit_pca_scorer(&[(&v, &m)], &small_spec(5), 7).unwrap();
        let b = fit_pca_scorer(&[(&v, &m)], &small_spec(5), 7).unwrap();
        assert_eq!(a, b);
    }
}
