//! Separable Gaussian smoothing and finite-difference gradient magnitude.
//! Borders replicate the edge voxel; derivatives go one-sided at the ends.

use rayon::prelude::*;

use super::{Dims, Volume};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Normalized Gaussian taps truncated at radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / norm).collect()
}

fn strides(dims: Dims) -> [usize; 3] {
    [1, dims[0], dims[0] * dims[1]]
}

fn convolve_axis<T: Scalar>(src: &[T], dims: Dims, axis: usize, kernel: &[f64]) -> Vec<T> {
    let radius = (kernel.len() / 2) as isize;
    let n = dims[axis] as isize;
    let stride = strides(dims)[axis];
    let slice_len = dims[0] * dims[1];
    let mut out = vec![T::zero(); src.len()];
    out.par_chunks_mut(slice_len)
        .enumerate()
        .for_each(|(z, slab)| {
            for (j, o) in slab.iter_mut().enumerate() {
                let i = z * slice_len + j;
                let coord = [j % dims[0], j / dims[0], z][axis] as isize;
                let base = i - coord as usize * stride;
                let mut acc = 0.0f64;
                for (k, &w) in kernel.iter().enumerate() {
                    let c = (coord + k as isize - radius).clamp(0, n - 1) as usize;
                    acc += w * src[base + c * stride].as_f64();
                }
                *o = T::of(acc);
            }
        });
    out
}

/// Isotropic Gaussian blur applied as three 1-D passes. `sigma` is in voxels.
pub fn gaussian_blur3d<T: Scalar>(v: &Volume<T>, sigma: f64) -> Volume<T> {
    if sigma <= 0.0 {
        return v.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let dims = v.dims();
    let mut data = v.data().to_vec();
    for axis in 0..3 {
        if dims[axis] > 1 {
            data = convolve_axis(&data, dims, axis, &kernel);
        }
    }
    v.like(data)
}

/// Per-voxel `|dV/dx| + |dV/dy| + |dV/dz|` by central differences in voxel units.
pub fn gradient_l1<T: Scalar>(v: &Volume<T>) -> Result<Volume<T>> {
    let dims = v.dims();
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::invalid(format!(
            "gradient needs at least 2 voxels per axis, got {dims:?}"
        )));
    }
    let st = strides(dims);
    let src = v.data();
    let slice_len = dims[0] * dims[1];
    let mut out = vec![T::zero(); src.len()];
    out.par_chunks_mut(slice_len)
        .enumerate()
        .for_each(|(z, slab)| {
            for (j, o) in slab.iter_mut().enumerate() {
                let i = z * slice_len + j;
                let c = [j % dims[0], j / dims[0], z];
                let mut acc = 0.0f64;
                for axis in 0..3 {
                    let n = dims[axis];
                    let s = st[axis];
                    let d = if c[axis] == 0 {
                        src[i + s].as_f64() - src[i].as_f64()
                    } else if c[axis] == n - 1 {
                        src[i].as_f64() - src[i - s].as_f64()
                    } else {
                        0.5 * (src[i + s].as_f64() - src[i - s].as_f64())
                    };
                    acc += d.abs();
                }
                *o = T::of(acc);
            }
        });
    Ok(v.like(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: Dims, seed: u64) -> Volume<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_sigma_is_identity() {
        let v = random_volume([5, 4, 3], 1);
        assert_eq!(gaussian_blur3d(&v, 0.0), v);
    }

    #[test]
    fn constant_is_preserved() {
        let v = Volume::<f64>::filled([6, 5, 4], 3.25);
        let b = gaussian_blur3d(&v, 1.7);
        assert!(b.data().iter().all(|x| (x - 3.25).abs() < 1e-12));
    }

    #[test]
    fn impulse_mass_is_one() {
        let mut v = Volume::<f64>::zeros([15, 15, 15]);
        v.set(7, 7, 7, 1.0);
        let b = gaussian_blur3d(&v, 1.0);
        assert!((b.sum() - 1.0).abs() < 1e-6);
        // direct summation of the separable product against the filter output
        let k = gaussian_kernel(1.0);
        let direct = k[3 + 1] * k[3] * k[3 - 2];
        assert!((b.get(8, 7, 5) - direct).abs() < 1e-15);
    }

    #[test]
    fn kernel_radius_is_three_sigma() {
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert_eq!(gaussian_kernel(0.8).len(), 2 * 3 + 1);
        assert_eq!(gaussian_kernel(2.1).len(), 2 * 7 + 1);
    }

    #[test]
    fn gradient_of_constant_and_ramp() {
        let c = Volume::<f64>::filled([4, 4, 4], 2.0);
        assert!(gradient_l1(&c).unwrap().data().iter().all(|&g| g == 0.0));
        let r = Volume::<f64>::from_fn([5, 4, 3], |x, _, _| x as f64);
        let g = gradient_l1(&r).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gradient_rejects_flat_axis() {
        let v = Volume::<f64>::zeros([4, 1, 4]);
        assert!(gradient_l1(&v).is_err());
    }

    #[test]
    fn gradient_matches_stencil_oracle() {
        let v = random_volume([4, 4, 4], 9);
        let g = gradient_l1(&v).unwrap();
        let n = 4isize;
        let at = |x: isize, y: isize, z: isize| v.get(x as usize, y as usize, z as usize);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let p = [x, y, z];
                    let mut total = 0.0;
                    for axis in 0..3 {
                        let mut lo = p;
                        let mut hi = p;
                        let mut h = 2.0;
                        if p[axis] == 0 {
                            hi[axis] += 1;
                            h = 1.0;
                        } else if p[axis] == n - 1 {
                            lo[axis] -= 1;
                            h = 1.0;
                        } else {
                            lo[axis] -= 1;
                            hi[axis] += 1;
                        }
                        total += ((at(hi[0], hi[1], hi[2]) - at(lo[0], lo[1], lo[2])) / h).abs();
                    }
                    assert!((g.get(x as usize, y as usize, z as usize) - total).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn interior_mass_is_conserved() {
        let mut v = Volume::<f64>::zeros([24, 24, 24]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for z in 9..15 {
            for y in 9..15 {
                for x in 9..15 {
                    v.set(x, y, z, rng.random_range(0.0..2.0));
                }
            }
        }
        let b = gaussian_blur3d(&v, 1.5);
        assert!(((b.sum() - v.sum()) / v.sum()).abs() < 1e-5);
    }

    #[test]
    fn parallel_blur_is_deterministic() {
        let v = random_volume([20, 18, 16], 3);
        let a = gaussian_blur3d(&v, 1.3);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| gaussian_blur3d(&v, 1.3));
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn blur_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0, sigma in 0.1f64..2.5) {
            let u = random_volume([7, 6, 5], seed);
            let w = random_volume([7, 6, 5], seed + 1);
            let combo = u.like(u.data().iter().zip(w.data()).map(|(x, y)| a * x + b * y).collect());
            let lhs = gaussian_blur3d(&combo, sigma);
            let bu = gaussian_blur3d(&u, sigma);
            let bw = gaussian_blur3d(&w, sigma);
            for i in 0..lhs.len() {
                prop_assert!((lhs.data()[i] - (a * bu.data()[i] + b * bw.data()[i])).abs() < 1e-6);
            }
        }

        #[test]
        fn gradient_is_non_negative(seed in 0u64..1000) {
            let v = random_volume([5, 4, 6], seed);
            prop_assert!(gradient_l1(&v).unwrap().data().iter().all(|&g| g >= 0.0));
        }
    }
}
