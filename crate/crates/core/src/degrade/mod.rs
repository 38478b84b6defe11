//! Slice-wise parallel-beam resimulation at lower exposure and fewer projections.
//!
//! Each z-slice is forward projected, the line integrals are turned into
//! Poisson transmission counts at the reduced photon budget, converted back to
//! line integrals and reconstructed by filtered backprojection.

mod tomo;

pub use tomo::{fbp2d, radon2d, uniform_angles, FbpFilter, Sinogram};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volgrid::Volume;

pub const DEFAULT_BASE_ANGLES: usize = 720;
pub const DEFAULT_I0: f64 = 1e5;
pub const DEFAULT_ATTENUATION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeSpec {
    pub exposure_fraction: f64,
    pub projection_fraction: f64,
    pub base_angles: usize,
    pub i0: f64,
    /// Line-integral units per voxel per unit intensity.
    pub attenuation: f64,
    pub noise: bool,
    pub seed: u64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        DegradeSpec {
            exposure_fraction: 1.0,
            projection_fraction: 1.0,
            base_angles: DEFAULT_BASE_ANGLES,
            i0: DEFAULT_I0,
            attenuation: DEFAULT_ATTENUATION,
            noise: true,
            seed: 0,
        }
    }
}

impl DegradeSpec {
    pub fn new(exposure_fraction: f64, projection_fraction: f64) -> Self {
        DegradeSpec {
            exposure_fraction,
            projection_fraction,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |f: f64| f > 0.0 && f <= 1.0;
        if !frac(self.exposure_fraction) || !frac(self.projection_fraction) {
            return Err(Error::invalid(format!(
                "fractions must lie in (0, 1], got exposure {} and projections {}",
                self.exposure_fraction, self.projection_fraction
            )));
        }
        if !(self.i0.is_finite() && self.i0 > 0.0) || !(self.attenuation.is_finite() && self.attenuation > 0.0) {
            return Err(Error::invalid("I0 and attenuation must be positive and finite"));
        }
        if self.angle_count() < 2 {
            return Err(Error::invalid("fewer than 2 projection angles"));
        }
        Ok(())
    }

    /// `ceil(f * N)` angles.
    pub fn angle_count(&self) -> usize {
        let m = self.projection_fraction * self.base_angles as f64;
        // guards against 0.5 * 720 landing a hair above 360
        (m - 1e-9).ceil().max(0.0) as usize
    }

    pub fn angles(&self) -> Vec<f64> {
        uniform_angles(self.angle_count())
    }

    pub fn photons(&self) -> f64 {
        self.exposure_fraction * self.i0
    }
}

/// Replaces the sinogram by its Poisson-resampled counterpart in place.
pub fn add_transmission_noise(sino: &mut Sinogram, spec: &DegradeSpec, rng: &mut ChaCha8Rng) -> Result<()> {
    let n0 = spec.photons();
    for p in sino.values.iter_mut() {
        let mean = n0 * (-spec.attenuation * *p).exp();
        let c = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::degenerate(format!("Poisson mean {mean}: {e}")))?
                .sample(rng)
        } else {
            0.0
        };
        *p = -(c.max(1.0) / n0).ln() / spec.attenuation;
    }
    Ok(())
}

fn slice_seed(seed: u64, z: usize) -> u64 {
    seed ^ z as u64
}

pub fn degrade_slice(slice: &[f64], n: usize, spec: &DegradeSpec, filter: &FbpFilter, z: usize) -> Result<Vec<f64>> {
    let mut sino = radon2d(slice, n, &spec.angles())?;
    if spec.noise {
        let mut rng = ChaCha8Rng::seed_from_u64(slice_seed(spec.seed, z));
        add_transmission_noise(&mut sino, spec, &mut rng)?;
    }
    fbp2d(&sino, filter)
}

/// Degrades every z-slice independently; the output depends only on the parameters
/// and the input, not on scheduling.
pub fn degrade_volume<T: Scalar>(v: &Volume<T>, spec: &DegradeSpec) -> Result<Volume<T>> {
    spec.validate()?;
    let [nx, ny, nz] = v.dims();
    if nx != ny {
        return Err(Error::invalid(format!("slices must be square, got {nx}x{ny}")));
    }
    let filter = FbpFilter::new(nx);
    let plane = nx * ny;
    let slices: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let s: Vec<f64> = v.data()[z * plane..(z + 1) * plane].iter().map(|x| x.as_f64()).collect();
            degrade_slice(&s, nx, spec, &filter, z)
        })
        .collect::<Result<_>>()?;
    Ok(v.like(slices.into_iter().flatten().map(T::of).collect()))
}

/// Standard deviation of noisy minus clean line integrals for one slice, in
/// attenuation units.
pub fn projection_noise_std(slice: &[f64], n: usize, spec: &DegradeSpec) -> Result<f64> {
    spec.validate()?;
    let clean = radon2d(slice, n, &spec.angles())?;
    let mut noisy = clean.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    add_transmission_noise(&mut noisy, spec, &mut rng)?;
    let d: Vec<f64> = noisy
        .values
        .iter()
        .zip(&clean.values)
        .map(|(a, b)| spec.attenuation * (a - b))
        .collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    Ok((d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt())
}

/// RMSE inside the reconstruction circle relative to the RMS of the reference there.
pub fn relative_rmse_in_circle(reference: &[f64], estimate: &[f64], n: usize) -> f64 {
    let c = (n as f64 - 1.0) / 2.0;
    let r2 = (n as f64 / 2.0).powi(2);
    let (mut se, mut ss) = (0.0, 0.0);
    for y in 0..n {
        for x in 0..n {
            if (x as f64 - c).powi(2) + (y as f64 - c).powi(2) <= r2 {
                let i = y * n + x;
                se += (reference[i] - estimate[i]).powi(2);
                ss += reference[i].powi(2);
            }
        }
    }
    (se / ss).sqrt()
}
