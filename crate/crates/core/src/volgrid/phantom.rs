//! Synthetic sample volumes with known pore ground truth.
//!
//! Pores are rasterized at voxel centres, the whole field is blurred to
//! emulate partial-volume smearing, then Gaussian noise is added.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{gaussian_blur3d, Dims, Mask, Volume};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhantomShape {
    /// Upright cylinder (axis along z) centred in the grid.
    Cylinder { radius: f64, height: f64 },
    /// Axis-aligned cube centred in the grid, `side` voxels per edge.
    Cube { side: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pore {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Pore {
    pub fn sphere(center: [f64; 3], r: f64) -> Self {
        Self {
            center,
            radii: [r; 3],
        }
    }

    #[inline]
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let mut s = 0.0;
        for a in 0..3 {
            let d = (p[a] - self.center[a]) / self.radii[a];
            s += d * d;
        }
        s <= 1.0
    }

    fn bounds(&self, dims: Dims) -> [(usize, usize); 3] {
        let mut b = [(0, 0); 3];
        for a in 0..3 {
            let lo = (self.center[a] - self.radii[a]).floor().max(0.0) as usize;
            let hi = ((self.center[a] + self.radii[a]).ceil() as usize).min(dims[a] - 1);
            b[a] = (lo, hi);
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub shape: PhantomShape,
    #[serde(default)]
    pub pores: Vec<Pore>,
    pub background: f64,
    pub material: f64,
    #[serde(default)]
    pub blur_sigma: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PhantomSpec {
    fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.dims[a] as f64 - 1.0) / 2.0)
    }

    /// Whether voxel centre `p` lies in the solid (ignoring pores).
    pub fn in_solid(&self, p: [f64; 3]) -> bool {
        let c = self.center();
        match self.shape {
            PhantomShape::Cylinder { radius, height } => {
                let dx = p[0] - c[0];
                let dy = p[1] - c[1];
                dx * dx + dy * dy <= radius * radius && (p[2] - c[2]).abs() <= height / 2.0
            }
            PhantomShape::Cube { side } => (0..3).all(|a| (p[a] - c[a]).abs() <= side / 2.0),
        }
    }

    pub fn solid_mask(&self) -> Mask {
        Mask::from_fn(self.dims, |x, y, z| self.in_solid([x as f64, y as f64, z as f64]))
    }

    fn pore_voxels(&self, pore: &Pore) -> Vec<[usize; 3]> {
        let b = pore.bounds(self.dims);
        let mut out = Vec::new();
        for z in b[2].0..=b[2].1 {
            for y in b[1].0..=b[1].1 {
                for x in b[0].0..=b[0].1 {
                    if pore.contains([x as f64, y as f64, z as f64]) {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("phantom dims must be positive"));
        }
        if !(self.material > self.background) {
            return Err(Error::invalid("material intensity must exceed background"));
        }
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("blur and noise sigma must be non-negative"));
        }
        for (i, pore) in self.pores.iter().enumerate() {
            if pore.radii.iter().any(|&r| !(r >= 0.5)) {
                return Err(Error::invalid(format!("pore {i}: radii must be >= 0.5 voxel")));
            }
            let voxels = self.pore_voxels(pore);
            let strictly_inside = |v: [usize; 3]| {
                let p = v.map(|c| c as f64);
                (0..3).all(|a| {
                    [-1.0, 1.0].iter().all(|&d| {
                        let mut q = p;
                        q[a] += d;
                        q[a] >= 0.0 && q[a] < self.dims[a] as f64 && self.in_solid(q)
                    })
                }) && self.in_solid(p)
            };
            if voxels.is_empty() || !voxels.iter().all(|&v| strictly_inside(v)) {
                return Err(Error::invalid(format!("pore {i} is not strictly inside the solid")));
            }
        }
        Ok(())
    }

    /// Scatters `count` non-overlapping ellipsoidal pores with radii drawn
    /// from `radius_range`, keeping a clearance of `gap` voxels between them.
    pub fn scatter_pores(
        &mut self,
        count: usize,
        radius_range: (f64, f64),
        gap: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let mut placed = 0;
        let mut attempts = 0;
        while placed < count {
            attempts += 1;
            if attempts > 200_000 {
                return Err(Error::invalid("could not place the requested pores"));
            }
            let radii = [0; 3].map(|_| rng.random_range(radius_range.0..=radius_range.1));
            let center = [0, 1, 2].map(|a| rng.random_range(0.0..self.dims[a] as f64 - 1.0).round());
            let pore = Pore { center, radii };
            let rmax = radii.iter().cloned().fold(0.0, f64::max);
            let clear = self.pores.iter().all(|q| {
                let qmax = q.radii.iter().cloned().fold(0.0, f64::max);
                let d2: f64 = (0..3).map(|a| (q.center[a] - center[a]).powi(2)).sum();
                d2.sqrt() > rmax + qmax + gap
            });
            if !clear {
                continue;
            }
            self.pores.push(pore);
            if self.validate().is_err() {
                self.pores.pop();
                continue;
            }
            placed += 1;
        }
        Ok(())
    }
}

/// Renders the phantom and returns it with the rasterized pore mask.
pub fn generate_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<(Volume<T>, Mask)> {
    spec.validate()?;
    let mut truth = Mask::empty(spec.dims);
    for pore in &spec.pores {
        for [x, y, z] in spec.pore_voxels(pore) {
            truth.set(x, y, z, true);
        }
    }
    let solid = spec.solid_mask();
    let clean = Volume::<f64>::from_fn(spec.dims, |x, y, z| {
        if solid.get(x, y, z) && !truth.get(x, y, z) {
            spec.material
        } else {
            spec.background
        }
    });
    let mut v = gaussian_blur3d(&clean, spec.blur_sigma);
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::invalid(format!("noise sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for x in v.data_mut() {
            *x += normal.sample(&mut rng);
        }
    }
    Ok((v.cast(), truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::{histogram, Histogram};

    fn cube(dims: usize, side: f64) -> PhantomSpec {
        PhantomSpec {
            dims: [dims; 3],
            shape: PhantomShape::Cube { side },
            pores: vec![],
            background: 0.0,
            material: 1.0,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn no_pores_no_truth() {
        let (_, gt) = generate_phantom::<f32>(&cube(16, 10.0)).unwrap();
        assert_eq!(gt.count(), 0);
    }

    #[test]
    fn sphere_count_matches_exhaustive_test() {
        let mut spec = cube(24, 18.0);
        spec.pores.push(Pore::sphere([11.3, 12.0, 11.6], 3.0));
        let (v, gt) = generate_phantom::<f64>(&spec).unwrap();
        let mut brute = 0;
        for z in 0..24 {
            for y in 0..24 {
                for x in 0..24 {
                    let d2 = (x as f64 - 11.3).powi(2) + (y as f64 - 12.0).powi(2) + (z as f64 - 11.6).powi(2);
                    if d2 <= 9.0 {
                        brute += 1;
                        assert_eq!(v.get(x, y, z), 0.0);
                    }
                }
            }
        }
        assert_eq!(gt.count(), brute);
    }

    #[test]
    fn seeded_generation_is_repeatable() {
        let mut spec = cube(20, 14.0);
        spec.noise_sigma = 0.1;
        spec.blur_sigma = 0.8;
        spec.pores.push(Pore::sphere([10.0, 10.0, 10.0], 2.0));
        let (a, _) = generate_phantom::<f32>(&spec).unwrap();
        let (b, _) = generate_phantom::<f32>(&spec).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn pore_outside_solid_is_rejected() {
        let mut spec = cube(20, 10.0);
        spec.pores.push(Pore::sphere([2.0, 2.0, 2.0], 1.0));
        assert!(generate_phantom::<f32>(&spec).is_err());
        let mut spec = cube(20, 10.0);
        spec.pores.push(Pore::sphere([10.0, 10.0, 10.0], 0.3));
        assert!(spec.validate().is_err());
    }

    fn count_maxima(smoothed: &[f64]) -> usize {
        // independent scan: a maximum is a run strictly above both neighbours
        let mut runs: Vec<(f64, usize)> = Vec::new();
        for &v in smoothed {
            match runs.last_mut() {
                Some((last, n)) if *last == v => *n += 1,
                _ => runs.push((v, 1)),
            }
        }
        (0..runs.len())
            .filter(|&i| {
                let v = runs[i].0;
                (i == 0 || runs[i - 1].0 < v) && (i + 1 == runs.len() || runs[i + 1].0 < v)
            })
            .count()
    }

    #[test]
    fn bimodal_phantom_has_two_peaks() {
        let spec = PhantomSpec {
            dims: [48; 3],
            shape: PhantomShape::Cylinder {
                radius: 16.0,
                height: 40.0,
            },
            pores: vec![],
            background: 0.0,
            material: 1.0,
            blur_sigma: 0.8,
            noise_sigma: 0.08,
            seed: 5,
        };
        let (v, _) = generate_phantom::<f32>(&spec).unwrap();
        let h: Histogram = histogram(&v, 32);
        assert_eq!(count_maxima(&h.smoothed(3)), 2);
        let peaks = h.peaks(0.0);
        assert_eq!(peaks.len(), 2);
        assert_eq!(h.total() as usize, v.len());
    }
}
