//! Dense 3D scalar grids, binary masks, file I/O, histograms, phantoms and
//! the separable filters shared by the rest of the pipeline.

mod filter;
mod histogram;
mod io;
mod phantom;

pub use filter::{gaussian_blur3d, gaussian_kernel, gradient_l1};
pub use histogram::{histogram, histogram_of, Histogram};
pub use io::{load_mask, load_volume, save_mask, save_volume, VolumeHeader};
pub use phantom::{generate_phantom, Pore, PhantomShape, PhantomSpec};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Voxel edge length in micrometres used when nothing else is known.
pub const DEFAULT_SPACING_UM: f64 = 10.0;

pub type Dims = [usize; 3];

#[inline]
pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// Linear offset of `(x, y, z)` in x-fastest order.
#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

#[inline]
pub fn coords_of(dims: Dims, i: usize) -> [usize; 3] {
    let x = i % dims[0];
    let yz = i / dims[0];
    [x, yz % dims[1], yz / dims[1]]
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
    }
    Ok(())
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid(format!(
            "spacing must be finite and positive, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Dense scalar volume stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<T>,
}

impl<T: Scalar> Volume<T> {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        let expected = voxel_count(dims);
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    /// Builds a volume with default spacing. Panics on zero dims or length mismatch.
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Self {
        Self::new(dims, [DEFAULT_SPACING_UM; 3], data).expect("valid volume")
    }

    pub fn filled(dims: Dims, value: T) -> Self {
        Self::from_vec(dims, vec![value; voxel_count(dims)])
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::from_vec(dims, data)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    /// Same grid and spacing as `self`, new payload.
    pub fn like<U: Scalar>(&self, data: Vec<U>) -> Volume<U> {
        assert_eq!(data.len(), self.data.len(), "payload must match grid");
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        linear_index(self.dims, x, y, z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Value at integer position after clamping each coordinate into the grid.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, z: isize) -> T {
        let c = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        self.get(c(x, self.dims[0]), c(y, self.dims[1]), c(z, self.dims[2]))
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        self.like(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        self.map(|v| U::of(v.as_f64()))
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn ensure_same_grid<U>(&self, other: &Volume<U>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch(self.dims, other.dims));
        }
        Ok(())
    }
}

/// Binary volume on the same lattice conventions as [`Volume`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<bool>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        if data.len() != voxel_count(dims) {
            return Err(Error::LengthMismatch {
                expected: voxel_count(dims),
                found: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn empty(dims: Dims) -> Self {
        Self::new(dims, [DEFAULT_SPACING_UM; 3], vec![false; voxel_count(dims)])
            .expect("valid mask")
    }

    pub fn empty_like<T: Scalar>(v: &Volume<T>) -> Self {
        Self {
            dims: v.dims,
            spacing: v.spacing,
            data: vec![false; v.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut m = Self::empty(dims);
        let mut i = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    m.data[i] = f(x, y, z);
                    i += 1;
                }
            }
        }
        m
    }

    /// Mask on the grid of `v` selecting voxels where `pred` holds.
    pub fn threshold<T: Scalar>(v: &Volume<T>, pred: impl Fn(T) -> bool) -> Self {
        Self {
            dims: v.dims,
            spacing: v.spacing,
            data: v.data.iter().map(|&x| pred(x)).collect(),
        }
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[linear_index(self.dims, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = linear_index(self.dims, x, y, z);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims, other.dims);
        Mask {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn not(&self) -> Mask {
        Mask {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&a| !a).collect(),
        }
    }

    pub fn to_volume<T: Scalar>(&self) -> Volume<T> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self
                .data
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        }
    }

    pub fn ensure_same_grid<T>(&self, v: &Volume<T>) -> Result<()> {
        if self.dims != v.dims {
            return Err(Error::DimsMismatch(self.dims, v.dims));
        }
        Ok(())
    }

    pub fn ensure_same_dims(&self, other: &Mask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch(self.dims, other.dims));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let dims = [3, 4, 5];
        for i in 0..voxel_count(dims) {
            let [x, y, z] = coords_of(dims, i);
            assert_eq!(linear_index(dims, x, y, z), i);
        }
    }

    #[test]
    fn rejects_bad_payloads() {
        assert!(matches!(
            Volume::<f32>::new([2, 2, 2], [1.0; 3], vec![0.0; 7]),
            Err(Error::LengthMismatch { expected: 8, found: 7 })
        ));
        assert!(matches!(
            Volume::<f32>::new([1, 1, 2], [1.0; 3], vec![0.0, f32::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(Volume::<f32>::new([1, 1, 1], [0.0, 1.0, 1.0], vec![0.0]).is_err());
        assert!(Volume::<f32>::new([0, 1, 1], [1.0; 3], vec![]).is_err());
    }

    #[test]
    fn clamped_access_replicates_border() {
        let v = Volume::<f64>::from_fn([3, 2, 2], |x, y, z| (x + 10 * y + 100 * z) as f64);
        assert_eq!(v.get_clamped(-4, 0, 0), 0.0);
        assert_eq!(v.get_clamped(7, 5, 9), 2.0 + 10.0 + 100.0);
    }
}
