//! Overlapping cubic patch plans, extraction with replicate padding,
//! mean re-aggregation, and geometric augmentation.

mod augment;

pub use augment::{augment, flip_mask, flip_volume, AugmentSpec, ElasticSpec};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volgrid::{linear_index, voxel_count, Dims, Volume};

pub const DEFAULT_PATCH_SIZE: usize = 64;

/// Placement plan for cubic patches over a volume padded at its far end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub dims: Dims,
    pub patch_size: usize,
    pub stride: usize,
    pub padded_dims: Dims,
    /// Patch origins in the padded frame, z-major.
    pub origins: Vec<[usize; 3]>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Voxels appended after the last slice on each axis.
    pub fn padding(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.padded_dims[a] - self.dims[a])
    }

    pub fn overlap(&self) -> usize {
        self.patch_size - self.stride
    }

    pub fn patch_dims(&self) -> Dims {
        [self.patch_size; 3]
    }

    /// How many patches cover each voxel of the padded frame.
    pub fn coverage(&self) -> Vec<u32> {
        let mut count = vec![0u32; voxel_count(self.padded_dims)];
        let p = self.patch_size;
        for o in &self.origins {
            for z in o[2]..o[2] + p {
                for y in o[1]..o[1] + p {
                    let row = linear_index(self.padded_dims, o[0], y, z);
                    for c in &mut count[row..row + p] {
                        *c += 1;
                    }
                }
            }
        }
        count
    }
}

/// Plans patches of edge `patch_size` every `stride` voxels. Each axis is
/// padded so that `(padded - patch_size)` is a multiple of `stride`.
pub fn plan_patches(dims: Dims, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("volume dims must be positive"));
    }
    if patch_size == 0 || stride == 0 || stride > patch_size {
        return Err(Error::invalid(format!(
            "need 1 <= stride <= patch_size, got stride {stride}, patch {patch_size}"
        )));
    }
    let padded = dims.map(|d| {
        if d <= patch_size {
            patch_size
        } else {
            patch_size + (d - patch_size).div_ceil(stride) * stride
        }
    });
    let steps = padded.map(|d| (d - patch_size) / stride + 1);
    let mut origins = Vec::with_capacity(steps.iter().product());
    for k in 0..steps[2] {
        for j in 0..steps[1] {
            for i in 0..steps[0] {
                origins.push([i * stride, j * stride, k * stride]);
            }
        }
    }
    Ok(PatchGrid {
        dims,
        patch_size,
        stride,
        padded_dims: padded,
        origins,
    })
}

/// Copies placement `index`; voxels past the volume edge replicate the border.
pub fn extract_patch<T: Scalar>(v: &Volume<T>, grid: &PatchGrid, index: usize) -> Result<Volume<T>> {
    v.ensure_same_grid(&Volume::<T>::zeros(grid.dims))?;
    let o = *grid
        .origins
        .get(index)
        .ok_or_else(|| Error::invalid(format!("patch index {index} out of range ({})", grid.len())))?;
    let p = grid.patch_size;
    let mut data = Vec::with_capacity(p * p * p);
    for z in 0..p {
        for y in 0..p {
            for x in 0..p {
                data.push(v.get_clamped(
                    (o[0] + x) as isize,
                    (o[1] + y) as isize,
                    (o[2] + z) as isize,
                ));
            }
        }
    }
    Volume::new(grid.patch_dims(), v.spacing(), data)
}

/// Running sum and coverage count over the padded frame.
#[derive(Clone, Debug)]
pub struct Aggregator {
    grid: PatchGrid,
    sum: Vec<f64>,
    count: Vec<u32>,
    seen: Vec<bool>,
}

impl Aggregator {
    pub fn new(grid: &PatchGrid) -> Self {
        let n = voxel_count(grid.padded_dims);
        Self {
            grid: grid.clone(),
            sum: vec![0.0; n],
            count: vec![0; n],
            seen: vec![false; grid.len()],
        }
    }

    pub fn add<T: Scalar>(&mut self, index: usize, patch: &Volume<T>) -> Result<()> {
        let o = *self
            .grid
            .origins
            .get(index)
            .ok_or_else(|| Error::invalid(format!("patch index {index} out of range")))?;
        if patch.dims() != self.grid.patch_dims() {
            return Err(Error::DimsMismatch(patch.dims(), self.grid.patch_dims()));
        }
        let p = self.grid.patch_size;
        let src = patch.data();
        for z in 0..p {
            for y in 0..p {
                let row = linear_index(self.grid.padded_dims, o[0], o[1] + y, o[2] + z);
                let off = p * (y + p * z);
                for x in 0..p {
                    self.sum[row + x] += src[off + x].as_f64();
                    self.count[row + x] += 1;
                }
            }
        }
        self.seen[index] = true;
        Ok(())
    }

    /// Mean over covering patches, cropped back to the volume grid.
    pub fn finish<T: Scalar>(self, spacing: [f64; 3]) -> Result<Volume<T>> {
        if let Some(missing) = self.seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("missing patch {missing}")));
        }
        let dims = self.grid.dims;
        let pd = self.grid.padded_dims;
        let mut out = vec![T::zero(); voxel_count(dims)];
        let slice = dims[0] * dims[1];
        out.par_chunks_mut(slice).enumerate().for_each(|(z, slab)| {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = linear_index(pd, x, y, z);
                    slab[x + dims[0] * y] = T::of(self.sum[i] / self.count[i] as f64);
                }
            }
        });
        Volume::new(dims, spacing, out)
    }
}

/// Per-voxel mean of all patches covering it; patches are in placement order.
pub fn aggregate<T: Scalar>(patches: &[Volume<T>], grid: &PatchGrid, spacing: [f64; 3]) -> Result<Volume<T>> {
    if patches.len() != grid.len() {
        return Err(Error::invalid(format!(
            "expected {} patches, got {}",
            grid.len(),
            patches.len()
        )));
    }
    let mut acc = Aggregator::new(grid);
    for (i, p) in patches.iter().enumerate() {
        acc.add(i, p)?;
    }
    acc.finish(spacing)
}

/// Applies `f` to every patch in parallel and aggregates each of its outputs.
pub fn map_patches<T, F, const N: usize>(v: &Volume<T>, grid: &PatchGrid, f: F) -> Result<[Volume<T>; N]>
where
    T: Scalar,
    F: Fn(&Volume<T>) -> Result<[Volume<T>; N]> + Sync,
{
    let outputs: Vec<[Volume<T>; N]> = (0..grid.len())
        .into_par_iter()
        .map(|i| extract_patch(v, grid, i).and_then(|p| f(&p)))
        .collect::<Result<_>>()?;
    let mut accs: Vec<Aggregator> = (0..N).map(|_| Aggregator::new(grid)).collect();
    for (i, outs) in outputs.iter().enumerate() {
        for (acc, o) in accs.iter_mut().zip(outs) {
            acc.add(i, o)?;
        }
    }
    let vols: Vec<Volume<T>> = accs
        .into_iter()
        .map(|a| a.finish(v.spacing()))
        .collect::<Result<_>>()?;
    Ok(vols.try_into().unwrap_or_else(|_| unreachable!("N outputs")))
}
