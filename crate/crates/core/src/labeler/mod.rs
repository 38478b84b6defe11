//! Heuristic pore labeling: Otsu object mask, watertight flood fill, a second
//! Otsu inside the object, 6-connected components and small-pore rejection.

mod components;
mod otsu;

pub use components::{components_to_mask, connected_components, filter_small_pores, PoreComponent};
pub use otsu::otsu_threshold;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volgrid::{histogram, histogram_of, linear_index, Mask, Volume};

/// Bins used for every Otsu histogram in the labeler.
pub const OTSU_BINS: usize = 256;

/// Default minimum bounding-box extent a pore must reach on every axis.
pub const DEFAULT_MIN_DIMS: usize = 2;

/// Binary pore mask together with the components it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct PoreMask {
    pub mask: Mask,
    pub components: Vec<PoreComponent>,
}

impl PoreMask {
    pub fn from_components(template: &Mask, components: Vec<PoreComponent>) -> Self {
        let mask = components_to_mask(template, &components);
        Self { mask, components }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelParams {
    /// Smallest bounding-box extent, on every axis, of a kept pore.
    pub min_dims: usize,
    /// Cap the pore threshold at the object threshold. Without the cap the
    /// partial-volume band just inside the object surface is labeled as pore
    /// whenever it outnumbers the true pore voxels.
    pub cap_at_object_threshold: bool,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self {
            min_dims: DEFAULT_MIN_DIMS,
            cap_at_object_threshold: true,
        }
    }
}

impl LabelParams {
    pub fn with_min_dims(min_dims: usize) -> Self {
        Self {
            min_dims,
            ..Self::default()
        }
    }
}

/// Otsu threshold of the whole volume.
pub fn object_threshold<T: Scalar>(v: &Volume<T>) -> Result<f64> {
    otsu_threshold(&histogram(v, OTSU_BINS))
}

/// Watertight sample mask: everything not reachable from the grid boundary
/// through voxels at or below the global Otsu threshold.
pub fn object_mask<T: Scalar>(v: &Volume<T>) -> Result<Mask> {
    object_mask_at(v, object_threshold(v)?)
}

pub fn object_mask_at<T: Scalar>(v: &Volume<T>, threshold: f64) -> Result<Mask> {
    let above = Mask::threshold(v, |x| x.as_f64() > threshold);
    if above.count() == 0 {
        return Err(Error::EmptyObject);
    }
    Ok(fill_background(&above).not())
}

/// Marks the 6-connected region of `!foreground` reachable from any boundary voxel.
fn fill_background(foreground: &Mask) -> Mask {
    let dims = foreground.dims();
    let fg = foreground.data();
    let mut filled = vec![false; fg.len()];
    let mut queue = VecDeque::new();
    let [nx, ny, nz] = dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let on_border = x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1;
                let i = linear_index(dims, x, y, z);
                if on_border && !fg[i] && !filled[i] {
                    filled[i] = true;
                    queue.push_back(i);
                }
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in components::face_neighbours(dims, i) {
            if !fg[j] && !filled[j] {
                filled[j] = true;
                queue.push_back(j);
            }
        }
    }
    Mask::new(dims, foreground.spacing(), filled).expect("same grid")
}

/// Otsu threshold of the intensities inside `obj`, binned over their own min/max.
pub fn pore_threshold<T: Scalar>(v: &Volume<T>, obj: &Mask) -> Result<f64> {
    obj.ensure_same_grid(v)?;
    if obj.count() == 0 {
        return Err(Error::EmptyObject);
    }
    let inside = v
        .data()
        .iter()
        .zip(obj.data())
        .filter(|(_, &m)| m)
        .map(|(x, _)| x.as_f64());
    otsu_threshold(&histogram_of(inside, OTSU_BINS))
}

/// Voxels inside `obj` darker than the object-restricted Otsu threshold,
/// optionally capped at `ceiling`.
pub fn pore_mask_raw<T: Scalar>(v: &Volume<T>, obj: &Mask, ceiling: Option<f64>) -> Result<Mask> {
    let mut t = pore_threshold(v, obj)?;
    if let Some(c) = ceiling {
        t = t.min(c);
    }
    let mut out = Mask::empty_like(v);
    for ((o, &x), &m) in out.data_mut().iter_mut().zip(v.data()).zip(obj.data()) {
        *o = m && x.as_f64() < t;
    }
    Ok(out)
}

/// Object mask, pore mask, connectivity filter and noise removal in sequence.
/// Returns the object mask alongside the labels.
pub fn label_with_object<T: Scalar>(v: &Volume<T>, params: &LabelParams) -> Result<(Mask, PoreMask)> {
    let t = object_threshold(v)?;
    let obj = object_mask_at(v, t)?;
    let raw = pore_mask_raw(v, &obj, params.cap_at_object_threshold.then_some(t))?;
    let kept = filter_small_pores(connected_components(&raw), params.min_dims);
    let labels = PoreMask::from_components(&raw, kept);
    Ok((obj, labels))
}

pub fn extract_pore_labels<T: Scalar>(v: &Volume<T>, params: &LabelParams) -> Result<PoreMask> {
    label_with_object(v, params).map(|(_, labels)| labels)
}
