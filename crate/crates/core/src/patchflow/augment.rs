//! Random flips and elastic distortion applied jointly to an image patch and
//! its label patch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volgrid::{linear_index, Dims, Mask, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticSpec {
    pub enabled: bool,
    /// Control-point spacing in voxels.
    pub grid_spacing: f64,
    /// Largest displacement of any control point, per component, in voxels.
    pub max_displacement: f64,
}

impl Default for ElasticSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            grid_spacing: 16.0,
            max_displacement: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub flip_prob: [f64; 3],
    pub elastic: ElasticSpec,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            flip_prob: [0.5; 3],
            elastic: ElasticSpec::default(),
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            flip_prob: [0.0; 3],
            elastic: ElasticSpec {
                enabled: false,
                ..ElasticSpec::default()
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.flip_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("flip probabilities must lie in [0, 1]"));
        }
        let e = &self.elastic;
        if e.enabled {
            if !(e.grid_spacing > 0.0 && e.max_displacement >= 0.0) {
                return Err(Error::invalid("elastic grid spacing must be positive"));
            }
            if e.max_displacement >= e.grid_spacing / 2.0 {
                return Err(Error::invalid(format!(
                    "max displacement {} must stay below half the control spacing {}",
                    e.max_displacement, e.grid_spacing
                )));
            }
        }
        Ok(())
    }
}

fn flip_data<E: Copy>(data: &[E], dims: Dims, axis: usize) -> Vec<E> {
    let mut out = Vec::with_capacity(data.len());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut c = [x, y, z];
                c[axis] = dims[axis] - 1 - c[axis];
                out.push(data[linear_index(dims, c[0], c[1], c[2])]);
            }
        }
    }
    out
}

pub fn flip_volume<T: Scalar>(v: &Volume<T>, axis: usize) -> Volume<T> {
    v.like(flip_data(v.data(), v.dims(), axis))
}

pub fn flip_mask(m: &Mask, axis: usize) -> Mask {
    Mask::new(m.dims(), m.spacing(), flip_data(m.data(), m.dims(), axis)).expect("same grid")
}

/// Coarse displacement lattice, upsampled trilinearly.
struct DisplacementField {
    nodes: [usize; 3],
    spacing: f64,
    // three components per node, node order x-fastest
    values: Vec<[f64; 3]>,
}

impl DisplacementField {
    fn random(dims: Dims, spec: &ElasticSpec, rng: &mut impl Rng) -> Self {
        let nodes = dims.map(|d| ((d.saturating_sub(1)) as f64 / spec.grid_spacing).floor() as usize + 2);
        let m = spec.max_displacement;
        let values = (0..nodes.iter().product::<usize>())
            .map(|_| [0; 3].map(|_| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 }))
            .collect();
        Self {
            nodes,
            spacing: spec.grid_spacing,
            values,
        }
    }

    fn at(&self, p: [usize; 3]) -> [f64; 3] {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = p[a] as f64 / self.spacing;
            let i = (u.floor() as usize).min(self.nodes[a] - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let mut d = [0.0; 3];
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let idx = linear_index(self.nodes, base[0] + off[0], base[1] + off[1], base[2] + off[2]);
            for a in 0..3 {
                d[a] += w * self.values[idx][a];
            }
        }
        d
    }
}

fn sample_trilinear<T: Scalar>(v: &Volume<T>, q: [f64; 3]) -> T {
    let dims = v.dims();
    let mut base = [0isize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let c = q[a].clamp(0.0, (dims[a] - 1) as f64);
        let f = c.floor();
        base[a] = f as isize;
        frac[a] = c - f;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = 1.0;
        for a in 0..3 {
            w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w == 0.0 {
            continue;
        }
        acc += w * v
            .get_clamped(base[0] + off[0] as isize, base[1] + off[1] as isize, base[2] + off[2] as isize)
            .as_f64();
    }
    T::of(acc)
}

fn sample_nearest(m: &Mask, q: [f64; 3]) -> bool {
    let dims = m.dims();
    let c = [0, 1, 2].map(|a| q[a].round().clamp(0.0, (dims[a] - 1) as f64) as usize);
    m.get(c[0], c[1], c[2])
}

/// Applies the same random flips, then the same elastic warp, to both
/// patches. The image is resampled trilinearly, the label by nearest voxel.
pub fn augment<T: Scalar>(image: &Volume<T>, label: &Mask, spec: &AugmentSpec) -> Result<(Volume<T>, Mask)> {
    spec.validate()?;
    if image.dims() != label.dims() {
        return Err(Error::DimsMismatch(image.dims(), label.dims()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut img = image.clone();
    let mut lab = label.clone();
    for axis in 0..3 {
        if rng.random_bool(spec.flip_prob[axis]) {
            img = flip_volume(&img, axis);
            lab = flip_mask(&lab, axis);
        }
    }
    if !spec.elastic.enabled {
        return Ok((img, lab));
    }
    let dims = img.dims();
    let field = DisplacementField::random(dims, &spec.elastic, &mut rng);
    let mut out_img = Vec::with_capacity(img.len());
    let mut out_lab = Vec::with_capacity(img.len());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let d = field.at([x, y, z]);
                let q = [x as f64 + d[0], y as f64 + d[1], z as f64 + d[2]];
                out_img.push(sample_trilinear(&img, q));
                out_lab.push(sample_nearest(&lab, q));
            }
        }
    }
    Ok((
        img.like(out_img),
        Mask::new(dims, lab.spacing(), out_lab).expect("same grid"),
    ))
}
