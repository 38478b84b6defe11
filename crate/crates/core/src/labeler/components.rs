use crate::volgrid::{coords_of, linear_index, Dims, Mask};

/// One 6-connected cluster of set voxels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoreComponent {
    /// Voxels in x-fastest scan order.
    pub voxels: Vec<[usize; 3]>,
    pub bbox_min: [usize; 3],
    pub bbox_max: [usize; 3],
}

impl PoreComponent {
    pub fn from_voxels(mut voxels: Vec<[usize; 3]>) -> Self {
        assert!(!voxels.is_empty(), "a component has at least one voxel");
        voxels.sort_by_key(|v| (v[2], v[1], v[0]));
        let mut bbox_min = voxels[0];
        let mut bbox_max = voxels[0];
        for v in &voxels {
            for a in 0..3 {
                bbox_min[a] = bbox_min[a].min(v[a]);
                bbox_max[a] = bbox_max[a].max(v[a]);
            }
        }
        Self {
            voxels,
            bbox_min,
            bbox_max,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    /// Bounding-box size per axis, in voxels.
    pub fn extent(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.bbox_max[a] - self.bbox_min[a] + 1)
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.voxels.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.voxels {
            for a in 0..3 {
                c[a] += v[a] as f64;
            }
        }
        c.map(|s| s / n)
    }
}

pub(crate) fn face_neighbours(dims: Dims, i: usize) -> impl Iterator<Item = usize> {
    let [x, y, z] = coords_of(dims, i);
    let sx = 1;
    let sy = dims[0];
    let sz = dims[0] * dims[1];
    [
        (x > 0).then(|| i - sx),
        (x + 1 < dims[0]).then(|| i + sx),
        (y > 0).then(|| i - sy),
        (y + 1 < dims[1]).then(|| i + sy),
        (z > 0).then(|| i - sz),
        (z + 1 < dims[2]).then(|| i + sz),
    ]
    .into_iter()
    .flatten()
}

/// Maximal 6-connected components, ordered by their first voxel in scan order.
pub fn connected_components(mask: &Mask) -> Vec<PoreComponent> {
    let dims = mask.dims();
    let data = mask.data();
    let mut seen = vec![false; data.len()];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..data.len() {
        if !data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut voxels = Vec::new();
        while let Some(i) = stack.pop() {
            voxels.push(coords_of(dims, i));
            for j in face_neighbours(dims, i) {
                if data[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        out.push(PoreComponent::from_voxels(voxels));
    }
    out
}

/// Keeps components whose bounding box spans at least `min_dims` voxels on every axis.
pub fn filter_small_pores(comps: Vec<PoreComponent>, min_dims: usize) -> Vec<PoreComponent> {
    comps
        .into_iter()
        .filter(|c| c.extent().iter().all(|&e| e >= min_dims))
        .collect()
}

/// Rasterizes components onto an empty mask with the grid of `template`.
pub fn components_to_mask(template: &Mask, comps: &[PoreComponent]) -> Mask {
    let dims = template.dims();
    let mut data = vec![false; template.len()];
    for c in comps {
        for &[x, y, z] in &c.voxels {
            data[linear_index(dims, x, y, z)] = true;
        }
    }
    Mask::new(dims, template.spacing(), data).expect("same grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_neighbours_are_separate() {
        let mut m = Mask::empty([3, 3, 3]);
        m.set(0, 0, 0, true);
        m.set(1, 1, 0, true);
        assert_eq!(connected_components(&m).len(), 2);
        m.set(1, 0, 0, true);
        assert_eq!(connected_components(&m).len(), 1);
    }

    #[test]
    fn empty_mask_has_no_components() {
        assert!(connected_components(&Mask::empty([4, 4, 4])).is_empty());
    }

    struct UnionFind(Vec<usize>);

    impl UnionFind {
        fn find(&mut self, i: usize) -> usize {
            let mut r = i;
            while self.0[r] != r {
                r = self.0[r];
            }
            let mut j = i;
            while self.0[j] != r {
                let next = self.0[j];
                self.0[j] = r;
                j = next;
            }
            r
        }
        fn union(&mut self, a: usize, b: usize) {
            let (ra, rb) = (self.find(a), self.find(b));
            if ra != rb {
                self.0[ra.max(rb)] = ra.min(rb);
            }
        }
    }

    #[test]
    fn partition_matches_union_find() {
        let dims = [16, 16, 16];
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Mask::from_fn(dims, |_, _, _| rng.random_bool(0.3));
            let mut uf = UnionFind((0..m.len()).collect());
            for z in 0..16 {
                for y in 0..16 {
                    for x in 0..16 {
                        if !m.get(x, y, z) {
                            continue;
                        }
                        let i = linear_index(dims, x, y, z);
                        if x + 1 < 16 && m.get(x + 1, y, z) {
                            uf.union(i, linear_index(dims, x + 1, y, z));
                        }
                        if y + 1 < 16 && m.get(x, y + 1, z) {
                            uf.union(i, linear_index(dims, x, y + 1, z));
                        }
                        if z + 1 < 16 && m.get(x, y, z + 1) {
                            uf.union(i, linear_index(dims, x, y, z + 1));
                        }
                    }
                }
            }
            // roots are minimal indices, so grouping by root in scan order
            // yields the same ordering as the implementation
            let mut groups: std::collections::BTreeMap<usize, Vec<[usize; 3]>> = Default::default();
            for i in 0..m.len() {
                if m.data()[i] {
                    groups.entry(uf.find(i)).or_default().push(coords_of(dims, i));
                }
            }
            let oracle: Vec<Vec<[usize; 3]>> = groups.into_values().collect();
            let got: Vec<Vec<[usize; 3]>> =
                connected_components(&m).into_iter().map(|c| c.voxels).collect();
            assert_eq!(got, oracle);
        }
    }

    fn block(lo: [usize; 3], hi: [usize; 3]) -> PoreComponent {
        let mut v = Vec::new();
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    v.push([x, y, z]);
                }
            }
        }
        PoreComponent::from_voxels(v)
    }

    #[test]
    fn size_rule() {
        let single = block([1, 1, 1], [1, 1, 1]);
        let cube = block([3, 3, 3], [4, 4, 4]);
        let plate = block([0, 5, 5], [0, 7, 7]);
        assert_eq!(plate.extent(), [1, 3, 3]);
        let kept = filter_small_pores(vec![single, cube.clone(), plate], 2);
        assert_eq!(kept, vec![cube]);
    }

    #[test]
    fn mask_roundtrip_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mask::from_fn([10, 9, 8], |_, _, _| rng.random_bool(0.35));
        let comps = connected_components(&m);
        let union: usize = comps.iter().map(|c| c.voxel_count()).sum();
        assert_eq!(union, m.count());
        let rebuilt = components_to_mask(&m, &comps);
        assert_eq!(rebuilt, m);
        assert_eq!(connected_components(&rebuilt), comps);
    }
}
