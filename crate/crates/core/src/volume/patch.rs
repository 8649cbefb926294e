use super::{Grid, Index3, Volume};
use crate::error::{Error, Result};

/// A sub-volume cut out of a larger one. `offset` is the signed index of the
/// patch's voxel `(0, 0, 0)` in the source grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    pub volume: Volume<T>,
    pub offset: [i64; 3],
}

impl<T: Copy> Patch<T> {
    /// Maps a patch index to the source grid, `None` when it falls outside.
    pub fn to_source(&self, p: Index3, source_dims: [usize; 3]) -> Option<Index3> {
        let q = [
            p[0] as i64 + self.offset[0],
            p[1] as i64 + self.offset[1],
            p[2] as i64 + self.offset[2],
        ];
        if (0..3).all(|a| q[a] >= 0 && (q[a] as usize) < source_dims[a]) {
            Some([q[0] as usize, q[1] as usize, q[2] as usize])
        } else {
            None
        }
    }

    /// Physical position of the patch origin in the source frame.
    pub fn origin_mm(&self) -> [f64; 3] {
        let s = self.volume.spacing();
        [
            self.offset[0] as f64 * s[0],
            self.offset[1] as f64 * s[1],
            self.offset[2] as f64 * s[2],
        ]
    }
}

/// Crops a `size` patch centred on `center`. For even sizes the center voxel
/// sits at `size / 2`. Regions beyond the source are filled with `T::default()`.
pub fn crop_patch<T: Copy + Default>(vol: &Volume<T>, center: Index3, size: [usize; 3]) -> Result<Patch<T>> {
    let dims = vol.dims();
    if (0..3).any(|a| center[a] >= dims[a]) {
        return Err(Error::invalid(format!("patch center {center:?} outside dims {dims:?}")));
    }
    let grid = Grid::new(size, vol.spacing())?;
    let offset = [0, 1, 2].map(|a| center[a] as i64 - (size[a] / 2) as i64);
    let volume = Volume::from_fn(grid, |p| {
        let q = [p[0] as i64 + offset[0], p[1] as i64 + offset[1], p[2] as i64 + offset[2]];
        vol.get_signed(q).unwrap_or_default()
    });
    Ok(Patch { volume, offset })
}

/// Writes the patch back over the region of `target` it overlaps.
pub fn paste_back<T: Copy>(patch: &Patch<T>, target: &mut Volume<T>) {
    let dims = target.dims();
    let pgrid = *patch.volume.grid();
    for (i, &v) in patch.volume.data().iter().enumerate() {
        if let Some(q) = patch.to_source(pgrid.index3(i), dims) {
            target.set(q, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelVolume;
    use proptest::prelude::*;

    fn ramp(dims: [usize; 3]) -> LabelVolume {
        let g = Grid::isotropic(dims).unwrap();
        LabelVolume::from_fn(g, |p| (g.linear(p) % 65_000) as u16 + 1)
    }

    #[test]
    fn full_size_crop_is_identity() {
        let v = ramp([6, 5, 4]);
        let p = crop_patch(&v, [3, 2, 2], [6, 5, 4]).unwrap();
        assert_eq!(p.offset, [0, 0, 0]);
        assert_eq!(p.volume, v);
    }

    #[test]
    fn crop_past_z0_is_zero_padded() {
        let v = ramp([8, 8, 8]);
        let p = crop_patch(&v, [4, 4, 1], [4, 4, 6]).unwrap();
        // Patch z = 0, 1 map to source z = -2, -1.
        assert_eq!(p.offset[2], -2);
        for z in 0..6 {
            for y in 0..4 {
                for x in 0..4 {
                    let val = p.volume.get([x, y, z]);
                    if z < 2 {
                        assert_eq!(val, 0);
                    } else {
                        assert_eq!(val, v.get([x + 2, y + 2, z - 2]));
                    }
                }
            }
        }
    }

    #[test]
    fn crop_rejects_center_outside() {
        let v = ramp([4, 4, 4]);
        assert!(matches!(crop_patch(&v, [4, 0, 0], [2, 2, 2]), Err(Error::InvalidInput(_))));
    }

    proptest! {
        #[test]
        fn paste_back_restores_overlap(
            cx in 0usize..9, cy in 0usize..7, cz in 0usize..5,
            sx in 1usize..12, sy in 1usize..12, sz in 1usize..12,
        ) {
            let v = ramp([9, 7, 5]);
            let p = crop_patch(&v, [cx, cy, cz], [sx, sy, sz]).unwrap();
            let mut target = LabelVolume::filled(*v.grid(), 0);
            paste_back(&p, &mut target);
            for i in 0..v.data().len() {
                let q = v.grid().index3(i);
                let inside = (0..3).all(|a| {
                    let lo = p.offset[a];
                    let hi = lo + p.volume.dims()[a] as i64;
                    (q[a] as i64) >= lo && (q[a] as i64) < hi
                });
                let expect = if inside { v.data()[i] } else { 0 };
                prop_assert_eq!(target.data()[i], expect);
            }
        }
    }
}
