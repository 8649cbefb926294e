use std::collections::VecDeque;

use super::{Grid, Index3, LabelVolume, VoxelSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::invalid(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }

    pub(crate) fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// One separable pass of a running max (or min) filter of half-width `radius`
/// along `axis`. Out-of-grid samples contribute `outside`.
fn filter_axis(src: &[u16], grid: &Grid, axis: usize, radius: usize, max: bool, outside: u16) -> Vec<u16> {
    let dims = grid.dims;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n = dims[axis];
    let mut out = vec![0u16; src.len()];
    let mut line = vec![0u16; n];
    for start in 0..src.len() {
        if (start / stride) % n != 0 {
            continue;
        }
        for (k, slot) in line.iter_mut().enumerate() {
            *slot = src[start + k * stride];
        }
        for k in 0..n {
            let lo = k as i64 - radius as i64;
            let hi = k as i64 + radius as i64;
            let mut acc = if max { 0 } else { 1 };
            if lo < 0 || hi >= n as i64 {
                acc = if max { acc.max(outside) } else { acc.min(outside) };
            }
            for j in lo.max(0)..=hi.min(n as i64 - 1) {
                let v = line[j as usize];
                acc = if max { acc.max(v) } else { acc.min(v) };
            }
            out[start + k * stride] = acc;
        }
    }
    out
}

/// Binary dilation with a cubic (Chebyshev) structuring element of the given
/// radius. Dilation is clipped at the grid bounds.
pub fn dilate(mask: &LabelVolume, radius: usize) -> Result<LabelVolume> {
    mask.require_binary()?;
    if radius == 0 {
        return Err(Error::invalid("dilation radius must be positive"));
    }
    let grid = *mask.grid();
    let mut data = mask.data().to_vec();
    for axis in 0..3 {
        data = filter_axis(&data, &grid, axis, radius, true, 0);
    }
    LabelVolume::from_vec(grid, data)
}

/// Binary erosion with a cubic structuring element. Voxels outside the grid
/// count as background, so a mask touching the border erodes from it.
pub fn erode(mask: &LabelVolume, radius: usize) -> Result<LabelVolume> {
    mask.require_binary()?;
    if radius == 0 {
        return Err(Error::invalid("erosion radius must be positive"));
    }
    let grid = *mask.grid();
    let mut data = mask.data().to_vec();
    for axis in 0..3 {
        data = filter_axis(&data, &grid, axis, radius, false, 0);
    }
    LabelVolume::from_vec(grid, data)
}

/// Outer boundary shell `dilate(M, 1) \ M`: background voxels 26-adjacent to
/// the mask.
pub fn boundary(mask: &LabelVolume) -> Result<VoxelSet> {
    mask.require_binary()?;
    if mask.count_nonzero() == 0 {
        return Err(Error::EmptyMask);
    }
    let dilated = dilate(mask, 1)?;
    let grid = mask.grid();
    let coords = dilated
        .data()
        .iter()
        .zip(mask.data())
        .enumerate()
        .filter(|(_, (&d, &m))| d == 1 && m == 0)
        .map(|(i, _)| grid.index3(i))
        .collect();
    Ok(VoxelSet::from_sorted_unique(coords, grid.dims))
}

/// Surface layer: mask voxels with at least one background (or out-of-grid)
/// face neighbour. This is the point set contour descriptors are encoded from.
pub fn surface(mask: &LabelVolume) -> Result<VoxelSet> {
    mask.require_binary()?;
    if mask.count_nonzero() == 0 {
        return Err(Error::EmptyMask);
    }
    let grid = *mask.grid();
    let offsets = Connectivity::Six.offsets();
    let coords = (0..grid.len())
        .filter(|&i| mask.data()[i] == 1)
        .map(|i| grid.index3(i))
        .filter(|p| {
            offsets.iter().any(|o| {
                mask.get_signed([p[0] as i64 + o[0], p[1] as i64 + o[1], p[2] as i64 + o[2]]) != Some(1)
            })
        })
        .collect();
    Ok(VoxelSet::from_sorted_unique(coords, grid.dims))
}

/// Maximal connected foreground sets, largest first; equal sizes are ordered
/// by their lexicographically smallest voxel.
pub fn connected_components(mask: &LabelVolume, connectivity: Connectivity) -> Result<Vec<VoxelSet>> {
    mask.require_binary()?;
    let grid = *mask.grid();
    let offsets = connectivity.offsets();
    let mut visited = vec![false; grid.len()];
    let mut components: Vec<(Vec<usize>, Index3)> = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..grid.len() {
        if mask.data()[seed] == 0 || visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let p = grid.index3(i);
            for o in &offsets {
                let q = [p[0] as i64 + o[0], p[1] as i64 + o[1], p[2] as i64 + o[2]];
                if !grid.contains(q) {
                    continue;
                }
                let j = grid.linear([q[0] as usize, q[1] as usize, q[2] as usize]);
                if mask.data()[j] == 1 && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        let min_coord = members.iter().map(|&i| grid.index3(i)).min().unwrap();
        components.push((members, min_coord));
    }
    components.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
    Ok(components
        .into_iter()
        .map(|(members, _)| {
            VoxelSet::from_sorted_unique(members.into_iter().map(|i| grid.index3(i)).collect(), grid.dims)
        })
        .collect())
}

/// Mean of the foreground voxel centers, in millimetres.
pub fn mask_centroid(mask: &LabelVolume) -> Result<[f64; 3]> {
    mask.require_binary()?;
    let grid = mask.grid();
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for (i, &v) in mask.data().iter().enumerate() {
        if v == 1 {
            let p = grid.to_mm(grid.index3(i));
            for a in 0..3 {
                sum[a] += p[a];
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum.map(|s| s / count as f64))
}
