//! Dense voxel volumes, voxel sets and binary morphology.
//!
//! Volumes are stored x-fastest: the linear index of voxel `(x, y, z)` is
//! `x + dims[0] * (y + dims[1] * z)`. Physical coordinates follow the
//! voxel-center convention with the origin at index `(0, 0, 0)`, so a voxel
//! sits at `index * spacing` millimetres.

pub(crate) mod io;
mod morphology;
mod patch;

pub use io::{read_volume, read_volume_from, write_volume, write_volume_to, AnyVolume, Dtype};
pub use morphology::{
    boundary, connected_components, dilate, erode, mask_centroid, surface, Connectivity,
};
pub use patch::{crop_patch, paste_back, Patch};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer voxel index `(x, y, z)`.
pub type Index3 = [usize; 3];

/// Grid geometry shared by every volume: voxel counts and mm per voxel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::invalid(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        Ok(Grid { dims, spacing })
    }

    /// Unit spacing.
    pub fn isotropic(dims: [usize; 3]) -> Result<Self> {
        Grid::new(dims, [1.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, [x, y, z]: Index3) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn index3(&self, i: usize) -> Index3 {
        let x = i % self.dims[0];
        let yz = i / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    #[inline]
    pub fn to_mm(&self, p: Index3) -> [f64; 3] {
        [
            p[0] as f64 * self.spacing[0],
            p[1] as f64 * self.spacing[1],
            p[2] as f64 * self.spacing[2],
        ]
    }

    /// Nearest voxel to a physical point, clamped into the grid.
    pub fn nearest_voxel(&self, p: [f64; 3]) -> Index3 {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = (p[a] / self.spacing[a]).round();
            out[a] = v.clamp(0.0, (self.dims[a] - 1) as f64) as usize;
        }
        out
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// A dense 3D array over a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    grid: Grid,
    data: Vec<T>,
}

/// Integer labels, `0` is background.
pub type LabelVolume = Volume<u16>;
/// Real-valued scalar field.
pub type Field = Volume<f64>;

impl<T: Copy> Volume<T> {
    pub fn filled(grid: Grid, value: T) -> Self {
        Volume { data: vec![value; grid.len()], grid }
    }

    pub fn from_vec(grid: Grid, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::DimsMismatch(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        Ok(Volume { grid, data })
    }

    /// Evaluates `f` at every voxel index.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(Index3) -> T) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.index3(i))).collect();
        Volume { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
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
    pub fn get(&self, p: Index3) -> T {
        self.data[self.grid.linear(p)]
    }

    /// Value at a signed index, `None` outside the grid.
    #[inline]
    pub fn get_signed(&self, p: [i64; 3]) -> Option<T> {
        if self.grid.contains(p) {
            Some(self.data[self.grid.linear([p[0] as usize, p[1] as usize, p[2] as usize])])
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, p: Index3, value: T) {
        let i = self.grid.linear(p);
        self.data[i] = value;
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Volume<U> {
        Volume { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_dims<U>(&self, other: &Volume<U>) -> Result<()> {
        if self.grid.dims != other.grid.dims {
            return Err(Error::DimsMismatch(format!(
                "{:?} vs {:?}",
                self.grid.dims, other.grid.dims
            )));
        }
        Ok(())
    }
}

impl LabelVolume {
    /// Binary `{0, 1}` mask of voxels carrying `label`.
    pub fn select(&self, label: u16) -> LabelVolume {
        self.map(|v| u16::from(v == label))
    }

    /// Binary `{0, 1}` mask of all non-zero voxels.
    pub fn foreground(&self) -> LabelVolume {
        self.map(|v| u16::from(v > 0))
    }

    /// Distinct non-zero labels in ascending order.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..=u16::MAX).filter(|&l| seen[l as usize]).collect()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(Error::invalid("mask must be binary {0, 1}"))
        }
    }
}

/// A set of distinct voxel indices belonging to one grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelSet {
    coords: Vec<Index3>,
    dims: [usize; 3],
}

impl VoxelSet {
    /// Validates bounds and uniqueness. Order is preserved.
    pub fn new(coords: Vec<Index3>, dims: [usize; 3]) -> Result<Self> {
        if let Some(p) = coords.iter().find(|p| (0..3).any(|a| p[a] >= dims[a])) {
            return Err(Error::invalid(format!("voxel {p:?} outside dims {dims:?}")));
        }
        let mut sorted = coords.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate voxel in set"));
        }
        Ok(VoxelSet { coords, dims })
    }

    pub(crate) fn from_sorted_unique(coords: Vec<Index3>, dims: [usize; 3]) -> Self {
        VoxelSet { coords, dims }
    }

    /// Foreground voxels of a mask in linear (x-fastest) order.
    pub fn from_mask(mask: &LabelVolume) -> Self {
        let grid = mask.grid();
        let coords = mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(i, _)| grid.index3(i))
            .collect();
        VoxelSet { coords, dims: grid.dims }
    }

    pub fn coords(&self) -> &[Index3] {
        &self.coords
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Index3> {
        self.coords.iter()
    }

    /// Voxel centers in millimetres.
    pub fn points_mm(&self, spacing: [f64; 3]) -> Vec<[f64; 3]> {
        self.coords
            .iter()
            .map(|p| [p[0] as f64 * spacing[0], p[1] as f64 * spacing[1], p[2] as f64 * spacing[2]])
            .collect()
    }

    pub fn to_mask(&self, spacing: [f64; 3]) -> Result<LabelVolume> {
        let grid = Grid::new(self.dims, spacing)?;
        let mut out = LabelVolume::filled(grid, 0);
        for &p in &self.coords {
            out.set(p, 1);
        }
        Ok(out)
    }

    /// Coordinates sorted lexicographically, for set comparisons.
    pub fn sorted(&self) -> Vec<Index3> {
        let mut c = self.coords.clone();
        c.sort_unstable();
        c
    }
}
