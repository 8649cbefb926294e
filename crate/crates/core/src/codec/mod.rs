//! Spherical contour descriptors.
//!
//! A shape is described from a center by one radius per node of a regular
//! `(θ, φ)` angle grid with step `s` degrees: `θ ∈ {0, s, …, 360 − s}` is
//! measured counter-clockwise from `+x` in the XOY plane (viewed from `+z`),
//! `φ ∈ {0, s, …, 180}` is the angle from `+z`. Radii are laid out θ-major,
//! so bin `(i, j)` lives at `i * J + j`.
//!
//! Encoding keeps, for every bin, the largest radius among the voxels whose
//! rounded angles land in it. Bins that receive no voxel are filled from the
//! nearest hit bin so the vector stays dense.

mod io;

pub use io::{
    read_descriptors, read_descriptors_from, sidecar_path, write_descriptors, write_descriptors_to, DescriptorFile,
};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::VoxelSet;

/// Which world axis plays the role of the polar (`φ = 0`) axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisConvention {
    #[default]
    ZUp,
    XUp,
    YUp,
}

impl AxisConvention {
    pub const ALL: [AxisConvention; 3] = [AxisConvention::XUp, AxisConvention::YUp, AxisConvention::ZUp];

    /// World vector to the local frame whose third axis is the pole. The maps
    /// are cyclic permutations, so handedness is kept.
    #[inline]
    fn to_local(self, v: [f64; 3]) -> [f64; 3] {
        match self {
            AxisConvention::ZUp => v,
            AxisConvention::XUp => [v[1], v[2], v[0]],
            AxisConvention::YUp => [v[2], v[0], v[1]],
        }
    }

    #[inline]
    fn to_world(self, f: [f64; 3]) -> [f64; 3] {
        match self {
            AxisConvention::ZUp => f,
            AxisConvention::XUp => [f[2], f[0], f[1]],
            AxisConvention::YUp => [f[1], f[2], f[0]],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AxisConvention::ZUp => "z_up",
            AxisConvention::XUp => "x_up",
            AxisConvention::YUp => "y_up",
        }
    }
}

impl std::str::FromStr for AxisConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z_up" | "z" => Ok(AxisConvention::ZUp),
            "x_up" | "x" => Ok(AxisConvention::XUp),
            "y_up" | "y" => Ok(AxisConvention::YUp),
            _ => Err(Error::invalid(format!("unknown axis convention {s:?}"))),
        }
    }
}

/// The sampled `(θ, φ)` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AngleGrid {
    interval_deg: u32,
    axis: AxisConvention,
}

impl AngleGrid {
    /// `interval_deg` must divide 180 so that both angle ranges are covered
    /// exactly.
    pub fn new(interval_deg: u32, axis: AxisConvention) -> Result<Self> {
        if interval_deg == 0 || 180 % interval_deg != 0 {
            return Err(Error::invalid(format!(
                "sampling interval must be a positive divisor of 180, got {interval_deg}"
            )));
        }
        Ok(AngleGrid { interval_deg, axis })
    }

    pub fn interval_deg(&self) -> u32 {
        self.interval_deg
    }

    pub fn axis(&self) -> AxisConvention {
        self.axis
    }

    /// `I = 360 / s`.
    pub fn n_theta(&self) -> usize {
        (360 / self.interval_deg) as usize
    }

    /// `J = 180 / s + 1`.
    pub fn n_phi(&self) -> usize {
        (180 / self.interval_deg) as usize + 1
    }

    /// Descriptor length `N = I * J`.
    pub fn len(&self) -> usize {
        self.n_theta() * self.n_phi()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn bin(&self, i: usize, j: usize) -> usize {
        i * self.n_phi() + j
    }

    /// Angles (degrees) of the node at `bin`.
    pub fn node_angles(&self, bin: usize) -> (f64, f64) {
        let j = bin % self.n_phi();
        let i = bin / self.n_phi();
        let s = self.interval_deg as f64;
        (i as f64 * s, j as f64 * s)
    }

    /// Rounds angles to the nearest node (half-up); θ wraps, φ clamps.
    #[inline]
    pub fn nearest_bin(&self, theta_deg: f64, phi_deg: f64) -> usize {
        let s = self.interval_deg as f64;
        let i = ((theta_deg / s + 0.5).floor() as i64).rem_euclid(self.n_theta() as i64) as usize;
        let j = ((phi_deg / s + 0.5).floor().max(0.0) as usize).min(self.n_phi() - 1);
        self.bin(i, j)
    }

    /// Bin of the direction `v` (world frame), `None` for the zero vector.
    #[inline]
    pub fn bin_of(&self, v: [f64; 3]) -> Option<usize> {
        let (r, theta, phi) = spherical_angles(self.axis.to_local(v));
        (r > 0.0).then(|| self.nearest_bin(theta, phi))
    }

    /// Unit direction of every node, in bin order, world frame.
    pub fn directions(&self) -> Vec<[f64; 3]> {
        (0..self.len())
            .map(|b| {
                let (t, p) = self.node_angles(b);
                self.axis.to_world(unit_local(t, p))
            })
            .collect()
    }
}

impl Default for AngleGrid {
    fn default() -> Self {
        AngleGrid { interval_deg: 5, axis: AxisConvention::ZUp }
    }
}

/// `(ρ, θ, φ)` with angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalPoint {
    pub rho: f64,
    pub theta: f64,
    pub phi: f64,
}

#[inline]
fn spherical_angles(f: [f64; 3]) -> (f64, f64, f64) {
    let r = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
    if r == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let phi = (f[2] / r).clamp(-1.0, 1.0).acos().to_degrees();
    let mut theta = f[1].atan2(f[0]).to_degrees();
    if theta < 0.0 {
        theta += 360.0;
    }
    if theta >= 360.0 {
        theta -= 360.0;
    }
    (r, theta, phi)
}

#[inline]
fn unit_local(theta_deg: f64, phi_deg: f64) -> [f64; 3] {
    let (st, ct) = theta_deg.to_radians().sin_cos();
    let (sp, cp) = phi_deg.to_radians().sin_cos();
    [sp * ct, sp * st, cp]
}

pub fn cart_to_sph(p: [f64; 3], center: [f64; 3], grid: &AngleGrid) -> Result<SphericalPoint> {
    let v = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
    let (rho, theta, phi) = spherical_angles(grid.axis.to_local(v));
    if rho == 0.0 {
        return Err(Error::DegeneratePoint(format!("point {p:?} coincides with the center")));
    }
    Ok(SphericalPoint { rho, theta, phi })
}

pub fn sph_to_cart(sp: SphericalPoint, center: [f64; 3], grid: &AngleGrid) -> [f64; 3] {
    let u = grid.axis.to_world(unit_local(sp.theta, sp.phi));
    [
        center[0] + sp.rho * u[0],
        center[1] + sp.rho * u[1],
        center[2] + sp.rho * u[2],
    ]
}

/// Radii over an [`AngleGrid`] seen from `center` (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct ContourDescriptor {
    pub rho: Vec<f64>,
    pub grid: AngleGrid,
    pub center: [f64; 3],
    /// Bins that received no voxel and were filled from a neighbour.
    pub imputed: Vec<bool>,
}

impl ContourDescriptor {
    pub fn new(rho: Vec<f64>, grid: AngleGrid, center: [f64; 3]) -> Result<Self> {
        if rho.len() != grid.len() {
            return Err(Error::DimsMismatch(format!(
                "descriptor has {} radii, grid needs {}",
                rho.len(),
                grid.len()
            )));
        }
        if rho.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("radii must be finite and non-negative"));
        }
        let imputed = vec![false; rho.len()];
        Ok(ContourDescriptor { rho, grid, center, imputed })
    }

    /// Radius along the world-frame direction `v`.
    #[inline]
    pub fn radius_towards(&self, v: [f64; 3]) -> Option<f64> {
        self.grid.bin_of(v).map(|b| self.rho[b])
    }
}

/// Encodes the voxels of `boundary` seen from `center` (mm).
pub fn encode(boundary: &VoxelSet, center: [f64; 3], grid: AngleGrid, spacing: [f64; 3]) -> Result<ContourDescriptor> {
    if boundary.is_empty() {
        return Err(Error::EmptySet("boundary"));
    }
    let pts = boundary.points_mm(spacing);
    for a in 0..3 {
        let lo = pts.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
        if center[a] < lo || center[a] > hi {
            return Err(Error::invalid(format!(
                "center {center:?} lies outside the boundary's bounding box"
            )));
        }
    }
    let n = grid.len();
    let mut rho = vec![0.0f64; n];
    let mut hit = vec![false; n];
    for p in &pts {
        let sp = cart_to_sph(*p, center, &grid)?;
        let b = grid.nearest_bin(sp.theta, sp.phi);
        if !hit[b] || sp.rho > rho[b] {
            rho[b] = sp.rho;
            hit[b] = true;
        }
    }
    let imputed = fill_empty_bins(&mut rho, &hit, &grid);
    Ok(ContourDescriptor { rho, grid, center, imputed })
}

/// Breadth-first propagation of hit bins into empty ones over the 4-connected
/// `(θ, φ)` lattice, θ wrapping. Sources are seeded in bin order so ties are
/// deterministic. Returns the imputed flags.
fn fill_empty_bins(rho: &mut [f64], hit: &[bool], grid: &AngleGrid) -> Vec<bool> {
    let (ni, nj) = (grid.n_theta(), grid.n_phi());
    let mut done = hit.to_vec();
    let mut queue: VecDeque<usize> = (0..rho.len()).filter(|&b| hit[b]).collect();
    while let Some(b) = queue.pop_front() {
        let (i, j) = (b / nj, b % nj);
        let mut neighbours = [None; 4];
        neighbours[0] = Some(grid.bin((i + 1) % ni, j));
        neighbours[1] = Some(grid.bin((i + ni - 1) % ni, j));
        if j + 1 < nj {
            neighbours[2] = Some(grid.bin(i, j + 1));
        }
        if j > 0 {
            neighbours[3] = Some(grid.bin(i, j - 1));
        }
        for nb in neighbours.into_iter().flatten() {
            if !done[nb] {
                done[nb] = true;
                rho[nb] = rho[b];
                queue.push_back(nb);
            }
        }
    }
    hit.iter().map(|h| !h).collect()
}

/// Contour points reconstructed from a descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedContour {
    pub points: Vec<[f64; 3]>,
    /// Bins with zero radius; their point is the center itself.
    pub flagged: Vec<bool>,
}

impl DecodedContour {
    /// Points of unflagged bins only.
    pub fn valid_points(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .zip(&self.flagged)
            .filter(|(_, f)| !**f)
            .map(|(p, _)| *p)
            .collect()
    }
}

pub fn decode(d: &ContourDescriptor) -> DecodedContour {
    let dirs = d.grid.directions();
    let c = d.center;
    let points = dirs
        .iter()
        .zip(&d.rho)
        .map(|(u, &r)| [c[0] + r * u[0], c[1] + r * u[1], c[2] + r * u[2]])
        .collect();
    let flagged = d.rho.iter().map(|&r| r == 0.0).collect();
    DecodedContour { points, flagged }
}
