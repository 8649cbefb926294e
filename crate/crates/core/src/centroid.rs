//! The spherical centroid: the foreground voxel minimising the mean distance
//! to the outer boundary shell plus a small pull towards the boundary voxel
//! with the largest `y` (the spinous process tip on vertebrae).
//!
//! ```text
//! f(c) = (1/|B|) Σ_b |c − b| + λ |c − δ|
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{boundary, mask_centroid, Index3, LabelVolume, VoxelSet};

pub const DEFAULT_LAMBDA: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidSolution {
    pub point: Index3,
    pub objective: f64,
    pub delta: Index3,
    pub lambda: f64,
}

impl CentroidSolution {
    pub fn point_mm(&self, spacing: [f64; 3]) -> [f64; 3] {
        to_mm(self.point, spacing)
    }
}

#[inline]
fn to_mm(p: Index3, s: [f64; 3]) -> [f64; 3] {
    [p[0] as f64 * s[0], p[1] as f64 * s[1], p[2] as f64 * s[2]]
}

#[inline]
fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Boundary points in mm with δ resolved, shared by every evaluation.
struct Problem {
    pts: Vec<[f64; 3]>,
    delta: [f64; 3],
    lambda: f64,
}

impl Problem {
    #[inline]
    fn eval(&self, c: [f64; 3]) -> f64 {
        let mut sum = 0.0;
        for &b in &self.pts {
            sum += dist(c, b);
        }
        sum / self.pts.len() as f64 + self.lambda * dist(c, self.delta)
    }
}

pub fn objective(c: Index3, boundary: &VoxelSet, delta: Index3, lambda: f64, spacing: [f64; 3]) -> Result<f64> {
    if boundary.is_empty() {
        return Err(Error::EmptySet("boundary"));
    }
    let p = Problem { pts: boundary.points_mm(spacing), delta: to_mm(delta, spacing), lambda };
    Ok(p.eval(to_mm(c, spacing)))
}

/// Largest `y`; ties go to the larger `z`, then the larger `x`.
pub fn select_delta(boundary: &VoxelSet) -> Result<Index3> {
    boundary
        .iter()
        .copied()
        .max_by_key(|p| (p[1], p[2], p[0]))
        .ok_or(Error::EmptySet("boundary"))
}

/// Exhaustive argmin of the objective over the mask's foreground voxels.
/// Ties are broken by `(z, y, x)` ascending.
pub fn spherical_centroid(mask: &LabelVolume, lambda: f64, spacing: [f64; 3]) -> Result<CentroidSolution> {
    let (problem, candidates, delta) = setup(mask, lambda, spacing)?;
    let values: Vec<f64> = candidates.par_iter().map(|&c| problem.eval(to_mm(c, spacing))).collect();
    let best = argmin(&values);
    Ok(CentroidSolution { point: candidates[best], objective: values[best], delta, lambda })
}

/// Same result as [`spherical_centroid`], found with fewer evaluations.
///
/// The objective is `(1 + λ)`-Lipschitz in `c`, so after evaluating it on a
/// stride-2 lattice every candidate has a lower bound from its lattice
/// corner. Candidates whose bound exceeds the best value seen are skipped and
/// the rest are evaluated exactly, so the argmin is unchanged.
pub fn spherical_centroid_fast(mask: &LabelVolume, lambda: f64, spacing: [f64; 3]) -> Result<CentroidSolution> {
    let (problem, candidates, delta) = setup(mask, lambda, spacing)?;
    let lip = 1.0 + lambda.abs();

    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for c in &candidates {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a] & !1);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let steps = [0, 1, 2].map(|a| (hi[a] - lo[a]) / 2 + 1);
    let lattice: Vec<Index3> = (0..steps[2])
        .flat_map(|k| (0..steps[1]).flat_map(move |j| (0..steps[0]).map(move |i| [i, j, k])))
        .collect();
    let coarse: Vec<f64> = lattice
        .par_iter()
        .map(|s| problem.eval(to_mm([lo[0] + 2 * s[0], lo[1] + 2 * s[1], lo[2] + 2 * s[2]], spacing)))
        .collect();
    let corner = |c: &Index3| {
        let s = [0, 1, 2].map(|a| (c[a] - lo[a]) / 2);
        let e = [0, 1, 2].map(|a| lo[a] + 2 * s[a]);
        (coarse[s[0] + steps[0] * (s[1] + steps[1] * s[2])], e)
    };

    // Candidates sitting on the lattice already have exact values.
    let mut bound = f64::INFINITY;
    for c in &candidates {
        let (v, e) = corner(c);
        if e == *c {
            bound = bound.min(v);
        }
    }
    // Seed with the candidate closest to the lattice minimum if none landed on it.
    if !bound.is_finite() {
        let (i, _) = candidates
            .iter()
            .map(|c| corner(c).0)
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        bound = problem.eval(to_mm(candidates[i], spacing));
    }
    // Safety margin for floating error in the bound itself.
    let slack = 1e-9 * bound.abs().max(1.0);
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|c| {
            let (v, e) = corner(c);
            let c_mm = to_mm(*c, spacing);
            if v - lip * dist(c_mm, to_mm(e, spacing)) > bound + slack {
                f64::INFINITY
            } else {
                problem.eval(c_mm)
            }
        })
        .collect();
    let best = argmin(&values);
    Ok(CentroidSolution { point: candidates[best], objective: values[best], delta, lambda })
}

fn setup(mask: &LabelVolume, lambda: f64, spacing: [f64; 3]) -> Result<(Problem, Vec<Index3>, Index3)> {
    if !lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite"));
    }
    let b = boundary(mask)?;
    if b.is_empty() {
        return Err(Error::invalid("mask fills the whole grid, boundary is empty"));
    }
    let delta = select_delta(&b)?;
    let problem = Problem { pts: b.points_mm(spacing), delta: to_mm(delta, spacing), lambda };
    let candidates = VoxelSet::from_mask(mask).coords().to_vec();
    Ok((problem, candidates, delta))
}

/// First index of the minimum. Linear order is `(z, y, x)` ascending.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// The plain mask centroid rounded to the nearest voxel.
pub fn rounded_plain_centroid(mask: &LabelVolume) -> Result<Index3> {
    let c = mask_centroid(mask)?;
    Ok(mask.grid().nearest_voxel(c))
}
