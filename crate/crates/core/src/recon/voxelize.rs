//! Parity ray casting along `+x`, one ray per `(y, z)` voxel row.
//!
//! Rays are shifted off the voxel lattice by a small fixed jitter. A ray that
//! passes exactly through a triangle edge or vertex is resolved by symbolic
//! perturbation of the ray origin, applied identically to every triangle, so
//! a shared edge is counted exactly once.

use rayon::prelude::*;

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};
use crate::volume::{Grid, LabelVolume};

/// Ray offset in voxel units along `y` and `z`.
const JITTER: [f64; 2] = [1e-4, 1.37e-4];

/// Secondary perturbation directions in the `(y, z)` plane.
const PERTURB: [[f64; 2]; 2] = [[1.0, 0.297_163_528_441_672_3], [-0.641_327_895_213_004_7, 1.0]];

#[inline]
fn cross2(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[1] - u[1] * v[0]
}

/// Sign of the edge function of `a → b` at the perturbed point `p`.
/// Evaluated on the canonically ordered edge so that both triangles sharing
/// it see exactly negated values.
#[inline]
fn edge_sign(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> (f64, i8) {
    let (lo, hi, flip) = if (a[0], a[1]) <= (b[0], b[1]) { (a, b, 1.0) } else { (b, a, -1.0) };
    let d = [hi[0] - lo[0], hi[1] - lo[1]];
    let e = cross2(d, [p[0] - lo[0], p[1] - lo[1]]) * flip;
    let s = if e != 0.0 {
        e.signum()
    } else {
        PERTURB
            .iter()
            .map(|w| cross2(d, *w) * flip)
            .find(|v| *v != 0.0)
            .map_or(0.0, f64::signum)
    };
    (e, s as i8)
}

/// `x` where the ray through `p` crosses the triangle, if it does.
fn crossing(tri: [[f64; 3]; 3], p: [f64; 2]) -> Option<f64> {
    let q = tri.map(|v| [v[1], v[2]]);
    let (e0, s0) = edge_sign(q[1], q[2], p);
    let (e1, s1) = edge_sign(q[2], q[0], p);
    let (e2, s2) = edge_sign(q[0], q[1], p);
    if s0 == 0 || s0 != s1 || s1 != s2 {
        return None;
    }
    let sum = e0 + e1 + e2;
    if sum == 0.0 {
        // Degenerate projection with a perturbed hit: use the vertex mean.
        return Some((tri[0][0] + tri[1][0] + tri[2][0]) / 3.0);
    }
    Some((e0 * tri[0][0] + e1 * tri[1][0] + e2 * tri[2][0]) / sum)
}

/// Marks voxels whose centers lie inside `mesh`.
pub fn voxelize_fill(mesh: &TriangleMesh, grid: Grid) -> Result<LabelVolume> {
    let [nx, ny, nz] = grid.dims;
    let s = grid.spacing;
    let rows = ny * nz;
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); rows];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let v = t.map(|i| mesh.vertices[i as usize]);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &v {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a + 1]);
                hi[a] = hi[a].max(p[a + 1]);
            }
        }
        let range = |a: usize, n: usize| {
            let first = ((lo[a] / s[a + 1] - JITTER[a]).floor() - 1.0).max(0.0) as usize;
            let last = ((hi[a] / s[a + 1] - JITTER[a]).ceil() + 1.0).clamp(0.0, n as f64 - 1.0) as usize;
            first..=last.min(n - 1)
        };
        for z in range(1, nz) {
            for y in range(0, ny) {
                buckets[y + ny * z].push(ti as u32);
            }
        }
    }

    let results: Vec<(Vec<u16>, bool)> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let (y, z) = (r % ny, r / ny);
            let p = [(y as f64 + JITTER[0]) * s[1], (z as f64 + JITTER[1]) * s[2]];
            let mut hits: Vec<f64> = buckets[r]
                .iter()
                .filter_map(|&ti| {
                    let t = mesh.triangles[ti as usize];
                    crossing(t.map(|i| mesh.vertices[i as usize]), p)
                })
                .collect();
            hits.sort_by(f64::total_cmp);
            let odd = hits.len() % 2 == 1;
            let mut row = vec![0u16; nx];
            let mut k = 0;
            for (x, cell) in row.iter_mut().enumerate() {
                let xv = x as f64 * s[0];
                while k < hits.len() && hits[k] <= xv {
                    k += 1;
                }
                // Crossings beyond the center along +x.
                *cell = u16::from((hits.len() - k) % 2 == 1);
            }
            (row, odd)
        })
        .collect();

    let bad = results.iter().filter(|(_, odd)| *odd).count();
    if bad > 0 {
        return Err(Error::ParityInconsistency { rays: bad });
    }
    let mut out = LabelVolume::filled(grid, 0);
    let data = out.data_mut();
    for (r, (row, _)) in results.into_iter().enumerate() {
        data[r * nx..(r + 1) * nx].copy_from_slice(&row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::mesh::icosphere;
    use crate::recon::marching_cubes;
    use crate::volume::Field;

    fn ball(dims: [usize; 3], c: [f64; 3], r: f64, s: [f64; 3]) -> LabelVolume {
        LabelVolume::from_fn(Grid::new(dims, s).unwrap(), |p| {
            u16::from((0..3).map(|a| (p[a] as f64 * s[a] - c[a]).powi(2)).sum::<f64>() <= r * r)
        })
    }

    fn dice(a: &LabelVolume, b: &LabelVolume) -> f64 {
        let inter = a.data().iter().zip(b.data()).filter(|(x, y)| **x == 1 && **y == 1).count();
        2.0 * inter as f64 / (a.count_nonzero() + b.count_nonzero()) as f64
    }

    #[test]
    fn icosphere_fills_a_ball() {
        let g = Grid::isotropic([30, 30, 30]).unwrap();
        let c = [14.5, 14.5, 14.5];
        let mesh = icosphere(c, 10.0, 4);
        let filled = voxelize_fill(&mesh, g).unwrap();
        let d = dice(&filled, &ball([30; 3], c, 10.0, [1.0; 3]));
        assert!(d >= 0.98, "{d}");
    }

    #[test]
    fn empty_mesh_gives_empty_mask() {
        let g = Grid::isotropic([4, 4, 4]).unwrap();
        assert_eq!(voxelize_fill(&TriangleMesh::default(), g).unwrap().count_nonzero(), 0);
    }

    #[test]
    fn open_mesh_reports_parity_error() {
        let g = Grid::isotropic([20, 20, 20]).unwrap();
        let mut mesh = icosphere([10.0; 3], 6.0, 2);
        mesh.triangles.truncate(mesh.triangles.len() / 2);
        match voxelize_fill(&mesh, g) {
            Err(Error::ParityInconsistency { rays }) => assert!(rays > 0),
            other => panic!("expected parity error, got {other:?}"),
        }
    }

    #[test]
    fn marching_cubes_round_trip_recovers_thresholded_field() {
        // Voxel centers are cube corners, so filling the extracted surface
        // must reproduce {f > iso} wherever the field is not within rounding
        // of the iso value.
        let s = [0.9, 1.0, 1.2];
        let g = Grid::new([24, 22, 20], s).unwrap();
        let c = [10.3, 10.9, 11.1];
        let f = Field::from_fn(g, |p| {
            let v = [0, 1, 2].map(|a| p[a] as f64 * s[a] - c[a]);
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            7.0 + 2.0 * (3.0 * v[0].atan2(v[1])).sin() - r
        });
        let iso = -0.01;
        let mesh = marching_cubes(&f, iso);
        assert!(mesh.is_watertight());
        let filled = voxelize_fill(&mesh, g).unwrap();
        for (i, (&m, &v)) in filled.data().iter().zip(f.data()).enumerate() {
            assert_eq!(m == 1, v > iso, "voxel {:?} field {v}", g.index3(i));
        }
    }

    #[test]
    fn box_mesh_fills_enclosed_centers() {
        // Box faces split along their diagonals.
        let v = vec![
            [0.5, 0.5, 0.5],
            [3.5, 0.5, 0.5],
            [3.5, 3.0, 0.5],
            [0.5, 3.0, 0.5],
            [0.5, 0.5, 3.0],
            [3.5, 0.5, 3.0],
            [3.5, 3.0, 3.0],
            [0.5, 3.0, 3.0],
        ];
        let quads = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [3, 7, 6, 2], [0, 4, 7, 3], [1, 2, 6, 5]];
        let mut t = Vec::new();
        for q in quads {
            t.push([q[0], q[1], q[2]]);
            t.push([q[0], q[2], q[3]]);
        }
        let mesh = TriangleMesh::new(v, t).unwrap();
        assert!(mesh.is_watertight());
        let out = voxelize_fill(&mesh, Grid::isotropic([5, 5, 5]).unwrap()).unwrap();
        for i in 0..out.data().len() {
            let p = out.grid().index3(i);
            let inside = (1..=3).contains(&p[0]) && (1..=2).contains(&p[1]) && (1..=2).contains(&p[2]);
            assert_eq!(out.data()[i] == 1, inside, "{p:?}");
        }
    }
}
