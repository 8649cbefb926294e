//! From descriptors back to voxel masks.
//!
//! A descriptor defines the radial function `f(v) = ρ(bin(v − c)) − |v − c|`,
//! positive inside the shape. Thresholding it at zero is the direct
//! reconstruction ([`radial_fill`]). The mesh path extracts a level set with
//! marching cubes and voxelizes the closed mesh by ray parity
//! ([`mesh_fill`]); the two agree up to the iso offset.

mod mc;
mod mesh;
mod voxelize;

pub use mc::marching_cubes;
pub use mesh::{icosphere, TriangleMesh};
pub use voxelize::voxelize_fill;

use rayon::prelude::*;

use crate::codec::ContourDescriptor;
use crate::error::{Error, Result};
use crate::volume::{Field, Grid, LabelVolume};

/// Iso offset used by the mesh path, as a fraction of the smallest spacing.
/// The radial field is exactly zero at encoded boundary voxels, which are
/// also cube corners; a slightly negative iso keeps the surface off them.
pub const ISO_FRACTION: f64 = 0.01;

/// Slack on the fill threshold, relative to the smallest spacing.
pub const FILL_TOLERANCE: f64 = 1e-6;

pub fn mesh_iso(grid: &Grid) -> f64 {
    -ISO_FRACTION * grid.min_spacing()
}

/// Radial difference field over `grid`. At the center itself, where no
/// direction is defined, the field takes the smallest radius.
pub fn radial_field(d: &ContourDescriptor, grid: Grid) -> Result<Field> {
    let c = d.center;
    let extent = [0, 1, 2].map(|a| (grid.dims[a] - 1) as f64 * grid.spacing[a]);
    if (0..3).any(|a| !(c[a] >= 0.0 && c[a] <= extent[a])) {
        return Err(Error::invalid(format!("descriptor center {c:?} outside the grid")));
    }
    let rho_min = d.rho.iter().copied().fold(f64::INFINITY, f64::min);
    let data: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = grid.to_mm(grid.index3(i));
            let v = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            match d.grid.bin_of(v) {
                Some(b) => d.rho[b] - r,
                None => rho_min,
            }
        })
        .collect();
    Field::from_vec(grid, data)
}

/// Voxels with `|v − c| ≤ ρ(bin(v))`.
pub fn radial_fill(d: &ContourDescriptor, grid: Grid) -> Result<LabelVolume> {
    // Encoded radii are exact voxel distances, so surface voxels sit on the
    // threshold; the tolerance keeps them through basis round-off.
    let tol = FILL_TOLERANCE * grid.min_spacing();
    Ok(radial_field(d, grid)?.map(|f| u16::from(f >= -tol)))
}

/// Marching cubes at [`mesh_iso`] followed by parity voxelization.
pub fn mesh_fill(d: &ContourDescriptor, grid: Grid) -> Result<(LabelVolume, TriangleMesh)> {
    let field = radial_field(d, grid)?;
    let mesh = marching_cubes(&field, mesh_iso(&grid));
    let filled = voxelize_fill(&mesh, grid)?;
    Ok((filled, mesh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode, AngleGrid};
    use crate::volume::surface;
    use proptest::prelude::*;

    fn ball(n: usize, r: f64, c: [f64; 3]) -> LabelVolume {
        LabelVolume::from_fn(Grid::isotropic([n; 3]).unwrap(), |p| {
            u16::from((0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum::<f64>() <= r * r)
        })
    }

    fn dice(a: &LabelVolume, b: &LabelVolume) -> f64 {
        let inter = a.data().iter().zip(b.data()).filter(|(x, y)| **x == 1 && **y == 1).count();
        2.0 * inter as f64 / (a.count_nonzero() + b.count_nonzero()) as f64
    }

    fn constant(rho: f64, c: [f64; 3]) -> ContourDescriptor {
        let g = AngleGrid::default();
        ContourDescriptor::new(vec![rho; g.len()], g, c).unwrap()
    }

    #[test]
    fn constant_descriptor_fills_digital_ball() {
        let c = [12.0, 11.0, 13.0];
        let fill = radial_fill(&constant(7.0, c), Grid::isotropic([25; 3]).unwrap()).unwrap();
        assert_eq!(fill, ball(25, 7.0, c));
    }

    #[test]
    fn field_sign_and_center() {
        let c = [10.0; 3];
        let f = radial_field(&constant(6.0, c), Grid::isotropic([21; 3]).unwrap()).unwrap();
        assert_eq!(f.get([10, 10, 10]), 6.0);
        assert_eq!(f.get([10, 10, 16]), 0.0);
        assert!(f.get([10, 10, 17]) < 0.0);
    }

    #[test]
    fn field_sign_matches_binned_ray_oracle() {
        use rand::{Rng, SeedableRng};
        let m = ball(31, 10.0, [15.0, 14.0, 16.0]);
        let g = AngleGrid::new(10, crate::codec::AxisConvention::ZUp).unwrap();
        let d = encode(&surface(&m).unwrap(), [15.0, 14.0, 16.0], g, [1.0; 3]).unwrap();
        let f = radial_field(&d, *m.grid()).unwrap();
        let mut rng = rand_xoshiro::SplitMix64::seed_from_u64(2);
        for _ in 0..1000 {
            let p = [0, 1, 2].map(|_| rng.random_range(0..31usize));
            let v = [p[0] as f64 - 15.0, p[1] as f64 - 14.0, p[2] as f64 - 16.0];
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if r == 0.0 {
                continue;
            }
            let theta = v[1].atan2(v[0]).to_degrees().rem_euclid(360.0);
            let phi = (v[2] / r).acos().to_degrees();
            let i = ((theta / 10.0 + 0.5).floor() as usize) % 36;
            let j = ((phi / 10.0 + 0.5).floor() as usize).min(18);
            let inside = r <= d.rho[i * 19 + j];
            assert_eq!(f.get(p) >= 0.0, inside, "{p:?}");
        }
    }

    #[test]
    fn center_outside_grid_errors() {
        let g = Grid::isotropic([5, 5, 5]).unwrap();
        assert!(matches!(radial_field(&constant(1.0, [5.0, 2.0, 2.0]), g), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ball_round_trip_through_both_paths() {
        let c = [15.0; 3];
        let m = ball(31, 10.0, c);
        let d = encode(&surface(&m).unwrap(), c, AngleGrid::default(), [1.0; 3]).unwrap();
        let direct = radial_fill(&d, *m.grid()).unwrap();
        assert!(dice(&direct, &m) >= 0.97);
        let (meshed, mesh) = mesh_fill(&d, *m.grid()).unwrap();
        assert!(mesh.is_watertight());
        assert!(dice(&meshed, &direct) >= 0.97);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn radial_fill_is_monotone(seed in 0u64..1000, bump in 0.0f64..3.0) {
            use rand::{Rng, SeedableRng};
            let g = AngleGrid::new(15, crate::codec::AxisConvention::ZUp).unwrap();
            let mut rng = rand_xoshiro::SplitMix64::seed_from_u64(seed);
            let lo: Vec<f64> = (0..g.len()).map(|_| rng.random_range(2.0..7.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|r| r + rng.random_range(0.0..bump + 1e-9)).collect();
            let grid = Grid::isotropic([19; 3]).unwrap();
            let a = radial_fill(&ContourDescriptor::new(lo, g, [9.0; 3]).unwrap(), grid).unwrap();
            let b = radial_fill(&ContourDescriptor::new(hi, g, [9.0; 3]).unwrap(), grid).unwrap();
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x <= y));
        }
    }
}
