//! Low-rank contour bases.
//!
//! Descriptors of a training corpus are stacked as the columns of an `N × L`
//! contour matrix `M`. The truncated SVD `M ≈ U_k U_kᵀ M` gives a rank-`k`
//! basis; an instance is then stored as `k` coefficients `C = U_kᵀ ρ`. The PCA
//! variant centers the columns on their mean `ν` first and reconstructs
//! `ρ ≈ μ C + ν`.

mod io;
mod svd;

pub use io::{read_basis, read_basis_from, write_basis, write_basis_to};
pub use svd::{thin_svd, ThinSvd};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::codec::{AngleGrid, ContourDescriptor};
use crate::error::{Error, Result};

pub const DEFAULT_RANK: usize = 200;

/// Descriptors as the columns of an `N × L` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourMatrix {
    data: DMatrix<f64>,
    grid: AngleGrid,
}

impl ContourMatrix {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn grid(&self) -> AngleGrid {
        self.grid
    }

    /// Number of descriptors `L`.
    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    /// Wraps raw columns; entries must be non-negative.
    pub fn from_columns(data: DMatrix<f64>, grid: AngleGrid) -> Result<Self> {
        if data.nrows() != grid.len() {
            return Err(Error::DimsMismatch(format!("{} rows for N = {}", data.nrows(), grid.len())));
        }
        if data.ncols() == 0 {
            return Err(Error::EmptySet("descriptors"));
        }
        if data.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("contour matrix entries must be finite and non-negative"));
        }
        Ok(ContourMatrix { data, grid })
    }
}

pub fn build_matrix(descriptors: &[ContourDescriptor]) -> Result<ContourMatrix> {
    let grid = descriptors.first().ok_or(Error::EmptySet("descriptors"))?.grid;
    if descriptors.iter().any(|d| d.grid != grid) {
        return Err(Error::invalid("descriptors use different angle grids"));
    }
    let n = grid.len();
    let data = DMatrix::from_fn(n, descriptors.len(), |i, j| descriptors[j].rho[i]);
    ContourMatrix::from_columns(data, grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Svd,
    Pca,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(Method::Svd),
            "pca" => Ok(Method::Pca),
            _ => Err(Error::invalid(format!("unknown basis method {s:?}"))),
        }
    }
}

/// A rank-`k` basis with the full singular spectrum it was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourBasis {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    grid: AngleGrid,
    method: Method,
    mean: Option<Vec<f64>>,
}

impl ContourBasis {
    /// Checks the structural invariants.
    pub fn new(u: DMatrix<f64>, sigma: Vec<f64>, grid: AngleGrid, method: Method, mean: Option<Vec<f64>>) -> Result<Self> {
        let n = grid.len();
        if u.nrows() != n {
            return Err(Error::DimsMismatch(format!("basis has {} rows for N = {n}", u.nrows())));
        }
        if u.ncols() == 0 || u.ncols() > sigma.len() || sigma.len() > n {
            return Err(Error::invalid(format!(
                "rank {} incompatible with {} singular values",
                u.ncols(),
                sigma.len()
            )));
        }
        if sigma.iter().any(|s| s.is_nan() || *s < 0.0) || sigma.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("singular values must be non-negative and non-increasing"));
        }
        match (method, &mean) {
            (Method::Svd, None) => {}
            (Method::Pca, Some(m)) if m.len() == n => {}
            _ => return Err(Error::invalid("a mean shape is required for pca and forbidden for svd")),
        }
        Ok(ContourBasis { u, sigma, grid, method, mean })
    }

    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn grid(&self) -> AngleGrid {
        self.grid
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    /// Largest available rank, `min(N, L)`.
    pub fn full_rank(&self) -> usize {
        self.sigma.len()
    }

    /// The nested sub-basis made of the first `k` columns.
    pub fn truncate(&self, k: usize) -> Result<ContourBasis> {
        if k == 0 || k > self.k() {
            return Err(Error::invalid(format!("rank {k} outside 1..={}", self.k())));
        }
        Ok(ContourBasis {
            u: self.u.columns(0, k).into_owned(),
            sigma: self.sigma.clone(),
            grid: self.grid,
            method: self.method,
            mean: self.mean.clone(),
        })
    }
}

/// `k × L` coefficients, one column per instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    pub c: DMatrix<f64>,
}

impl Coefficients {
    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    pub fn count(&self) -> usize {
        self.c.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.c.column(j).iter().copied().collect()
    }

    pub fn from_vec(c: Vec<f64>) -> Self {
        let k = c.len();
        Coefficients { c: DMatrix::from_vec(k, 1, c) }
    }
}

fn check_rank(k: usize, m: &ContourMatrix) -> Result<()> {
    let full = m.grid.len().min(m.count());
    if k == 0 || k > full {
        return Err(Error::invalid(format!("rank {k} outside 1..={full}")));
    }
    Ok(())
}

/// Rank-`k` SVD basis of the raw (uncentered) matrix.
pub fn fit_svd(m: &ContourMatrix, k: usize) -> Result<ContourBasis> {
    check_rank(k, m)?;
    let svd = thin_svd(&m.data)?;
    ContourBasis::new(svd.u.columns(0, k).into_owned(), svd.s, m.grid, Method::Svd, None)
}

/// Rank-`k` PCA basis: SVD of the matrix with its column mean removed.
pub fn fit_pca(m: &ContourMatrix, k: usize) -> Result<ContourBasis> {
    if m.count() < 2 {
        return Err(Error::invalid("pca needs at least two descriptors"));
    }
    check_rank(k, m)?;
    let mean = row_mean(&m.data);
    let centered = DMatrix::from_fn(m.data.nrows(), m.count(), |i, j| m.data[(i, j)] - mean[i]);
    let svd = thin_svd(&centered)?;
    ContourBasis::new(svd.u.columns(0, k).into_owned(), svd.s, m.grid, Method::Pca, Some(mean))
}

fn row_mean(a: &DMatrix<f64>) -> Vec<f64> {
    let l = a.ncols() as f64;
    a.row_iter().map(|r| r.iter().sum::<f64>() / l).collect()
}

fn centered_columns(basis: &ContourBasis, m: &DMatrix<f64>) -> DMatrix<f64> {
    match &basis.mean {
        Some(mu) => DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mu[i]),
        None => m.clone(),
    }
}

pub fn project_matrix(basis: &ContourBasis, m: &ContourMatrix) -> Result<Coefficients> {
    if m.grid != basis.grid {
        return Err(Error::DimsMismatch("matrix and basis use different angle grids".into()));
    }
    Ok(Coefficients { c: basis.u.transpose() * centered_columns(basis, &m.data) })
}

pub fn project(basis: &ContourBasis, d: &ContourDescriptor) -> Result<Coefficients> {
    if d.grid != basis.grid {
        return Err(Error::DimsMismatch("descriptor and basis use different angle grids".into()));
    }
    let col = DMatrix::from_column_slice(d.rho.len(), 1, &d.rho);
    Ok(Coefficients { c: basis.u.transpose() * centered_columns(basis, &col) })
}

/// Radii from one coefficient vector, negatives clamped to zero.
pub fn reconstruct_rho(basis: &ContourBasis, c: &[f64]) -> Result<Vec<f64>> {
    if c.len() != basis.k() {
        return Err(Error::DimsMismatch(format!("{} coefficients for rank {}", c.len(), basis.k())));
    }
    let mut rho: Vec<f64> = (&basis.u * DVector::from_column_slice(c)).iter().copied().collect();
    if let Some(mu) = &basis.mean {
        rho.iter_mut().zip(mu).for_each(|(r, m)| *r += m);
    }
    rho.iter_mut().for_each(|r| *r = r.max(0.0));
    Ok(rho)
}

/// Descriptor for column `j` of `coeffs`, placed at `center`.
pub fn reconstruct(basis: &ContourBasis, coeffs: &Coefficients, j: usize, center: [f64; 3]) -> Result<ContourDescriptor> {
    if j >= coeffs.count() {
        return Err(Error::invalid(format!("column {j} out of range")));
    }
    let rho = reconstruct_rho(basis, &coeffs.column(j))?;
    ContourDescriptor::new(rho, basis.grid, center)
}

/// Squared Frobenius residual `‖M − U_k U_kᵀ M‖²` (centered for pca).
pub fn residual_energy(basis: &ContourBasis, m: &ContourMatrix) -> Result<f64> {
    let c = project_matrix(basis, m)?;
    let centered = centered_columns(basis, &m.data);
    let r = centered - &basis.u * c.c;
    Ok(r.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::AxisConvention;
    use rand::{Rng, SeedableRng};

    fn grid() -> AngleGrid {
        AngleGrid::new(30, AxisConvention::ZUp).unwrap()
    }

    fn random_matrix(l: usize, seed: u64) -> ContourMatrix {
        let mut rng = rand_xoshiro::SplitMix64::seed_from_u64(seed);
        let n = grid().len();
        ContourMatrix::from_columns(DMatrix::from_fn(n, l, |_, _| rng.random_range(0.0..10.0)), grid()).unwrap()
    }

    fn desc(rho: Vec<f64>) -> ContourDescriptor {
        ContourDescriptor::new(rho, grid(), [0.0; 3]).unwrap()
    }

    #[test]
    fn build_matrix_columns_are_descriptors() {
        let n = grid().len();
        let ds: Vec<_> = (0..4).map(|j| desc((0..n).map(|i| (i * j) as f64).collect())).collect();
        let m = build_matrix(&ds).unwrap();
        assert_eq!(m.data().shape(), (n, 4));
        for (j, d) in ds.iter().enumerate() {
            assert_eq!(m.data().column(j).iter().copied().collect::<Vec<_>>(), d.rho);
        }
        let single = build_matrix(&ds[..1]).unwrap();
        assert_eq!(single.data().shape(), (n, 1));
    }

    #[test]
    fn build_matrix_rejects_mixed_grids() {
        let other = AngleGrid::new(30, AxisConvention::XUp).unwrap();
        let a = desc(vec![1.0; grid().len()]);
        let b = ContourDescriptor::new(vec![1.0; other.len()], other, [0.0; 3]).unwrap();
        assert!(matches!(build_matrix(&[a, b]), Err(Error::InvalidInput(_))));
        assert!(build_matrix(&[]).is_err());
    }

    #[test]
    fn identical_descriptors_are_rank_one() {
        let d = desc((0..grid().len()).map(|i| 1.0 + (i % 7) as f64).collect());
        let m = build_matrix(&[d.clone(), d.clone(), d]).unwrap();
        let b = fit_svd(&m, 3).unwrap();
        assert!(b.sigma()[0] > 1.0);
        assert!(b.sigma()[1] < 1e-10 && b.sigma()[2] < 1e-10);
        assert!(residual_energy(&b.truncate(1).unwrap(), &m).unwrap() < 1e-16 * b.sigma()[0].powi(2));
    }

    #[test]
    fn rank_one_outer_product() {
        let n = grid().len();
        let u: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).sin().abs()).collect();
        let v = [0.5, 2.0, 1.0, 3.0];
        let m = ContourMatrix::from_columns(DMatrix::from_fn(n, 4, |i, j| u[i] * v[j]), grid()).unwrap();
        let b = fit_svd(&m, 1).unwrap();
        assert!(residual_energy(&b, &m).unwrap().sqrt() < 1e-8);
    }

    #[test]
    fn residual_equals_tail_energy() {
        let m = random_matrix(12, 3);
        let full = fit_svd(&m, 12).unwrap();
        let total: f64 = m.data().norm_squared();
        assert!((full.sigma().iter().map(|s| s * s).sum::<f64>() - total).abs() < 1e-9 * total);
        for k in [1, 4, 8, 12] {
            let b = full.truncate(k).unwrap();
            let tail: f64 = full.sigma()[k..].iter().map(|s| s * s).sum();
            let res = residual_energy(&b, &m).unwrap();
            assert!((res - tail).abs() <= 1e-9 * total, "k={k}: {res} vs {tail}");
        }
    }

    #[test]
    fn fit_matches_nested_truncation() {
        let m = random_matrix(9, 5);
        let a = fit_svd(&m, 4).unwrap();
        let b = fit_svd(&m, 9).unwrap().truncate(4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn basis_is_orthonormal_and_error_is_monotone_in_k() {
        let m = random_matrix(10, 8);
        let full = fit_svd(&m, 10).unwrap();
        let eye = DMatrix::<f64>::identity(10, 10);
        assert!((full.u().transpose() * full.u() - eye).amax() < 1e-8);
        let mut prev = f64::INFINITY;
        for k in 1..=10 {
            let e = residual_energy(&full.truncate(k).unwrap(), &m).unwrap();
            assert!(e <= prev + 1e-9);
            prev = e;
        }
        assert!(prev < 1e-8 * m.data().norm_squared());
    }

    #[test]
    fn full_rank_round_trip_and_projection_identity() {
        let m = random_matrix(6, 9);
        let b = fit_svd(&m, 6).unwrap();
        let coeffs = project_matrix(&b, &m).unwrap();
        for j in 0..6 {
            let d = reconstruct(&b, &coeffs, j, [1.0, 2.0, 3.0]).unwrap();
            for (x, y) in d.rho.iter().zip(m.data().column(j).iter()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
        // C = Σ Vᵀ row by row.
        let svd = thin_svd(m.data()).unwrap();
        for i in 0..6 {
            let sign = if svd.u.column(i).dot(&b.u().column(i)) < 0.0 { -1.0 } else { 1.0 };
            for j in 0..6 {
                let want = sign * svd.s[i] * svd.v[(j, i)];
                assert!((coeffs.c[(i, j)] - want).abs() < 1e-9 * svd.s[0]);
            }
        }
    }

    #[test]
    fn orthogonal_descriptor_projects_to_zero() {
        let m = random_matrix(3, 10);
        let b = fit_svd(&m, 2).unwrap();
        let mut w = DVector::from_fn(grid().len(), |i, _| ((i * 31) % 11) as f64);
        w -= b.u() * (b.u().transpose() * &w);
        let c = b.u().transpose() * &w;
        assert!(c.amax() < 1e-9);
    }

    #[test]
    fn zero_coefficients_reconstruct_to_zero_or_mean() {
        let m = random_matrix(5, 11);
        let s = fit_svd(&m, 3).unwrap();
        assert!(reconstruct_rho(&s, &[0.0; 3]).unwrap().iter().all(|&r| r == 0.0));
        let p = fit_pca(&m, 3).unwrap();
        assert_eq!(reconstruct_rho(&p, &[0.0; 3]).unwrap(), p.mean().unwrap());
    }

    #[test]
    fn reconstruction_clamps_negative_radii() {
        let m = random_matrix(4, 12);
        let b = fit_svd(&m, 2).unwrap();
        let rho = reconstruct_rho(&b, &[-1e3, 0.0]).unwrap();
        assert!(rho.iter().all(|&r| r >= 0.0));
        assert!(rho.contains(&0.0));
    }

    #[test]
    fn pca_of_identical_columns() {
        let d = desc((0..grid().len()).map(|i| 2.0 + (i % 5) as f64).collect());
        let m = build_matrix(&[d.clone(), d.clone(), d.clone()]).unwrap();
        let p = fit_pca(&m, 2).unwrap();
        assert_eq!(p.mean().unwrap(), &d.rho[..]);
        assert!(p.sigma().iter().all(|&s| s < 1e-9));
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((p.u().transpose() * p.u() - eye).amax() < 1e-8);
    }

    #[test]
    fn pca_of_two_columns_spans_difference() {
        let n = grid().len();
        let a: Vec<f64> = (0..n).map(|i| 5.0 + (i % 3) as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 4.0 + (i % 4) as f64).collect();
        let m = build_matrix(&[desc(a.clone()), desc(b.clone())]).unwrap();
        let p = fit_pca(&m, 1).unwrap();
        let diff = DVector::from_fn(n, |i, _| a[i] - b[i]);
        let cos = p.u().column(0).dot(&diff).abs() / diff.norm();
        assert!((cos - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pca_matches_covariance_eigendecomposition() {
        let m = random_matrix(8, 13);
        let p = fit_pca(&m, 5).unwrap();
        let mean = p.mean().unwrap();
        let x = DMatrix::from_fn(m.data().nrows(), 8, |i, j| m.data()[(i, j)] - mean[i]);
        // Eigen-decomposition of the small Gram matrix XᵀX shares the
        // nonzero spectrum with the covariance XXᵀ.
        let eig = (x.transpose() * &x).symmetric_eigen();
        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (r, &idx) in order.iter().take(5).enumerate() {
            let lam = eig.eigenvalues[idx];
            assert!((p.sigma()[r].powi(2) - lam).abs() < 1e-8 * eig.eigenvalues.amax());
            let u = &x * eig.eigenvectors.column(idx) / lam.sqrt();
            let cos = u.dot(&p.u().column(r)).abs();
            assert!((cos - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_and_grid_errors() {
        let m = random_matrix(4, 14);
        assert!(fit_svd(&m, 0).is_err());
        assert!(fit_svd(&m, 5).is_err());
        assert!(fit_pca(&random_matrix(1, 1), 1).is_err());
        let b = fit_svd(&m, 2).unwrap();
        let other = AngleGrid::new(30, AxisConvention::YUp).unwrap();
        let d = ContourDescriptor::new(vec![1.0; other.len()], other, [0.0; 3]).unwrap();
        assert!(matches!(project(&b, &d), Err(Error::DimsMismatch(_))));
        assert!(reconstruct_rho(&b, &[1.0]).is_err());
    }
}
