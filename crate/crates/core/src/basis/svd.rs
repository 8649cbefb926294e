//! Thin SVD by Householder QR followed by one-sided (Hestenes) Jacobi on the
//! small triangular factor.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `a = u * diag(s) * vᵀ` with `r = min(m, n)` columns in `u` and `v`,
/// singular values non-increasing. `u` and `v` always have orthonormal
/// columns, including directions with zero singular value.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

const MAX_SWEEPS: usize = 60;

pub fn thin_svd(a: &DMatrix<f64>) -> Result<ThinSvd> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::invalid("cannot decompose an empty matrix"));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    if a.nrows() >= a.ncols() {
        tall_svd(a)
    } else {
        let t = tall_svd(&a.transpose())?;
        Ok(ThinSvd { u: t.v, s: t.s, v: t.u })
    }
}

fn tall_svd(a: &DMatrix<f64>) -> Result<ThinSvd> {
    let n = a.ncols();
    let (q, r) = householder_qr(a);
    let (ur, s, v) = jacobi_square(&r)?;
    Ok(ThinSvd { u: &q * ur, s, v: v.columns(0, n).into_owned() })
}

/// Returns `q` (m×n, orthonormal columns) and upper-triangular `r` (n×n).
fn householder_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let x: Vec<f64> = (j..m).map(|i| w[(i, j)]).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = x;
        if norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vn == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        v.iter_mut().for_each(|t| *t /= vn);
        for c in j..n {
            let mut col = w.column_mut(c);
            let dot: f64 = (j..m).map(|i| v[i - j] * col[i]).sum();
            for i in j..m {
                col[i] -= 2.0 * dot * v[i - j];
            }
        }
        reflectors.push(v);
    }
    let mut r = DMatrix::zeros(n, n);
    for c in 0..n {
        for i in 0..=c {
            r[(i, c)] = w[(i, c)];
        }
    }
    let mut q = DMatrix::zeros(m, n);
    for c in 0..n {
        q[(c, c)] = 1.0;
    }
    for j in (0..n).rev() {
        let v = &reflectors[j];
        if v.is_empty() {
            continue;
        }
        for c in 0..n {
            let mut col = q.column_mut(c);
            let dot: f64 = (j..m).map(|i| v[i - j] * col[i]).sum();
            if dot != 0.0 {
                for i in j..m {
                    col[i] -= 2.0 * dot * v[i - j];
                }
            }
        }
    }
    (q, r)
}

/// One-sided Jacobi on a square matrix. Returns `(u, s, v)` with columns
/// sorted by decreasing singular value.
fn jacobi_square(r: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let n = r.ncols();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| r.column(c).iter().copied().collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();
    let eps = f64::EPSILON;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (a, b) = (&cols[p], &cols[q]);
                    let mut s = (0.0, 0.0, 0.0);
                    for i in 0..n {
                        s.0 += a[i] * a[i];
                        s.1 += b[i] * b[i];
                        s.2 += a[i] * b[i];
                    }
                    s
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!("Jacobi SVD did not converge in {MAX_SWEEPS} sweeps")));
    }

    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let smax = norms[order[0]];
    let tiny = smax * n as f64 * eps;

    let mut u = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut rank = 0;
    for (k, &j) in order.iter().enumerate() {
        let sv = norms[j];
        if sv > tiny && sv > 0.0 {
            for i in 0..n {
                u[(i, k)] = cols[j][i] / sv;
            }
            rank = k + 1;
        }
        for i in 0..n {
            v[(i, k)] = vcols[j][i];
        }
        s.push(if sv > tiny { sv } else { 0.0 });
    }
    complete_orthonormal(&mut u, rank);
    Ok((u, s, v))
}

#[inline]
fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (a, b) = (&mut lo[p], &mut hi[0]);
    for i in 0..a.len() {
        let (x, y) = (a[i], b[i]);
        a[i] = c * x - s * y;
        b[i] = s * x + c * y;
    }
}

/// Fills columns `rank..` of `u` with unit vectors orthogonal to all earlier
/// columns (Gram–Schmidt twice over the standard basis).
fn complete_orthonormal(u: &mut DMatrix<f64>, rank: usize) {
    let n = u.nrows();
    let mut k = rank;
    let mut e = 0;
    while k < u.ncols() && e < n {
        let mut w = vec![0.0; n];
        w[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for c in 0..k {
                let dot: f64 = (0..n).map(|i| u[(i, c)] * w[i]).sum();
                for i in 0..n {
                    w[i] -= dot * u[(i, c)];
                }
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for i in 0..n {
                u[(i, k)] = w[i] / norm;
            }
            k += 1;
        }
    }
}
