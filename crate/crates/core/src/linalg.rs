//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GsvsError, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Circularly-symmetric complex normal with unit variance, CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix of i.i.d. CN(0, 1) entries, filled column by column.
pub fn complex_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let mut m = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = complex_normal(rng);
        }
    }
    m
}

/// `k` Haar-distributed orthonormal columns in C^m (QR of a Gaussian matrix
/// with the phases of diag(R) absorbed into Q).
pub fn haar_columns<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> CMatrix {
    assert!(
        k <= m,
        "cannot draw {k} orthonormal columns in dimension {m}"
    );
    if k == 0 {
        return CMatrix::zeros(m, 0);
    }
    let g = complex_normal_matrix(m, k, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        let d = r[(j, j)];
        let norm = d.norm();
        if norm > 0.0 {
            let phase = d / norm;
            for i in 0..m {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let n = a.nrows();
    for i in 0..n {
        for j in i..n {
            if (a[(i, j)] - a[(j, i)].conj()).norm() > tol {
                return false;
            }
        }
    }
    true
}

/// Lower Cholesky factor `L` with `A = L L^H`, or `None` if `A` is not
/// numerically positive definite.
pub fn cholesky_lower(a: &CMatrix) -> Option<CMatrix> {
    let chol = a.clone().cholesky()?;
    let l = chol.l();
    let max_diag = (0..a.nrows()).map(|i| a[(i, i)].re).fold(0.0_f64, f64::max);
    let tiny = 1e-14 * max_diag.max(f64::MIN_POSITIVE);
    if (0..l.nrows()).any(|i| !(l[(i, i)].re * l[(i, i)].re > tiny)) {
        return None;
    }
    Some(l)
}

/// Factor `F` with `F F^H = A` for a Hermitian positive semidefinite `A`.
/// Tries Cholesky first and falls back to the eigen square root, clamping
/// small negative eigenvalues to zero.
pub fn psd_factor(a: &CMatrix) -> CMatrix {
    if let Some(l) = cholesky_lower(a) {
        return l;
    }
    let eig = a.clone().symmetric_eigen();
    let n = a.nrows();
    let mut f = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            f[(i, j)] *= s;
        }
    }
    f
}

/// Inverse of a lower-triangular matrix.
pub fn lower_inverse(l: &CMatrix) -> Result<CMatrix> {
    let n = l.nrows();
    let mut id = CMatrix::identity(n, n);
    if !l.solve_lower_triangular_mut(&mut id) {
        return Err(GsvsError::Decomposition(
            "singular triangular factor".into(),
        ));
    }
    Ok(id)
}

/// Singular values sorted in descending order.
pub fn singular_values_desc(a: &CMatrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Singular values, descending, from the eigenvalues of the smaller Gram
/// matrix. Much faster than a full SVD for the large noise draws used in
/// spectrum simulation; values far below the largest lose relative accuracy.
pub fn gram_singular_values(a: &CMatrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let t = if a.nrows() <= a.ncols() {
        a.clone()
    } else {
        a.adjoint()
    };
    let re: DMatrix<f64> = t.map(|z| z.re);
    let im: DMatrix<f64> = t.map(|z| z.im);
    let gr = &re * re.transpose() + &im * im.transpose();
    let gi = &im * re.transpose() - &re * im.transpose();
    let k = t.nrows();
    let g = CMatrix::from_fn(k, k, |i, j| C64::new(gr[(i, j)], gi[(i, j)]));
    let mut s: Vec<f64> = g
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Thin SVD `A = U diag(s) V^H` with `s` descending; returns `(U, s, V)`.
///
/// One-sided Jacobi on the narrower orientation. Columns of `U` belonging to
/// zero singular values are completed to an orthonormal set.
pub fn svd_desc(a: &CMatrix) -> Option<(CMatrix, Vec<f64>, CMatrix)> {
    let (m, n) = a.shape();
    if m.min(n) == 0 {
        return Some((CMatrix::zeros(m, 0), Vec::new(), CMatrix::zeros(n, 0)));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return None;
    }
    if n <= m {
        jacobi_svd(a)
    } else {
        let (u, s, v) = jacobi_svd(&a.adjoint())?;
        Some((v, s, u))
    }
}

const JACOBI_SWEEPS: usize = 80;

/// Tall or square case (`n <= m`).
fn jacobi_svd(a: &CMatrix) -> Option<(CMatrix, Vec<f64>, CMatrix)> {
    let (m, n) = a.shape();
    let mut g: Vec<Vec<C64>> = (0..n)
        .map(|j| a.column(j).iter().copied().collect())
        .collect();
    let mut v: Vec<Vec<C64>> = (0..n)
        .map(|j| {
            (0..n)
                .map(|i| {
                    if i == j {
                        C64::new(1.0, 0.0)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    let tol = 4.0 * f64::EPSILON;
    let mut converged = false;
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = g[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = g[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma: C64 = g[p].iter().zip(&g[q]).map(|(x, y)| x.conj() * y).sum();
                let gabs = gamma.norm();
                if gabs == 0.0 || gabs <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gabs);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                let ph = gamma / gabs;
                for cols in [&mut g, &mut v] {
                    let (lo, hi) = cols.split_at_mut(q);
                    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let yt = *y * ph.conj();
                        let xn = *x * c - yt * sn;
                        let yn = *x * sn + yt * c;
                        *x = xn;
                        *y = yn * ph;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    let norms: Vec<f64> = g
        .iter()
        .map(|col| col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let smax = norms[order[0]];
    let mut uu = CMatrix::zeros(m, n);
    let mut vv = CMatrix::zeros(n, n);
    let mut ss = Vec::with_capacity(n);
    let mut filled = 0;
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        ss.push(s);
        for i in 0..n {
            vv[(i, dst)] = v[src][i];
        }
        if s > smax * f64::EPSILON * m as f64 && s > 0.0 {
            for i in 0..m {
                uu[(i, dst)] = g[src][i] / s;
            }
            filled = dst + 1;
        }
    }
    complete_orthonormal(&mut uu, filled);
    Some((uu, ss, vv))
}

/// Replace columns `from..` with unit vectors orthogonal to all earlier ones.
fn complete_orthonormal(u: &mut CMatrix, from: usize) {
    let (m, k) = u.shape();
    let mut col = from;
    let mut e = 0;
    while col < k && e < m {
        let mut x = nalgebra::DVector::from_fn(m, |i, _| {
            if i == e {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        for _ in 0..2 {
            for j in 0..col {
                let uj = u.column(j);
                let proj = uj.dotc(&x);
                x -= uj * proj;
            }
        }
        let nx = x.norm();
        if nx > 1e-8 {
            u.set_column(col, &(x / C64::new(nx, 0.0)));
            col += 1;
        }
        e += 1;
    }
}

/// Eigenvalues of a real symmetric tridiagonal matrix (implicit QL with
/// Wilkinson-type shifts), returned in descending order.
///
/// `diag` has length n and `off` length n-1.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if off.len() + 1 != n {
        return Err(GsvsError::invalid("off-diagonal length must be n-1"));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(GsvsError::Decomposition(
                    "tridiagonal QL iteration did not converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0_f64, 1.0_f64, 0.0_f64);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| b.total_cmp(a));
    Ok(d)
}

pub fn frobenius_sq(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}
