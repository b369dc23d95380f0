//! Sparse kernels (SpMV, conjugate gradients) and extreme-eigenvalue
//! estimation for SPD operators, plus the reference-element condition bound.

use rand::{Rng, SeedableRng};

use crate::dense::{axpy, dot, norm2};
use crate::error::{Error, Result};
use crate::femcore::ReferenceElement;
use crate::meshkit::MeshMetrics;
use crate::sparse::SparseMatrix;

/// Extreme eigenvalues of an SPD matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    pub method_tol: f64,
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: x.len() });
    }
    Ok(a.mul(x))
}

/// Solves `A x = b` for SPD `A` from a zero initial guess until
/// `‖r‖ ≤ tol ‖b‖`.
pub fn cg_solve(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    cg_solve_from(a, b, None, tol, max_iter).map(|s| s.x)
}

/// Conjugate gradients with an optional initial guess.
pub fn cg_solve_from(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CgSolution> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgSolution { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let mut x = match x0 {
        Some(g) if g.len() == n => g.to_vec(),
        Some(g) => return Err(Error::DimensionMismatch { expected: n, got: g.len() }),
        None => vec![0.0; n],
    };
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = a.mul(&x);
        for (ri, axi) in r.iter_mut().zip(&ax) {
            *ri -= axi;
        }
    }
    let mut rr = dot(&r, &r);
    let target = tol * b_norm;
    if rr.sqrt() <= target {
        return Ok(CgSolution { x, iterations: 0, relative_residual: rr.sqrt() / b_norm });
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::MaxIterExceeded { iterations: it, residual: rr.sqrt() / b_norm });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            return Ok(CgSolution { x, iterations: it, relative_residual: rr_new.sqrt() / b_norm });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    Err(Error::MaxIterExceeded { iterations: max_iter, residual: rr.sqrt() / b_norm })
}

/// Largest number of Lanczos vectors kept for reorthogonalisation.
const LANCZOS_MAX_STEPS: usize = 2000;

/// λ_min and λ_max of an SPD matrix by Lanczos with full
/// reorthogonalisation. Both Ritz pairs are accepted once their residual
/// `|β_k s_k|` falls below `tol · θ`.
pub fn extreme_eigs(a: &SparseMatrix, tol: f64) -> Result<SpectralSummary> {
    let n = a.dim();
    if n == 0 {
        return Err(Error::EigFailed("empty matrix".into()));
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed_1a2c);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let max_steps = n.min(LANCZOS_MAX_STEPS);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_steps.min(256));
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut anorm = 0.0f64;
    let check_every = 5;

    for k in 0..max_steps {
        a.mul_into(&v, &mut w);
        let ak = dot(&w, &v);
        axpy(-ak, &v, &mut w);
        if let Some(prev) = basis.last() {
            axpy(-beta[k - 1], prev, &mut w);
        }
        basis.push(v.clone());
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                axpy(-c, q, &mut w);
            }
        }
        alpha.push(ak);
        let bk = norm2(&w);
        anorm = anorm.max(ak.abs() + bk + beta.last().copied().unwrap_or(0.0));
        let breakdown = bk <= 1e-13 * anorm;
        let last = breakdown || k + 1 == max_steps;
        if last || (k + 1) % check_every == 0 {
            let (tmin, tmax) = tridiag_extremes(&alpha, &beta);
            let res_min = bk * tridiag_last_component(&alpha, &beta, tmin).abs();
            let res_max = bk * tridiag_last_component(&alpha, &beta, tmax).abs();
            let converged = breakdown || (res_min <= tol * tmin.abs() && res_max <= tol * tmax.abs());
            if converged {
                if !(tmin > 0.0) {
                    return Err(Error::EigFailed(format!("matrix is not positive definite (λ_min ≈ {tmin:e})")));
                }
                return Ok(SpectralSummary {
                    lambda_min: tmin,
                    lambda_max: tmax,
                    kappa: tmax / tmin,
                    method_tol: tol,
                });
            }
            if last {
                return Err(Error::EigFailed(format!(
                    "Lanczos not converged after {} steps (residuals {res_min:e}, {res_max:e})",
                    k + 1
                )));
            }
        }
        beta.push(bk);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / bk;
        }
    }
    unreachable!("loop returns on its final step")
}

/// Number of eigenvalues of the symmetric tridiagonal matrix below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0f64;
    for i in 0..alpha.len() {
        let b2 = if i == 0 { 0.0 } else { beta[i - 1] * beta[i - 1] };
        q = alpha[i] - x - if i == 0 { 0.0 } else { b2 / q };
        if q == 0.0 {
            q = -f64::EPSILON * (alpha[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest and largest eigenvalue of the tridiagonal `(alpha, beta)` by bisection.
fn tridiag_extremes(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let k = alpha.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..k {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 } + if i + 1 < k { beta[i].abs() } else { 0.0 };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    let bisect = |index: usize| {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if sturm_count(alpha, beta, mid) > index {
                b = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (a + b)
    };
    (bisect(0), bisect(k - 1))
}

/// Last component of the unit eigenvector of the tridiagonal for eigenvalue
/// `theta`, by two steps of inverse iteration.
fn tridiag_last_component(alpha: &[f64], beta: &[f64], theta: f64) -> f64 {
    let k = alpha.len();
    if k == 1 {
        return 1.0;
    }
    let scale = alpha.iter().map(|a| a.abs()).fold(0.0, f64::max)
        + beta.iter().map(|b| b.abs()).fold(0.0, f64::max);
    let mut x = vec![1.0; k];
    for _ in 0..3 {
        x = tridiag_shifted_solve(alpha, beta, theta, &x, scale);
        let nx = norm2(&x);
        if !(nx.is_finite() && nx > 0.0) {
            return 1.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
    }
    x[k - 1]
}

/// Solves `(T − θ I) x = rhs` by Gaussian elimination with partial pivoting;
/// tiny pivots are replaced by `ε · scale`.
fn tridiag_shifted_solve(alpha: &[f64], beta: &[f64], theta: f64, rhs: &[f64], scale: f64) -> Vec<f64> {
    let k = alpha.len();
    // rows stored as (diag, super1, super2) after pivoting
    let mut d: Vec<f64> = alpha.iter().map(|a| a - theta).collect();
    let mut u1: Vec<f64> = (0..k).map(|i| if i + 1 < k { beta[i] } else { 0.0 }).collect();
    let mut u2 = vec![0.0; k];
    let mut l: Vec<f64> = (0..k).map(|i| if i > 0 { beta[i - 1] } else { 0.0 }).collect();
    let mut b = rhs.to_vec();
    let tiny = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    for i in 0..k - 1 {
        // candidate pivot rows: i (d[i], u1[i], u2[i]) and i+1 (l[i+1], d[i+1], u1[i+1])
        if l[i + 1].abs() > d[i].abs() {
            let (a0, a1, a2) = (l[i + 1], d[i + 1], u1[i + 1]);
            let (c0, c1, c2) = (d[i], u1[i], u2[i]);
            d[i] = a0;
            u1[i] = a1;
            u2[i] = a2;
            l[i + 1] = c0;
            d[i + 1] = c1;
            u1[i + 1] = c2;
            b.swap(i, i + 1);
        }
        if d[i].abs() < tiny {
            d[i] = tiny;
        }
        let f = l[i + 1] / d[i];
        d[i + 1] -= f * u1[i];
        u1[i + 1] -= f * u2[i];
        b[i + 1] -= f * b[i];
    }
    if d[k - 1].abs() < tiny {
        d[k - 1] = tiny;
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = b[i];
        if i + 1 < k {
            s -= u1[i] * x[i + 1];
        }
        if i + 2 < k {
            s -= u2[i] * x[i + 2];
        }
        x[i] = s / d[i];
    }
    x
}

/// Envelope (skyline) Cholesky factorisation `P A Pᵀ = L Lᵀ` under a reverse
/// Cuthill–McKee ordering. Used for operators that are solved against many
/// times, such as the Dirichlet stiffness of the control problem.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    perm: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    row_start: Vec<usize>,
    values: Vec<f64>,
}

/// Reverse Cuthill–McKee ordering of the sparsity graph of `a`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|(j, _)| *j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]).unwrap();
        visited[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nbrs: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                order.push(j);
            }
        }
    }
    order.reverse();
    order
}

impl SkylineCholesky {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let first: Vec<usize> = (0..n)
            .map(|i| a.row(perm[i]).map(|(j, _)| inv[j]).filter(|&j| j <= i).min().unwrap_or(i))
            .collect();
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0);
        for i in 0..n {
            row_start.push(row_start[i] + (i - first[i] + 1));
        }
        let mut values = vec![0.0; row_start[n]];
        for i in 0..n {
            for (j, v) in a.row(perm[i]) {
                let jj = inv[j];
                if jj <= i {
                    values[row_start[i] + jj - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let (fi, si) = (first[i], row_start[i]);
            for j in fi..=i {
                let (fj, sj) = (first[j], row_start[j]);
                let k0 = fi.max(fj);
                let mut acc = values[si + j - fi];
                for k in k0..j {
                    acc -= values[si + k - fi] * values[sj + k - fj];
                }
                if j < i {
                    values[si + j - fi] = acc / values[sj + j - fj];
                } else {
                    if !(acc > 0.0) {
                        return Err(Error::EigFailed(format!("matrix is not positive definite (pivot {i})")));
                    }
                    values[si + i - fi] = acc.sqrt();
                }
            }
        }
        Ok(SkylineCholesky { perm, first, row_start, values })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let (fi, si) = (self.first[i], self.row_start[i]);
            let mut acc = y[i];
            for k in fi..i {
                acc -= self.values[si + k - fi] * y[k];
            }
            y[i] = acc / self.values[si + i - fi];
        }
        for i in (0..n).rev() {
            let (fi, si) = (self.first[i], self.row_start[i]);
            y[i] /= self.values[si + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.values[si + k - fi] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        Ok(x)
    }
}

/// Condition-number bound `p_max (λ̂max/λ̂min) ∏_i (max_K h_i^K / min_K h_i^K)`.
pub fn condition_bound(metrics: &MeshMetrics, reference: &ReferenceElement) -> f64 {
    metrics.p_max as f64 * reference.lambda_ratio() * metrics.directional_product()
}

/// The tighter form `p_max (λ̂max/λ̂min) max_K ∏h_i^K / min_K ∏h_i^K`.
pub fn condition_bound_product(metrics: &MeshMetrics, reference: &ReferenceElement) -> f64 {
    metrics.p_max as f64 * reference.lambda_ratio() * metrics.h_ratio_product
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, d: f64, o: f64) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, d));
            if i + 1 < n {
                t.push((i, i + 1, o));
                t.push((i + 1, i, o));
            }
        }
        SparseMatrix::from_triplets(n, t).unwrap()
    }

    #[test]
    fn spmv_identity_and_zero() {
        let i = SparseMatrix::identity(4);
        let x = vec![1.0, -2.0, 3.0, 0.5];
        assert_eq!(spmv(&i, &x).unwrap(), x);
        assert_eq!(spmv(&tridiag(4, 2.0, -1.0), &[0.0; 4]).unwrap(), vec![0.0; 4]);
        assert!(matches!(spmv(&i, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cg_recovers_known_solution() {
        let a = tridiag(50, 2.5, -1.0);
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul(&y);
        let x = cg_solve(&a, &b, 1e-13, 500).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((xi - yi).abs() < 1e-11);
        }
    }

    #[test]
    fn cg_diagonal_finite_termination() {
        let a = SparseMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = cg_solve_from(&a, &[1.0; 5], None, 1e-14, 5).unwrap();
        assert!(s.iterations <= 5);
    }

    #[test]
    fn cg_reports_max_iter() {
        let a = tridiag(100, 2.0, -1.0);
        let e = cg_solve(&a, &[1.0; 100], 1e-14, 3).unwrap_err();
        assert!(matches!(e, Error::MaxIterExceeded { iterations: 3, .. }));
    }

    #[test]
    fn lanczos_scaled_identity() {
        let s = extreme_eigs(&SparseMatrix::from_diagonal(&[2.5; 7]), 1e-8).unwrap();
        assert!((s.lambda_min - 2.5).abs() < 1e-12 && (s.lambda_max - 2.5).abs() < 1e-12);
        assert!((s.kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_laplacian_closed_form() {
        let n = 300;
        let s = extreme_eigs(&tridiag(n, 2.0, -1.0), 1e-10).unwrap();
        let h = std::f64::consts::PI / (n as f64 + 1.0);
        let lmin = 2.0 - 2.0 * h.cos();
        let lmax = 2.0 + 2.0 * h.cos();
        assert!(((s.lambda_min - lmin) / lmin).abs() < 1e-8, "{} vs {}", s.lambda_min, lmin);
        assert!(((s.lambda_max - lmax) / lmax).abs() < 1e-8);
    }

    #[test]
    fn skyline_cholesky_matches_cg() {
        let mut t = Vec::new();
        // 2-D five-point Laplacian on a 7 x 5 grid, numbered along the long axis
        let (nx, ny) = (7, 5);
        for j in 0..ny {
            for i in 0..nx {
                let v = i + nx * j;
                t.push((v, v, 4.0));
                if i + 1 < nx {
                    t.push((v, v + 1, -1.0));
                    t.push((v + 1, v, -1.0));
                }
                if j + 1 < ny {
                    t.push((v, v + nx, -1.0));
                    t.push((v + nx, v, -1.0));
                }
            }
        }
        let a = SparseMatrix::from_triplets(nx * ny, t).unwrap();
        let b: Vec<f64> = (0..nx * ny).map(|i| (i as f64).cos()).collect();
        let direct = SkylineCholesky::factor(&a).unwrap().solve(&b).unwrap();
        let iterative = cg_solve(&a, &b, 1e-14, 500).unwrap();
        for (x, y) in direct.iter().zip(&iterative) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(SkylineCholesky::factor(&SparseMatrix::from_diagonal(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let e = extreme_eigs(&SparseMatrix::from_diagonal(&[-1.0, 2.0]), 1e-8).unwrap_err();
        assert!(matches!(e, Error::EigFailed(_)));
    }
}
