//! Dense symmetric matrix kernels.
//!
//! Matrices are stored packed as the lower triangle in the order
//! `[m11, m21, ..., mP1, m22, ..., mPP]`, which is the same sequence as the
//! row-major upper triangle `[m11, m12, ..., m1P, m22, ..., mPP]`. Every module
//! that vectorizes a symmetric matrix uses this one ordering.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative eigenvalue cutoff used when no explicit rank tolerance is given.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

const MAX_QL_ITERATIONS: usize = 60;

/// Symmetric matrix with packed lower-triangle storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

/// Lower-triangle vectorization `[m11, m12, ..., m1P, m22, ..., mPP]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerTriVector {
    pub dim: usize,
    pub values: Vec<f64>,
}

/// Eigenvalues sorted descending with matching orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// Row-major `dim x dim`; column `k` is the eigenvector of `values[k]`.
    pub vectors: Vec<f64>,
}

#[inline]
pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

#[inline]
fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * dim - a * a.saturating_sub(1) / 2 + (b - a)
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; packed_len(dim)],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn scaled_identity(dim: usize, eps: f64) -> Self {
        Self::from_diag(&vec![eps; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from `f(i, j)` evaluated on the lower triangle (`i >= j`).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Reads the lower triangle of a square row-major matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("matrix rows must all have length equal to the row count"));
        }
        Ok(Self::from_fn(dim, |i, j| rows[i][j]))
    }

    /// Reads the lower triangle of a row-major `dim x dim` buffer.
    pub fn from_dense(dim: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), dim * dim);
        Self::from_fn(dim, |i, j| dense[i * dim + j])
    }

    pub fn from_lower(v: &LowerTriVector) -> Result<Self> {
        if v.values.len() != packed_len(v.dim) {
            return Err(Error::shape(format!(
                "lower-triangle vector of dim {} needs {} values, got {}",
                v.dim,
                packed_len(v.dim),
                v.values.len()
            )));
        }
        Ok(Self {
            dim: v.dim,
            data: v.values.clone(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = packed_index(self.dim, i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let k = packed_index(self.dim, i, j);
        self.data[k] += v;
    }

    /// Packed storage, in lower-triangle vector order.
    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn lower(&self) -> LowerTriVector {
        LowerTriVector {
            dim: self.dim,
            values: self.data.clone(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &SymMatrix) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                s += v * v;
            }
        }
        s.sqrt()
    }

    /// Frobenius inner product `<self, other>`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            s += self.get(i, i) * other.get(i, i);
            for j in 0..i {
                s += 2.0 * self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.get(i, j);
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Principal submatrix on the given (ordered) indices.
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix::from_fn(idx.len(), |i, j| self.get(idx[i], idx[j]))
    }
}

impl LowerTriVector {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != packed_len(dim) {
            return Err(Error::shape(format!(
                "expected {} lower-triangle values for dim {dim}, got {}",
                packed_len(dim),
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    /// Position of `(i, j)` in the vector.
    pub fn index(&self, i: usize, j: usize) -> usize {
        packed_index(self.dim, i, j)
    }
}

fn check_dim(m: &SymMatrix) -> Result<()> {
    if m.dim == 0 {
        return Err(Error::invalid("matrix dimension must be at least 1"));
    }
    Ok(())
}

/// `sum_j ln(max(lambda_j, eig_floor))`; negative infinity when `eig_floor == 0`
/// and some eigenvalue is not positive.
pub fn logdet(m: &SymMatrix, eig_floor: f64) -> Result<f64> {
    check_dim(m)?;
    if !(eig_floor >= 0.0) {
        return Err(Error::invalid("eig_floor must be non-negative"));
    }
    // Cholesky succeeds exactly when all eigenvalues are positive, and then the
    // zero floor is inactive.
    if eig_floor == 0.0 {
        if let Ok(ch) = Cholesky::factor(m) {
            let ld = ch.logdet();
            if ld.is_finite() {
                return Ok(ld);
            }
        }
    }
    let eig = eig_sym(m)?;
    let mut s = 0.0;
    for &l in &eig.values {
        let v = l.max(eig_floor);
        if v <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        s += v.ln();
    }
    Ok(s)
}

/// Gradient of `ln det M` with respect to the lower-triangle coordinates.
///
/// Uses the pseudo-inverse `M+`: diagonal coordinates get `M+[i][i]`,
/// off-diagonal coordinates get `2 M+[i][j]` (both triangle entries move together).
pub fn grad_logdet_lower(m: &SymMatrix) -> Result<LowerTriVector> {
    check_dim(m)?;
    let pinv = pinv_sym(m, DEFAULT_RANK_TOL)?;
    let n = m.dim;
    let mut g = pinv.data.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            g[packed_index(n, i, j)] *= 2.0;
        }
    }
    Ok(LowerTriVector { dim: n, values: g })
}

/// Symmetric eigendecomposition by Householder tridiagonalization followed by
/// implicit-shift QL iterations, then a relative-accuracy refinement: the
/// projection `VᵀMV` is formed in double-double arithmetic and finished by
/// cyclic Jacobi. Eigenvalues are returned in descending order.
///
/// The refinement matters for information matrices whose smallest eigenvalues
/// sit near the prior while `‖M‖` is many orders larger: QL alone only fixes
/// those to about `eps ‖M‖` absolute.
pub fn eig_sym(m: &SymMatrix) -> Result<Eigen> {
    check_dim(m)?;
    let n = m.dim;
    let mut v = m.to_dense();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n == 1 {
        return Ok(Eigen {
            values: vec![m.get(0, 0)],
            vectors: vec![1.0],
        });
    }
    tridiagonalize(n, &mut v, &mut d, &mut e);
    ql_implicit(n, &mut v, &mut d, &mut e)?;
    if m.data.iter().all(|x| x.is_finite()) {
        refine_jacobi(m, &mut v, &mut d);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&k| d[k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + new_col] = v[r * n + old_col];
        }
    }
    Ok(Eigen { values, vectors })
}

// Error-free transforms for double-double accumulation.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[derive(Clone, Copy, Default)]
struct DoubleDouble(f64, f64);

impl DoubleDouble {
    fn add_prod(self, a: f64, b: f64) -> Self {
        let p = a * b;
        let pe = a.mul_add(b, -p);
        let (s, se) = two_sum(self.0, p);
        let (hi, lo) = two_sum(s, self.1 + pe + se);
        DoubleDouble(hi, lo)
    }
}

const MAX_JACOBI_SWEEPS: usize = 40;

// Rayleigh-Ritz on the QL basis in double-double, then cyclic Jacobi on the
// nearly diagonal result; rotations are folded back into `v`.
fn refine_jacobi(m: &SymMatrix, v: &mut [f64], d: &mut [f64]) {
    let n = m.dim;
    let at = |r: usize, c: usize| r * n + c;
    let mut mv = vec![DoubleDouble::default(); n * n];
    for j in 0..n {
        for k in 0..n {
            let mut acc = DoubleDouble::default();
            for l in 0..n {
                acc = acc.add_prod(m.get(k, l), v[at(l, j)]);
            }
            mv[at(k, j)] = acc;
        }
    }
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut acc = DoubleDouble::default();
            for k in 0..n {
                let u = mv[at(k, j)];
                acc = acc.add_prod(v[at(k, i)], u.0).add_prod(v[at(k, i)], u.1);
            }
            h[at(i, j)] = acc.0 + acc.1;
            h[at(j, i)] = h[at(i, j)];
        }
    }
    let eps = f64::EPSILON;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = h[at(p, q)];
                if apq == 0.0 || apq.abs() <= eps * (h[at(p, p)].abs() * h[at(q, q)].abs()).sqrt() * 0.5 {
                    continue;
                }
                rotated = true;
                let theta = (h[at(q, q)] - h[at(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in (0..n).filter(|&k| k != p && k != q) {
                    let (hkp, hkq) = (h[at(k, p)], h[at(k, q)]);
                    h[at(k, p)] = c * hkp - s * hkq;
                    h[at(k, q)] = s * hkp + c * hkq;
                    h[at(p, k)] = h[at(k, p)];
                    h[at(q, k)] = h[at(k, q)];
                }
                h[at(p, p)] -= t * apq;
                h[at(q, q)] += t * apq;
                h[at(p, q)] = 0.0;
                h[at(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[at(k, p)], v[at(k, q)]);
                    v[at(k, p)] = c * vkp - s * vkq;
                    v[at(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    for (i, di) in d.iter_mut().enumerate() {
        *di = h[at(i, i)];
    }
}

// Householder reduction to tridiagonal form (after the EISPACK tred2 routine).
fn tridiagonalize(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |r: usize, c: usize| r * n + c;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..(n - 1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit-shift QL on the tridiagonal (d, e), accumulating rotations into v.
fn ql_implicit(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let at = |r: usize, c: usize| r * n + c;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    let mut total_iter = 0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                total_iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::NumericFailure {
                        what: "symmetric eigendecomposition".into(),
                        iterations: total_iter,
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Moore-Penrose pseudo-inverse; eigenvalues with `|lambda| <= rank_tol * max|lambda|`
/// are treated as zero.
pub fn pinv_sym(m: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    check_dim(m)?;
    let n = m.dim;
    let eig = eig_sym(m)?;
    let max_abs = eig.values.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let cutoff = rank_tol * max_abs;
    let inv: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| if l.abs() > cutoff && l != 0.0 { 1.0 / l } else { 0.0 })
        .collect();
    Ok(SymMatrix::from_fn(n, |i, j| {
        let mut s = 0.0;
        for k in 0..n {
            if inv[k] != 0.0 {
                s += eig.vectors[i * n + k] * inv[k] * eig.vectors[j * n + k];
            }
        }
        s
    }))
}

/// Cholesky factor `M = L L^T` (row-major lower triangle).
#[derive(Clone, Debug)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(m: &SymMatrix) -> Result<Self> {
        check_dim(m)?;
        let n = m.dim;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut s = m.get(j, j);
            for k in 0..j {
                s -= l[j * n + k] * l[j * n + k];
            }
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    context: String::new(),
                });
            }
            let d = s.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { dim: n, l })
    }

    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.dim)
            .map(|i| self.l[i * self.dim + i].ln())
            .sum::<f64>()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.dim;
        assert_eq!(rhs.len(), n);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut cols = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            cols.push(self.solve(&e));
        }
        SymMatrix::from_fn(n, |i, j| 0.5 * (cols[j][i] + cols[i][j]))
    }
}

/// Solves `M z = rhs` for symmetric positive definite `M` via Cholesky.
pub fn solve_spd(m: &SymMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != m.dim {
        return Err(Error::shape(format!(
            "rhs length {} does not match matrix dimension {}",
            rhs.len(),
            m.dim
        )));
    }
    Ok(Cholesky::factor(m)?.solve(rhs))
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(m: &SymMatrix) -> Result<SymMatrix> {
    Ok(Cholesky::factor(m)?.inverse())
}

/// Product of a row-major `r x k` and `k x c` matrix.
pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..c {
                out[i * c + j] += av * b[p * c + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Gaussian elimination with partial pivoting; independent of the
    // eigen/Cholesky code paths.
    fn lu_det(n: usize, a: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| a[x * n + c].abs().total_cmp(&a[y * n + c].abs()))
                .unwrap();
            if a[p * n + c] == 0.0 {
                return 0.0;
            }
            if p != c {
                for j in 0..n {
                    a.swap(p * n + j, c * n + j);
                }
                det = -det;
            }
            det *= a[c * n + c];
            for r in (c + 1)..n {
                let f = a[r * n + c] / a[c * n + c];
                for j in c..n {
                    a[r * n + j] -= f * a[c * n + j];
                }
            }
        }
        det
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SymMatrix::from_fn(n, |i, j| {
            (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }
        })
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        SymMatrix::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn packed_order_matches_lower_vector_convention() {
        let m = SymMatrix::from_fn(3, |i, j| (10 * (i + 1) + (j + 1)) as f64);
        // m11, m12(=m21), m13, m22, m23, m33
        assert_eq!(m.packed(), &[11.0, 21.0, 31.0, 22.0, 32.0, 33.0]);
        assert_eq!(m.get(0, 2), m.get(2, 0));
    }

    #[test]
    fn small_eigenvalues_keep_relative_accuracy() {
        // Integer Gram matrix plus 2^-27 I: stored exactly, so the null space of
        // the Gram part gives eigenvalues of exactly 2^-27.
        let eps = (-27f64).exp2();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in 3..=8 {
            for _ in 0..10 {
                let rank = rng.gen_range(1..n);
                let g: Vec<Vec<f64>> =
                    (0..rank).map(|_| (0..n).map(|_| rng.gen_range(-4..=4) as f64).collect()).collect();
                let m = SymMatrix::from_fn(n, |i, j| {
                    g.iter().map(|r| r[i] * r[j]).sum::<f64>() + if i == j { eps } else { 0.0 }
                });
                let e = eig_sym(&m).unwrap();
                for &l in &e.values[rank..] {
                    assert!(((l - eps) / eps).abs() < 1e-12, "n={n} rank={rank} lambda={l:e}");
                }
            }
        }
    }

    #[test]
    fn logdet_trivial_cases() {
        assert_eq!(logdet(&SymMatrix::identity(4), 0.0).unwrap(), 0.0);
        let d = logdet(&SymMatrix::from_diag(&[2.0, 4.0]), 0.0).unwrap();
        assert!((d - 8f64.ln()).abs() < 1e-14);
        assert!(matches!(
            logdet(&SymMatrix::zeros(0), 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn logdet_floor_and_sentinel() {
        let m = SymMatrix::from_diag(&[1.0, 0.0]);
        assert_eq!(logdet(&m, 0.0).unwrap(), f64::NEG_INFINITY);
        let floored = logdet(&m, 1e-6).unwrap();
        assert!((floored - 1e-6f64.ln()).abs() < 1e-12);
        let neg = SymMatrix::from_diag(&[3.0, -1.0]);
        assert_eq!(logdet(&neg, 0.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn logdet_matches_lu_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=8 {
            for _ in 0..10 {
                let m = random_spd(&mut rng, n);
                let oracle = lu_det(n, &m.to_dense());
                let ld = logdet(&m, 0.0).unwrap();
                assert!(((ld.exp() - oracle) / oracle).abs() < 1e-10, "n={n}");
                // The eigenvalue route must agree too (floor forces it).
                let ld_eig = logdet(&m, 1e-300).unwrap();
                assert!(((ld_eig.exp() - oracle) / oracle).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn grad_trivial_cases() {
        let g = grad_logdet_lower(&SymMatrix::identity(2)).unwrap();
        assert_eq!(g.values, vec![1.0, 0.0, 1.0]);
        let g = grad_logdet_lower(&SymMatrix::from_diag(&[2.0, 4.0])).unwrap();
        for (a, b) in g.values.iter().zip([0.5, 0.0, 0.25]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    // Central differences over every lower-triangle coordinate, moving the
    // (i, j) and (j, i) entries together.
    fn fd_grad(m: &SymMatrix) -> Vec<f64> {
        let n = m.dim();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i..n {
                let h = 1e-6 * (1.0 + m.get(i, j).abs());
                let mut p = m.clone();
                p.set(i, j, m.get(i, j) + h);
                let mut q = m.clone();
                q.set(i, j, m.get(i, j) - h);
                let lp = lu_det(n, &p.to_dense()).ln();
                let lq = lu_det(n, &q.to_dense()).ln();
                out.push((lp - lq) / (2.0 * h));
            }
        }
        out
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..100 {
            let n = 2 + case % 7;
            let m = random_spd(&mut rng, n);
            let g = grad_logdet_lower(&m).unwrap();
            let fd = fd_grad(&m);
            let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, b) in g.values.iter().zip(&fd) {
                assert!((a - b).abs() / scale < 1e-6, "case {case}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn eig_known_spectra() {
        let e = eig_sym(&SymMatrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        let e = eig_sym(&SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap()).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        let e = eig_sym(&SymMatrix::from_diag(&[1.0, 5.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![5.0, 2.0, 1.0]);
    }

    #[test]
    fn eig_residual_and_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=9 {
            for _ in 0..10 {
                let m = random_sym(&mut rng, n);
                let e = eig_sym(&m).unwrap();
                for w in e.values.windows(2) {
                    assert!(w[0] >= w[1]);
                }
                let a = m.to_dense();
                let mv = matmul(&a, &e.vectors, n, n, n);
                let mut res = 0.0;
                for r in 0..n {
                    for c in 0..n {
                        res += (mv[r * n + c] - e.vectors[r * n + c] * e.values[c]).powi(2);
                    }
                }
                assert!(res.sqrt() <= 1e-9 * m.frobenius_norm());
                let tr: f64 = e.values.iter().sum();
                assert!((tr - m.trace()).abs() <= 1e-9 * m.frobenius_norm().max(1.0));
                let det = lu_det(n, &a);
                let prod: f64 = e.values.iter().product();
                assert!((prod - det).abs() <= 1e-9 * det.abs().max(1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn pinv_cases() {
        let p = pinv_sym(&SymMatrix::identity(3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(p, SymMatrix::identity(3));
        let p = pinv_sym(&SymMatrix::from_diag(&[2.0, 0.0]), 1e-12).unwrap();
        assert!((p.get(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(p.get(1, 1), 0.0);
        assert_eq!(p.get(0, 1), 0.0);
    }

    #[test]
    fn pinv_penrose_identities_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 4;
        for _ in 0..20 {
            let b: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = SymMatrix::from_fn(n, |i, j| (0..2).map(|k| b[k * n + i] * b[k * n + j]).sum());
            let p = pinv_sym(&m, DEFAULT_RANK_TOL).unwrap();
            let (a, pd) = (m.to_dense(), p.to_dense());
            let apa = matmul(&matmul(&a, &pd, n, n, n), &a, n, n, n);
            let pap = matmul(&matmul(&pd, &a, n, n, n), &pd, n, n, n);
            let ap = matmul(&a, &pd, n, n, n);
            for i in 0..n * n {
                assert!((apa[i] - a[i]).abs() < 1e-8);
                assert!((pap[i] - pd[i]).abs() < 1e-8);
            }
            for i in 0..n {
                for j in 0..n {
                    assert!((ap[i * n + j] - ap[j * n + i]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn pinv_of_spd_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 1..=7 {
            let m = random_spd(&mut rng, n);
            let p = pinv_sym(&m, DEFAULT_RANK_TOL).unwrap();
            let inv = inverse_spd(&m).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert!((p.get(i, j) - inv.get(i, j)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn solve_spd_cases() {
        let z = solve_spd(&SymMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(z, vec![1.0, 2.0, 3.0]);
        let z = solve_spd(&SymMatrix::from_diag(&[4.0]), &[8.0]).unwrap();
        assert_eq!(z, vec![2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_spd(&mut rng, 5);
        let rhs: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let z = solve_spd(&m, &rhs).unwrap();
        let mz = m.mul_vec(&z);
        let res: f64 = mz.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let zn: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bn: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res <= 1e-9 * (m.frobenius_norm() * zn + bn));
    }

    #[test]
    fn solve_spd_reports_failing_pivot() {
        let m = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match solve_spd(&m, &[1.0, 1.0]) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
