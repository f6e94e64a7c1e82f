//! Small dense complex linear algebra.
//!
//! Everything here targets the MIMO regime of Wi-Fi CSI (at most 8×8), so the
//! SVD is a one-sided (Hestenes) Jacobi iteration with a fixed cyclic sweep
//! order. It is deterministic and accurate to machine precision on matrices
//! this size.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Largest supported dimension for [`svd`].
pub const MAX_SVD_DIM: usize = 8;

const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 60;

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Builds a matrix from row-major entries, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("matrix shape {rows}x{cols} has an empty dimension")));
        }
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|z| !z.is_finite()) {
            return Err(invalid(format!("non-finite entry at flat index {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix shape");
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    /// Rectangular identity: ones on the main diagonal, zero padding elsewhere.
    pub fn identity(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// Single-column matrix.
    pub fn column_vector(entries: Vec<Complex64>) -> Result<Self> {
        let n = entries.len();
        Self::new(n, 1, entries)
    }

    /// Builds a matrix from a slice of columns of equal length.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(invalid("columns have unequal lengths"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in columns {
                data.push(c[r]);
            }
        }
        Self::new(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// First `n` columns.
    pub fn leading_columns(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.cols {
            return Err(invalid(format!(
                "cannot take {n} leading columns of a {}-column matrix",
                self.cols
            )));
        }
        let mut out = Self::zeros(self.rows, n);
        for r in 0..self.rows {
            for c in 0..n {
                out[(r, c)] = self[(r, c)];
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(invalid("shape mismatch in matrix addition"));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// Largest entry-wise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.data.iter().map(Complex64::norm_sqr).sum()
    }

    pub fn column_norm(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self[(r, c)].norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖AᴴA − I‖_max`.
    pub fn unitarity_error(&self) -> f64 {
        let gram = self.adjoint().matmul(self).expect("AᴴA always conforms");
        gram.max_abs_diff(&Self::identity(self.cols, self.cols))
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    /// Panics on non-conforming shapes; use [`ComplexMatrix::matmul`] for a checked product.
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs).expect("non-conforming matrix product")
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.6}{:+.6}j ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Full singular value decomposition `H = U · Σ · Vᴴ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// Nr×Nr unitary.
    pub u: ComplexMatrix,
    /// min(Nr, Nt) singular values, non-increasing.
    pub sigma: Vec<f64>,
    /// Nt×Nt unitary.
    pub v: ComplexMatrix,
}

impl SvdResult {
    /// `U · diag(σ) · Vᴴ` with Σ padded to Nr×Nt.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let (nr, nt) = (self.u.rows(), self.v.rows());
        let mut sigma = ComplexMatrix::zeros(nr, nt);
        for (i, &s) in self.sigma.iter().enumerate() {
            sigma[(i, i)] = Complex64::new(s, 0.0);
        }
        &(&self.u * &sigma) * &self.v.adjoint()
    }
}

/// One-sided Jacobi SVD.
///
/// Columns of a working copy of `h` are pairwise orthogonalized with complex
/// plane rotations, sweeping pairs `(p, q)` with `p < q` in lexicographic order.
/// The accumulated rotations form `V`; the final column norms are the singular
/// values and the normalized columns give the leading columns of `U`.
pub fn svd(h: &ComplexMatrix) -> Result<SvdResult> {
    let (nr, nt) = h.shape();
    if nr > MAX_SVD_DIM || nt > MAX_SVD_DIM {
        return Err(invalid(format!(
            "svd supports at most {MAX_SVD_DIM}x{MAX_SVD_DIM}, got {nr}x{nt}"
        )));
    }
    if h.data.iter().any(|z| !z.is_finite()) {
        return Err(invalid("svd input has non-finite entries"));
    }

    // Column-major working storage: a[c] is column c of H·V.
    let mut a: Vec<Vec<Complex64>> = (0..nt).map(|c| h.column(c)).collect();
    let mut v: Vec<Vec<Complex64>> = (0..nt)
        .map(|c| {
            let mut col = vec![Complex64::new(0.0, 0.0); nt];
            col[c] = Complex64::new(1.0, 0.0);
            col
        })
        .collect();

    let scale = h.frobenius_norm_sqr();
    let negligible = f64::MIN_POSITIVE.max(scale * 1e-300);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..nt {
            for q in (p + 1)..nt {
                let alpha: f64 = a[p].iter().map(Complex64::norm_sqr).sum();
                let beta: f64 = a[q].iter().map(Complex64::norm_sqr).sum();
                let gamma: Complex64 = a[p].iter().zip(&a[q]).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if alpha * beta <= negligible || g <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;

                // Remove the phase of the inner product, then a real Jacobi rotation.
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s, phase);
                rotate_pair(&mut v, p, q, c, s, phase);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..nt).collect();
    // Stable: equal singular values keep their column order.
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let n_min = nr.min(nt);
    let sigma: Vec<f64> = order[..n_min].iter().map(|&i| norms[i]).collect();

    let v_sorted: Vec<Vec<Complex64>> = order.iter().map(|&i| v[i].clone()).collect();
    let v = ComplexMatrix::from_columns(&v_sorted)?;

    let rank_floor = sigma.first().copied().unwrap_or(0.0) * 1e-13;
    let mut u_cols: Vec<Vec<Complex64>> = Vec::with_capacity(nr);
    for (k, &i) in order[..n_min].iter().enumerate() {
        if sigma[k] > rank_floor && sigma[k] > 0.0 {
            u_cols.push(a[i].iter().map(|z| z / sigma[k]).collect());
        } else {
            break;
        }
    }
    complete_orthonormal_basis(&mut u_cols, nr);
    let u = ComplexMatrix::from_columns(&u_cols)?;

    Ok(SvdResult { u, sigma, v })
}

/// Applies `[x_p, x_q] ← [c·x_p − s·e^{-jθ}·x_q, s·x_p + c·e^{-jθ}·x_q]` where
/// `phase = e^{jθ}` is the phase of `x_pᴴ x_q`.
fn rotate_pair(cols: &mut [Vec<Complex64>], p: usize, q: usize, c: f64, s: f64, phase: Complex64) {
    let back = phase.conj();
    let (head, tail) = cols.split_at_mut(q);
    let (xp, xq) = (&mut head[p], &mut tail[0]);
    for (zp, zq) in xp.iter_mut().zip(xq.iter_mut()) {
        let aligned = *zq * back;
        let new_p = *zp * c - aligned * s;
        let new_q = *zp * s + aligned * c;
        *zp = new_p;
        *zq = new_q;
    }
}

/// Extends an orthonormal set of columns to a full basis of `C^n` by
/// Gram-Schmidt against the standard basis, picking the candidate with the
/// largest residual each time.
fn complete_orthonormal_basis(cols: &mut Vec<Vec<Complex64>>, n: usize) {
    while cols.len() < n {
        let mut best: Option<(f64, Vec<Complex64>)> = None;
        for e in 0..n {
            let mut cand = vec![Complex64::new(0.0, 0.0); n];
            cand[e] = Complex64::new(1.0, 0.0);
            // Two passes of classical Gram-Schmidt for numerical safety.
            for _ in 0..2 {
                for q in cols.iter() {
                    let proj: Complex64 = q.iter().zip(&cand).map(|(a, b)| a.conj() * b).sum();
                    for (c, qi) in cand.iter_mut().zip(q) {
                        *c -= proj * qi;
                    }
                }
            }
            let norm = cand.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("n >= 1");
        cols.push(cand.into_iter().map(|z| z / norm).collect());
    }
}

/// Takes the first `ns` columns of the right singular matrix and rotates each
/// column by a unit phase so its last-row entry is real and non-negative.
pub fn extract_beamforming(svd: &SvdResult, ns: usize) -> Result<ComplexMatrix> {
    let mut v = svd.v.leading_columns(ns)?;
    phase_normalize_columns(&mut v);
    Ok(v)
}

/// In-place column phase normalization (last row real, non-negative).
pub fn phase_normalize_columns(v: &mut ComplexMatrix) {
    let last = v.rows() - 1;
    for c in 0..v.cols() {
        let anchor = v[(last, c)];
        let mag = anchor.norm();
        if mag == 0.0 {
            continue;
        }
        let rot = anchor.conj() / mag;
        for r in 0..v.rows() {
            v[(r, c)] *= rot;
        }
        // Pin exactly: the product above can leave a rounding-level imaginary part.
        v[(last, c)] = Complex64::new(mag, 0.0);
    }
}
