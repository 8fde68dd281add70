//! Complex matrix arithmetic, SVD, and seeded Gaussian sampling.
//!
//! Matrices here are small (at most 8x8 channel matrices times a block of
//! channel uses), dense, row-major, and immutable in spirit: operations
//! return new values. The SVD is a one-sided Jacobi, which is simple and
//! fully accurate at this scale.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
#[allow(unused_imports)] // required when std is absent from the crate graph
use num_traits::Float;

use crate::rng::SeededRng;
use crate::{Error, Result};

pub type C64 = Complex64;

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Build from a row-major slice of entries.
    pub fn from_slice(rows: usize, cols: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                entries.len()
            )));
        }
        Ok(CMatrix {
            rows,
            cols,
            data: entries.to_vec(),
        })
    }

    /// Real diagonal matrix, possibly rectangular.
    pub fn diag(rows: usize, cols: usize, values: &[f64]) -> Self {
        let mut m = CMatrix::zeros(rows, cols);
        for (i, &v) in values.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn hermitian(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn mul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matrix product shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self[(i, p)];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(p, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(rhs.data.iter()) {
            *a += *b;
        }
        out
    }

    pub fn sub(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(rhs.data.iter()) {
            *a -= *b;
        }
        out
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= s;
        }
        out
    }

    /// Sum of squared magnitudes.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Gauss-Jordan inverse with partial pivoting. Fails on (near-)singular
    /// input.
    pub fn inverse(&self) -> Result<CMatrix> {
        if self.rows != self.cols {
            return Err(Error::Dimension(format!(
                "inverse of non-square {}x{}",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = CMatrix::identity(n);
        let scale: f64 = self
            .data
            .iter()
            .map(|z| z.norm_sqr())
            .fold(0.0, f64::max)
            .max(1.0);
        for col in 0..n {
            let mut best = col;
            let mut best_mag = a[(col, col)].norm_sqr();
            for row in col + 1..n {
                let mag = a[(row, col)].norm_sqr();
                if mag > best_mag {
                    best_mag = mag;
                    best = row;
                }
            }
            if best_mag <= scale * 1e-28 {
                return Err(Error::Singularity(format!("pivot {col} vanished")));
            }
            if best != col {
                for j in 0..n {
                    a.data.swap(col * n + j, best * n + j);
                    inv.data.swap(col * n + j, best * n + j);
                }
            }
            let pivot_inv = C64::new(1.0, 0.0) / a[(col, col)];
            for j in 0..n {
                a[(col, j)] *= pivot_inv;
                inv[(col, j)] *= pivot_inv;
            }
            for row in 0..n {
                if row == col {
                    continue;
                }
                let factor = a[(row, col)];
                if factor.re == 0.0 && factor.im == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let u = a[(col, j)];
                    let v = inv[(col, j)];
                    a[(row, j)] -= factor * u;
                    inv[(row, j)] -= factor * v;
                }
            }
        }
        Ok(inv)
    }
}

impl core::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Frobenius norm.
pub fn frob_norm(a: &CMatrix) -> f64 {
    a.norm_sqr().sqrt()
}

/// Full SVD `A = U diag(S) V^H` with square unitary `U` (m x m) and `V`
/// (n x n); `S` holds the min(m, n) singular values in descending order.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

impl SvdResult {
    /// Rebuild `U diag(S) V^H`; test and diagnostics helper.
    pub fn reconstruct(&self) -> CMatrix {
        let sigma = CMatrix::diag(self.u.cols(), self.v.cols(), &self.s);
        self.u.mul(&sigma).mul(&self.v.hermitian())
    }
}

/// One-sided Jacobi SVD. Rotations are applied to column pairs of a working
/// copy until all pairs are orthogonal; singular values are then the column
/// norms. Adequate and fully accurate for the small matrices used here.
pub fn svd(a: &CMatrix) -> Result<SvdResult> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::InvalidInput("svd of empty matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput("svd of non-finite matrix".into()));
    }
    if a.rows() < a.cols() {
        // Factor the Hermitian transpose and swap the roles of U and V.
        let t = svd(&a.hermitian())?;
        return Ok(SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let m = a.rows();
    let n = a.cols();
    let mut b = a.clone();
    let mut v = CMatrix::identity(n);
    let eps = 1e-15;

    for _sweep in 0..64 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = C64::new(0.0, 0.0);
                for i in 0..m {
                    let x = b[(i, p)];
                    let y = b[(i, q)];
                    app += x.norm_sqr();
                    aqq += y.norm_sqr();
                    apq += x.conj() * y;
                }
                let mag = apq.norm();
                if mag <= eps * (app * aqq).sqrt() || app == 0.0 || aqq == 0.0 {
                    continue;
                }
                rotated = true;
                let phase = apq / mag; // e^{i phi}
                // Diagonalize the 2x2 Gram block [[app, mag], [mag, aqq]].
                let tau = (app - aqq) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // Columns [p q] <- [p q] * diag(phase, 1) * [[c, -s], [s, c]]
                for mat in [&mut b, &mut v] {
                    let rows = mat.rows();
                    for i in 0..rows {
                        let x = mat[(i, p)] * phase;
                        let y = mat[(i, q)];
                        mat[(i, p)] = x * c + y * s;
                        mat[(i, q)] = y * c - x * s;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; order them descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| b[(i, j)].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let v_sorted = CMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);

    // U: normalized columns of B for nonzero sigma, completed to a full
    // orthonormal basis otherwise.
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = smax * 1e-14;
    let mut u_cols: Vec<Vec<C64>> = Vec::with_capacity(m);
    for (rank, &j) in order.iter().enumerate() {
        if s[rank] > tol {
            u_cols.push((0..m).map(|i| b[(i, j)] / s[rank]).collect());
        }
    }
    complete_basis(&mut u_cols, m);
    let u = CMatrix::from_fn(m, m, |i, j| u_cols[j][i]);

    Ok(SvdResult { u, s, v: v_sorted })
}

/// Extend a set of orthonormal columns to a full orthonormal basis of C^m by
/// Gram-Schmidt over the canonical basis vectors.
fn complete_basis(cols: &mut Vec<Vec<C64>>, m: usize) {
    let mut cand = 0usize;
    while cols.len() < m {
        assert!(cand < m, "basis completion ran out of candidates");
        let mut e: Vec<C64> = vec![C64::new(0.0, 0.0); m];
        e[cand] = C64::new(1.0, 0.0);
        cand += 1;
        for c in cols.iter() {
            let proj: C64 = c.iter().zip(e.iter()).map(|(a, b)| a.conj() * b).sum();
            for (ei, ci) in e.iter_mut().zip(c.iter()) {
                *ei -= proj * ci;
            }
        }
        let norm: f64 = e.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-7 {
            for ei in e.iter_mut() {
                *ei /= norm;
            }
            cols.push(e);
        }
    }
}

/// i.i.d. CN(0, variance) matrix, deterministic given the generator state.
pub fn sample_cgauss(rng: &mut SeededRng, rows: usize, cols: usize, variance: f64) -> Result<CMatrix> {
    if variance < 0.0 || !variance.is_finite() {
        return Err(Error::InvalidInput(format!(
            "variance must be >= 0, got {variance}"
        )));
    }
    Ok(CMatrix::from_fn(rows, cols, |_, _| rng.next_cgauss(variance)))
}
