//! Cholesky factorization and triangular solves.
//!
//! All dense factorizations run sequentially inside faer; parallelism is
//! applied one level up (across sites, folds or columns), which keeps every
//! result independent of the thread count.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt;
use faer::linalg::triangular_solve;
use faer::{Mat, MatMut, MatRef, Par};

use crate::error::{Error, Result};

/// Smallest nugget used when an interpolating fit (`g = 0`) is requested.
pub const MIN_JITTER: f64 = 1e-8;

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Mat<f64>,
}

impl Cholesky {
    pub fn factor(a: MatRef<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: a.ncols() });
        }
        let mut l = Mat::<f64>::zeros(n, n);
        l.copy_from_triangular_lower(a);
        let mut mem = MemBuffer::new(llt::factor::cholesky_in_place_scratch::<f64>(n, Par::Seq, Default::default()));
        let stack = MemStack::new(&mut mem);
        llt::factor::cholesky_in_place(l.as_mut(), Default::default(), Par::Seq, stack, Default::default())
            .map_err(|_| Error::NotPositiveDefinite)?;
        for i in 0..n {
            if !(l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                return Err(Error::NotPositiveDefinite);
            }
        }
        Ok(Cholesky { l })
    }

    /// Factors `a + jitter·I`, escalating the jitter tenfold up to `max_tries`
    /// times when the plain factorization fails. Returns the jitter used.
    pub fn factor_with_retry(a: MatRef<'_, f64>, max_tries: usize) -> Result<(Self, f64)> {
        if let Ok(c) = Cholesky::factor(a) {
            return Ok((c, 0.0));
        }
        let scale = (0..a.nrows()).map(|i| a[(i, i)]).fold(0.0f64, f64::max).max(1e-300);
        let mut jitter = MIN_JITTER * scale;
        for _ in 0..max_tries {
            let mut b = a.to_owned();
            for i in 0..b.nrows() {
                b[(i, i)] += jitter;
            }
            if let Ok(c) = Cholesky::factor(b.as_ref()) {
                return Ok((c, jitter));
            }
            jitter *= 10.0;
        }
        Err(Error::NotPositiveDefinite)
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Overwrites `b` with `L⁻¹ b`.
    pub fn solve_lower_in_place(&self, b: MatMut<'_, f64>) {
        triangular_solve::solve_lower_triangular_in_place(self.l.as_ref(), b, Par::Seq);
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve_in_place(&self, b: MatMut<'_, f64>) {
        let mut mem = MemBuffer::new(llt::solve::solve_in_place_scratch::<f64>(self.dim(), b.ncols(), Par::Seq));
        llt::solve::solve_in_place(self.l.as_ref(), b, Par::Seq, MemStack::new(&mut mem));
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut m = col_mat(b);
        self.solve_in_place(m.as_mut());
        m.col(0).iter().copied().collect()
    }

    pub fn solve_lower_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut m = col_mat(b);
        self.solve_lower_in_place(m.as_mut());
        m.col(0).iter().copied().collect()
    }

    pub fn solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        let mut m = b.to_owned();
        self.solve_in_place(m.as_mut());
        m
    }

    /// Symmetric `A⁻¹`.
    pub fn inverse(&self) -> Mat<f64> {
        let n = self.dim();
        let mut out = Mat::<f64>::zeros(n, n);
        let mut mem = MemBuffer::new(llt::inverse::inverse_scratch::<f64>(n, Par::Seq));
        llt::inverse::inverse(out.as_mut(), self.l.as_ref(), Par::Seq, MemStack::new(&mut mem));
        for j in 0..n {
            for i in 0..j {
                out[(i, j)] = out[(j, i)];
            }
        }
        out
    }

    /// `L Lᵀ`, for diagnostics.
    pub fn reconstruct(&self) -> Mat<f64> {
        let l = self.lower_only();
        &l * l.transpose()
    }

    fn lower_only(&self) -> Mat<f64> {
        let n = self.dim();
        Mat::from_fn(n, n, |i, j| if i >= j { self.l[(i, j)] } else { 0.0 })
    }
}

/// In-place lower Cholesky of a small row-major `n×n` matrix. Only the
/// lower triangle is read and written. Returns `false` if not positive
/// definite.
pub fn small_cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Solves `L z = b` in place for a factor from [`small_cholesky`].
pub fn small_solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ x = z` in place.
pub fn small_solve_upper_t(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

pub(crate) fn col_mat(b: &[f64]) -> Mat<f64> {
    Mat::from_fn(b.len(), 1, |i, _| b[i])
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
