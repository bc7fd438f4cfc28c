//! Small dense linear-algebra helpers shared by the pipelines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// First relative jitter tried before a Cholesky factorisation.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// A Cholesky factor together with the absolute jitter that was added to the
/// diagonal to obtain it.
#[derive(Clone, Debug)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor `L` with `A + jitter·I = L Lᵀ`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn l_ref(&self) -> &DMatrix<f64> {
        self.chol.l_dirty()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ B`, the whitened right-hand side.
    pub fn whiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn whiten_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn ln_determinant(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }
}

pub fn mean_abs_diagonal(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows().min(a.ncols());
    if n == 0 {
        return 0.0;
    }
    a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64
}

/// Cholesky factorisation with escalating diagonal jitter, starting at
/// `JITTER_START · mean|diag|` and growing tenfold up to `JITTER_MAX`.
pub fn factorize(a: &DMatrix<f64>, context: &'static str) -> Result<Factor> {
    factorize_from(a, JITTER_START, context)
}

pub fn factorize_from(a: &DMatrix<f64>, start: f64, context: &'static str) -> Result<Factor> {
    debug_assert_eq!(a.nrows(), a.ncols());
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(context));
    }
    let scale = mean_abs_diagonal(a).max(f64::MIN_POSITIVE);
    let mut rel = start;
    loop {
        // A zero start tries the bare matrix once, then escalates from JITTER_START.
        let jitter = rel * scale;
        let mut shifted = a.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(Factor { chol, jitter });
        }
        if rel >= JITTER_MAX {
            return Err(Error::Factorization { context, jitter });
        }
        rel = if rel == 0.0 { JITTER_START } else { rel * 10.0 };
    }
}

/// Averages `A` with its transpose in place.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub(crate) fn check_finite_matrix(a: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

pub(crate) fn check_finite_vector(a: &DVector<f64>, context: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Selects the given rows of `x`.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| v[rows[i]])
}
