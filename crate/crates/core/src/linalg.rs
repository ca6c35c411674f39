use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::DirectionSet;

/// `(1/p) sum_i theta_i theta_i^T`.
pub(crate) fn gram(dirs: &DirectionSet) -> DMatrix<f64> {
    let d = dirs.d();
    let mut a = DMatrix::zeros(d, d);
    for theta in dirs.iter() {
        for r in 0..d {
            for c in 0..d {
                a[(r, c)] += theta[r] * theta[c];
            }
        }
    }
    a / dirs.p() as f64
}

pub(crate) fn symmetric_eigenvalues(m: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).min()
}

/// Cholesky factor of a direction Gram matrix whose smallest eigenvalue
/// clears `floor`.
#[derive(Debug, Clone)]
pub(crate) struct GramSolver {
    chol: Cholesky<f64, Dyn>,
}

impl GramSolver {
    pub fn new(gram: &DMatrix<f64>, floor: f64) -> Result<Self> {
        let min_eigenvalue = min_eigenvalue(gram);
        if !(min_eigenvalue > floor) {
            return Err(Error::Singular {
                min_eigenvalue,
                floor,
            });
        }
        let chol = Cholesky::new(gram.clone()).ok_or(Error::Singular {
            min_eigenvalue,
            floor,
        })?;
        Ok(Self { chol })
    }

    /// Overwrites `rhs` with `A^{-1} rhs`.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let mut v = nalgebra::DVectorViewMut::from_slice(rhs, rhs.len());
        self.chol.solve_mut(&mut v);
    }
}
