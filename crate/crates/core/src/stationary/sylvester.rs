use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Solves `H X + X H = R` for SPD `H` and symmetric `R` in the eigenbasis of
/// `H`: with `H = V diag(λ) Vᵀ`, `X = V [ (VᵀRV)_ij / (λ_i + λ_j) ] Vᵀ`.
pub fn sylvester_solve(hessian: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = hessian.nrows();
    if hessian.ncols() != d || rhs.shape() != (d, d) {
        return Err(Error::Shape(format!(
            "sylvester_solve needs square matrices of equal size, got {:?} and {:?}",
            hessian.shape(),
            rhs.shape()
        )));
    }
    let sym = (hessian + hessian.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::Parameter(format!(
            "sylvester_solve needs a positive definite matrix (min eigenvalue {min:e})"
        )));
    }
    let v = &eig.eigenvectors;
    let mut rotated = v.transpose() * rhs * v;
    for i in 0..d {
        for j in 0..d {
            rotated[(i, j)] /= eig.eigenvalues[i] + eig.eigenvalues[j];
        }
    }
    let x = v * rotated * v.transpose();
    Ok((&x + x.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_resolvent() {
        let h = DMatrix::identity(2, 2) * 2.0;
        let x = sylvester_solve(&h, &DMatrix::identity(2, 2)).unwrap();
        assert!((x - DMatrix::identity(2, 2) * 0.25).amax() < 1e-15);
    }

    #[test]
    fn diagonal_case() {
        let h = DMatrix::from_diagonal(&nalgebra::dvector![1.0, 3.0]);
        let x = sylvester_solve(&h, &DMatrix::identity(2, 2)).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::dvector![0.5, 1.0 / 6.0]);
        assert!((x - expected).amax() < 1e-15);
    }

    #[test]
    fn rejects_indefinite() {
        let h = DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1.0]);
        assert!(matches!(sylvester_solve(&h, &DMatrix::identity(2, 2)), Err(Error::Parameter(_))));
        let z = DMatrix::zeros(2, 2);
        assert!(sylvester_solve(&z, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        assert!(matches!(
            sylvester_solve(&DMatrix::identity(2, 2), &DMatrix::identity(3, 3)),
            Err(Error::Shape(_))
        ));
    }
}
