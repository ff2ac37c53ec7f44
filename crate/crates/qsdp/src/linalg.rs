//! Dense symmetric-matrix helpers used by the solver, shaping and sampling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetrizes in place as (A + A^T)/2.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    debug_assert_eq!(a.nrows(), a.ncols());
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Euclidean projection onto the PSD cone: eigenvalues below zero are clipped.
///
/// The input is symmetrized first; the result is exactly symmetric.
pub fn project_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = a.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let mut out = reconstruct_clipped(&eig);
    symmetrize(&mut out);
    out
}

/// Smallest eigenvalue of the symmetrized input.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let mut s = a.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Factor L with L L^T = A for a (nearly) PSD symmetric A, built from the
/// eigendecomposition with negative eigenvalues clipped to zero. Works on
/// rank-deficient inputs where a triangular factorization would fail.
pub fn psd_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = a.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let n = eig.eigenvalues.len();
    let mut l = eig.eigenvectors.clone();
    for j in 0..n {
        let scale = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            l[(i, j)] *= scale;
        }
    }
    l
}

fn reconstruct_clipped(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let n = eig.eigenvalues.len();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        // Already PSD: reconstruction would only add roundoff.
        return &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues)
            * eig.eigenvectors.transpose();
    }
    let clipped = DVector::from_fn(n, |i, _| eig.eigenvalues[i].max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Max absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()))
}

/// Outer product u v^T.
pub fn outer(u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(u.len(), v.len());
    for i in 0..u.len() {
        for j in 0..v.len() {
            out[(i, j)] = u[i] * v[j];
        }
    }
    out
}
