//! Shared dense helpers built on symmetric eigendecomposition. The iterative
//! bidiagonal SVD can fail to terminate on matrices with clustered singular
//! values, so singular values and least squares go through the Gram matrix
//! instead; everything here is small and dense.

use nalgebra::{DMatrix, DVector};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) / 2.0
}

/// Singular values in descending order, computed from the smaller Gram matrix.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows().min(m.ncols());
    if d == 0 {
        return DVector::zeros(0);
    }
    if !m.iter().all(|v| v.is_finite()) {
        return DVector::from_element(d, f64::NAN);
    }
    let gram = if m.nrows() <= m.ncols() {
        symmetrize(&(m * m.transpose()))
    } else {
        symmetrize(&(m.transpose() * m))
    };
    let mut vals: Vec<f64> =
        gram.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(vals)
}

/// Spectral radius by normalized repeated squaring: after J doublings the
/// running product equals ||A^(2^J)||^(2^-J), which converges to the radius
/// (Gelfand). No nonsymmetric eigenvalue iteration is involved, so clustered
/// or defective spectra cannot stall it.
pub(crate) fn spectral_radius(matrix: &DMatrix<f64>) -> f64 {
    let s0 = spectral_norm(matrix);
    if s0 == 0.0 {
        return 0.0;
    }
    if !s0.is_finite() {
        return f64::NAN;
    }
    let mut c = matrix / s0;
    let mut log_rho = s0.ln();
    for j in 1..=60 {
        let sq = &c * &c;
        let t = spectral_norm(&sq);
        if t == 0.0 {
            return 0.0;
        }
        log_rho += t.ln() * 0.5f64.powi(j);
        c = sq / t;
    }
    log_rho.exp()
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    singular_values(m)[0]
}

/// Minimum-norm least-squares solution of A X = B via the pseudo-inverse of
/// the Gram matrix; eigenvalues below `rel_cut` times the largest count as
/// zero.
pub(crate) fn least_squares_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    rel_cut: f64,
) -> DMatrix<f64> {
    // X = V diag(1/lam) V' A' B with V, lam from eig(A'A)
    let gram = symmetrize(&(a.transpose() * a));
    let eig = gram.symmetric_eigen();
    let lam_max = eig.eigenvalues.max().max(0.0);
    let tol = lam_max * rel_cut;
    let atb = a.transpose() * b;
    let mut x = DMatrix::zeros(a.ncols(), b.ncols());
    for i in 0..eig.eigenvalues.len() {
        let lam = eig.eigenvalues[i];
        if lam > tol && lam > 0.0 {
            let v = eig.eigenvectors.column(i);
            let w = v.transpose() * &atb / lam;
            x += v * w;
        }
    }
    x
}
