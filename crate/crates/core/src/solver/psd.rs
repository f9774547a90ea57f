use nalgebra::DMatrix;

/// Clamps the eigenvalues of a symmetric matrix to `>= floor` and reassembles it.
///
/// Matrices that already satisfy the bound up to a relative `1e-12` of the
/// largest diagonal entry (checked with a Cholesky factorization) are
/// returned unchanged.
pub fn project_psd(h: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let n = h.nrows();
    let scale = h.diagonal().amax();
    let shifted = h - DMatrix::identity(n, n) * (floor - 1e-12 * scale);
    if shifted.cholesky().is_some() {
        return h.clone();
    }
    let sym = 0.5 * (h + h.transpose());
    let mut eig = sym.symmetric_eigen();
    for lambda in eig.eigenvalues.iter_mut() {
        if *lambda < floor {
            *lambda = floor;
        }
    }
    eig.recompose()
}
