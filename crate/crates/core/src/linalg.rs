//! Small dense linear-algebra helpers: left singular pairs of wide matrices,
//! numerical rank, orthonormal bases and principal angles.

use nalgebra::{DMatrix, DVector, SVD};

/// Left singular vectors and singular values of an `n × N` matrix,
/// sorted by decreasing singular value. `u` is always a full `n × n`
/// orthogonal matrix, so trailing columns span the cokernel.
#[derive(Debug, Clone)]
pub struct LeftSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl LeftSvd {
    /// Number of singular values above `tol` times the largest one.
    pub fn rank(&self, tol: f64) -> usize {
        numeric_rank(&self.singular_values, tol)
    }

    /// Orthonormal basis of the first `r` left singular directions.
    pub fn leading(&self, r: usize) -> DMatrix<f64> {
        self.u.columns(0, r).into_owned()
    }

    /// Orthonormal basis of the trailing `n − r` left singular directions.
    pub fn trailing(&self, r: usize) -> DMatrix<f64> {
        let n = self.u.nrows();
        self.u.columns(r, n - r).into_owned()
    }
}

/// Counts singular values strictly above `tol · σ_max`.
pub fn numeric_rank(singular_values: &[f64], tol: f64) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > tol * smax).count()
}

/// Left SVD of a (typically wide) matrix.
///
/// Wide inputs are first reduced with a QR factorisation of the transpose,
/// `Mᵀ = Q R`, so that only the small `n × n` factor `Rᵀ` is decomposed.
/// This keeps full relative accuracy of the singular values, unlike the
/// Gram-matrix route.
pub fn left_svd(m: &DMatrix<f64>) -> LeftSvd {
    let n = m.nrows();
    let square = if m.ncols() > n {
        let qr = m.transpose().qr();
        qr.r().transpose()
    } else {
        let mut padded = DMatrix::zeros(n, n);
        padded.columns_mut(0, m.ncols()).copy_from(m);
        padded
    };
    let svd = SVD::new(square, true, false);
    let u = svd.u.expect("left singular vectors requested");
    LeftSvd {
        u,
        singular_values: svd.singular_values.iter().cloned().collect(),
    }
}

/// Orthonormal basis for the column span of `m` (relative rank threshold `tol`).
pub fn orthonormal_basis(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let svd = left_svd(m);
    let r = svd.rank(tol);
    svd.leading(r)
}

/// Principal angles (radians, ascending) between the column spans of two
/// matrices with orthonormal columns.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Vec::new();
    }
    let c = a.transpose() * b;
    let svd = SVD::new(c, false, false);
    svd.singular_values
        .iter()
        .map(|&s| s.clamp(-1.0, 1.0).acos())
        .collect()
}

/// Largest principal angle between two subspaces; `π/2` when the dimensions
/// differ (one subspace then has a direction orthogonal to the other).
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    principal_angles(a, b)
        .into_iter()
        .fold(0.0_f64, f64::max)
}

/// Euclidean distance from `v` to the span of the orthonormal columns of `basis`.
pub fn distance_to_span(v: &DVector<f64>, basis: &DMatrix<f64>) -> f64 {
    if basis.ncols() == 0 {
        return v.norm();
    }
    let proj = basis * (basis.transpose() * v);
    (v - proj).norm()
}

/// Orthonormal basis of the orthogonal complement of a nonzero vector.
pub fn complement_basis(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let m = DMatrix::from_column_slice(n, 1, v.as_slice());
    left_svd(&m).trailing(1)
}
