//! Dense linear-algebra primitives shared by the synthesizers: SVD-based
//! pseudoinverse and null-space bases, column-major vectorization, and the
//! Kronecker lift that turns left matrix multiplication into a linear map
//! on vectorized matrices.
//!
//! Rank decisions follow a single convention everywhere: singular values
//! below `rel_tol * sigma_max` count as zero, with [`DEFAULT_RANK_TOL`] as
//! the default relative tolerance.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{JobSvd, SVDDC, SVD};

use crate::{Error, Result};

/// Default relative tolerance for treating a singular value as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Orthonormal basis for the null space of some matrix `psi`.
///
/// The columns of `basis` satisfy `psi * basis ~ 0` and
/// `basis^T * basis = I`. A basis with zero columns is a legal value and
/// means the null space is trivial.
#[derive(Debug, Clone)]
pub struct NullSpaceBasis {
    basis: Array2<f64>,
    tolerance_used: f64,
}

impl NullSpaceBasis {
    /// Trivial null space inside an `ambient_dim`-dimensional space.
    pub fn empty(ambient_dim: usize) -> Self {
        NullSpaceBasis {
            basis: Array2::zeros((ambient_dim, 0)),
            tolerance_used: DEFAULT_RANK_TOL,
        }
    }

    /// The whole `ambient_dim`-dimensional space (null space of a zero map).
    pub fn full(ambient_dim: usize) -> Self {
        NullSpaceBasis {
            basis: Array2::eye(ambient_dim),
            tolerance_used: DEFAULT_RANK_TOL,
        }
    }

    /// Dimension of the ambient space (the column count of the parent
    /// matrix the basis was computed from).
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Number of basis vectors, i.e. the nullity.
    pub fn num_vectors(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.ncols() == 0
    }

    /// The basis matrix itself, `ambient_dim x num_vectors`.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.basis
    }

    /// Relative rank tolerance in effect when the basis was computed.
    pub fn tolerance_used(&self) -> f64 {
        self.tolerance_used
    }
}

pub(crate) fn ensure_finite(name: &str, m: &ArrayView2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} contains non-finite entries"
        )))
    }
}

/// Largest absolute entry; zero for empty matrices.
pub(crate) fn max_abs(m: &ArrayView2<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn max_abs_vec(v: &ArrayView1<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

pub(crate) fn hstack(blocks: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    concatenate(Axis(1), blocks).map_err(|e| Error::DimensionMismatch(e.to_string()))
}

pub(crate) fn vstack(blocks: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    concatenate(Axis(0), blocks).map_err(|e| Error::DimensionMismatch(e.to_string()))
}

/// Moore–Penrose pseudoinverse with the default rank tolerance.
pub fn pinv(m: &Array2<f64>) -> Result<Array2<f64>> {
    pinv_with_tol(m, DEFAULT_RANK_TOL)
}

/// Moore–Penrose pseudoinverse via thin SVD.
///
/// Singular values below `rel_tol * sigma_max` are treated as zero, so the
/// result is the pseudoinverse of the nearest matrix of the detected rank.
pub fn pinv_with_tol(m: &Array2<f64>, rel_tol: f64) -> Result<Array2<f64>> {
    pinv_scaled(m, rel_tol, 0.0)
}

/// Pseudoinverse whose rank cutoff is anchored at
/// `rel_tol * max(sigma_max, scale)`. Passing an external `scale` lets a
/// caller treat a matrix that is pure round-off noise of an exact zero
/// (so `sigma_max` itself is meaningless) as rank zero.
pub(crate) fn pinv_scaled(m: &Array2<f64>, rel_tol: f64, scale: f64) -> Result<Array2<f64>> {
    ensure_finite("pinv input", &m.view())?;
    if rel_tol <= 0.0 {
        return Err(Error::InvalidArgument(
            "rank tolerance must be positive".into(),
        ));
    }
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Ok(Array2::zeros((cols, rows)));
    }
    let (u, sigma, vt) = m
        .svddc(JobSvd::Some)
        .map_err(|e| Error::Numeric(format!("SVD failed: {e}")))?;
    let u = u.expect("thin SVD returns U");
    let vt = vt.expect("thin SVD returns V^T");
    let sigma_max = sigma.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max == 0.0 {
        return Ok(Array2::zeros((cols, rows)));
    }
    let cutoff = rel_tol * sigma_max.max(scale);
    // V * diag(1/sigma_i for sigma_i > cutoff, else 0) * U^T
    let mut scaled_ut = u.t().to_owned();
    for (i, s) in sigma.iter().enumerate() {
        let inv = if *s > cutoff { 1.0 / s } else { 0.0 };
        scaled_ut.row_mut(i).mapv_inplace(|x| x * inv);
    }
    Ok(vt.t().dot(&scaled_ut))
}

/// Orthonormal basis of `{v : psi v = 0}`.
///
/// The basis columns are the right singular vectors associated with
/// singular values at or below `rel_tol * sigma_max`; a full-column-rank
/// `psi` yields a basis with zero columns, and `psi = 0` yields the
/// identity.
pub fn null_space_basis(psi: &Array2<f64>, rel_tol: f64) -> Result<NullSpaceBasis> {
    null_space_basis_scaled(psi, rel_tol, 0.0)
}

/// Null-space basis whose rank cutoff is anchored at
/// `rel_tol * max(sigma_max, scale)`.
///
/// The synthesizers pass the magnitude of the matrices `psi` was computed
/// from: when a step's `psi` is exactly zero in exact arithmetic, the
/// computed matrix is round-off noise and a cutoff relative to its own
/// `sigma_max` would misread that noise as full rank.
pub(crate) fn null_space_basis_scaled(
    psi: &Array2<f64>,
    rel_tol: f64,
    scale: f64,
) -> Result<NullSpaceBasis> {
    ensure_finite("null_space_basis input", &psi.view())?;
    if rel_tol <= 0.0 {
        return Err(Error::InvalidArgument(
            "rank tolerance must be positive".into(),
        ));
    }
    let (rows, cols) = psi.dim();
    if cols == 0 {
        return Ok(NullSpaceBasis {
            basis: Array2::zeros((0, 0)),
            tolerance_used: rel_tol,
        });
    }
    if rows == 0 {
        return Ok(NullSpaceBasis {
            basis: Array2::eye(cols),
            tolerance_used: rel_tol,
        });
    }
    let (_, sigma, vt) = psi
        .svd(false, true)
        .map_err(|e| Error::Numeric(format!("SVD failed: {e}")))?;
    let vt = vt.expect("full SVD returns V^T");
    let sigma_max = sigma.iter().cloned().fold(0.0f64, f64::max);
    let rank = if sigma_max == 0.0 {
        0
    } else {
        let cutoff = rel_tol * sigma_max.max(scale);
        sigma.iter().filter(|s| **s > cutoff).count()
    };
    // Rows rank..cols of V^T span the null space; V^T is cols x cols here.
    let basis = vt.slice(s![rank.., ..]).t().to_owned();
    Ok(NullSpaceBasis {
        basis,
        tolerance_used: rel_tol,
    })
}

/// Basis of the intersection of two null spaces, computed as the null
/// space of the vertically stacked matrix.
pub fn null_space_intersection(psi_a: &Array2<f64>, psi_b: &Array2<f64>) -> Result<NullSpaceBasis> {
    if psi_a.ncols() != psi_b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "null-space intersection needs equal column counts, got {} and {}",
            psi_a.ncols(),
            psi_b.ncols()
        )));
    }
    let stacked = vstack(&[psi_a.view(), psi_b.view()])?;
    null_space_basis(&stacked, DEFAULT_RANK_TOL)
}

/// Column-major vectorization: stacks the columns of `m` into one vector.
pub fn vectorize(m: &ArrayView2<f64>) -> Array1<f64> {
    Array1::from_iter(m.t().iter().copied())
}

/// Inverse of [`vectorize`]: rebuilds a `rows x cols` matrix from a
/// column-major stacked vector.
pub fn unvectorize(v: &ArrayView1<f64>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape a vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    let col_major = Array2::from_shape_vec((cols, rows), v.to_vec())
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok(col_major.reversed_axes().to_owned())
}

/// The block-diagonal lift `I_{n_cols} (x) m`, satisfying
/// `left_kron_lift(m, c) * vectorize(phi) = vectorize(m * phi)` for any
/// `phi` with `c` columns.
pub fn left_kron_lift(m: &ArrayView2<f64>, n_cols: usize) -> Array2<f64> {
    let (r, c) = m.dim();
    let mut out = Array2::zeros((n_cols * r, n_cols * c));
    for k in 0..n_cols {
        out.slice_mut(s![k * r..(k + 1) * r, k * c..(k + 1) * c])
            .assign(m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn assert_moore_penrose(m: &Array2<f64>, mp: &Array2<f64>) {
        let scale = max_abs(&m.view()).max(1.0);
        let tol = 1e-10 * scale;
        let m_mp_m = m.dot(mp).dot(m);
        let mp_m_mp = mp.dot(m).dot(mp);
        assert!(max_abs(&(&m_mp_m - m).view()) <= tol, "M M+ M != M");
        assert!(max_abs(&(&mp_m_mp - mp).view()) <= tol, "M+ M M+ != M+");
        let m_mp = m.dot(mp);
        let mp_m = mp.dot(m);
        assert!(max_abs(&(&m_mp - &m_mp.t()).view()) <= tol, "M M+ not symmetric");
        assert!(max_abs(&(&mp_m - &mp_m.t()).view()) <= tol, "M+ M not symmetric");
    }

    #[test]
    fn pinv_identity() {
        let m: Array2<f64> = Array2::eye(3);
        let mp = pinv(&m).unwrap();
        assert_abs_diff_eq!(mp, Array2::eye(3), epsilon = 1e-14);
    }

    #[test]
    fn pinv_zero_matrix() {
        let m: Array2<f64> = Array2::zeros((2, 3));
        let mp = pinv(&m).unwrap();
        assert_eq!(mp.dim(), (3, 2));
        assert_eq!(max_abs(&mp.view()), 0.0);
    }

    #[test]
    fn pinv_rank_deficient_projector() {
        let m = array![[1.0, 0.0], [0.0, 0.0]];
        let mp = pinv(&m).unwrap();
        assert_moore_penrose(&m, &mp);
        assert_abs_diff_eq!(mp, m, epsilon = 1e-14);
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let m = array![[f64::NAN, 0.0], [0.0, 1.0]];
        assert!(pinv(&m).is_err());
    }

    #[test]
    fn null_space_of_identity_is_trivial() {
        let basis = null_space_basis(&Array2::eye(4), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.num_vectors(), 0);
        assert_eq!(basis.ambient_dim(), 4);
    }

    #[test]
    fn null_space_of_zero_is_full() {
        let basis = null_space_basis(&Array2::zeros((3, 5)), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.num_vectors(), 5);
        let gram = basis.matrix().t().dot(basis.matrix());
        assert_abs_diff_eq!(gram, Array2::eye(5), epsilon = 1e-12);
    }

    #[test]
    fn null_space_of_row_sum() {
        // Null([[1, 1]]) is spanned by (1, -1)/sqrt(2).
        let psi = array![[1.0, 1.0]];
        let basis = null_space_basis(&psi, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.num_vectors(), 1);
        let v = basis.matrix().column(0).to_owned();
        assert_abs_diff_eq!(psi.dot(&v)[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.dot(&v), 1.0, epsilon = 1e-12);
        // Span check: |v . (1,-1)/sqrt(2)| = 1.
        let dir = array![1.0, -1.0] / 2.0f64.sqrt();
        assert_abs_diff_eq!(v.dot(&dir).abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn intersection_with_identity_is_trivial() {
        let basis = null_space_intersection(&Array2::eye(3), &Array2::zeros((2, 3))).unwrap();
        assert_eq!(basis.num_vectors(), 0);
    }

    #[test]
    fn intersection_of_zeros_is_full() {
        let basis =
            null_space_intersection(&Array2::zeros((1, 3)), &Array2::zeros((2, 3))).unwrap();
        assert_eq!(basis.num_vectors(), 3);
    }

    #[test]
    fn intersection_of_coordinate_annihilators() {
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0]];
        let basis = null_space_intersection(&a, &b).unwrap();
        assert_eq!(basis.num_vectors(), 0);
    }

    #[test]
    fn intersection_rejects_mismatched_columns() {
        let a = Array2::zeros((1, 3));
        let b = Array2::zeros((1, 4));
        assert!(null_space_intersection(&a, &b).is_err());
    }

    #[test]
    fn vectorize_is_column_major() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        let v = vectorize(&m.view());
        assert_eq!(v.to_vec(), vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn vectorize_row_vector_keeps_entries() {
        let m = array![[5.0, 6.0, 7.0]];
        assert_eq!(vectorize(&m.view()).to_vec(), vec![5.0, 6.0, 7.0]);
    }

    #[test]
    fn unvectorize_rejects_bad_length() {
        let v = Array1::zeros(5);
        assert!(unvectorize(&v.view(), 2, 3).is_err());
    }

    #[test]
    fn lift_with_single_column_is_the_matrix() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        assert_abs_diff_eq!(left_kron_lift(&m.view(), 1), m, epsilon = 0.0);
    }

    #[test]
    fn lift_of_identity_is_identity() {
        let m: Array2<f64> = Array2::eye(3);
        assert_abs_diff_eq!(left_kron_lift(&m.view(), 2), Array2::eye(6), epsilon = 0.0);
    }

    proptest! {
        #[test]
        fn vec_unvec_roundtrip(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let m = test_matrix(rows, cols, seed);
            let v = vectorize(&m.view());
            let back = unvectorize(&v.view(), rows, cols).unwrap();
            prop_assert_eq!(m, back);
        }

        #[test]
        fn lift_matches_left_multiplication(seed in 0u64..1000) {
            let m = test_matrix(2, 2, seed);
            let phi = test_matrix(2, 3, seed.wrapping_add(17));
            let lifted = left_kron_lift(&m.view(), 3);
            let lhs = lifted.dot(&vectorize(&phi.view()));
            let rhs = vectorize(&m.dot(&phi).view());
            prop_assert!(max_abs_vec(&(&lhs - &rhs).view()) <= 1e-12);
        }

        #[test]
        fn moore_penrose_identities_hold(rows in 1usize..6, cols in 1usize..6, seed in 0u64..500) {
            let m = test_matrix(rows, cols, seed);
            let mp = pinv(&m).unwrap();
            assert_moore_penrose(&m, &mp);
        }

        #[test]
        fn null_space_residual_and_rank(rows in 1usize..6, cols in 1usize..6, seed in 0u64..500) {
            let m = test_matrix(rows, cols, seed);
            let basis = null_space_basis(&m, DEFAULT_RANK_TOL).unwrap();
            let residual = m.dot(basis.matrix());
            prop_assert!(max_abs(&residual.view()) <= 1e-10 * max_abs(&m.view()).max(1.0));
            // rank(basis) + rank(m) = cols
            let rank_m = cols - basis.num_vectors();
            let mp = pinv(&m).unwrap();
            let proj = m.dot(&mp);
            let rank_from_proj = proj.diag().sum().round() as usize;
            prop_assert_eq!(rank_m, rank_from_proj);
        }

        #[test]
        fn range_membership_is_solvable(rows in 1usize..6, cols in 1usize..6, seed in 0u64..500) {
            // For b in range(M), M M+ b = b.
            let m = test_matrix(rows, cols, seed);
            let x = test_matrix(cols, 1, seed.wrapping_add(3));
            let b = m.dot(&x);
            let mp = pinv(&m).unwrap();
            let reproduced = m.dot(&mp).dot(&b);
            prop_assert!(max_abs(&(&reproduced - &b).view()) <= 1e-10 * max_abs(&b.view()).max(1.0));
        }
    }

    /// Deterministic pseudo-random matrix for property tests.
    pub(crate) fn test_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        Array2::from_shape_fn((rows, cols), |_| next())
    }
}
