//! Dense linear-algebra kernels.
//!
//! Matrices are stored in single precision. Reductions (norms, means, Gram
//! matrices) and all factorizations run in double precision internally and are
//! rounded back on output.

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default number of rows per similarity block.
pub const DEFAULT_BLOCK_ROWS: usize = 4096;

/// Rows whose norm falls below this after mean centering are treated as
/// degenerate.
const DEGENERATE_NORM: f64 = 1e-6;

/// Relative eigenvalue floor used by inverse square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Tolerance on `max |m - m^T|` accepted by [`matrix_sqrt_psd`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-4;

/// Row-major single-precision matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(Array2<f32>);

impl DenseMatrix {
    pub fn new(array: Array2<f32>) -> Result<Self> {
        if array.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self::from_array_unchecked(array))
    }

    pub fn from_shape_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let array = Array2::from_shape_vec((rows, cols), data).map_err(|e| {
            Error::DimensionMismatch(format!("{rows}x{cols} from buffer: {e}"))
        })?;
        Self::new(array)
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Self::from_shape_vec(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Array2::zeros((rows, cols)))
    }

    pub fn identity(n: usize) -> Self {
        Self(Array2::eye(n))
    }

    pub(crate) fn from_array_unchecked(array: Array2<f32>) -> Self {
        if array.is_standard_layout() {
            Self(array)
        } else {
            Self(array.as_standard_layout().into_owned())
        }
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f32> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f32> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.0[[row, col]]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.cols();
        &self.0.as_slice().expect("standard layout")[i * cols..(i + 1) * cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        self.0.as_slice().expect("standard layout")
    }

    /// The first `n` rows (or all rows when `n` exceeds the row count).
    pub fn head(&self, n: usize) -> DenseMatrix {
        let n = n.min(self.rows());
        Self(self.0.slice(s![..n, ..]).to_owned())
    }

    /// The first `n` columns.
    pub fn leading_columns(&self, n: usize) -> DenseMatrix {
        let n = n.min(self.cols());
        Self::from_array_unchecked(self.0.slice(s![.., ..n]).to_owned())
    }

    pub fn select_rows(&self, indices: &[usize]) -> DenseMatrix {
        Self(self.0.select(Axis(0), indices))
    }

    pub fn transpose(&self) -> DenseMatrix {
        Self::from_array_unchecked(self.0.t().to_owned())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols() != other.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} times {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self(self.0.dot(&other.0)))
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f32) -> DenseMatrix {
        Self(&self.0 * factor)
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.cols(), |i, j| self.0[[i, j]] as f64)
    }

    pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> DenseMatrix {
        Self(Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| {
            m[(i, j)] as f32
        }))
    }
}

/// Thin singular value decomposition `m = u * diag(s) * vt`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: DenseMatrix,
    /// Nonnegative, nonincreasing.
    pub s: Vec<f64>,
    pub vt: DenseMatrix,
}

/// Double-precision SVD used internally where the singular values feed a
/// convergence test.
#[derive(Clone, Debug)]
pub(crate) struct Svd64 {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

/// Divides every row by its Euclidean norm.
pub fn length_normalize(m: &DenseMatrix) -> Result<DenseMatrix> {
    scale_rows_to_unit(m, 0.0)
}

/// Subtracts the per-column mean from every row.
pub fn mean_center(m: &DenseMatrix) -> DenseMatrix {
    let means: Vec<f64> = column_means(m);
    let mut out = m.0.clone();
    for mut row in out.rows_mut() {
        for (v, mean) in row.iter_mut().zip(&means) {
            *v = (*v as f64 - mean) as f32;
        }
    }
    DenseMatrix(out)
}

pub fn column_means(m: &DenseMatrix) -> Vec<f64> {
    let mut sums = vec![0.0f64; m.cols()];
    for row in m.0.rows() {
        for (acc, v) in sums.iter_mut().zip(row.iter()) {
            *acc += *v as f64;
        }
    }
    let n = m.rows().max(1) as f64;
    sums.iter().map(|s| s / n).collect()
}

/// Length-normalize, mean-center each column, then length-normalize again.
pub fn normalize(m: &DenseMatrix) -> Result<DenseMatrix> {
    let unit = length_normalize(m)?;
    let centered = mean_center(&unit);
    scale_rows_to_unit(&centered, DEGENERATE_NORM)
}

fn scale_rows_to_unit(m: &DenseMatrix, min_norm: f64) -> Result<DenseMatrix> {
    let mut out = m.0.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if !(norm > min_norm) {
            return Err(Error::ZeroRow { row: i });
        }
        row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
    }
    Ok(DenseMatrix(out))
}

pub(crate) fn svd64(m: &DMatrix<f64>) -> Result<Svd64> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or(Error::NoConvergence("SVD"))?;
    let mut u = svd.u.ok_or(Error::NoConvergence("SVD"))?;
    let mut vt = svd.v_t.ok_or(Error::NoConvergence("SVD"))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();

    // try_new sorts already; keep the ordering explicit so the contract does
    // not depend on the backend.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if order.iter().enumerate().any(|(i, &o)| i != o) {
        u = DMatrix::from_fn(rows, k, |i, j| u[(i, order[j])]);
        vt = DMatrix::from_fn(k, cols, |i, j| vt[(order[i], j)]);
        s = order.iter().map(|&o| s[o]).collect();
    }

    for j in 0..k {
        let mut pivot = 0;
        for i in 1..rows {
            if u[(i, j)].abs() > u[(pivot, j)].abs() {
                pivot = i;
            }
        }
        if u[(pivot, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            vt.row_mut(j).neg_mut();
        }
    }
    Ok(Svd64 { u, s, vt })
}

/// Thin SVD with a deterministic sign convention: in every left singular
/// vector the entry of largest magnitude is nonnegative.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    let out = svd64(&m.to_dmatrix())?;
    Ok(SvdResult {
        u: DenseMatrix::from_dmatrix(&out.u),
        s: out.s,
        vt: DenseMatrix::from_dmatrix(&out.vt),
    })
}

/// Rows `row_range` of `a * b^T`.
pub fn similarity_block(
    a: &DenseMatrix,
    b: &DenseMatrix,
    row_range: Range<usize>,
) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns against {}",
            a.cols(),
            b.cols()
        )));
    }
    if row_range.is_empty() {
        return Err(Error::EmptyRange);
    }
    if row_range.end > a.rows() {
        return Err(Error::DimensionMismatch(format!(
            "rows {row_range:?} of a {}-row matrix",
            a.rows()
        )));
    }
    Ok(DenseMatrix(similarity_rows(a.view().slice(s![row_range, ..]), b)))
}

pub(crate) fn similarity_rows(a: ArrayView2<'_, f32>, b: &DenseMatrix) -> Array2<f32> {
    a.dot(&b.0.t())
}

/// Symmetric eigendecomposition with eigenvalues mapped through `f`:
/// returns `V * diag(f(lambda)) * V^T`.
pub(crate) fn spectral_map(
    m: &DMatrix<f64>,
    f: impl Fn(f64) -> f64,
) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or(Error::NoConvergence("symmetric eigendecomposition"))?;
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&mapped) * v.transpose())
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Negative eigenvalues (numerical noise) are clamped to zero.
pub fn matrix_sqrt_psd(m: &DenseMatrix) -> Result<DenseMatrix> {
    if m.rows() != m.cols() {
        return Err(Error::DimensionMismatch(format!(
            "square root of a {:?} matrix",
            m.shape()
        )));
    }
    let m64 = m.to_dmatrix();
    let asym = max_asymmetry(&m64);
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (&m64 + m64.transpose()) * 0.5;
    let root = spectral_map(&sym, |l| l.max(0.0).sqrt())?;
    Ok(DenseMatrix::from_dmatrix(&root))
}

pub(crate) fn gram64(m: &DenseMatrix) -> DMatrix<f64> {
    let a = m.to_dmatrix();
    a.transpose() * a
}

/// Eigenvalue floor for a Gram matrix: `EIGEN_FLOOR` times its largest
/// eigenvalue.
pub(crate) fn gram_floor(gram: &DMatrix<f64>) -> Result<f64> {
    let eig = SymmetricEigen::try_new(gram.clone(), f64::EPSILON, 0)
        .ok_or(Error::NoConvergence("symmetric eigendecomposition"))?;
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return Err(Error::RankDeficient);
    }
    Ok(EIGEN_FLOOR * max)
}

pub(crate) fn gram_power(gram: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    let floor = gram_floor(gram)?;
    spectral_map(gram, |l| l.max(floor).powf(power))
}

/// `(m^T m)^(-1/2)`, so that `m * W` has an identity Gram matrix.
pub fn whiten_transform(m: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(DenseMatrix::from_dmatrix(&gram_power(&gram64(m), -0.5)?))
}

/// `sqrt(E * E^T)` computed from the small `d x d` Gram matrix of `E`:
/// `E * (E^T E)^(-1/2) * E^T`, using a pseudo-inverse for null directions.
///
/// Equal to [`matrix_sqrt_psd`] applied to `E * E^T`, at `O(n^2 d)` cost
/// instead of `O(n^3)`.
pub fn sqrt_outer_gram(e: &DenseMatrix) -> Result<DenseMatrix> {
    let gram = gram64(e);
    let floor = gram_floor(&gram)?;
    let inv_root = spectral_map(&gram, |l| if l > floor { l.powf(-0.5) } else { 0.0 })?;
    let left = DenseMatrix::from_dmatrix(&(e.to_dmatrix() * inv_root));
    Ok(DenseMatrix(similarity_rows(left.view(), e)))
}

/// Sorts each row independently in descending order.
pub fn sort_rows_desc(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.0.clone();
    for mut row in out.rows_mut() {
        let slice = row.as_slice_mut().expect("standard layout");
        slice.sort_by(|a, b| b.total_cmp(a));
    }
    DenseMatrix(out)
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the signs of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DenseMatrix {
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    DenseMatrix::from_dmatrix(&q)
}

/// `max |m^T m - I|`.
pub fn orthogonality_error(m: &DenseMatrix) -> f64 {
    let g = gram64(m);
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        DenseMatrix::from_shape_vec(rows, cols, data).unwrap()
    }

    fn naive_product(a: &DenseMatrix, b: &DenseMatrix) -> Vec<Vec<f64>> {
        (0..a.rows())
            .map(|i| {
                (0..b.rows())
                    .map(|j| {
                        a.row(i)
                            .iter()
                            .zip(b.row(j))
                            .map(|(x, y)| *x as f64 * *y as f64)
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn normalize_worked_example() {
        let m = DenseMatrix::from_rows(&[[3.0, 0.0], [0.0, 4.0]]).unwrap();
        let step1 = length_normalize(&m).unwrap();
        assert_eq!(step1, DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
        let step2 = mean_center(&step1);
        assert_eq!(
            step2,
            DenseMatrix::from_rows(&[[0.5, -0.5], [-0.5, 0.5]]).unwrap()
        );
        let out = normalize(&m).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let expected = DenseMatrix::from_rows(&[[h, -h], [-h, h]]).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-7);
        // input untouched
        assert_eq!(m.get(1, 1), 4.0);
    }

    #[test]
    fn normalize_single_row_is_degenerate() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(normalize(&m), Err(Error::ZeroRow { row: 0 })));
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(length_normalize(&m), Err(Error::ZeroRow { row: 1 })));
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let out = svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(out.s, vec![1.0, 1.0, 1.0]);

        let d = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 3.0]]).unwrap();
        let out = svd(&d).unwrap();
        assert!((out.s[0] - 3.0).abs() < 1e-12 && (out.s[1] - 2.0).abs() < 1e-12);
        for m in [&out.u, &out.vt] {
            for i in 0..2 {
                for j in 0..2 {
                    let v = m.get(i, j).abs();
                    assert!(v < 1e-6 || (v - 1.0).abs() < 1e-6);
                }
            }
        }
        // sign convention: largest entry of each u column is positive
        assert!(out.u.get(1, 0) > 0.0 && out.u.get(0, 1) > 0.0);
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        let m = gaussian(10, 4, 7);
        let out = svd(&m).unwrap();
        assert_eq!(out.u.shape(), (10, 4));
        assert_eq!(out.vt.shape(), (4, 4));
        assert!(out.s.windows(2).all(|w| w[0] >= w[1]));
        assert!(orthogonality_error(&out.u) < 1e-4);
        assert!(orthogonality_error(&out.vt.transpose()) < 1e-4);
        let mut us = out.u.clone().into_array();
        for (j, s) in out.s.iter().enumerate() {
            us.column_mut(j).mapv_inplace(|v| v * *s as f32);
        }
        let rebuilt = DenseMatrix::new(us.dot(out.vt.as_array())).unwrap();
        let err = DenseMatrix::new(rebuilt.as_array() - m.as_array())
            .unwrap()
            .frobenius_norm();
        assert!(err / m.frobenius_norm() < 1e-3);
    }

    #[test]
    fn svd_is_deterministic() {
        let m = gaussian(6, 6, 3);
        let a = svd(&m).unwrap();
        let b = svd(&m).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.vt, b.vt);
    }

    #[test]
    fn similarity_block_matches_naive_slice() {
        let a = gaussian(5, 3, 1);
        let b = gaussian(4, 3, 2);
        let block = similarity_block(&a, &b, 1..3).unwrap();
        assert_eq!(block.shape(), (2, 4));
        let full = naive_product(&a, &b);
        for i in 0..2 {
            for j in 0..4 {
                assert!((block.get(i, j) as f64 - full[i + 1][j]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn similarity_block_orthonormal_rows_give_identity() {
        let q = random_orthogonal(4, &mut ChaCha8Rng::seed_from_u64(9));
        let block = similarity_block(&q, &q, 0..4).unwrap();
        assert!(block.max_abs_diff(&DenseMatrix::identity(4)) < 1e-5);
    }

    #[test]
    fn similarity_block_errors() {
        let a = gaussian(3, 2, 1);
        let b = gaussian(3, 3, 1);
        assert!(matches!(
            similarity_block(&a, &b, 0..1),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            similarity_block(&a, &a, 2..2),
            Err(Error::EmptyRange)
        ));
    }

    #[test]
    fn sqrt_of_diagonal_and_identity() {
        let id = DenseMatrix::identity(3);
        assert!(matrix_sqrt_psd(&id).unwrap().max_abs_diff(&id) < 1e-6);
        let m = DenseMatrix::from_rows(&[[4.0, 0.0], [0.0, 9.0]]).unwrap();
        let r = matrix_sqrt_psd(&m).unwrap();
        let expected = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 3.0]]).unwrap();
        assert!(r.max_abs_diff(&expected) < 1e-6);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = gaussian(6, 4, 11);
        let m = a.matmul(&a.transpose()).unwrap();
        let r = matrix_sqrt_psd(&m).unwrap();
        let rr = r.matmul(&r).unwrap();
        let err = DenseMatrix::new(rr.as_array() - m.as_array())
            .unwrap()
            .frobenius_norm();
        assert!(err / m.frobenius_norm() < 1e-3);
    }

    #[test]
    fn sqrt_rejects_asymmetric() {
        let m = DenseMatrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(matches!(matrix_sqrt_psd(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn sqrt_outer_gram_matches_eigen_route() {
        let e = normalize(&gaussian(30, 5, 4)).unwrap();
        let direct = matrix_sqrt_psd(&e.matmul(&e.transpose()).unwrap()).unwrap();
        let factored = sqrt_outer_gram(&e).unwrap();
        // Null eigenvalues of the f32 product carry ~1e-7 noise whose square
        // root shows up entrywise in the direct route, so compare globally.
        let diff = DenseMatrix::new(direct.as_array() - factored.as_array()).unwrap();
        assert!(diff.frobenius_norm() / direct.frobenius_norm() < 1e-3);
        let squared = factored.matmul(&factored).unwrap();
        let m = e.matmul(&e.transpose()).unwrap();
        assert!(squared.max_abs_diff(&m) < 1e-5);
    }

    #[test]
    fn whitening_examples() {
        let q = random_orthogonal(3, &mut ChaCha8Rng::seed_from_u64(5));
        let w = whiten_transform(&q).unwrap();
        assert!(w.max_abs_diff(&DenseMatrix::identity(3)) < 1e-5);

        let m = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap();
        let w = whiten_transform(&m).unwrap();
        let expected = DenseMatrix::from_rows(&[[0.5, 0.0], [0.0, 0.5]]).unwrap();
        assert!(w.max_abs_diff(&expected) < 1e-6);

        let m = gaussian(40, 6, 8);
        let w = whiten_transform(&m).unwrap();
        let mw = m.matmul(&w).unwrap();
        assert!(orthogonality_error(&mw) < 1e-3);
    }

    #[test]
    fn whitening_of_zero_matrix_fails() {
        assert!(matches!(
            whiten_transform(&DenseMatrix::zeros(3, 2)),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn sort_rows_examples() {
        let m = DenseMatrix::from_rows(&[[0.1, 0.9, 0.5], [3.0, 2.0, 1.0]]).unwrap();
        let sorted = sort_rows_desc(&m);
        assert_eq!(sorted.row(0), &[0.9, 0.5, 0.1]);
        assert_eq!(sorted.row(1), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            DenseMatrix::from_rows(&[[f32::NAN]]),
            Err(Error::NonFinite)
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sort_rows_is_a_descending_permutation(
                rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 5), 1..6)
            ) {
                let m = DenseMatrix::from_rows(&rows).unwrap();
                let sorted = sort_rows_desc(&m);
                for (i, row) in rows.iter().enumerate() {
                    let out = sorted.row(i);
                    prop_assert!(out.windows(2).all(|w| w[0] >= w[1]));
                    let mut a = row.clone();
                    let mut b = out.to_vec();
                    a.sort_by(f32::total_cmp);
                    b.sort_by(f32::total_cmp);
                    prop_assert_eq!(a, b);
                }
            }

            #[test]
            fn normalize_gives_unit_rows(seed in 0u64..1000, rows in 2usize..30, cols in 2usize..12) {
                let m = gaussian(rows, cols, seed);
                let centered = mean_center(&length_normalize(&m).unwrap());
                prop_assert!(column_means(&centered).iter().all(|v| v.abs() < 1e-6));
                if let Ok(out) = normalize(&m) {
                    for i in 0..rows {
                        let n: f64 = out.row(i).iter().map(|v| (*v as f64).powi(2)).sum();
                        prop_assert!((n.sqrt() - 1.0).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
