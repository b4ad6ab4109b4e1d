//! Dense row-major `f64` matrices, a cyclic Jacobi symmetric eigensolver and
//! the matrix exponential `exp(-s K)` of a symmetric PSD matrix.
//!
//! Every reduction uses a fixed loop order, so results are bit-identical
//! from run to run.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{dim_err, Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return dim_err("ragged rows");
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return dim_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm_nn(self.rows, self.cols, other.cols, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    /// `selfᵀ * other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return dim_err(format!(
                "matmul_tn {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        gemm_tn(self.cols, self.rows, other.cols, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    /// `self * otherᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return dim_err(format!(
                "matmul_nt {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        gemm_nt(self.rows, self.cols, other.rows, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return dim_err(format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| f(*v)).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        sum_sq(&self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(r, c)] - self[(c, r)]).abs());
            }
        }
        worst
    }

    /// Select columns by index, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |r, c| self[(r, idx[c])])
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Dot product with four interleaved accumulators (fixed order).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

#[inline]
pub fn sum_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out (m×n) = a (m×k) · b (k×n)`; `out` is overwritten.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    out[..m * n].fill(0.0);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik != 0.0 {
                axpy(aik, &b[kk * n..(kk + 1) * n], orow);
            }
        }
    }
}

/// `out (m×n) = aᵀ · b` with `a` stored `k×m` and `b` stored `k×n`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    out[..m * n].fill(0.0);
    for kk in 0..k {
        let brow = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aki = a[kk * m + i];
            if aki != 0.0 {
                axpy(aki, brow, &mut out[i * n..(i + 1) * n]);
            }
        }
    }
}

/// `out (m×n) = a · bᵀ` with `a` stored `m×k` and `b` stored `n×k`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Eigendecomposition `K = Q Λ Qᵀ` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigDecomp {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector of `eigenvalues[k]`.
    pub eigenvectors: DenseMatrix,
}

pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const JACOBI_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

/// Cyclic Jacobi eigensolver.
///
/// Sweeps over all `(p, q)` pairs, annihilating `a_pq` with a plane
/// rotation, until the off-diagonal Frobenius norm drops below
/// `1e-12 · ‖K‖_F`.
pub fn sym_eig(k: &DenseMatrix) -> Result<SymEigDecomp> {
    if !k.is_square() {
        return dim_err(format!("sym_eig on a {}x{} matrix", k.rows(), k.cols()));
    }
    let n = k.rows();
    let scale = k.max_abs();
    let asym = k.max_asymmetry();
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Asymmetric { asymmetry: asym });
    }

    // symmetrize exactly so that the rotations see a symmetric matrix
    let mut a = DenseMatrix::from_fn(n, n, |r, c| 0.5 * (k[(r, c)] + k[(c, r)]));
    let mut v = DenseMatrix::identity(n);
    let target = JACOBI_TOL * a.frobenius_norm();

    let off_norm = |a: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                s += a[(r, c)] * a[(r, c)];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let data = a.as_mut_slice();
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = data[r * n + p];
                    let arq = data[r * n + q];
                    let new_p = c * arp - s * arq;
                    let new_q = s * arp + c * arq;
                    data[r * n + p] = new_p;
                    data[p * n + r] = new_p;
                    data[r * n + q] = new_q;
                    data[q * n + r] = new_q;
                }
                data[p * n + p] = app - t * apq;
                data[q * n + q] = aqq + t * apq;
                data[p * n + q] = 0.0;
                data[q * n + p] = 0.0;

                let vd = v.as_mut_slice();
                for r in 0..n {
                    let vrp = vd[r * n + p];
                    let vrq = vd[r * n + q];
                    vd[r * n + p] = c * vrp - s * vrq;
                    vd[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    if !converged {
        let residual = off_norm(&a);
        if residual > target {
            return Err(Error::NoConvergence { sweeps: JACOBI_MAX_SWEEPS, residual });
        }
    }

    let diag = a.diagonal();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = v.select_columns(&order);
    Ok(SymEigDecomp { eigenvalues, eigenvectors })
}

impl SymEigDecomp {
    /// `Q f(Λ) Qᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.eigenvalues.len();
        let q = &self.eigenvectors;
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        // scaled = Q diag(f)
        let scaled = DenseMatrix::from_fn(n, n, |r, c| q[(r, c)] * fl[c]);
        let mut out = scaled.matmul_nt(q).expect("square factors");
        symmetrize(&mut out);
        out
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(|l| l)
    }

    /// `exp(-scale · K)`; eigenvalues below zero (roundoff on PSD input) are clamped to zero.
    pub fn exp_neg(&self, scale: f64) -> DenseMatrix {
        self.reconstruct_with(|l| (-scale * l.max(0.0)).exp())
    }

    /// `Qᵀ y`.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let q = &self.eigenvectors;
        let n = q.rows();
        let mut out = vec![0.0; q.cols()];
        for r in 0..n {
            axpy(y[r], q.row(r), &mut out);
        }
        out
    }
}

fn symmetrize(m: &mut DenseMatrix) {
    let n = m.rows();
    for r in 0..n {
        for c in (r + 1)..n {
            let avg = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = avg;
            m[(c, r)] = avg;
        }
    }
}

/// `exp(-scale · K)` for symmetric PSD `K`, computed as `Q e^{-scale Λ} Qᵀ`.
pub fn mat_exp_neg_sym(k: &DenseMatrix, scale: f64) -> Result<DenseMatrix> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be finite and >= 0, got {scale}")));
    }
    if !k.is_square() {
        return dim_err(format!("exp of a {}x{} matrix", k.rows(), k.cols()));
    }
    if scale == 0.0 {
        return Ok(DenseMatrix::identity(k.rows()));
    }
    Ok(sym_eig(k)?.exp_neg(scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        a.add(&a.transpose()).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn diagonal_eigenproblem() {
        let d = sym_eig(&DenseMatrix::diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(d.eigenvalues, vec![1.0, 2.0, 3.0]);
        // permutation of identity columns
        for c in 0..3 {
            let col = d.eigenvectors.column(c);
            assert_eq!(col.iter().filter(|v| v.abs() == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|v| **v == 0.0).count(), 2);
        }
    }

    #[test]
    fn identity_eigenvalues() {
        let d = sym_eig(&DenseMatrix::identity(4)).unwrap();
        assert_eq!(d.eigenvalues, vec![1.0; 4]);
    }

    #[test]
    fn two_by_two_roots() {
        let k = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let d = sym_eig(&k).unwrap();
        assert_close(d.eigenvalues[0], 1.0, 1e-14);
        assert_close(d.eigenvalues[1], 3.0, 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(sym_eig(&DenseMatrix::zeros(2, 3)), Err(Error::Dimension(_))));
        let k = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&k), Err(Error::Asymmetric { .. })));
        assert!(matches!(
            mat_exp_neg_sym(&DenseMatrix::identity(2), -1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_matrix_decomposes() {
        let d = sym_eig(&DenseMatrix::zeros(3, 3)).unwrap();
        assert_eq!(d.eigenvalues, vec![0.0; 3]);
    }

    #[test]
    fn exp_scale_zero_is_identity() {
        let k = random_symmetric(5, 1);
        assert_eq!(mat_exp_neg_sym(&k, 0.0).unwrap(), DenseMatrix::identity(5));
    }

    #[test]
    fn exp_of_diagonal() {
        let e = mat_exp_neg_sym(&DenseMatrix::diag(&[0.5, 2.0]), 1.5).unwrap();
        assert_close(e[(0, 0)], (-0.75f64).exp(), 1e-15);
        assert_close(e[(1, 1)], (-3.0f64).exp(), 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_of_two_by_two() {
        // eigenvectors (1,-1)/√2 for 1 and (1,1)/√2 for 3
        let k = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = mat_exp_neg_sym(&k, 1.0).unwrap();
        let (a, b) = ((-1.0f64).exp(), (-3.0f64).exp());
        assert_close(e[(0, 0)], 0.5 * (a + b), 1e-14);
        assert_close(e[(0, 1)], 0.5 * (b - a), 1e-14);
        assert_close(e[(1, 0)], 0.5 * (b - a), 1e-14);
        assert_close(e[(1, 1)], 0.5 * (a + b), 1e-14);
    }

    #[test]
    fn dense_kernels() {
        let a = DenseMatrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 - 5.0);
        assert_eq!(DenseMatrix::identity(3).matmul(&a).unwrap(), a);
        assert_eq!(a.transpose().transpose(), a);
        let m = DenseMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.frobenius_norm(), 5.0);
        let b = DenseMatrix::from_fn(4, 2, |r, c| (r + 2 * c) as f64);
        let ab = a.matmul(&b).unwrap();
        assert_eq!(a.transpose().matmul_tn(&b).unwrap(), ab);
        assert_eq!(a.matmul_nt(&b.transpose()).unwrap(), ab);
        assert!(matches!(a.matmul(&a), Err(Error::Dimension(_))));
    }

    #[test]
    fn sixty_four_reconstructs() {
        let k = random_symmetric(64, 64);
        let d = sym_eig(&k).unwrap();
        let err = d.reconstruct().sub(&k).unwrap().max_abs();
        assert!(err < 1e-8 * k.max_abs(), "reconstruction error {err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn eig_invariants(n in 2usize..40, seed in any::<u64>()) {
            let k = random_symmetric(n, seed);
            let d = sym_eig(&k).unwrap();
            let q = &d.eigenvectors;
            let orth = q.matmul_tn(q).unwrap().sub(&DenseMatrix::identity(n)).unwrap().max_abs();
            prop_assert!(orth < 1e-10, "orthogonality {}", orth);
            let rec = d.reconstruct().sub(&k).unwrap().max_abs();
            prop_assert!(rec < 1e-8 * k.max_abs());
            prop_assert!(d.eigenvalues.windows(2).all(|w| w[0] <= w[1]));

            let sum: f64 = d.eigenvalues.iter().sum();
            let tr = k.trace();
            prop_assert!((sum - tr).abs() <= 1e-9 * tr.abs().max(k.frobenius_norm()));
            let sq: f64 = d.eigenvalues.iter().map(|l| l * l).sum();
            let fro2 = k.matmul_nt(&k).unwrap().trace();
            prop_assert!((sq - fro2).abs() <= 1e-9 * fro2);
        }

        #[test]
        fn exp_semigroup(n in 2usize..20, seed in any::<u64>(), s1 in 0.0f64..2.0, s2 in 0.0f64..2.0) {
            // PSD input: AᵀA
            let a = random_symmetric(n, seed);
            let k = a.matmul_tn(&a).unwrap().scale(1.0 / n as f64);
            let lhs = mat_exp_neg_sym(&k, s1).unwrap().matmul(&mat_exp_neg_sym(&k, s2).unwrap()).unwrap();
            let rhs = mat_exp_neg_sym(&k, s1 + s2).unwrap();
            let gap = lhs.sub(&rhs).unwrap().max_abs();
            prop_assert!(gap <= 1e-8 * rhs.max_abs().max(1e-300));
            let eig = sym_eig(&rhs).unwrap().eigenvalues;
            prop_assert!(eig.iter().all(|&l| l > 0.0 && l <= 1.0 + 1e-12));
        }
    }
}
