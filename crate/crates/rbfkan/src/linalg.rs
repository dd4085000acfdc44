//! Minimal dense symmetric linear algebra for the LOOCV estimator.
//!
//! The interpolation matrices here are at most a few hundred rows, so the
//! factorizations are plain textbook algorithms: Cholesky for the expected
//! SPD case, with a partial-pivot LU fallback when Cholesky breaks down
//! numerically.

use crate::error::{Error, Result};

/// Tolerance for "singular to working precision": a pivot below this
/// fraction of the matrix scale raises [`Error::NumericalRank`].
const RANK_TOL: f64 = 1e-14;

/// Dot product accumulated in double-double precision (exact products via
/// fused multiply-add, exact sums via two-sum). Interpolation weights from
/// nearly flat kernels can be enormous with massive cancellation in the
/// prediction sum; this keeps the cancellation exact.
pub fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut hi = 0.0;
    let mut lo = 0.0;
    for (x, y) in a.iter().zip(b) {
        let p = x * y;
        let p_err = x.mul_add(*y, -p);
        let s = hi + p;
        let bp = s - hi;
        let err = (hi - (s - bp)) + (p - bp);
        hi = s;
        lo += err + p_err;
    }
    hi + lo
}

/// Dense symmetric matrix, row-major storage.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Build from row-major entries, checking finiteness and symmetry
    /// (to 1e-12 absolute).
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::domain(format!(
                "expected {}x{} = {} entries, got {}",
                n,
                n,
                n * n,
                data.len()
            )));
        }
        for (idx, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::domain(format!(
                    "matrix entry ({}, {}) is not finite",
                    idx / n,
                    idx % n
                )));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = (data[i * n + j] - data[j * n + i]).abs();
                if diff > 1e-12 {
                    return Err(Error::domain(format!(
                        "matrix not symmetric at ({i}, {j}): |a_ij - a_ji| = {diff:e}"
                    )));
                }
            }
        }
        Ok(SymMatrix { n, data })
    }

    /// Build from an entry function, symmetrizing bitwise by evaluating
    /// only the lower triangle.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix::from_rows(n, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        SymMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Add `lambda` to every diagonal entry (ridge regularization).
    pub fn add_diagonal(&mut self, lambda: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += lambda;
        }
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }
}

/// Result of [`factorize`]: either a Cholesky factor or a pivoted LU,
/// along with the original matrix for residual-based refinement.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    /// Original matrix entries, kept for iterative refinement.
    matrix: Vec<f64>,
    kind: FactorKind,
}

#[derive(Debug, Clone)]
enum FactorKind {
    /// Lower-triangular `L` with `A = L L^T`, row-major.
    Cholesky { l: Vec<f64> },
    /// Combined `LU` factors of `PA`, with the permutation as row indices.
    PivotedLu { lu: Vec<f64>, perm: Vec<usize> },
}

/// Factor a symmetric matrix, preferring Cholesky and falling back to
/// partial-pivot LU when the SPD factorization fails numerically.
pub fn factorize(a: &SymMatrix) -> Result<Factorization> {
    let n = a.n;
    if n == 0 {
        return Err(Error::domain("cannot factorize an empty matrix"));
    }
    let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0_f64, f64::max);
    let kind = match try_cholesky(a, RANK_TOL * max_diag.max(f64::MIN_POSITIVE)) {
        Some(l) => FactorKind::Cholesky { l },
        None => pivoted_lu(a)?,
    };
    Ok(Factorization {
        n,
        matrix: a.data.clone(),
        kind,
    })
}

fn try_cholesky(a: &SymMatrix, pivot_floor: f64) -> Option<Vec<f64>> {
    let n = a.n;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > pivot_floor) {
            return None;
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
    }
    Some(l)
}

fn pivoted_lu(a: &SymMatrix) -> Result<FactorKind> {
    let n = a.n;
    let mut lu = a.data.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = lu.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = RANK_TOL * scale.max(f64::MIN_POSITIVE);
    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_val = lu[k * n + k].abs();
        for i in (k + 1)..n {
            let v = lu[i * n + k].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = i;
            }
        }
        if pivot_val <= tol {
            return Err(Error::NumericalRank(format!(
                "pivot {pivot_val:e} at column {k} below {tol:e}"
            )));
        }
        if pivot_row != k {
            perm.swap(k, pivot_row);
            for j in 0..n {
                lu.swap(k * n + j, pivot_row * n + j);
            }
        }
        let diag = lu[k * n + k];
        for i in (k + 1)..n {
            let factor = lu[i * n + k] / diag;
            lu[i * n + k] = factor;
            for j in (k + 1)..n {
                lu[i * n + j] -= factor * lu[k * n + j];
            }
        }
    }
    Ok(FactorKind::PivotedLu { lu, perm })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// True when the SPD path succeeded (no LU fallback).
    pub fn is_cholesky(&self) -> bool {
        matches!(self.kind, FactorKind::Cholesky { .. })
    }

    fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        match &self.kind {
            FactorKind::Cholesky { l } => {
                // L y = b
                let mut x = b.to_vec();
                for i in 0..n {
                    for k in 0..i {
                        x[i] -= l[i * n + k] * x[k];
                    }
                    x[i] /= l[i * n + i];
                }
                // L^T x = y
                for i in (0..n).rev() {
                    for k in (i + 1)..n {
                        x[i] -= l[k * n + i] * x[k];
                    }
                    x[i] /= l[i * n + i];
                }
                x
            }
            FactorKind::PivotedLu { lu, perm } => {
                let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
                for i in 0..n {
                    for k in 0..i {
                        x[i] -= lu[i * n + k] * x[k];
                    }
                }
                for i in (0..n).rev() {
                    for k in (i + 1)..n {
                        x[i] -= lu[i * n + k] * x[k];
                    }
                    x[i] /= lu[i * n + i];
                }
                x
            }
        }
    }

    /// Residual `b - A x` accumulated in double-double precision (exact
    /// products via fused multiply-add, exact sums via two-sum), so the
    /// refinement below is not limited by working-precision summation.
    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut r = vec![0.0; n];
        for i in 0..n {
            let row = &self.matrix[i * n..(i + 1) * n];
            let mut hi = b[i];
            let mut lo = 0.0;
            for j in 0..n {
                let p = row[j] * x[j];
                let p_err = row[j].mul_add(x[j], -p);
                // two_sum(hi, -p)
                let s = hi - p;
                let bp = s - hi;
                let err = (hi - (s - bp)) + (-p - bp);
                hi = s;
                lo += err - p_err;
            }
            r[i] = hi + lo;
        }
        r
    }

    /// Residual `b - A (hi + lo)` accumulated like [`residual`], with the
    /// low parts folded in at working precision (they are already tiny).
    fn residual_pair(&self, hi: &[f64], lo: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut r = vec![0.0; n];
        for i in 0..n {
            let row = &self.matrix[i * n..(i + 1) * n];
            let mut sum_hi = b[i];
            let mut sum_lo = 0.0;
            for j in 0..n {
                let p = row[j] * hi[j];
                let p_err = row[j].mul_add(hi[j], -p);
                let s = sum_hi - p;
                let bp = s - sum_hi;
                let err = (sum_hi - (s - bp)) + (-p - bp);
                sum_hi = s;
                sum_lo += err - p_err - row[j] * lo[j];
            }
            r[i] = sum_hi + sum_lo;
        }
        r
    }

    /// Solve `A x = b` directly from the factorization. Accuracy follows
    /// the usual backward-stable bound, i.e. the result is only as good as
    /// the conditioning of `A`; see [`solve_pair`](Self::solve_pair) for a
    /// refined variant used by test oracles.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::domain(format!(
                "rhs length {} does not match dimension {}",
                b.len(),
                self.n
            )));
        }
        Ok(self.solve_factored(b))
    }

    /// Like [`solve`](Self::solve), but returns the refined solution as an
    /// unevaluated double-double pair `(hi, lo)`. Test oracles that feed
    /// the solution into a massively cancelling sum (such as a flat-kernel
    /// prediction) need the below-ULP part to reach their tolerance.
    pub fn solve_pair(&self, b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if b.len() != self.n {
            return Err(Error::domain(format!(
                "rhs length {} does not match dimension {}",
                b.len(),
                self.n
            )));
        }
        let mut hi = self.solve_factored(b);
        let mut lo = vec![0.0; self.n];
        for _ in 0..3 {
            let r = self.residual_pair(&hi, &lo, b);
            let dx = self.solve_factored(&r);
            let mut changed = false;
            for i in 0..self.n {
                let d = dx[i] + lo[i];
                // two_sum(hi, d)
                let s = hi[i] + d;
                if !s.is_finite() {
                    continue;
                }
                let bp = s - hi[i];
                let err = (hi[i] - (s - bp)) + (d - bp);
                if s != hi[i] || err != lo[i] {
                    changed = true;
                }
                hi[i] = s;
                lo[i] = err;
            }
            if !changed {
                break;
            }
        }
        Ok((hi, lo))
    }

    /// Diagonal of `A^{-1}`, via one whole-inverse computation from the
    /// factorization (`A X = I` with matrix-shaped triangular solves).
    /// Accuracy is condition-limited, exactly like any standard library
    /// inverse.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n * n];
        for i in 0..n {
            x[i * n + i] = 1.0;
        }
        self.solve_matrix_in_place(&mut x);
        (0..n).map(|i| x[i * n + i]).collect()
    }

    /// In-place `B <- A^{-1} B` for a row-major square block, using the
    /// stored factorization. Inner loops run over the row (contiguous).
    fn solve_matrix_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        match &self.kind {
            FactorKind::Cholesky { l } => {
                for r in 0..n {
                    for k in 0..r {
                        let f = l[r * n + k];
                        let (head, tail) = b.split_at_mut(r * n);
                        let bk = &head[k * n..k * n + n];
                        let br = &mut tail[..n];
                        for j in 0..n {
                            br[j] -= f * bk[j];
                        }
                    }
                    let d = l[r * n + r];
                    for v in b[r * n..(r + 1) * n].iter_mut() {
                        *v /= d;
                    }
                }
                for r in (0..n).rev() {
                    for k in (r + 1)..n {
                        let f = l[k * n + r];
                        let (head, tail) = b.split_at_mut(k * n);
                        let br = &mut head[r * n..r * n + n];
                        let bk = &tail[..n];
                        for j in 0..n {
                            br[j] -= f * bk[j];
                        }
                    }
                    let d = l[r * n + r];
                    for v in b[r * n..(r + 1) * n].iter_mut() {
                        *v /= d;
                    }
                }
            }
            FactorKind::PivotedLu { lu, perm } => {
                let mut permuted = vec![0.0; n * n];
                for (dst, &src) in perm.iter().enumerate() {
                    permuted[dst * n..(dst + 1) * n].copy_from_slice(&b[src * n..(src + 1) * n]);
                }
                b.copy_from_slice(&permuted);
                for r in 0..n {
                    for k in 0..r {
                        let f = lu[r * n + k];
                        let (head, tail) = b.split_at_mut(r * n);
                        let bk = &head[k * n..k * n + n];
                        let br = &mut tail[..n];
                        for j in 0..n {
                            br[j] -= f * bk[j];
                        }
                    }
                }
                for r in (0..n).rev() {
                    for k in (r + 1)..n {
                        let f = lu[r * n + k];
                        let (head, tail) = b.split_at_mut(k * n);
                        let br = &mut head[r * n..r * n + n];
                        let bk = &tail[..n];
                        for j in 0..n {
                            br[j] -= f * bk[j];
                        }
                    }
                    let d = lu[r * n + r];
                    for v in b[r * n..(r + 1) * n].iter_mut() {
                        *v /= d;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_spd(n: usize, rng: &mut SeededRng) -> SymMatrix {
        // A = M^T M + I is SPD for any M.
        let m: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        SymMatrix::from_fn(n, |i, j| {
            let dot: f64 = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum();
            dot + if i == j { 1.0 } else { 0.0 }
        })
        .unwrap()
    }

    /// Gauss-Jordan full inverse, used as an independent oracle.
    fn gauss_jordan_inverse(a: &SymMatrix) -> Vec<f64> {
        let n = a.dim();
        let mut aug = vec![0.0; n * 2 * n];
        for i in 0..n {
            for j in 0..n {
                aug[i * 2 * n + j] = a.get(i, j);
            }
            aug[i * 2 * n + n + i] = 1.0;
        }
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&r1, &r2| {
                    aug[r1 * 2 * n + col]
                        .abs()
                        .total_cmp(&aug[r2 * 2 * n + col].abs())
                })
                .unwrap();
            if pivot_row != col {
                for j in 0..2 * n {
                    aug.swap(col * 2 * n + j, pivot_row * 2 * n + j);
                }
            }
            let pivot = aug[col * 2 * n + col];
            for j in 0..2 * n {
                aug[col * 2 * n + j] /= pivot;
            }
            for row in 0..n {
                if row == col {
                    continue;
                }
                let factor = aug[row * 2 * n + col];
                for j in 0..2 * n {
                    aug[row * 2 * n + j] -= factor * aug[col * 2 * n + j];
                }
            }
        }
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                inv[i * n + j] = aug[i * 2 * n + n + j];
            }
        }
        inv
    }

    #[test]
    fn identity_solves_to_rhs() {
        let f = factorize(&SymMatrix::identity(3)).unwrap();
        assert!(f.is_cholesky());
        let b = vec![1.0, -2.5, 4.0];
        assert_eq!(f.solve(&b).unwrap(), b);
        assert_eq!(f.inverse_diagonal(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_by_two_by_hand() {
        let a = SymMatrix::from_rows(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let f = factorize(&a).unwrap();
        let x = f.solve(&[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let a = SymMatrix::from_rows(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        match factorize(&a) {
            Err(Error::NumericalRank(_)) => {}
            other => panic!("expected NumericalRank, got {other:?}"),
        }
    }

    #[test]
    fn diagonal_matrix_inverse_diagonal() {
        let a = SymMatrix::from_rows(2, vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        let d = factorize(&a).unwrap().inverse_diagonal();
        assert!((d[0] - 0.5).abs() < 1e-15);
        assert!((d[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn recovers_known_solution() {
        let mut rng = SeededRng::new(11);
        let a = random_spd(10, &mut rng);
        let x_true: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let b = a.mul_vec(&x_true);
        let x = factorize(&a).unwrap().solve(&b).unwrap();
        let scale = x_true.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() <= 1e-8 * scale.max(1.0));
        }
    }

    #[test]
    fn inverse_diagonal_matches_gauss_jordan() {
        let mut rng = SeededRng::new(23);
        let a = random_spd(8, &mut rng);
        let d = factorize(&a).unwrap().inverse_diagonal();
        let inv = gauss_jordan_inverse(&a);
        for i in 0..8 {
            assert!((d[i] - inv[i * 8 + i]).abs() < 1e-10, "entry {i}");
            assert!(d[i] > 0.0, "SPD inverse diagonal must be positive");
        }
    }

    #[test]
    fn solve_factorize_left_inverse_on_random_spd() {
        let mut rng = SeededRng::new(31);
        for trial in 0..100 {
            let n = 2 + rng.index(49);
            let a = random_spd(n, &mut rng);
            let x_true: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let b = a.mul_vec(&x_true);
            let x = factorize(&a).unwrap().solve(&b).unwrap();
            let residual = a.mul_vec(&x);
            let binf = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                assert!(
                    (residual[i] - b[i]).abs() <= 1e-8 * (1.0 + binf),
                    "trial {trial} n={n} row {i}"
                );
            }
        }
    }

    #[test]
    fn asymmetric_and_nonfinite_rejected() {
        assert!(SymMatrix::from_rows(2, vec![1.0, 0.5, 0.5 + 1e-9, 1.0]).is_err());
        assert!(SymMatrix::from_rows(2, vec![1.0, f64::NAN, f64::NAN, 1.0]).is_err());
        assert!(SymMatrix::from_rows(2, vec![1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn solve_rejects_wrong_dimension() {
        let f = factorize(&SymMatrix::identity(3)).unwrap();
        assert!(f.solve(&[1.0, 2.0]).is_err());
    }
}
