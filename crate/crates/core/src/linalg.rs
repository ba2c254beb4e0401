//! Small dense and tridiagonal linear algebra used by the optimizers.

use alloc::vec;
use alloc::vec::Vec;

/// Square tridiagonal matrix stored by diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    /// Sub-diagonal, `lower[i] = A[i+1][i]`.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// Super-diagonal, `upper[i] = A[i][i+1]`.
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if j == i + 1 {
            self.upper[i]
        } else if i == j + 1 {
            self.lower[j]
        } else {
            0.0
        }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut s = self.diag[j].abs();
                if j > 0 {
                    s += self.upper[j - 1].abs();
                }
                if j + 1 < n {
                    s += self.lower[j].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    /// LU factorization with partial pivoting (LAPACK `gttrf` layout).
    /// Returns `None` when a pivot is exactly zero or non-finite.
    pub fn factor(&self) -> Option<TridiagonalLu> {
        let n = self.len();
        let mut dl = self.lower.clone();
        let mut d = self.diag.clone();
        let mut du = self.upper.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return None;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        if n > 0 && d[n - 1] == 0.0 {
            return None;
        }
        if d.iter().chain(dl.iter()).chain(du.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some(TridiagonalLu { dl, d, du, du2, swapped })
    }

    /// Solves `A x = b`; `None` if the matrix is singular.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        self.factor().map(|lu| lu.solve(rhs))
    }

    /// Reciprocal 1-norm condition number `1 / (|A|_1 |A^-1|_1)`, computed
    /// exactly from the columns of the inverse. Returns 0 for singular input.
    pub fn rcond(&self) -> f64 {
        let n = self.len();
        let anorm = self.norm1();
        if n == 0 || anorm == 0.0 || !anorm.is_finite() {
            return 0.0;
        }
        let lu = match self.factor() {
            Some(lu) => lu,
            None => return 0.0,
        };
        let mut e = vec![0.0; n];
        let mut inv_norm: f64 = 0.0;
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = lu.solve(&e);
            let s: f64 = col.iter().map(|v| v.abs()).sum();
            if !s.is_finite() {
                return 0.0;
            }
            inv_norm = inv_norm.max(s);
        }
        1.0 / (anorm * inv_norm)
    }
}

/// Factors produced by [`Tridiagonal::factor`].
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagonalLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut b = rhs.to_vec();
        // L y = P b
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        // U x = y
        if n == 0 {
            return b;
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
        b
    }
}

/// Solves a small symmetric positive definite system in place by Cholesky.
/// `a` is row-major `n x n`. Returns `None` if a pivot is not positive.
pub fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= a[j * n + k] * a[j * n + k];
        }
        if !(s > 0.0) || !s.is_finite() {
            return None;
        }
        let l = libm::sqrt(s);
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut t = a[i * n + j];
            for k in 0..j {
                t -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = t / l;
        }
    }
    for i in 0..n {
        let mut t = b[i];
        for k in 0..i {
            t -= a[i * n + k] * b[k];
        }
        b[i] = t / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut t = b[i];
        for k in i + 1..n {
            t -= a[k * n + i] * b[k];
        }
        b[i] = t / a[i * n + i];
    }
    Some(())
}

/// Lower Cholesky factor of a row-major symmetric positive semi-definite
/// matrix. Zero pivots (perfect correlation) are tolerated.
pub fn cholesky_lower(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= l[j * n + k] * l[j * n + k];
        }
        if s < -1e-12 {
            return None;
        }
        let pivot = libm::sqrt(s.max(0.0));
        l[j * n + j] = pivot;
        for i in j + 1..n {
            let mut t = a[i * n + j];
            for k in 0..j {
                t -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = if pivot > 0.0 { t / pivot } else { 0.0 };
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(t: &Tridiagonal, x: &[f64]) -> Vec<f64> {
        let n = t.len();
        (0..n).map(|i| (0..n).map(|j| t.get(i, j) * x[j]).sum()).collect()
    }

    #[test]
    fn solve_needs_pivoting() {
        // Leading zero pivot forces the row swap path.
        let t = Tridiagonal { lower: vec![2.0, 1.0, -1.0], diag: vec![0.0, 1.0, 3.0, 2.0], upper: vec![1.0, 4.0, 0.5] };
        let x = [1.0, -2.0, 0.5, 3.0];
        let b = dense_mul(&t, &x);
        let got = t.solve(&b).unwrap();
        for (g, w) in got.iter().zip(x.iter()) {
            assert!((g - w).abs() < 1e-13);
        }
    }

    #[test]
    fn rcond_identity_and_singular() {
        let eye = Tridiagonal { lower: vec![0.0; 2], diag: vec![1.0; 3], upper: vec![0.0; 2] };
        assert!((eye.rcond() - 1.0).abs() < 1e-15);
        let sing = Tridiagonal { lower: vec![1.0], diag: vec![1.0, 1.0], upper: vec![1.0] };
        assert_eq!(sing.rcond(), 0.0);
    }

    #[test]
    fn cholesky_small_system() {
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        let mut b = vec![2.0, 1.0];
        cholesky_solve(&mut a, &mut b, 2).unwrap();
        assert!((4.0 * b[0] + 2.0 * b[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * b[0] + 3.0 * b[1] - 1.0).abs() < 1e-14);
    }
}
