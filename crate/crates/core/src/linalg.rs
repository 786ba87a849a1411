//! Tridiagonal kernels shared by the eigensolver, the elliptic solves and the
//! finite-difference oracles.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

/// Minimal field trait so real and complex tridiagonal solves share code.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn zero() -> Self;
    fn modulus(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
}

/// Symmetric or general tridiagonal matrix: `sub[i]` couples rows i+1 and i,
/// `sup[i]` couples rows i and i+1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal<T> {
    pub sub: Vec<T>,
    pub diag: Vec<T>,
    pub sup: Vec<T>,
}

impl<T: Scalar> Tridiagonal<T> {
    pub fn zeros(n: usize) -> Self {
        Tridiagonal {
            sub: vec![T::zero(); n.saturating_sub(1)],
            diag: vec![T::zero(); n],
            sup: vec![T::zero(); n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let n = self.len();
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc = acc + self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc = acc + self.sup[i] * x[i + 1];
            }
            y[i] = acc;
        }
        y
    }

    /// Solve `A x = b` by Gaussian elimination with partial pivoting.
    /// Exact zero pivots are replaced by a tiny value, which is what inverse
    /// iteration needs; callers that want a hard failure check the result.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.len();
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        if n == 0 {
            return Vec::new();
        }
        let mut d = self.diag.clone();
        let mut dl = self.sub.clone();
        let mut du = self.sup.clone();
        let mut du2 = vec![T::zero(); n.saturating_sub(2)];
        let mut x = b.to_vec();
        let scale = d.iter().map(|v| v.modulus()).fold(0.0, f64::max).max(1e-300);
        let tiny = T::from_f64(f64::EPSILON * scale);
        for i in 0..n.saturating_sub(1) {
            if d[i].modulus() >= dl[i].modulus() {
                if d[i].modulus() == 0.0 {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                d[i + 1] = d[i + 1] - fact * du[i];
                x[i + 1] = x[i + 1] - fact * x[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -(fact * du2[i]);
                }
                du[i] = temp;
                let tb = x[i];
                x[i] = x[i + 1];
                x[i + 1] = tb - fact * x[i + 1];
            }
            dl[i] = T::zero();
        }
        if d[n - 1].modulus() == 0.0 {
            d[n - 1] = tiny;
        }
        x[n - 1] = x[n - 1] / d[n - 1];
        if n > 1 {
            x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
        }
        x
    }
}

impl Tridiagonal<f64> {
    /// Number of eigenvalues of the pencil `(self, mass)` below `sigma`,
    /// from the inertia of the LDL^T factorization of `self - sigma mass`.
    /// Both matrices must be symmetric and `mass` positive definite.
    pub fn count_below(&self, mass: &Tridiagonal<f64>, sigma: f64) -> usize {
        let n = self.len();
        let mut count = 0;
        let mut p = 0.0f64;
        for i in 0..n {
            let d = self.diag[i] - sigma * mass.diag[i];
            p = if i == 0 {
                d
            } else {
                let e = self.sup[i - 1] - sigma * mass.sup[i - 1];
                d - e * e / p
            };
            if p == 0.0 {
                p = -f64::EPSILON * (d.abs() + 1e-300);
            }
            if p < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// `x^T self y` for a symmetric matrix.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul_vec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_matches_product() {
        let a = Tridiagonal {
            sub: vec![1.0, -2.0, 0.5, 3.0],
            diag: vec![0.1, 4.0, -1.0, 2.0, 1.0],
            sup: vec![2.0, 1.0, -3.0, 0.25],
        };
        let x = vec![1.0, -1.0, 2.0, 0.5, 3.0];
        let b = a.mul_vec(&x);
        let y = a.solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-13, "{x:?} {y:?}");
        }
    }

    #[test]
    fn complex_solve() {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let a = Tridiagonal {
            sub: vec![c(1.0, 1.0), c(0.0, -2.0)],
            diag: vec![c(0.0, 1.0), c(3.0, 0.0), c(1.0, -1.0)],
            sup: vec![c(2.0, 0.0), c(-1.0, 0.5)],
        };
        let x = vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0)];
        let y = a.solve(&a.mul_vec(&x));
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).norm() < 1e-13);
        }
    }

    #[test]
    fn sturm_count_identity_pencil() {
        // -1 2 -1 stencil: eigenvalues 2 - 2cos(k pi/(n+1))
        let n = 7;
        let k = Tridiagonal {
            sub: vec![-1.0; n - 1],
            diag: vec![2.0; n],
            sup: vec![-1.0; n - 1],
        };
        let m = Tridiagonal {
            sub: vec![0.0; n - 1],
            diag: vec![1.0; n],
            sup: vec![0.0; n - 1],
        };
        for j in 1..=n {
            let lam = 2.0 - 2.0 * (j as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert_eq!(k.count_below(&m, lam - 1e-9), j - 1);
            assert_eq!(k.count_below(&m, lam + 1e-9), j);
        }
    }
}
