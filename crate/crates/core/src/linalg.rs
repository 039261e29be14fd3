//! Dense symmetric positive-definite solves for the small systems used by
//! the logistic fit and the Mahalanobis metric.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.dim + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.dim + c] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * x[c]).sum())
            .collect()
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: SquareMatrix,
}

impl Cholesky {
    /// Returns `None` when the matrix is not numerically positive definite.
    pub fn factor(a: &SquareMatrix) -> Option<Self> {
        let n = a.dim();
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut diag = a.get(j, j);
            for k in 0..j {
                diag -= l.get(j, k) * l.get(j, k);
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return None;
            }
            let d = math::sqrt(diag);
            l.set(j, j, d);
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        // Relative pivot check catches near-singular systems that still pass
        // the positivity test through rounding.
        let max_diag = (0..n).map(|i| l.get(i, i)).fold(0.0_f64, f64::max);
        let min_diag = (0..n).map(|i| l.get(i, i)).fold(f64::INFINITY, f64::min);
        if n > 0 && min_diag < max_diag * 1e-12 {
            return None;
        }
        Some(Self { l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l.get(i, k) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l.get(k, i) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        y
    }

    pub fn inverse(&self) -> SquareMatrix {
        let n = self.l.dim();
        let mut inv = SquareMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for (r, v) in col.into_iter().enumerate() {
                inv.set(r, c, v);
            }
        }
        inv
    }
}

/// Solves `A x = b` after symmetric diagonal equilibration, which keeps the
/// factorisation well conditioned when columns live on very different scales
/// (years of schooling next to dollar earnings).
pub fn solve_spd_equilibrated(a: &SquareMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.dim();
    let mut scale = vec![0.0; n];
    for i in 0..n {
        let d = a.get(i, i);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        scale[i] = 1.0 / math::sqrt(d);
    }
    let mut scaled = SquareMatrix::zeros(n);
    for r in 0..n {
        for c in 0..n {
            scaled.set(r, c, a.get(r, c) * scale[r] * scale[c]);
        }
    }
    let rhs: Vec<f64> = b.iter().zip(&scale).map(|(v, s)| v * s).collect();
    let chol = Cholesky::factor(&scaled)?;
    let y = chol.solve(&rhs);
    Some(y.iter().zip(&scale).map(|(v, s)| v * s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd() -> SquareMatrix {
        let mut a = SquareMatrix::zeros(3);
        let vals = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        for (i, v) in vals.iter().enumerate() {
            a.set(i / 3, i % 3, *v);
        }
        a
    }

    #[test]
    fn solve_round_trips() {
        let a = spd();
        let x = [1.0, -2.0, 0.5];
        let b = a.mul_vec(&x);
        let got = Cholesky::factor(&a).unwrap().solve(&b);
        for (g, e) in got.iter().zip(x) {
            assert!((g - e).abs() < 1e-12);
        }
        let eq = solve_spd_equilibrated(&a, &b).unwrap();
        for (g, e) in eq.iter().zip(x) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = spd();
        let inv = Cholesky::factor(&a).unwrap().inverse();
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| a.get(r, k) * inv.get(k, c)).sum();
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let mut a = SquareMatrix::zeros(2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 4.0);
        assert!(Cholesky::factor(&a).is_none());
        assert!(solve_spd_equilibrated(&a, &[1.0, 2.0]).is_none());
    }
}
