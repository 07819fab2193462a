use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex;
use num_traits::{One, Zero};

use super::scalar::{re, Real, C};

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<C<T>>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices of `(re, im)` pairs given in f64.
    pub fn from_rows(rows: &[&[(f64, f64)]]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        Self::from_fn(n, m, |i, j| {
            Complex::new(T::lit(rows[i][j].0), T::lit(rows[i][j].1))
        })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        Self::from_fn(n, m, |i, j| re(T::lit(rows[i][j])))
    }

    pub fn diagonal(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = re(*v);
        }
        m
    }

    /// Outer product |a⟩⟨b|.
    pub fn outer(a: &[C<T>], b: &[C<T>]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C<T>] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C<T> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .fold(C::zero(), |a, b| a + b)
    }

    pub fn scale(&self, s: C<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| *x * s).collect(),
        }
    }

    pub fn scale_real(&self, s: T) -> Self {
        self.scale(re(s))
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (r, c) = (self.rows * other.rows, self.cols * other.cols);
        Self::from_fn(r, c, |i, j| {
            self[(i / other.rows, j / other.cols)] * other[(i % other.rows, j % other.cols)]
        })
    }

    pub fn mul_vec(&self, v: &[C<T>]) -> Vec<C<T>> {
        assert_eq!(v.len(), self.cols, "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                row.iter()
                    .zip(v)
                    .fold(C::zero(), |acc, (a, b)| acc + *a * *b)
            })
            .collect()
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max)
    }

    pub fn is_hermitian(&self, tol: T) -> bool {
        self.is_square() && self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// Frobenius inner product Tr(A† B).
    pub fn inner(&self, other: &Self) -> C<T> {
        self.data
            .iter()
            .zip(&other.data)
            .fold(C::zero(), |acc, (a, b)| acc + a.conj() * *b)
    }

    pub fn map(&self, f: impl Fn(C<T>) -> C<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| f(*x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            let z = self[(i, j)];
            Complex::new(U::lit(z.re.to_f64_lossy()), U::lit(z.im.to_f64_lossy()))
        })
    }
}

impl<T: Real> Index<(usize, usize)> for Matrix<T> {
    type Output = C<T>;
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> Mul for &Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.is_zero() {
                    continue;
                }
                let src = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(src) {
                    *d = *d + a * *b;
                }
            }
        }
        out
    }
}

impl<T: Real> Add for &Matrix<T> {
    type Output = Matrix<T>;
    fn add(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| *a + *b)
                .collect(),
        }
    }
}

impl<T: Real> Sub for &Matrix<T> {
    type Output = Matrix<T>;
    fn sub(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| *a - *b)
                .collect(),
        }
    }
}

/// Single-qubit Pauli and Clifford constants.
pub mod gates {
    use super::*;
    use crate::hilbert::scalar::c;

    pub fn pauli_x<T: Real>() -> Matrix<T> {
        Matrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    pub fn pauli_y<T: Real>() -> Matrix<T> {
        Matrix::from_rows(&[&[(0.0, 0.0), (0.0, -1.0)], &[(0.0, 1.0), (0.0, 0.0)]])
    }

    pub fn pauli_z<T: Real>() -> Matrix<T> {
        Matrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]])
    }

    pub fn hadamard<T: Real>() -> Matrix<T> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Matrix::from_real_rows(&[&[h, h], &[h, -h]])
    }

    /// Index 0..4 → I, X, Y, Z.
    pub fn pauli<T: Real>(k: usize) -> Matrix<T> {
        match k {
            0 => Matrix::identity(2),
            1 => pauli_x(),
            2 => pauli_y(),
            3 => pauli_z(),
            _ => panic!("pauli index {k} out of range"),
        }
    }

    /// CNOT with the first tensor factor as control.
    pub fn cnot<T: Real>() -> Matrix<T> {
        let mut m = Matrix::zeros(4, 4);
        m[(0, 0)] = C::one();
        m[(1, 1)] = C::one();
        m[(2, 3)] = C::one();
        m[(3, 2)] = C::one();
        m
    }

    pub fn swap<T: Real>() -> Matrix<T> {
        let mut m = Matrix::zeros(4, 4);
        m[(0, 0)] = C::one();
        m[(1, 2)] = C::one();
        m[(2, 1)] = C::one();
        m[(3, 3)] = C::one();
        m
    }

    /// exp(-i θ/2 n·σ).
    pub fn rotation<T: Real>(axis: [f64; 3], theta: f64) -> Matrix<T> {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (nx, ny, nz) = (axis[0] / norm, axis[1] / norm, axis[2] / norm);
        let (cs, sn) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        Matrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => c(cs, -sn * nz),
            (0, 1) => c(-sn * ny, -sn * nx),
            (1, 0) => c(sn * ny, -sn * nx),
            _ => c(cs, sn * nz),
        })
    }

    /// diag(1, e^{iφ}).
    pub fn phase<T: Real>(phi: f64) -> Matrix<T> {
        let mut m = Matrix::identity(2);
        m[(1, 1)] = c(phi.cos(), phi.sin());
        m
    }
}
