use num_complex::Complex;
use num_traits::Zero;

use super::matrix::Matrix;
use super::scalar::{re, Real};

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the unitary whose columns are the
/// matching eigenvectors.
pub fn eigh<T: Real>(m: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    assert!(m.is_square(), "eigh needs a square matrix");
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let scale = a
        .data()
        .iter()
        .map(|z| z.norm())
        .fold(T::zero(), T::max)
        .max(T::min_positive_value());
    let eps = T::epsilon() * T::lit(0.5);

    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[(p, q)].norm());
            }
        }
        if off <= eps * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= eps * scale * T::lit(1e-3) {
                    continue;
                }
                let ph = apq / re(mag);
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (T::lit(2.0) * mag);
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = t * cs;
                let (cc, ss) = (re(cs), re(sn));
                let phc = ph.conj();
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * cc - akq * ss * phc;
                    a[(k, q)] = akp * ss + akq * cc * phc;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * cc - aqk * ss * ph;
                    a[(q, k)] = apk * ss + aqk * cc * ph;
                }
                a[(p, q)] = Complex::zero();
                a[(q, p)] = Complex::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * cc - vkq * ss * phc;
                    v[(k, q)] = vkp * ss + vkq * cc * phc;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(i, i)]
            .re
            .partial_cmp(&a[(j, j)].re)
            .expect("NaN eigenvalue")
    });
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = Matrix::from_fn(n, n, |r, col| v[(r, order[col])]);
    (values, vectors)
}

pub fn eigvalsh<T: Real>(m: &Matrix<T>) -> Vec<T> {
    eigh(m).0
}

/// Applies a real function to the spectrum of a Hermitian matrix.
pub fn hermitian_fn<T: Real>(m: &Matrix<T>, f: impl Fn(T) -> T) -> Matrix<T> {
    let (vals, vecs) = eigh(m);
    let mapped: Vec<T> = vals.into_iter().map(f).collect();
    let d = Matrix::diagonal(&mapped);
    &(&vecs * &d) * &vecs.adjoint()
}
