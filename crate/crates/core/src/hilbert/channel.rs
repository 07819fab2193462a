use super::matrix::{gates, Matrix};
use super::scalar::Real;
use super::HilbertError;

/// Completely positive trace-preserving map in Kraus form.
#[derive(Clone, Debug)]
pub struct Channel<T: Real> {
    kraus: Vec<Matrix<T>>,
}

impl<T: Real> Channel<T> {
    pub fn new(kraus: Vec<Matrix<T>>) -> Result<Self, HilbertError> {
        let d = kraus.first().ok_or(HilbertError::NotCptp)?.rows();
        let mut sum = Matrix::zeros(d, d);
        for k in &kraus {
            if k.rows() != d || k.cols() != d {
                return Err(HilbertError::DimensionMismatch {
                    expected: d,
                    found: k.rows(),
                });
            }
            sum = &sum + &(&k.adjoint() * k);
        }
        if sum.max_abs_diff(&Matrix::identity(d)) > T::tolerance() {
            return Err(HilbertError::NotCptp);
        }
        Ok(Self { kraus })
    }

    pub fn kraus(&self) -> &[Matrix<T>] {
        &self.kraus
    }

    pub fn dim(&self) -> usize {
        self.kraus[0].rows()
    }

    pub fn identity(d: usize) -> Self {
        Self {
            kraus: vec![Matrix::identity(d)],
        }
    }

    pub fn unitary(u: Matrix<T>) -> Result<Self, HilbertError> {
        Self::new(vec![u])
    }

    /// Qubit Pauli channel with probabilities (p_x, p_y, p_z); identity takes the rest.
    pub fn pauli(px: T, py: T, pz: T) -> Result<Self, HilbertError> {
        let pi = T::one() - px - py - pz;
        let tol = T::tolerance();
        if [pi, px, py, pz].iter().any(|p| *p < -tol) {
            return Err(HilbertError::InvalidProbability(
                [pi, px, py, pz]
                    .iter()
                    .map(|p| p.to_f64_lossy())
                    .fold(f64::INFINITY, f64::min),
            ));
        }
        let kraus = [pi, px, py, pz]
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > T::zero())
            .map(|(k, p)| gates::pauli::<T>(k).scale_real(p.sqrt()))
            .collect();
        Self::new(kraus)
    }

    /// ρ ↦ (1−p)ρ + p Z ρ Z.
    pub fn dephasing(p: T) -> Result<Self, HilbertError> {
        Self::pauli(T::zero(), T::zero(), p)
    }

    /// ρ ↦ (1−p)ρ + p·I/d on `n_qubits` qubits.
    pub fn depolarizing(p: T, n_qubits: usize) -> Result<Self, HilbertError> {
        if !(T::zero()..=T::one()).contains(&p) {
            return Err(HilbertError::InvalidProbability(p.to_f64_lossy()));
        }
        let count = 1usize << (2 * n_qubits);
        let share = p / T::lit(count as f64);
        let mut kraus = Vec::with_capacity(count);
        for idx in 0..count {
            let mut op = Matrix::identity(1);
            for q in 0..n_qubits {
                let k = (idx >> (2 * (n_qubits - 1 - q))) & 3;
                op = op.kron(&gates::pauli::<T>(k));
            }
            let w = if idx == 0 {
                T::one() - p + share
            } else {
                share
            };
            if w > T::zero() {
                kraus.push(op.scale_real(w.sqrt()));
            }
        }
        Self::new(kraus)
    }

    /// Replaces the qubit by I/2 with probability `p`.
    pub fn reset_to_mixed(p: T) -> Result<Self, HilbertError> {
        Self::depolarizing(p, 1)
    }

    /// Sequential composition: `self` first, then `next`.
    pub fn then(&self, next: &Self) -> Result<Self, HilbertError> {
        let mut kraus = Vec::with_capacity(self.kraus.len() * next.kraus.len());
        for b in &next.kraus {
            for a in &self.kraus {
                kraus.push(b * a);
            }
        }
        Self::new(kraus)
    }
}
