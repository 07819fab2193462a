use num_traits::{One, Zero};
use rand::Rng;

use super::channel::Channel;
use super::eigen::{eigvalsh, hermitian_fn};
use super::matrix::Matrix;
use super::scalar::{re, Real, C};
use super::HilbertError;

/// Index bookkeeping for operators acting on a subset of tensor factors.
struct Embedding {
    /// Sub-index of each full index restricted to the targets.
    sub: Vec<usize>,
    /// Full index with the target digits zeroed.
    base: Vec<usize>,
    /// Full-index offset of each target sub-index.
    offset: Vec<usize>,
}

impl Embedding {
    fn new(dims: &[usize], targets: &[usize]) -> Self {
        let total: usize = dims.iter().product();
        let mut strides = vec![1usize; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let tdims: Vec<usize> = targets.iter().map(|&t| dims[t]).collect();
        let tsize: usize = tdims.iter().product();
        let mut offset = vec![0usize; tsize];
        for (s, off) in offset.iter_mut().enumerate() {
            let mut rem = s;
            for k in (0..targets.len()).rev() {
                *off += (rem % tdims[k]) * strides[targets[k]];
                rem /= tdims[k];
            }
        }
        let mut sub = vec![0usize; total];
        let mut base = vec![0usize; total];
        for i in 0..total {
            let mut s = 0;
            let mut b = i;
            for (k, &t) in targets.iter().enumerate() {
                let digit = (i / strides[t]) % dims[t];
                s = s * tdims[k] + digit;
                b -= digit * strides[t];
            }
            sub[i] = s;
            base[i] = b;
        }
        Self { sub, base, offset }
    }
}

/// Pure state on a labeled register.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket<T: Real> {
    dims: Vec<usize>,
    labels: Vec<String>,
    amps: Vec<C<T>>,
}

impl<T: Real> Ket<T> {
    pub fn new(labels: &[&str], dims: &[usize], amps: Vec<C<T>>) -> Result<Self, HilbertError> {
        check_labels(labels)?;
        if labels.len() != dims.len() {
            return Err(HilbertError::DimensionMismatch {
                expected: labels.len(),
                found: dims.len(),
            });
        }
        let total: usize = dims.iter().product();
        if amps.len() != total {
            return Err(HilbertError::DimensionMismatch {
                expected: total,
                found: amps.len(),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            amps,
        })
    }

    /// Real amplitudes, normalized on construction.
    pub fn from_real(labels: &[&str], dims: &[usize], amps: &[f64]) -> Result<Self, HilbertError> {
        let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        Self::new(
            labels,
            dims,
            amps.iter().map(|a| re(T::lit(a / norm))).collect(),
        )
    }

    pub fn basis(label: &str, dim: usize, k: usize) -> Self {
        let mut amps = vec![C::zero(); dim];
        amps[k] = C::one();
        Self {
            dims: vec![dim],
            labels: vec![label.to_string()],
            amps,
        }
    }

    /// Computational basis state of several qubits, first label most significant.
    pub fn qubits(labels: &[&str], bits: &[u8]) -> Result<Self, HilbertError> {
        let idx = bits.iter().fold(0usize, |acc, b| acc * 2 + *b as usize);
        let mut amps = vec![C::zero(); 1 << bits.len()];
        amps[idx] = C::one();
        Self::new(labels, &vec![2; bits.len()], amps)
    }

    /// (|00⟩ + |11⟩)/√2.
    pub fn phi_plus(a: &str, b: &str) -> Self {
        Self::from_real(&[a, b], &[2, 2], &[1.0, 0.0, 0.0, 1.0]).expect("valid Bell state")
    }

    /// (|01⟩ + sign|10⟩)/√2.
    pub fn psi(a: &str, b: &str, sign: f64) -> Self {
        Self::from_real(&[a, b], &[2, 2], &[0.0, 1.0, sign, 0.0]).expect("valid Bell state")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn amplitudes(&self) -> &[C<T>] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> T {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn tensor(&self, other: &Self) -> Result<Self, HilbertError> {
        let mut labels: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        labels.extend(other.labels.iter().map(String::as_str));
        check_labels(&labels)?;
        let mut dims = self.dims.clone();
        dims.extend(&other.dims);
        let amps = self
            .amps
            .iter()
            .flat_map(|a| other.amps.iter().map(move |b| *a * *b))
            .collect();
        Ok(Self {
            dims,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            amps,
        })
    }

    pub fn apply(&self, op: &Matrix<T>, targets: &[&str]) -> Result<Self, HilbertError> {
        let pos = positions(&self.labels, targets)?;
        let tdim: usize = pos.iter().map(|&p| self.dims[p]).product();
        if op.rows() != tdim || op.cols() != tdim {
            return Err(HilbertError::DimensionMismatch {
                expected: tdim,
                found: op.rows(),
            });
        }
        let emb = Embedding::new(&self.dims, &pos);
        let amps = (0..self.amps.len())
            .map(|i| {
                let b = emb.base[i];
                (0..tdim).fold(C::zero(), |acc, s| {
                    acc + op[(emb.sub[i], s)] * self.amps[b + emb.offset[s]]
                })
            })
            .collect();
        Ok(Self {
            dims: self.dims.clone(),
            labels: self.labels.clone(),
            amps,
        })
    }

    pub fn to_state(&self) -> State<T> {
        State {
            dims: self.dims.clone(),
            labels: self.labels.clone(),
            matrix: Matrix::outer(&self.amps, &self.amps),
        }
    }
}

/// Density matrix on a labeled register. The trace doubles as the branch weight
/// for unnormalized conditional states.
#[derive(Clone, Debug, PartialEq)]
pub struct State<T: Real> {
    dims: Vec<usize>,
    labels: Vec<String>,
    matrix: Matrix<T>,
}

impl<T: Real> State<T> {
    pub fn new(labels: &[&str], dims: &[usize], matrix: Matrix<T>) -> Result<Self, HilbertError> {
        check_labels(labels)?;
        if labels.len() != dims.len() {
            return Err(HilbertError::DimensionMismatch {
                expected: labels.len(),
                found: dims.len(),
            });
        }
        let total: usize = dims.iter().product();
        if matrix.rows() != total || matrix.cols() != total {
            return Err(HilbertError::DimensionMismatch {
                expected: total,
                found: matrix.rows(),
            });
        }
        if !matrix.is_hermitian(T::tolerance()) {
            return Err(HilbertError::NotHermitian);
        }
        Ok(Self {
            dims: dims.to_vec(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            matrix,
        })
    }

    pub fn basis(label: &str, dim: usize, k: usize) -> Self {
        Ket::basis(label, dim, k).to_state()
    }

    pub fn maximally_mixed(label: &str, dim: usize) -> Self {
        Self {
            dims: vec![dim],
            labels: vec![label.to_string()],
            matrix: Matrix::identity(dim).scale_real(T::one() / T::lit(dim as f64)),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn trace(&self) -> T {
        self.matrix.trace().re
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            dims: self.dims.clone(),
            labels: self.labels.clone(),
            matrix: self.matrix.scale_real(s),
        }
    }

    pub fn normalized(&self) -> Self {
        self.scaled(T::one() / self.trace())
    }

    /// Sum of two branches on the same register.
    pub fn add(&self, other: &Self) -> Result<Self, HilbertError> {
        if self.labels != other.labels || self.dims != other.dims {
            return Err(HilbertError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(Self {
            dims: self.dims.clone(),
            labels: self.labels.clone(),
            matrix: &self.matrix + &other.matrix,
        })
    }

    pub fn tensor(&self, other: &Self) -> Result<Self, HilbertError> {
        let mut labels: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        labels.extend(other.labels.iter().map(String::as_str));
        check_labels(&labels)?;
        let mut dims = self.dims.clone();
        dims.extend(&other.dims);
        Ok(Self {
            dims,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            matrix: self.matrix.kron(&other.matrix),
        })
    }

    fn target_dim(&self, targets: &[&str]) -> Result<(Vec<usize>, usize), HilbertError> {
        let pos = positions(&self.labels, targets)?;
        let d = pos.iter().map(|&p| self.dims[p]).product();
        Ok((pos, d))
    }

    /// K ρ K† for an operator on the target factors.
    fn sandwich(&self, emb: &Embedding, k: &Matrix<T>) -> Matrix<T> {
        let n = self.dim();
        let td = k.rows();
        let rho = &self.matrix;
        // left: (K ρ)[i][j]
        let mut left: Matrix<T> = Matrix::zeros(n, n);
        for i in 0..n {
            let (si, bi) = (emb.sub[i], emb.base[i]);
            for s in 0..td {
                let kv = k[(si, s)];
                if kv.is_zero() {
                    continue;
                }
                let r = bi + emb.offset[s];
                for j in 0..n {
                    left[(i, j)] = left[(i, j)] + kv * rho[(r, j)];
                }
            }
        }
        let mut out: Matrix<T> = Matrix::zeros(n, n);
        for j in 0..n {
            let (sj, bj) = (emb.sub[j], emb.base[j]);
            for s in 0..td {
                let kv = k[(sj, s)].conj();
                if kv.is_zero() {
                    continue;
                }
                let cidx = bj + emb.offset[s];
                for i in 0..n {
                    out[(i, j)] = out[(i, j)] + left[(i, cidx)] * kv;
                }
            }
        }
        out
    }

    pub fn apply_unitary(&self, u: &Matrix<T>, targets: &[&str]) -> Result<Self, HilbertError> {
        self.apply_operator(u, targets)
    }

    /// K ρ K† without any completeness check; used for conditional branches.
    pub fn apply_operator(&self, k: &Matrix<T>, targets: &[&str]) -> Result<Self, HilbertError> {
        let (pos, d) = self.target_dim(targets)?;
        if k.rows() != d || k.cols() != d {
            return Err(HilbertError::DimensionMismatch {
                expected: d,
                found: k.rows(),
            });
        }
        let emb = Embedding::new(&self.dims, &pos);
        Ok(Self {
            dims: self.dims.clone(),
            labels: self.labels.clone(),
            matrix: self.sandwich(&emb, k),
        })
    }

    pub fn apply_channel(&self, ch: &Channel<T>, targets: &[&str]) -> Result<Self, HilbertError> {
        let (pos, d) = self.target_dim(targets)?;
        if ch.dim() != d {
            return Err(HilbertError::DimensionMismatch {
                expected: d,
                found: ch.dim(),
            });
        }
        let emb = Embedding::new(&self.dims, &pos);
        let n = self.dim();
        let mut acc = Matrix::zeros(n, n);
        for k in ch.kraus() {
            acc = &acc + &self.sandwich(&emb, k);
        }
        Ok(Self {
            dims: self.dims.clone(),
            labels: self.labels.clone(),
            matrix: acc,
        })
    }

    /// Reduced state on `keep`, ordered as listed.
    pub fn partial_trace(&self, keep: &[&str]) -> Result<Self, HilbertError> {
        let kpos = positions(&self.labels, keep)?;
        let tpos: Vec<usize> = (0..self.dims.len()).filter(|p| !kpos.contains(p)).collect();
        let kdims: Vec<usize> = kpos.iter().map(|&p| self.dims[p]).collect();
        let kd: usize = kdims.iter().product();
        let td: usize = tpos.iter().map(|&p| self.dims[p]).product();
        let kemb = Embedding::new(&self.dims, &kpos);
        let temb = Embedding::new(&self.dims, &tpos);
        let mut out = Matrix::zeros(kd, kd);
        for a in 0..kd {
            for b in 0..kd {
                let mut s = C::zero();
                for t in 0..td {
                    let i = kemb.offset[a] + temb.offset[t];
                    let j = kemb.offset[b] + temb.offset[t];
                    s = s + self.matrix[(i, j)];
                }
                out[(a, b)] = s;
            }
        }
        Ok(Self {
            dims: kdims,
            labels: keep.iter().map(|s| s.to_string()).collect(),
            matrix: out,
        })
    }

    /// Same state with factors reordered to `order`.
    pub fn permuted(&self, order: &[&str]) -> Result<Self, HilbertError> {
        if order.len() != self.labels.len() {
            return Err(HilbertError::DimensionMismatch {
                expected: self.labels.len(),
                found: order.len(),
            });
        }
        self.partial_trace(order)
    }

    /// ⟨ψ|ρ|ψ⟩, with the target's factors matched by label.
    pub fn fidelity(&self, target: &Ket<T>) -> Result<T, HilbertError> {
        let order: Vec<&str> = target.labels().iter().map(String::as_str).collect();
        let rho = if self.labels == target.labels() {
            self.clone()
        } else {
            self.permuted(&order)?
        };
        if rho.dims != target.dims() {
            return Err(HilbertError::DimensionMismatch {
                expected: rho.dim(),
                found: target.amplitudes().len(),
            });
        }
        let v = rho.matrix.mul_vec(target.amplitudes());
        let f = target
            .amplitudes()
            .iter()
            .zip(&v)
            .fold(C::zero(), |acc, (a, b)| acc + a.conj() * *b);
        Ok(f.re)
    }

    /// Probability of each POVM effect on `target`, without sampling.
    pub fn outcome_probabilities(
        &self,
        povm: &[Matrix<T>],
        target: &str,
    ) -> Result<Vec<T>, HilbertError> {
        check_povm(povm)?;
        let reduced = self.partial_trace(&[target])?;
        if povm[0].rows() != reduced.dim() {
            return Err(HilbertError::DimensionMismatch {
                expected: reduced.dim(),
                found: povm[0].rows(),
            });
        }
        Ok(povm.iter().map(|e| e.inner(&reduced.matrix).re).collect())
    }

    /// Unnormalized post-measurement state √E ρ √E for one effect.
    pub fn project(&self, effect: &Matrix<T>, target: &str) -> Result<Self, HilbertError> {
        let k = hermitian_fn(effect, |x| x.max(T::zero()).sqrt());
        self.apply_operator(&k, &[target])
    }

    /// Samples a POVM outcome and returns (index, normalized conditioned state, probability).
    pub fn measure<R: Rng + ?Sized>(
        &self,
        povm: &[Matrix<T>],
        target: &str,
        rng: &mut R,
    ) -> Result<(usize, Self, T), HilbertError> {
        let probs = self.outcome_probabilities(povm, target)?;
        let total: T = probs.iter().copied().sum();
        let u = T::lit(rng.random::<f64>()) * total;
        let mut acc = T::zero();
        let mut pick = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc = acc + *p;
            if u < acc {
                pick = k;
                break;
            }
        }
        let post = self.project(&povm[pick], target)?;
        let p = probs[pick] / total;
        Ok((pick, post.normalized(), p))
    }

    pub fn bloch_vector(&self) -> Result<[T; 3], HilbertError> {
        if self.dim() != 2 {
            return Err(HilbertError::WrongDimension {
                expected: 2,
                found: self.dim(),
            });
        }
        let m = &self.matrix;
        let two = T::lit(2.0);
        Ok([
            two * m[(0, 1)].re,
            -two * m[(0, 1)].im,
            m[(0, 0)].re - m[(1, 1)].re,
        ])
    }

    pub fn min_eigenvalue(&self) -> T {
        eigvalsh(&self.matrix)[0]
    }

    /// Validates trace, hermiticity and positivity; eigenvalues in [−tol, 0) are clipped.
    pub fn checked(&self) -> Result<Self, HilbertError> {
        let tol = T::tolerance();
        if (self.trace() - T::one()).abs() > tol {
            return Err(HilbertError::NotNormalized(self.trace().to_f64_lossy()));
        }
        if !self.matrix.is_hermitian(tol) {
            return Err(HilbertError::NotHermitian);
        }
        let min = self.min_eigenvalue();
        if min < -tol {
            return Err(HilbertError::NotPositive(min.to_f64_lossy()));
        }
        if min < T::zero() {
            let clipped = hermitian_fn(&self.matrix, |x| if x < T::zero() { T::zero() } else { x });
            let s = Self {
                dims: self.dims.clone(),
                labels: self.labels.clone(),
                matrix: clipped,
            };
            return Ok(s.normalized());
        }
        Ok(self.clone())
    }

    pub fn cast<U: Real>(&self) -> State<U> {
        State {
            dims: self.dims.clone(),
            labels: self.labels.clone(),
            matrix: self.matrix.cast(),
        }
    }
}

fn check_labels(labels: &[&str]) -> Result<(), HilbertError> {
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(HilbertError::DuplicateLabel(l.to_string()));
        }
    }
    Ok(())
}

fn positions(labels: &[String], wanted: &[&str]) -> Result<Vec<usize>, HilbertError> {
    check_labels(wanted)?;
    wanted
        .iter()
        .map(|w| {
            labels
                .iter()
                .position(|l| l == w)
                .ok_or_else(|| HilbertError::UnknownLabel(w.to_string()))
        })
        .collect()
}

fn check_povm<T: Real>(povm: &[Matrix<T>]) -> Result<(), HilbertError> {
    let first = povm.first().ok_or(HilbertError::NotPovm)?;
    let d = first.rows();
    let mut sum = Matrix::zeros(d, d);
    for e in povm {
        if e.rows() != d || !e.is_hermitian(T::tolerance()) {
            return Err(HilbertError::NotPovm);
        }
        sum = &sum + e;
    }
    if sum.max_abs_diff(&Matrix::identity(d)) > T::tolerance() {
        return Err(HilbertError::NotPovm);
    }
    Ok(())
}

/// Two-outcome assignment POVM with P(0|0) = f0 and P(1|1) = f1.
pub fn asymmetric_readout<T: Real>(f0: T, f1: T) -> [Matrix<T>; 2] {
    let one = T::one();
    [
        Matrix::diagonal(&[f0, one - f1]),
        Matrix::diagonal(&[one - f0, f1]),
    ]
}
