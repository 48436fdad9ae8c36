//! Fixed overcomplete DCT dictionary.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Multiplier applied to the power-iteration eigenvalue so that the bound is
/// strictly above `λ_max(DᵀD)`.
pub const LIPSCHITZ_SAFETY: f64 = 1.01;

const POWER_ITERS: usize = 20_000;
const POWER_TOL: f64 = 1e-13;

/// `n×K` matrix of unit-norm atoms (columns) and an upper bound `L` on the
/// largest eigenvalue of `DᵀD`. Never modified after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    atoms: Tensor<f64>,
    lipschitz_bound: f64,
}

impl Dictionary {
    /// Wraps an existing atom matrix, checking unit column norms and
    /// computing its Lipschitz bound.
    pub fn from_atoms(atoms: Tensor<f64>) -> Result<Self> {
        let s = atoms.shape();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return Err(Error::Shape(format!(
                "dictionary must be a non-empty matrix, got {s:?}"
            )));
        }
        let (n, k) = (s[0], s[1]);
        for j in 0..k {
            let norm = (0..n).map(|i| atoms.data()[i * k + j].powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-8 {
                return Err(Error::Domain(format!("atom {j} has norm {norm}, expected 1")));
            }
        }
        let lipschitz_bound = estimate_lipschitz_of(&atoms, POWER_ITERS, POWER_TOL)?;
        Ok(Dictionary { atoms, lipschitz_bound })
    }

    #[cfg(test)]
    pub(crate) fn with_lipschitz_bound(mut self, l: f64) -> Self {
        self.lipschitz_bound = l;
        self
    }

    /// Latent dimension `n` (rows).
    pub fn dim(&self) -> usize {
        self.atoms.shape()[0]
    }

    /// Number of atoms `K` (columns).
    pub fn atom_count(&self) -> usize {
        self.atoms.shape()[1]
    }

    pub fn atoms(&self) -> &Tensor<f64> {
        &self.atoms
    }

    pub fn atoms_as<T: Scalar>(&self) -> Tensor<T> {
        self.atoms.cast()
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    /// `DᵀD`.
    pub fn gram(&self) -> Tensor<f64> {
        self.atoms
            .transpose()
            .and_then(|t| t.matmul(&self.atoms))
            .expect("dictionary is a matrix")
    }

    /// `D·z` for a code of length `K`.
    pub fn synthesize(&self, z: &[f64]) -> Vec<f64> {
        let (n, k) = (self.dim(), self.atom_count());
        (0..n)
            .map(|i| (0..k).map(|j| self.atoms.data()[i * k + j] * z[j]).sum())
            .collect()
    }

    /// `Dᵀ·x` for a signal of length `n`.
    pub fn analyze(&self, x: &[f64]) -> Vec<f64> {
        let (n, k) = (self.dim(), self.atom_count());
        (0..k)
            .map(|j| (0..n).map(|i| self.atoms.data()[i * k + j] * x[i]).sum())
            .collect()
    }
}

fn perfect_sqrt(v: usize) -> Option<usize> {
    let r = (v as f64).sqrt().round() as usize;
    (r * r == v).then_some(r)
}

/// Splits `k` into `q_rows · q_cols` with `q_rows ≥ q_cols ≥ p`, as close
/// to square as possible.
fn atom_grid(k: usize, p: usize) -> Option<(usize, usize)> {
    (p..=k)
        .take_while(|&q| q * q <= k)
        .filter(|&q| k.is_multiple_of(q))
        .last()
        .map(|q| (k / q, q))
}

/// 1-D DCT factor `p×q`: `cos((i + ½)·j·π/q)`, non-constant columns
/// mean-centred.
fn dct_factor(p: usize, q: usize) -> Vec<f64> {
    let mut m = vec![0.0f64; p * q];
    for j in 0..q {
        for i in 0..p {
            m[i * q + j] = ((i as f64 + 0.5) * j as f64 * std::f64::consts::PI / q as f64).cos();
        }
        if j > 0 {
            let mean = (0..p).map(|i| m[i * q + j]).sum::<f64>() / p as f64;
            (0..p).for_each(|i| m[i * q + j] -= mean);
        }
    }
    m
}

/// Separable 2-D DCT dictionary with `K` atoms of dimension `n`.
///
/// `n` must be a perfect square (each atom reshapes to a `√n × √n` patch)
/// and `K ≥ n`. The atom grid is `√K × √K` when `K` is a perfect square,
/// otherwise the most nearly square factorisation `K = q₁·q₂` with
/// `q₁ ≥ q₂ ≥ √n` (512 → 32×16). The dictionary is the Kronecker product of
/// the two 1-D factors with columns scaled to unit norm. For `K = n` this
/// is the orthonormal DCT-II basis.
pub fn build_dct_dictionary(n: usize, k: usize) -> Result<Dictionary> {
    let p = perfect_sqrt(n)
        .filter(|&p| p > 0)
        .ok_or_else(|| Error::Config(format!("latent dimension {n} is not a perfect square")))?;
    if k < n {
        return Err(Error::Config(format!(
            "atom count {k} is smaller than latent dimension {n}"
        )));
    }
    let (q1, q2) = atom_grid(k, p).ok_or_else(|| {
        Error::Config(format!(
            "atom count {k} does not factor into a q1 x q2 grid with q1, q2 >= {p}"
        ))
    })?;
    let m1 = dct_factor(p, q1);
    let m2 = dct_factor(p, q2);

    // Kronecker product M1 ⊗ M2: row (i1, i2), column (j1, j2).
    let mut atoms = vec![0.0f64; n * k];
    for i1 in 0..p {
        for i2 in 0..p {
            let row = i1 * p + i2;
            for j1 in 0..q1 {
                for j2 in 0..q2 {
                    atoms[row * k + j1 * q2 + j2] = m1[i1 * q1 + j1] * m2[i2 * q2 + j2];
                }
            }
        }
    }
    for j in 0..k {
        let norm = (0..n).map(|i| atoms[i * k + j].powi(2)).sum::<f64>().sqrt();
        (0..n).for_each(|i| atoms[i * k + j] /= norm);
    }
    Dictionary::from_atoms(Tensor::new(&[n, k], atoms)?)
}

/// Lipschitz bound of a dictionary via power iteration (see
/// [`estimate_lipschitz_of`]).
pub fn estimate_lipschitz(dict: &Dictionary, iters: usize, tol: f64) -> Result<f64> {
    estimate_lipschitz_of(dict.atoms(), iters, tol)
}

/// Largest eigenvalue of `AᵀA` by power iteration, times
/// [`LIPSCHITZ_SAFETY`].
///
/// Starts from a fixed pseudo-random vector and stops once successive
/// Rayleigh quotients differ by at most `tol` (relative).
pub fn estimate_lipschitz_of(atoms: &Tensor<f64>, iters: usize, tol: f64) -> Result<f64> {
    power_iteration(atoms, iters, tol).map(|l| l * LIPSCHITZ_SAFETY)
}

/// Rayleigh quotient of `AᵀA` at the power-iteration fixed point, without
/// the safety factor.
pub fn power_iteration(atoms: &Tensor<f64>, iters: usize, tol: f64) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Config("power iteration needs iters >= 1".into()));
    }
    let s = atoms.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("expected a matrix, got {s:?}")));
    }
    let (n, k) = (s[0], s[1]);
    let a = atoms.data();

    // xorshift seed vector: deterministic and generic enough to overlap the
    // leading eigenvector.
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut v: Vec<f64> = (0..k)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 + 0.5
        })
        .collect();
    normalize(&mut v);

    let mut av = vec![0.0; n];
    let mut w = vec![0.0; k];
    let mut lambda = f64::NAN;
    for _ in 0..iters {
        for i in 0..n {
            av[i] = (0..k).map(|j| a[i * k + j] * v[j]).sum();
        }
        for j in 0..k {
            w[j] = (0..n).map(|i| a[i * k + j] * av[i]).sum();
        }
        let next: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.iter_mut().zip(&w).for_each(|(x, y)| *x = y / norm);
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::NoConvergence {
        iters,
        estimate: lambda,
    })
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}
