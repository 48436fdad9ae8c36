use crate::autodiff::{Tape, Var};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Learnable parameters of the unrolled ISTA network. `s_matrix` is shared
/// by every step.
#[derive(Clone, Debug, PartialEq)]
pub struct ListaParams<T> {
    /// Filter matrix `W_e`, `K×n`.
    pub w_e: Tensor<T>,
    /// Mutual inhibition matrix `S`, `K×K`.
    pub s_matrix: Tensor<T>,
    /// Per-atom thresholds `θ ≥ 0`, length `K`.
    pub theta: Tensor<T>,
    /// Number of shrinkage applications.
    pub steps: usize,
}

/// Tape handles of a [`ListaParams`] registered for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ListaVars {
    pub w_e: Var,
    pub s_matrix: Var,
    pub theta: Var,
    pub steps: usize,
}

/// ISTA-equivalent initialisation: `W_e = Dᵀ/L`, `S = I − DᵀD/L`,
/// `θ = (α/L)·1`.
pub fn lista_init_from_dictionary<T: Scalar>(dict: &Dictionary, alpha: f64, steps: usize) -> Result<ListaParams<T>> {
    if steps == 0 {
        return Err(Error::Config("LISTA needs at least one step".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
    }
    let l = dict.lipschitz_bound();
    let dt = dict.atoms().transpose()?;
    let gram = dt.matmul(dict.atoms())?;
    let k = dict.atom_count();
    let w_e = Tensor::from_fn(dt.shape(), |i| T::lit(dt.data()[i] / l)).with_grad();
    let s_matrix = Tensor::from_fn(&[k, k], |i| {
        let eye = if i / k == i % k { 1.0 } else { 0.0 };
        T::lit(eye - gram.data()[i] / l)
    })
    .with_grad();
    let theta = Tensor::full(&[k], T::lit(alpha / l)).with_grad();
    Ok(ListaParams {
        w_e,
        s_matrix,
        theta,
        steps,
    })
}

impl<T: Scalar> ListaParams<T> {
    pub fn atom_count(&self) -> usize {
        self.w_e.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w_e.shape()[1]
    }

    /// Records the parameters as leaves on `tape`.
    pub fn register(&self, tape: &mut Tape<T>) -> ListaVars {
        ListaVars {
            w_e: tape.leaf(&self.w_e),
            s_matrix: tape.leaf(&self.s_matrix),
            theta: tape.leaf(&self.theta),
            steps: self.steps,
        }
    }

    /// Projects thresholds back onto `θ ≥ 0`.
    pub fn clamp_theta(&mut self) {
        self.theta.data_mut().iter_mut().for_each(|t| *t = t.max(T::zero()));
    }

    pub fn zero_grad(&mut self) {
        self.w_e.zero_grad();
        self.s_matrix.zero_grad();
        self.theta.zero_grad();
    }
}

impl ListaVars {
    /// Unrolled forward on a batch of rows `[M, n] → [M, K]`:
    /// `z₀ = h_θ(X·W_eᵀ)`, `z_{t+1} = h_θ(X·W_eᵀ + z_t·Sᵀ)`, with exactly
    /// `steps` shrinkage applications.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, rows: Var) -> Result<Var> {
        let drive = tape.matmul_t(rows, self.w_e, false, true)?;
        let mut z = tape.soft_threshold(drive, self.theta)?;
        for _ in 1..self.steps {
            let inhibit = tape.matmul_t(z, self.s_matrix, false, true)?;
            let pre = tape.add(drive, inhibit)?;
            z = tape.soft_threshold(pre, self.theta)?;
        }
        Ok(z)
    }
}

/// Sparse code of a single vector, outside any training tape.
pub fn lista_forward<T: Scalar>(params: &ListaParams<T>, x: &[T]) -> Result<Vec<T>> {
    let xs = Tensor::new(&[1, x.len()], x.to_vec())?;
    Ok(lista_batch_forward(params, &xs)?.into_data())
}

/// Row-wise [`lista_forward`] over `[M, n]`.
pub fn lista_batch_forward<T: Scalar>(params: &ListaParams<T>, xs: &Tensor<T>) -> Result<Tensor<T>> {
    let s = xs.shape();
    if s.len() != 2 || s[1] != params.input_dim() {
        return Err(Error::dim("lista_forward", s, params.w_e.shape()));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let rows = tape.leaf(xs);
    let z = vars.forward(&mut tape, rows)?;
    Ok(tape.to_tensor(z))
}
