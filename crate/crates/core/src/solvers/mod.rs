//! Sparse coding: the lasso energy, ISTA/FISTA reference solvers and the
//! trainable unrolled LISTA coder.

mod ista;
mod lista;

pub use ista::{fista_solve, ista_solve, ista_steps, IstaOperator};
pub use lista::{lista_batch_forward, lista_forward, lista_init_from_dictionary, ListaParams, ListaVars};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Defaults for the reference solvers.
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 1000;
/// Energy increase between consecutive steps treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e-6;

/// One lasso instance: signal `x`, dictionary and sparsity weight `alpha`.
#[derive(Clone, Copy, Debug)]
pub struct SparseProblem<'a> {
    pub x: &'a [f64],
    pub dict: &'a Dictionary,
    pub alpha: f64,
}

impl<'a> SparseProblem<'a> {
    pub fn new(x: &'a [f64], dict: &'a Dictionary, alpha: f64) -> Result<Self> {
        if x.len() != dict.dim() {
            return Err(Error::dim("sparse problem", &[x.len()], dict.atoms().shape()));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("signal contains non-finite values".into()));
        }
        Ok(SparseProblem { x, dict, alpha })
    }
}

/// Solver output.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    pub z: Vec<f64>,
    pub iterations_run: usize,
    pub final_energy: f64,
}

/// `½‖x − Dz‖₂² + α‖z‖₁`.
pub fn energy(problem: &SparseProblem<'_>, z: &[f64]) -> Result<f64> {
    let d = problem.dict;
    if z.len() != d.atom_count() {
        return Err(Error::dim("energy", &[z.len()], &[d.atom_count()]));
    }
    let k = d.atom_count();
    let data = d
        .atoms()
        .data()
        .chunks_exact(k)
        .zip(problem.x)
        .map(|(row, xi)| {
            let r = xi - dot(row, z);
            r * r
        })
        .sum::<f64>();
    let l1 = z.iter().map(|v| v.abs()).sum::<f64>();
    Ok(0.5 * data + problem.alpha * l1)
}

/// Dot product with four independent accumulators so the loop vectorises.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests;
