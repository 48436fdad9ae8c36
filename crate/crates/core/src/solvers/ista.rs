use super::{dot, energy, SparseCode, SparseProblem, DIVERGENCE_THRESHOLD};
use crate::error::{Error, Result};

/// The matrices of the ISTA recursion `z ← h_θ(W_e·x + S·z)` for one
/// dictionary and sparsity weight:
/// `W_e = Dᵀ/L`, `S = I − DᵀD/L`, `θ = α/L`.
#[derive(Clone, Debug)]
pub struct IstaOperator {
    k: usize,
    n: usize,
    /// `K×n`, row-major.
    pub filter: Vec<f64>,
    /// `K×K`, row-major.
    pub inhibition: Vec<f64>,
    pub theta: f64,
}

impl IstaOperator {
    pub fn new(problem: &SparseProblem<'_>) -> Self {
        let d = problem.dict;
        let (n, k) = (d.dim(), d.atom_count());
        let l = d.lipschitz_bound();
        let a = d.atoms().data();
        let mut filter = vec![0.0; k * n];
        for j in 0..k {
            for i in 0..n {
                filter[j * n + i] = a[i * k + j] / l;
            }
        }
        let mut inhibition = vec![0.0; k * k];
        for r in 0..k {
            for c in 0..k {
                let g: f64 = (0..n).map(|i| a[i * k + r] * a[i * k + c]).sum();
                inhibition[r * k + c] = if r == c { 1.0 } else { 0.0 } - g / l;
            }
        }
        IstaOperator {
            k,
            n,
            filter,
            inhibition,
            theta: problem.alpha / l,
        }
    }

    /// `W_e·x`.
    pub fn drive(&self, x: &[f64]) -> Vec<f64> {
        self.filter.chunks_exact(self.n).map(|row| dot(row, x)).collect()
    }

    /// Pre-threshold value `W_e·x + S·z` given the precomputed drive.
    pub fn pre_threshold(&self, drive: &[f64], z: &[f64]) -> Vec<f64> {
        self.inhibition
            .chunks_exact(self.k)
            .zip(drive)
            .map(|(row, d)| d + dot(row, z))
            .collect()
    }

    /// One shrinkage step `h_θ(W_e·x + S·z)`.
    pub fn step(&self, drive: &[f64], z: &[f64]) -> Vec<f64> {
        self.pre_threshold(drive, z)
            .into_iter()
            .map(|v| shrink(v, self.theta))
            .collect()
    }
}

fn shrink(v: f64, theta: f64) -> f64 {
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_budget(max_iters: usize, tol: f64) -> Result<()> {
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tol must be > 0, got {tol}")));
    }
    Ok(())
}

/// Exactly `steps` ISTA iterations from `z = 0`, without convergence or
/// divergence checks.
pub fn ista_steps(problem: &SparseProblem<'_>, steps: usize) -> Vec<f64> {
    let op = IstaOperator::new(problem);
    let drive = op.drive(problem.x);
    let mut z = vec![0.0; problem.dict.atom_count()];
    for _ in 0..steps {
        z = op.step(&drive, &z);
    }
    z
}

/// Iterative shrinkage-thresholding from `z = 0` until the largest
/// coordinate change drops below `tol` or `max_iters` steps have run.
pub fn ista_solve(problem: &SparseProblem<'_>, max_iters: usize, tol: f64) -> Result<SparseCode> {
    check_budget(max_iters, tol)?;
    let op = IstaOperator::new(problem);
    let drive = op.drive(problem.x);
    let mut z = vec![0.0; problem.dict.atom_count()];
    let mut e = energy(problem, &z)?;
    for it in 1..=max_iters {
        let next = op.step(&drive, &z);
        let e_next = energy(problem, &next)?;
        if e_next > e + DIVERGENCE_THRESHOLD {
            return Err(Error::numerical(
                "ista_solve",
                format!("energy rose from {e} to {e_next} at iteration {it}"),
            ));
        }
        let delta = max_abs_diff(&next, &z);
        z = next;
        e = e_next;
        if delta < tol {
            return Ok(SparseCode {
                z,
                iterations_run: it,
                final_energy: e,
            });
        }
    }
    Ok(SparseCode {
        z,
        iterations_run: max_iters,
        final_energy: e,
    })
}

const FISTA_WINDOW: usize = 10;

/// Accelerated ISTA with the Nesterov sequence `t ← (1 + √(1 + 4t²))/2`.
///
/// Energy need not decrease monotonically. Divergence is flagged when the
/// mean energy over the last 10 steps exceeds both the mean of the 10
/// before it and the starting energy `½‖x‖²`; momentum ripples stay below
/// the latter.
pub fn fista_solve(problem: &SparseProblem<'_>, max_iters: usize, tol: f64) -> Result<SparseCode> {
    check_budget(max_iters, tol)?;
    let op = IstaOperator::new(problem);
    let drive = op.drive(problem.x);
    let k = problem.dict.atom_count();
    let mut z = vec![0.0; k];
    let mut y = z.clone();
    let mut t = 1.0f64;
    let mut history: Vec<f64> = Vec::new();
    let mut e = energy(problem, &z)?;
    let start = e;
    for it in 1..=max_iters {
        let next = op.step(&drive, &y);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        y = next.iter().zip(&z).map(|(a, b)| a + momentum * (a - b)).collect();
        let delta = max_abs_diff(&next, &z);
        z = next;
        t = t_next;
        e = energy(problem, &z)?;

        history.push(e);
        if history.len() >= 2 * FISTA_WINDOW {
            let len = history.len();
            let recent = history[len - FISTA_WINDOW..].iter().sum::<f64>() / FISTA_WINDOW as f64;
            let before = history[len - 2 * FISTA_WINDOW..len - FISTA_WINDOW].iter().sum::<f64>() / FISTA_WINDOW as f64;
            if recent > before + DIVERGENCE_THRESHOLD && recent > start + DIVERGENCE_THRESHOLD {
                return Err(Error::numerical(
                    "fista_solve",
                    format!("windowed energy rose from {before} to {recent} at iteration {it}"),
                ));
            }
        }
        if delta < tol {
            return Ok(SparseCode {
                z,
                iterations_run: it,
                final_energy: e,
            });
        }
    }
    Ok(SparseCode {
        z,
        iterations_run: max_iters,
        final_energy: e,
    })
}
