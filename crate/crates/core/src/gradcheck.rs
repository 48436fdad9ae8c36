//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it is used to verify.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Relative error `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`
    /// per input, over the checked coordinates.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with the given `step`, on every coordinate.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_sampled(inputs, step, usize::MAX, 0, f)
}

/// As [`check`], but perturbs at most `per_input` randomly chosen
/// coordinates of each input.
pub fn check_sampled<F>(inputs: &[Tensor<f64>], step: f64, per_input: usize, seed: u64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.item(out))
    };

    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, v) in vars.iter().enumerate() {
        let n = inputs[idx].numel();
        let coords: Vec<usize> = if per_input >= n {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, per_input).into_vec();
            c.sort_unstable();
            c
        };
        let analytic_full = grads.get(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for &c in &coords {
            let orig = work[idx].data()[c];
            work[idx].data_mut()[c] = orig + step;
            let plus = eval(&work)?;
            work[idx].data_mut()[c] = orig - step;
            let minus = eval(&work)?;
            work[idx].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = analytic_full[c];
            diff2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        rel_errors.push(if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom });
    }
    Ok(GradCheck { rel_errors })
}
