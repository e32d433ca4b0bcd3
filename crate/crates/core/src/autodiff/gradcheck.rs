//! Central finite-difference oracle for tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Max over entries of `|analytic - numeric| / (|analytic| + 1e-8)` for a
/// scalar function of one tensor.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Same as [`finite_diff_check`] over several inputs at once; the result is
/// the max over every entry of every input.
pub fn finite_diff_check_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let report = gradient_report(&f, xs, h)?;
    Ok(report
        .iter()
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max))
}

/// Analytic and numeric gradient pairs, one per input.
pub fn gradient_report<F>(f: &F, xs: &[Tensor], h: f64) -> Result<Vec<(Tensor, Tensor)>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;

    let mut report = Vec::with_capacity(xs.len());
    let mut probe = xs.to_vec();
    for (which, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v);
        let mut numeric = Tensor::zeros(analytic.rows(), analytic.cols());
        for k in 0..analytic.len() {
            let orig = probe[which].data()[k];
            probe[which].data_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe[which].data_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe[which].data_mut()[k] = orig;
            numeric.data_mut()[k] = (up - down) / (2.0 * h);
        }
        report.push((analytic, numeric));
    }
    Ok(report)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    if tape.shape(v) != (1, 1) {
        return Err(Error::invalid("gradient check needs a scalar output"));
    }
    Ok(tape.value(v).item())
}
