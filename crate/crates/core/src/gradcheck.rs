//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of `|analytic − numeric| / max(1, |analytic|)`.
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

fn eval<T: Real, F>(f: &F, inputs: &[Tensor<T>], fault: bool) -> Result<(Tape<T>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if fault {
        tape.inject_fault();
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        bail!(Contract, "gradient check needs a scalar output, got shape {:?}", tape.value(out).shape());
    }
    Ok((tape, vars, out))
}

/// Checks the gradient of scalar `f` at `x`.
pub fn grad_check<T: Real, F>(f: F, x: &Tensor<T>, step: T) -> Result<f64>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let g = |tape: &mut Tape<T>, vars: &[Var]| f(tape, vars[0]);
    Ok(grad_check_many(g, core::slice::from_ref(x), step, 1)?.max_rel_err)
}

/// Checks the gradient of scalar `f` with respect to each of `inputs`,
/// visiting every `stride`-th coordinate of each input.
pub fn grad_check_many<T: Real, F>(f: F, inputs: &[Tensor<T>], step: T, stride: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    check(f, inputs, step, stride, false)
}

/// As [`grad_check_many`], with the analytic pass run on a tape carrying an
/// injected backward fault.
#[doc(hidden)]
pub fn grad_check_faulty<T: Real, F>(f: F, inputs: &[Tensor<T>], step: T, stride: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    check(f, inputs, step, stride, true)
}

fn check<T: Real, F>(f: F, inputs: &[Tensor<T>], step: T, stride: usize, fault: bool) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(step > T::zero()) {
        bail!(Argument, "finite-difference step must be positive");
    }
    let stride = stride.max(1);
    let (tape, vars, out) = eval(&f, inputs, fault)?;
    let grads = tape.backward(out)?;
    drop(tape);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    let two_h = (step + step).as_f64();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for idx in (0..inputs[which].len()).step_by(stride) {
            let a = analytic.map_or(0.0, |g| g.data()[idx].as_f64());
            let orig = inputs[which].data()[idx];
            probe[which].data_mut()[idx] = orig + step;
            let up = scalar(&f, &probe)?;
            probe[which].data_mut()[idx] = orig - step;
            let down = scalar(&f, &probe)?;
            probe[which].data_mut()[idx] = orig;
            let numeric = (up - down) / two_h;
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = err;
                report.worst = (which, idx);
            }
        }
    }
    Ok(report)
}

fn scalar<T: Real, F>(f: &F, inputs: &[Tensor<T>]) -> Result<f64>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let (tape, _, out) = eval(f, inputs, false)?;
    Ok(tape.value(out).item()?.as_f64())
}
