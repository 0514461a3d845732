//! Finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step.
pub const STEP: f64 = 1e-4;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest coordinate-wise relative error `|a−n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_err: f64,
    /// (input position, flat element index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub pass: bool,
    /// Set when the check could not be carried out (evaluation error or a
    /// non-finite gradient).
    pub failure: Option<String>,
}

impl GradCheckReport {
    fn failed(msg: String) -> Self {
        GradCheckReport {
            max_rel_err: f64::INFINITY,
            worst: None,
            coordinates: 0,
            pass: false,
            failure: Some(msg),
        }
    }
}

/// Reduces an arbitrary output to a scalar with fixed, non-uniform weights
/// so that no coordinate of the output is invisible to the check.
fn scalarize(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
    if tape.value(out).numel() == 1 {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let weights = Tensor::from_fn(shape, |i| ((i as f64) * 0.731 + 0.29).sin() + 0.1)?;
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    tape.sum_all(prod)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out)?;
    tape.value(loss).item()
}

/// Checks the tape gradient of `f` with respect to every tensor in `inputs`
/// against central finite differences.
pub fn grad_check_all<F>(f: F, inputs: &[Tensor<f64>], tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let analytic = match f(&mut tape, &vars)
        .and_then(|out| scalarize(&mut tape, out))
        .and_then(|loss| tape.backward(loss))
    {
        Ok(g) => g,
        Err(e) => return GradCheckReport::failed(format!("analytic pass failed: {e}")),
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coordinates: 0,
        pass: true,
        failure: None,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (pos, var) in vars.iter().enumerate() {
        let grad = analytic.get(*var).expect("requires-grad leaf").to_vec();
        for (idx, &a) in grad.iter().enumerate() {
            let orig = inputs[pos].data()[idx];
            probe[pos].data_mut()[idx] = orig + STEP;
            let plus = evaluate(&f, &probe);
            probe[pos].data_mut()[idx] = orig - STEP;
            let minus = evaluate(&f, &probe);
            probe[pos].data_mut()[idx] = orig;
            let numeric = match (plus, minus) {
                (Ok(p), Ok(m)) => (p - m) / (2.0 * STEP),
                (Err(e), _) | (_, Err(e)) => {
                    return GradCheckReport::failed(format!("numeric pass failed: {e}"));
                }
            };
            if !a.is_finite() || !numeric.is_finite() {
                return GradCheckReport::failed(format!(
                    "non-finite gradient at input {pos} element {idx}: analytic {a}, numeric {numeric}"
                ));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((pos, idx));
            }
        }
    }
    report.pass = report.max_rel_err <= tol;
    report
}

/// Single-input form of [`grad_check_all`].
pub fn grad_check<F>(f: F, input: &Tensor<f64>, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_all(|tape, vars| f(tape, vars[0]), std::slice::from_ref(input), tol)
}
