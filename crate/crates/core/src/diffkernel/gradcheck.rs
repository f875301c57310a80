//! Central finite-difference oracle for tape gradients (64-bit).

use super::{Array, KernelError, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

/// Denominator floor for the relative error, so entries whose true
/// gradient is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients of `f` with central differences of step
/// `h` for every entry of every parameter in `params`.
///
/// `f` receives a fresh tape and one parameter var per array and must
/// return a 1x1 output. It is re-evaluated `2 · Σ len(params)` times, so it
/// must be deterministic.
pub fn check_gradients<F>(params: &[Array<f64>], h: f64, f: F) -> Result<GradCheckReport, KernelError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, KernelError>,
{
    let eval = |values: &[Array<f64>]| -> Result<f64, KernelError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|a| tape.parameter(a.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|a| tape.parameter(a.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work: Vec<Array<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        entries: 0,
    };
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("parameter gradient").clone();
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[p].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[p].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.entries += 1;
        }
    }
    Ok(report)
}
