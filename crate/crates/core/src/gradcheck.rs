//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_input: String,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares autodiff gradients of a scalar function against central differences.
///
/// `f` receives a fresh tape and one leaf per input (in order) and must return
/// a scalar. It is re-evaluated twice per perturbed coordinate, so it has to be
/// deterministic.
pub fn check<F>(inputs: &[(String, Tensor)], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient"))
        .collect();

    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (k, (name, _)) in inputs.iter().enumerate() {
        for i in 0..values[k].numel() {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + step;
            let plus = eval(&values)?;
            values[k].data_mut()[i] = orig - step;
            let minus = eval(&values)?;
            values[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[k].data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = err;
                report.worst_input = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
