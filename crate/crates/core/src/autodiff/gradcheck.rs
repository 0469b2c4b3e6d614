//! Central-difference gradient verification.

use ndarray::Array2;

use super::{Tape, Var};
use crate::Result;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a relu or clamp
    /// kink.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub params: Vec<ParamReport>,
    pub tol: f64,
    pub passed: bool,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn excluded(&self) -> usize {
        self.params.iter().map(|p| p.excluded).sum()
    }
}

fn evaluate<F>(params: &[Array2<f64>], f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    Ok((tape.scalar(out), tape.kink_signature()))
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with the given `step`, coordinate by coordinate.
///
/// `f` receives a fresh tape and one leaf per entry of `params`. The
/// relative error of a coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
pub fn finite_diff_check<F>(params: &[Array2<f64>], step: f64, tol: f64, f: F) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let base_sig = tape.kink_signature();
    tape.backward(out)?;
    let analytic: Vec<Array2<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(p.raw_dim())))
        .collect();

    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let mut report = ParamReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
            excluded: 0,
        };
        for idx in 0..params[k].len() {
            let (r, c) = (idx / params[k].ncols(), idx % params[k].ncols());
            let orig = work[k][[r, c]];
            work[k][[r, c]] = orig + step;
            let (fp, sp) = evaluate(&work, &f)?;
            work[k][[r, c]] = orig - step;
            let (fm, sm) = evaluate(&work, &f)?;
            work[k][[r, c]] = orig;
            if sp != base_sig || sm != base_sig {
                report.excluded += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[k][[r, c]];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
        reports.push(report);
    }
    let passed = reports.iter().all(|p| p.max_rel_error < tol);
    Ok(FdReport {
        params: reports,
        tol,
        passed,
    })
}
