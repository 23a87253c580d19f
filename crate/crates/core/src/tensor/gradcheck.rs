//! Central finite-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use std::fmt;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const GRAD_FLOOR: f64 = 1e-7;

/// A component whose analytic and numeric gradients disagree beyond `tol`.
#[derive(Clone, Debug, PartialEq)]
pub struct Flagged {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// L1 norm of the analytic gradient, handy for spotting dead parameters.
    pub grad_l1: f64,
    pub flagged: Vec<Flagged>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub eps: f64,
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.flagged.is_empty())
    }

    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<16} max rel err {:.3e}  |grad|_1 {:.3e}  flagged {}",
                t.name,
                t.max_rel_error,
                t.grad_l1,
                t.flagged.len()
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn eval_scalar<F>(f: &F, params: &[(&str, Tensor)], track: bool) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|(_, t)| tape.leaf(&t.clone().with_requires_grad(track)))
        .collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::shape("gradcheck", value.shape(), &[1]));
    }
    if !value.data()[0].is_finite() {
        let op = tape.first_non_finite().unwrap_or("leaf");
        return Err(Error::NonFiniteOp { op });
    }
    Ok((tape, vars, out))
}

/// Compares the tape gradient of the scalar `f` against central differences
/// `(f(θ+eps) − f(θ−eps)) / (2·eps)` for every component of every parameter.
///
/// Components with relative error above `tol` are listed in the report
/// instead of aborting, which makes non-differentiable points visible.
pub fn gradcheck<F>(f: F, params: &[(&str, Tensor)], eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, out) = eval_scalar(&f, params, true)?;
    tape.backward(out)?;

    let mut tensors = Vec::with_capacity(params.len());
    let mut probe: Vec<(&str, Tensor)> = params.to_vec();
    for (p, (name, t)) in params.iter().enumerate() {
        let analytic = tape
            .grad(vars[p])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        let mut check = TensorCheck {
            name: (*name).to_string(),
            max_rel_error: 0.0,
            grad_l1: analytic.iter().map(|g| g.abs()).sum(),
            flagged: Vec::new(),
        };
        for (j, &a) in analytic.iter().enumerate() {
            let orig = t.data()[j];
            probe[p].1.data_mut()[j] = orig + eps;
            let (tp, _, op) = eval_scalar(&f, &probe, false)?;
            let plus = tp.value(op).data()[0];
            probe[p].1.data_mut()[j] = orig - eps;
            let (tm, _, om) = eval_scalar(&f, &probe, false)?;
            let minus = tm.value(om).data()[0];
            probe[p].1.data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let rel = relative_error(a, numeric);
            check.max_rel_error = check.max_rel_error.max(rel);
            if rel > tol {
                check.flagged.push(Flagged {
                    index: j,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        tensors.push(check);
    }
    Ok(GradcheckReport { eps, tol, tensors })
}
