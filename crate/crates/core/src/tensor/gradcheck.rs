use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error so coordinates whose true
/// gradient is ~0 are compared on an absolute scale instead.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Checked coordinates, in order.
    pub coords: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` per coordinate.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub worst_coord: Option<usize>,
    pub passed: bool,
}

/// Compares the tape gradient of `f` at `point` with central differences on
/// every coordinate.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    grad_check_coords(f, point, &coords, step, tol)
}

/// Like [`grad_check`] but only perturbs the listed coordinates.
pub fn grad_check_coords<F>(
    f: F,
    point: &Tensor,
    coords: &[usize],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::invalid("grad_check", format!("step must be > 0, got {step}")));
    }
    if let Some(&c) = coords.iter().find(|&&c| c >= point.len()) {
        return Err(Error::invalid(
            "grad_check",
            format!("coordinate {c} out of range for {} values", point.len()),
        ));
    }

    let mut tape = Tape::new();
    let mut p = point.clone();
    p.set_requires_grad(true);
    let x = tape.leaf(p);
    let loss = f(&mut tape, x)?;
    tape.backward(loss)?;
    let full = tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]);
    if let Some(&c) = coords.iter().find(|&&c| !full[c].is_finite()) {
        return Err(Error::NonFinite { coord: c });
    }

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(t);
        let loss = f(&mut tape, x)?;
        let v = tape.value(loss);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut rel_errors = Vec::with_capacity(coords.len());
    let mut max_rel_error = 0.0;
    let mut worst_coord = None;
    for &c in coords {
        let mut plus = point.clone();
        plus.data_mut()[c] += step;
        let mut minus = point.clone();
        minus.data_mut()[c] -= step;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        let a = full[c];
        if !(fp.is_finite() && fm.is_finite() && a.is_finite()) {
            return Err(Error::NonFinite { coord: c });
        }
        let n = (fp - fm) / (2.0 * step);
        let err = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
        if worst_coord.is_none() || err > max_rel_error {
            max_rel_error = err;
            worst_coord = Some(c);
        }
        analytic.push(a);
        numeric.push(n);
        rel_errors.push(err);
    }
    Ok(GradCheckReport {
        coords: coords.to_vec(),
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        worst_coord,
        passed: max_rel_error <= tol,
    })
}
