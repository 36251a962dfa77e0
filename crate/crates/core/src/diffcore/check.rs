use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// A scalar loss over a flattened parameter vector with an analytic gradient.
pub trait Differentiable {
    fn value(&self, params: &[f64]) -> Result<f64>;

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Loss expressed as a tape program: the closure receives the parameters as
/// tape leaves and returns the output node.
pub struct TapeFn<F>(pub F);

impl<F> Differentiable for TapeFn<F>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    fn value(&self, params: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = tape.vars(params);
        let out = (self.0)(&mut tape, &vars);
        let v = tape.value(out);
        if !v.is_finite() {
            return Err(Error::non_finite("tape output"));
        }
        Ok(v)
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = tape.vars(params);
        let out = (self.0)(&mut tape, &vars);
        let grad = tape.gradient(out, &vars)?;
        Ok((tape.value(out), grad))
    }
}

/// `∂loss/∂params`, rejecting non-finite components.
pub fn gradient<L: Differentiable + ?Sized>(loss: &L, params: &[f64]) -> Result<Vec<f64>> {
    let (_, g) = loss.value_and_gradient(params)?;
    if g.len() != params.len() {
        return Err(Error::Shape {
            context: "gradient",
            expected: params.len(),
            got: g.len(),
        });
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite(format!("gradient component {i}")));
    }
    Ok(g)
}

/// Central-difference gradient with step `h`.
pub fn central_differences<L: Differentiable + ?Sized>(
    loss: &L,
    params: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss.value(&p)?;
        p[i] = orig - h;
        let down = loss.value(&p)?;
        p[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Max over coordinates of `|analytic − central| / max(1, |analytic|)`.
pub fn finite_diff_check<L: Differentiable + ?Sized>(
    loss: &L,
    params: &[f64],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let analytic = gradient(loss, params)?;
    let numeric = central_differences(loss, params, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}
