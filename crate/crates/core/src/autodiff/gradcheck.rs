use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest relative error over the compared coordinates.
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` occurs.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Coordinates whose `±h` probes switched a ReLU unit on or off. The
    /// function is not differentiable on that interval, so the central
    /// difference there is no oracle and the coordinate is not compared.
    pub kinked: Vec<usize>,
}

impl GradCheck {
    pub fn compared(&self) -> usize {
        self.analytic.len() - self.kinked.len()
    }
}

/// Relative error with the denominator `max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<T, F>(f: &F, point: Tensor<T>) -> Result<(f64, Vec<bool>)>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(point);
    let out = f(&mut tape, x)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(Error::Shape(format!(
            "grad_check function must return a scalar, got {:?}",
            value.shape()
        )));
    }
    let v = value.data()[0].as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check evaluation".into()));
    }
    Ok((v, tape.relu_pattern()))
}

/// Checks the gradient of the scalar function built by `f` at `point`.
///
/// `f` receives a fresh tape and the leaf holding the evaluation point, and
/// returns the scalar loss node. Numeric derivatives are
/// `(f(p + h·e) − f(p − h·e)) / 2h` per coordinate.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>, h: f64) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let loss = f(&mut tape, x)?;
    let report = tape.backward(loss)?;
    let pattern = tape.relu_pattern();
    let analytic: Vec<f64> = report
        .grad(x)
        .expect("leaf gradient")
        .data()
        .iter()
        .map(|v| v.as_f64())
        .collect();
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }

    let mut numeric = Vec::with_capacity(point.len());
    let mut kinked = Vec::new();
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] = T::of(point.data()[i].as_f64() + h);
        let mut minus = point.clone();
        minus.data_mut()[i] = T::of(point.data()[i].as_f64() - h);
        let (fp, pp) = evaluate(&f, plus)?;
        let (fm, pm) = evaluate(&f, minus)?;
        if pp != pattern || pm != pattern {
            kinked.push(i);
        }
        numeric.push((fp - fm) / (2.0 * h));
    }

    let mut worst_index = 0;
    let mut max_rel_error = 0.0;
    let mut skip = kinked.iter().peekable();
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        if skip.peek() == Some(&&i) {
            skip.next();
            continue;
        }
        let e = relative_error(a, n);
        if e > max_rel_error {
            max_rel_error = e;
            worst_index = i;
        }
    }

    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
        kinked,
    })
}
