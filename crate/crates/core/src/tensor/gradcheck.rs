use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst-case agreement between analytic and finite-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn eval_scalar<F>(f: &F, points: &[Tensor], track: bool) -> Result<(f64, Option<Vec<Tensor>>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points
        .iter()
        .map(|p| {
            if track {
                tape.leaf(p.clone())
            } else {
                tape.constant(p.clone())
            }
        })
        .collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(Error::NotScalar(value.shape().to_vec()));
    }
    let y = value.item();
    if !track {
        return Ok((y, None));
    }
    let grads = tape.backward(out)?;
    let g = vars
        .iter()
        .zip(points)
        .map(|(v, p)| grads.get_or_zeros(*v, p))
        .collect();
    Ok((y, Some(g)))
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences at every coordinate of every input group.
///
/// Returns one report per group in `points`.
pub fn grad_check_groups<F>(f: F, points: &[Tensor], epsilon: f64) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, analytic) = eval_scalar(&f, points, true)?;
    let analytic = analytic.expect("tracked evaluation returns gradients");
    let mut shifted = points.to_vec();
    let mut reports = Vec::with_capacity(points.len());
    for (g, grad) in analytic.iter().enumerate() {
        let mut report = GradCheckReport {
            max_relative_error: 0.0,
            max_abs_error: 0.0,
            coordinates: grad.numel(),
        };
        for i in 0..grad.numel() {
            let x = points[g].data()[i];
            shifted[g].data_mut()[i] = x + epsilon;
            let (plus, _) = eval_scalar(&f, &shifted, false)?;
            shifted[g].data_mut()[i] = x - epsilon;
            let (minus, _) = eval_scalar(&f, &shifted, false)?;
            shifted[g].data_mut()[i] = x;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[i];
            report.max_relative_error = report.max_relative_error.max(relative_error(a, numeric));
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Single-input form of [`grad_check_groups`]; returns the maximum
/// relative error.
pub fn grad_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let reports = grad_check_groups(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), epsilon)?;
    Ok(reports[0].max_relative_error)
}
