use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central differences at `h = 1e-5` carry roundoff near `1e-16 · |f| / h`,
/// about `1e-11` for losses of order one. Below this floor a gradient is
/// compared in absolute terms so that roundoff does not read as a large
/// relative error.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    /// (tensor index, flat coordinate, analytic, numeric) of the worst case.
    pub worst: Option<(usize, usize, f64, f64)>,
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out)
        .item()
        .ok_or_else(|| Error::shape("finite_difference_check", "objective is not scalar"))
}

/// Compares tape gradients of `f` against central differences
/// `(f(θ+h·e) − f(θ−h·e)) / 2h`.
///
/// The error per coordinate is `|a − n| / max(|a|, |n|, DENOMINATOR_FLOOR)`.
/// With `max_coordinates` set and more parameters than that, an evenly
/// strided subset of coordinates is checked.
pub fn finite_difference_check<F>(
    params: &[Tensor],
    h: f64,
    max_coordinates: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(tape);

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.len()).map(move |c| (t, c)))
        .collect();
    let stride = match max_coordinates {
        Some(limit) if limit > 0 && coords.len() > limit => coords.len().div_ceil(limit),
        _ => 1,
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        coordinates_checked: 0,
        worst: None,
    };
    for &(t, c) in coords.iter().step_by(stride) {
        let original = work[t].data()[c];
        work[t].data_mut()[c] = original + h;
        let plus = evaluate(&f, &work)?;
        work[t].data_mut()[c] = original - h;
        let minus = evaluate(&f, &work)?;
        work[t].data_mut()[c] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[t].data()[c];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
        report.coordinates_checked += 1;
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((t, c, a, numeric));
        }
    }
    Ok(report)
}
