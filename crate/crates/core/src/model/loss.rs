use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` before logarithms.
pub const CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub global: Option<Var>,
    pub local: Var,
    pub consistency: Option<Var>,
    pub total: Var,
}

/// Loss components of one batch or epoch. `global` and `consistency` are
/// absent when the model has no global branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub global: Option<f64>,
    pub local: f64,
    pub consistency: Option<f64>,
    pub total: f64,
}

impl LossValues {
    pub fn read(tape: &Tape, vars: &LossVars) -> Self {
        let get = |v: Var| tape.value(v).data()[0];
        Self {
            global: vars.global.map(get),
            local: get(vars.local),
            consistency: vars.consistency.map(get),
            total: get(vars.total),
        }
    }
}

fn bce(tape: &mut Tape, p: Var, y: Var) -> Result<Var> {
    let p = tape.clamp(p, CLAMP, 1.0 - CLAMP);
    let log_p = tape.log(p);
    let q = tape.affine(p, -1.0, 1.0);
    let log_q = tape.log(q);
    let y_neg = tape.affine(y, -1.0, 1.0);
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(y_neg, log_q)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    Ok(tape.scale(m, -1.0))
}

/// `γ·ℒ_global + (1−γ)·ℒ_local + λ·ℒ_cons` over `n×1` prediction columns.
///
/// Terms whose coefficient is zero are left out of `total`, so they
/// contribute exactly nothing to the gradient.
pub fn loss_on_tape(
    tape: &mut Tape,
    global: Option<Var>,
    local: Var,
    labels: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<LossVars> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty batch".into()));
    }
    let y = tape.constant(Tensor::column(labels.to_vec()));
    let local_bce = bce(tape, local, y)?;
    let (gamma, global_bce, consistency) = match global {
        Some(g) => {
            let global_bce = bce(tape, g, y)?;
            let diff = tape.sub(g, local)?;
            let sq = tape.square(diff);
            let ms = tape.mean(sq)?;
            (gamma, Some(global_bce), Some(tape.sqrt(ms)))
        }
        None => (0.0, None, None),
    };

    let mut terms = Vec::new();
    if let Some(g) = global_bce.filter(|_| gamma != 0.0) {
        terms.push(tape.scale(g, gamma));
    }
    if gamma != 1.0 {
        terms.push(tape.scale(local_bce, 1.0 - gamma));
    }
    if let Some(c) = consistency.filter(|_| lambda != 0.0) {
        terms.push(tape.scale(c, lambda));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(LossVars {
        global: global_bce,
        local: local_bce,
        consistency,
        total,
    })
}

/// Loss components for plain prediction vectors.
pub fn compute_loss(
    global: Option<&[f64]>,
    local: &[f64],
    labels: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<LossValues> {
    if local.len() != labels.len() || global.is_some_and(|g| g.len() != labels.len()) {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} predictions",
            labels.len(),
            local.len()
        )));
    }
    let mut tape = Tape::new();
    let g = global.map(|g| tape.constant(Tensor::column(g.to_vec())));
    let l = tape.constant(Tensor::column(local.to_vec()));
    let vars = loss_on_tape(&mut tape, g, l, labels, gamma, lambda)?;
    Ok(LossValues::read(&tape, &vars))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let y = [1.0, 0.0, 1.0];
        let v = compute_loss(Some(&y), &y, &y, 0.5, 0.5).unwrap();
        // Clamping leaves a residue of about -ln(1 - 1e-7).
        assert!(v.total < 1e-6, "{v:?}");
        assert_eq!(v.consistency, Some(0.0));
    }

    #[test]
    fn hand_evaluated_single_sample() {
        let v = compute_loss(Some(&[0.5]), &[0.5], &[1.0], 0.5, 1.0).unwrap();
        assert!((v.total - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn consistency_is_rmse() {
        let v = compute_loss(Some(&[0.9, 0.2]), &[0.6, 0.6], &[1.0, 0.0], 0.5, 1.0).unwrap();
        let rmse = ((0.09 + 0.16) / 2.0f64).sqrt();
        assert!((v.consistency.unwrap() - rmse).abs() < 1e-12);
        let bce = |p: [f64; 2]| -((p[0]).ln() + (1.0 - p[1]).ln()) / 2.0;
        let want = 0.5 * bce([0.9, 0.2]) + 0.5 * bce([0.6, 0.6]) + rmse;
        assert!((v.total - want).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(compute_loss(None, &[], &[], 0.5, 0.5).is_err());
    }

    #[test]
    fn extreme_predictions_stay_finite() {
        let v = compute_loss(Some(&[0.0]), &[1.0], &[1.0], 0.5, 0.5).unwrap();
        assert!(v.total.is_finite());
    }
}
