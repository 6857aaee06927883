//! Metrics, ablation variants, and the unseen-exercise-type protocol.

mod metrics;
pub mod report;
pub mod unseen;
mod variant;

use serde::Serialize;

use crate::error::Result;
use crate::model::{compute_loss, GraphBatch, LossValues, Model, PredictionTriple};
use crate::store::InteractionLog;
use crate::subgraph::EnclosingSubgraph;

pub use metrics::{accuracy, auc, metrics, Auc, Metrics};
pub use variant::Variant;

/// Predictions, metrics and loss of a model over prebuilt subgraphs.
#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub loss: LossValues,
    #[serde(skip)]
    pub predictions: Vec<PredictionTriple>,
    #[serde(skip)]
    pub labels: Vec<bool>,
}

pub fn evaluate_graphs(model: &Model, graphs: &[EnclosingSubgraph], batch_size: usize) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(graphs.len());
    let mut labels = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(batch_size.max(1)) {
        let refs: Vec<&EnclosingSubgraph> = chunk.iter().collect();
        let record = model.predict(&GraphBatch::new(&refs)?)?;
        predictions.extend(record.triples);
        labels.extend(chunk.iter().map(|g| g.label));
    }
    let blended: Vec<f64> = predictions.iter().map(|t| t.blended).collect();
    let local: Vec<f64> = predictions.iter().map(|t| t.local).collect();
    let global: Option<Vec<f64>> = predictions.iter().map(|t| t.global).collect();
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let loss = compute_loss(
        global.as_deref(),
        &local,
        &y,
        model.effective_gamma(),
        model.effective_lambda(),
    )?;
    Ok(Evaluation {
        metrics: metrics(&blended, &labels)?,
        loss,
        predictions,
        labels,
    })
}

/// Binary cross-entropy of the blended prediction, clamped like the loss.
pub fn blended_bce(evaluation: &Evaluation) -> f64 {
    let eps = crate::model::CLAMP;
    let total: f64 = evaluation
        .predictions
        .iter()
        .zip(&evaluation.labels)
        .map(|(t, &y)| {
            let p = t.blended.clamp(eps, 1.0 - eps);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / evaluation.labels.len() as f64
}

/// Per-exercise mean correctness over `history`, as a prediction for each
/// row of `targets`. Exercises absent from the history get the overall
/// history mean (0.5 for an empty history).
pub fn exercise_mean_baseline(history: &InteractionLog, targets: &InteractionLog) -> Vec<f64> {
    let n = history.vocab().exercise_count();
    let mut correct = vec![0usize; n];
    let mut total = vec![0usize; n];
    for r in history.rows() {
        total[r.exercise.index()] += 1;
        correct[r.exercise.index()] += usize::from(r.response);
    }
    let all: usize = total.iter().sum();
    let fallback = if all == 0 {
        0.5
    } else {
        correct.iter().sum::<usize>() as f64 / all as f64
    };
    targets
        .rows()
        .iter()
        .map(|r| {
            let e = r.exercise.index();
            match total.get(e) {
                Some(&t) if t > 0 => correct[e] as f64 / t as f64,
                _ => fallback,
            }
        })
        .collect()
}
