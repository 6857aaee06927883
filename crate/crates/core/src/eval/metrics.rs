use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc: f64,
    /// Set when the labels held a single class and `auc` fell back to 0.5.
    pub auc_degenerate: bool,
    pub samples: usize,
    pub positive_rate: f64,
}

fn check_lengths(predictions: &[f64], labels: &[bool]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("metrics over an empty prediction set".into()));
    }
    Ok(())
}

/// Fraction of predictions on the right side of `threshold`; a prediction
/// equal to the threshold counts as positive.
pub fn accuracy(predictions: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= threshold) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Auc {
    pub value: f64,
    pub degenerate: bool,
}

/// Rank-based AUC with average ranks over ties. Single-class labels give
/// 0.5 with `degenerate` set.
pub fn auc(predictions: &[f64], labels: &[bool]) -> Result<Auc> {
    check_lengths(predictions, labels)?;
    if predictions.iter().any(|p| p.is_nan()) {
        return Err(Error::InvalidArgument("NaN prediction".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Ok(Auc {
            value: 0.5,
            degenerate: true,
        });
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));

    // Ranks are 1-based; doubling keeps tie averages integral.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && predictions[order[end]] == predictions[order[start]] {
            end += 1;
        }
        let twice_avg = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        twice_rank_sum += twice_avg * pos_in_group;
        start = end;
    }
    let (p, n) = (positives as u64, negatives as u64);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(Auc {
        value: twice_u as f64 / (2 * p * n) as f64,
        degenerate: false,
    })
}

pub fn metrics(predictions: &[f64], labels: &[bool]) -> Result<Metrics> {
    let a = auc(predictions, labels)?;
    Ok(Metrics {
        accuracy: accuracy(predictions, labels, 0.5)?,
        auc: a.value,
        auc_degenerate: a.degenerate,
        samples: labels.len(),
        positive_rate: labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.6, 0.4], &[true, false], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.5], &[true], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.9, 0.9], &[true, false], 0.5).unwrap(), 0.5);
        assert!(accuracy(&[], &[], 0.5).is_err());
        assert!(accuracy(&[0.1], &[true, false], 0.5).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap().value, 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap().value, 0.0);
        assert_eq!(auc(&[0.3, 0.3], &[true, false]).unwrap().value, 0.5);
        let single = auc(&[0.2, 0.7], &[true, true]).unwrap();
        assert_eq!(single, Auc { value: 0.5, degenerate: true });
    }

    #[test]
    fn tie_groups_use_average_ranks() {
        // Pairs: (0.8 vs 0.2) 1, (0.8 vs 0.5) 1, (0.5 vs 0.2) 1, (0.5 vs 0.5) ½.
        let v = auc(&[0.8, 0.5, 0.5, 0.2], &[true, true, false, false]).unwrap().value;
        assert_eq!(v, 3.5 / 4.0);
    }

    #[test]
    fn metrics_block() {
        let m = metrics(&[0.9, 0.2, 0.6, 0.4], &[true, false, false, true]).unwrap();
        assert_eq!(m.samples, 4);
        assert_eq!(m.positive_rate, 0.5);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.auc, 0.75);
    }
}
