//! Training on some exercise types and testing on types never seen during
//! training.

use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::{evaluate_graphs, Metrics};
use crate::error::{Error, Result};
use crate::store::{chronological_cut, exercise_type_partition, InteractionLog};
use crate::train::{train, TargetSet, TrainConfig};

/// Fraction of the train-side log (chronologically first) used for
/// fitting; the rest drives early stopping.
pub const INNER_TRAIN_FRACTION: f64 = 0.8;

/// Written `train/test`, each side a comma-separated type list, e.g. `1,2/3`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypePartition {
    pub train_types: Vec<String>,
    pub test_types: Vec<String>,
}

impl FromStr for TypePartition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (train, test) = s.split_once('/').ok_or_else(|| {
            Error::InvalidArgument(format!("type partition `{s}` is not of the form `a,b/c`"))
        })?;
        let list = |side: &str| -> Vec<String> {
            side.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::to_owned).collect()
        };
        let p = Self {
            train_types: list(train),
            test_types: list(test),
        };
        if p.train_types.is_empty() || p.test_types.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "type partition `{s}` needs types on both sides"
            )));
        }
        Ok(p)
    }
}

impl fmt::Display for TypePartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.train_types.join(","), self.test_types.join(","))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct UnseenResult {
    pub partition: String,
    pub train_targets: usize,
    pub test_targets: usize,
    pub best_epoch: usize,
    pub metrics: Metrics,
}

/// Train/val/test target sets for one partition. Test subgraphs only see
/// interactions of the test types.
pub fn unseen_targets(
    log: &InteractionLog,
    partition: &TypePartition,
    subsequence_len: usize,
) -> Result<(TargetSet, TargetSet, TargetSet)> {
    let (seen, unseen) = exercise_type_partition(log, &partition.train_types, &partition.test_types)?;
    if unseen.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "partition {partition} leaves no test interactions"
        )));
    }
    if seen.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "partition {partition} leaves no training interactions"
        )));
    }
    let (fit, val) = chronological_cut(&seen, INNER_TRAIN_FRACTION)?;
    Ok((
        TargetSet::new(fit.clone(), &fit, subsequence_len)?,
        TargetSet::new(seen, &val, subsequence_len)?,
        TargetSet::new(unseen.clone(), &unseen, subsequence_len)?,
    ))
}

pub fn unseen_protocol(
    log: &InteractionLog,
    partitions: &[TypePartition],
    config: &TrainConfig,
) -> Result<Vec<UnseenResult>> {
    let n = config.spec.hyper.subsequence_len;
    let mut results = Vec::with_capacity(partitions.len());
    for partition in partitions {
        let (fit, val, test) = unseen_targets(log, partition, n)?;
        let outcome = train(&fit, &val, config, None, &mut |_| Ok(()))?;
        let model = outcome.best.model()?;
        let graphs = test.build(&config.spec.subgraph_config())?;
        let evaluation = evaluate_graphs(&model, &graphs, 256)?;
        info!(
            "partition {partition}: test auc {:.4} over {} targets",
            evaluation.metrics.auc,
            graphs.len()
        );
        results.push(UnseenResult {
            partition: partition.to_string(),
            train_targets: fit.len(),
            test_targets: test.len(),
            best_epoch: outcome.best.epoch,
            metrics: evaluation.metrics,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::RawInteraction;

    fn raw(s: &str, e: &str, t: i64, ty: &str) -> RawInteraction {
        RawInteraction {
            student_id: s.into(),
            exercise_id: e.into(),
            timestamp: t,
            response: (t % 2) as u8,
            exercise_type: ty.into(),
            kc_ids: vec!["k".into()],
        }
    }

    #[test]
    fn parse_partition() {
        let p: TypePartition = "1,2,3,4/5,6,7".parse().unwrap();
        assert_eq!(p.train_types, ["1", "2", "3", "4"]);
        assert_eq!(p.test_types, ["5", "6", "7"]);
        assert_eq!(p.to_string(), "1,2,3,4/5,6,7");
        assert!("1,2".parse::<TypePartition>().is_err());
        assert!("/3".parse::<TypePartition>().is_err());
    }

    #[test]
    fn empty_test_side_is_an_error() {
        let log = InteractionLog::from_records(vec![raw("s", "a", 1, "1"), raw("s", "b", 2, "1")]).unwrap();
        let p: TypePartition = "1/2".parse().unwrap();
        let err = unseen_targets(&log, &p, 8).unwrap_err().to_string();
        assert!(err.contains("no test interactions"), "{err}");
    }

    #[test]
    fn test_targets_are_unseen_types_only() {
        let mut rows = Vec::new();
        for i in 0..12 {
            rows.push(raw("s", &format!("a{}", i % 3), i, "1"));
            rows.push(raw("t", &format!("b{}", i % 2), i, "2"));
            rows.push(raw("s", "c", 100 + i, "3"));
        }
        let log = InteractionLog::from_records(rows).unwrap();
        let (fit, val, test) = unseen_targets(&log, &"1,2/3".parse().unwrap(), 4).unwrap();
        let vocab = log.vocab();
        for set in [&fit, &val] {
            for t in set.targets() {
                assert_ne!(vocab.type_name(t.interaction().exercise_type), "3");
            }
        }
        assert!(test.targets().all(|t| vocab.type_name(t.interaction().exercise_type) == "3"));
        assert_eq!(test.len(), 12);
        assert!(test.visible.rows().iter().all(|r| vocab.type_name(r.exercise_type) == "3"));
    }
}
