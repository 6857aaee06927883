//! Mini-batch training with Adam and validation-AUC early stopping.
//!
//! Subgraphs for the training and validation targets are built once before
//! the first epoch and reused; they depend only on the log and the model
//! spec, so rebuilding them per epoch would give identical graphs.

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate_graphs, Metrics};
use crate::model::{GraphBatch, LossValues, Model, ModelSpec};
use crate::store::{chronological_split, segment_into_subsequences, InteractionLog, SplitRatios, Subsequence};
use crate::subgraph::{self, decode_batch, encode_batch, EnclosingSubgraph, SubgraphConfig, Target};

/// Prediction targets: every interaction of the segmented `subsequences`,
/// with edges drawn from `visible`.
#[derive(Clone, Debug)]
pub struct TargetSet {
    pub visible: InteractionLog,
    pub subsequences: Vec<Subsequence>,
}

impl TargetSet {
    pub fn new(visible: InteractionLog, targets: &InteractionLog, subsequence_len: usize) -> Result<Self> {
        Ok(Self {
            visible,
            subsequences: segment_into_subsequences(targets, subsequence_len)?,
        })
    }

    pub fn len(&self) -> usize {
        self.subsequences.iter().map(|s| s.rows.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn targets(&self) -> impl Iterator<Item = Target<'_>> {
        self.subsequences.iter().flat_map(|sub| {
            (0..sub.rows.len()).map(move |position| Target {
                subsequence: sub,
                position,
            })
        })
    }

    pub fn build(&self, config: &SubgraphConfig) -> Result<Vec<EnclosingSubgraph>> {
        self.targets().map(|t| subgraph::build(&self.visible, t, config)).collect()
    }

    /// Like [`build`](Self::build), reusing a batch file under `cache_dir`
    /// keyed by a hash of the log, the targets and the config.
    pub fn build_cached(&self, config: &SubgraphConfig, cache_dir: Option<&Path>) -> Result<Vec<EnclosingSubgraph>> {
        let Some(dir) = cache_dir else {
            return self.build(config);
        };
        let path = dir.join(format!("{}.dgsb", self.cache_key(config)?));
        if let Ok(bytes) = std::fs::read(&path) {
            match decode_batch(&bytes) {
                Ok(graphs) if graphs.len() == self.len() => return Ok(graphs),
                _ => debug!("ignoring unreadable cache file {}", path.display()),
            }
        }
        let graphs = self.build(config)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, encode_batch(&graphs)).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(graphs)
    }

    fn cache_key(&self, config: &SubgraphConfig) -> Result<String> {
        let mut h = Sha256::new();
        let mut row = |r: &crate::store::Interaction| {
            h.update(r.id.to_le_bytes());
            h.update(r.student.0.to_le_bytes());
            h.update(r.exercise.0.to_le_bytes());
            h.update(r.timestamp.to_le_bytes());
            h.update([u8::from(r.response)]);
            h.update(r.prior_count.to_le_bytes());
        };
        for r in self.visible.rows() {
            row(r);
        }
        for sub in &self.subsequences {
            for r in &sub.rows {
                row(r);
            }
        }
        let vocab = self.visible.vocab();
        for e in 0..vocab.exercise_count() {
            for k in vocab.kcs_of(crate::store::ExerciseId(e as u32)) {
                h.update(k.0.to_le_bytes());
            }
            h.update([0xff]);
        }
        h.update(serde_json::to_vec(config)?);
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Chronological train/val/test targets. Each split's subgraphs see every
/// interaction up to the end of that split, so validation and test targets
/// can draw on earlier history but never on later rows.
pub fn split_target_sets(log: &InteractionLog, ratios: SplitRatios, subsequence_len: usize) -> Result<[TargetSet; 3]> {
    let (train, val, test) = chronological_split(log, ratios)?;
    let seen = InteractionLog::merge(&[&train, &val])?;
    Ok([
        TargetSet::new(train.clone(), &train, subsequence_len)?,
        TargetSet::new(seen, &val, subsequence_len)?,
        TargetSet::new(log.clone(), &test, subsequence_len)?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub spec: ModelSpec,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict validation-AUC improvement before stopping.
    pub patience: usize,
    pub early_stopping: bool,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            spec: ModelSpec::default(),
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            early_stopping: true,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.hyper.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-size-weighted means of the loss components during the epoch.
    pub train: LossValues,
    pub val: Metrics,
    pub val_loss: LossValues,
    pub best_val_auc: f64,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the epoch with the best validation AUC.
    pub best: Checkpoint,
    /// Parameters after the last epoch run.
    pub last: Model,
    pub history: Vec<EpochRecord>,
}

/// Trains on prebuilt subgraphs. `on_epoch` sees each record as soon as the
/// epoch finishes.
pub fn train_on_graphs(
    train: &[EnclosingSubgraph],
    val: &[EnclosingSubgraph],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training needs non-empty splits (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    let spec = &config.spec;
    let mut model = Model::new(spec.hyper.clone(), spec.arch, config.seed)?;
    let mut adam = AdamState::new(config.adam, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_auc = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut seen_global = false;
        for chunk in order.chunks(config.batch_size) {
            let graphs: Vec<&EnclosingSubgraph> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = GraphBatch::new(&graphs)?;
            let mut tape = Tape::new();
            let (vars, _, loss) = model.loss_graph(&mut tape, &batch)?;
            let grads = tape.backward(loss.total)?;
            let grads: Vec<_> = vars.iter().map(|&v| grads.wrt(v)).collect();
            adam.step(&mut model.params, &grads)?;

            let values = LossValues::read(&tape, &loss);
            let w = chunk.len() as f64;
            sums[0] += w * values.global.unwrap_or(0.0);
            sums[1] += w * values.local;
            sums[2] += w * values.consistency.unwrap_or(0.0);
            sums[3] += w * values.total;
            seen_global |= values.global.is_some();
        }
        let n = train.len() as f64;
        let train_loss = LossValues {
            global: seen_global.then_some(sums[0] / n),
            local: sums[1] / n,
            consistency: seen_global.then_some(sums[2] / n),
            total: sums[3] / n,
        };

        let evaluation = evaluate_graphs(&model, val, config.batch_size.max(256))?;
        let auc = evaluation.metrics.auc;
        let improved = auc > best_auc;
        if improved {
            best_auc = auc;
            stale = 0;
            best = Some(Checkpoint::capture(spec, &model, &adam, epoch, auc, config.seed));
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            train: train_loss,
            val: evaluation.metrics,
            val_loss: evaluation.loss,
            best_val_auc: best_auc,
            improved,
        };
        info!(
            "epoch {epoch}: train loss {:.5}, val auc {:.4}, val acc {:.4}",
            record.train.total, record.val.auc, record.val.accuracy
        );
        on_epoch(&record)?;
        history.push(record);
        if config.early_stopping && stale >= config.patience {
            info!("early stop after epoch {epoch}");
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch runs"),
        last: model,
        history,
    })
}

/// Builds subgraphs for both target sets and trains.
pub fn train(
    train_set: &TargetSet,
    val_set: &TargetSet,
    config: &TrainConfig,
    cache_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training needs non-empty splits (train {} targets, val {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let sub = config.spec.subgraph_config();
    let train_graphs = train_set.build_cached(&sub, cache_dir)?;
    let val_graphs = val_set.build_cached(&sub, cache_dir)?;
    info!(
        "built {} training and {} validation subgraphs",
        train_graphs.len(),
        val_graphs.len()
    );
    train_on_graphs(&train_graphs, &val_graphs, config, on_epoch)
}
