//! Command implementations. Each returns what it wrote so callers (and
//! tests) can inspect results without re-reading files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dgakt::checkpoint::Checkpoint;
use dgakt::eval::report::{AblationReport, RunGroup};
use dgakt::eval::unseen::{unseen_protocol, UnseenResult};
use dgakt::eval::{evaluate_graphs, Evaluation, Metrics, Variant};
use dgakt::model::{LossValues, Model, ModelSpec};
use dgakt::store::{dataset_stats, parse_interaction_log, write_interaction_log, ColumnMap, InteractionLog, Stats};
use dgakt::train::{split_target_sets, train, EpochRecord, TargetSet, TrainOutcome};
use dgakt::{Error, Result};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.dgkt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOCK_FILE: &str = ".dgakt.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidArgument(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn read_log(path: &Path, columns: &ColumnMap) -> Result<InteractionLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interaction_log(std::io::BufReader::new(file), columns)
}

pub fn load_log(config: &RunConfig) -> Result<InteractionLog> {
    read_log(&config.input_path()?, &config.columns()?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `input`, writes the canonical sorted log and its stats to `out`.
pub fn ingest(input: &Path, columns: &ColumnMap, out: &Path) -> Result<Stats> {
    let log = read_log(input, columns)?;
    let _lock = DirLock::acquire(out)?;
    let path = out.join("log.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_interaction_log(&log, BufWriter::new(file))?;
    let stats = dataset_stats(&log);
    write_json(&out.join("stats.json"), &stats)?;
    Ok(stats)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val: Metrics,
    pub parameters: usize,
    pub targets: [usize; 3],
}

/// Trains on the chronological split of the configured log. Writes the best
/// checkpoint, the per-epoch history, final validation metrics and the
/// resolved config into `out_dir`.
pub fn train_run(config: &RunConfig, out_dir: &Path) -> Result<(TrainSummary, TrainOutcome)> {
    let train_cfg = config.train_config()?;
    let log = load_log(config)?;
    let _lock = DirLock::acquire(out_dir)?;
    let [train_set, val_set, test_set] =
        split_target_sets(&log, config.ratios(), train_cfg.spec.hyper.subsequence_len)?;
    fs::write(out_dir.join(CONFIG_FILE), config.to_toml()).map_err(|e| Error::io(out_dir, e))?;

    let history_path = out_dir.join(HISTORY_FILE);
    let file = File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let mut history = BufWriter::new(file);
    let cache = config.cache_path();
    let outcome = train(&train_set, &val_set, &train_cfg, cache.as_deref(), &mut |record: &EpochRecord| {
        serde_json::to_writer(&mut history, record)?;
        history.write_all(b"\n").map_err(|e| Error::io(&history_path, e))?;
        history.flush().map_err(|e| Error::io(&history_path, e))
    })?;
    drop(history);

    outcome.best.save(&out_dir.join(CHECKPOINT_FILE))?;
    let best_record = outcome
        .history
        .iter()
        .find(|r| r.epoch == outcome.best.epoch)
        .expect("best epoch is in the history");
    let summary = TrainSummary {
        best_epoch: outcome.best.epoch,
        epochs_run: outcome.history.len(),
        best_val: best_record.val,
        parameters: outcome.last.count_parameters(),
        targets: [train_set.len(), val_set.len(), test_set.len()],
    };
    write_json(&out_dir.join(METRICS_FILE), &summary)?;
    Ok((summary, outcome))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownKey {
                kind: "split",
                key: other.to_owned(),
            }),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantEvaluation {
    pub variant: Variant,
    pub metrics: Metrics,
    pub loss: LossValues,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluationReport {
    pub split: Split,
    pub results: Vec<VariantEvaluation>,
}

impl EvaluationReport {
    pub fn to_text(&self) -> String {
        let groups: Vec<RunGroup> = self
            .results
            .iter()
            .map(|r| RunGroup::new(r.variant.name(), vec![], vec![r.metrics]))
            .collect();
        dgakt::eval::report::table("model", &groups.iter().collect::<Vec<_>>())
    }
}

/// The configured spec with no variant applied.
fn base_spec(config: &RunConfig) -> ModelSpec {
    let mut spec = ModelSpec::new(config.hyperparams());
    spec.include_kcs = config.include_kcs;
    spec
}

/// Loads a checkpoint and checks it against the config's hyperparameters.
pub fn load_checkpoint(path: &Path, config: &RunConfig) -> Result<Checkpoint> {
    let checkpoint = Checkpoint::load(path)?;
    checkpoint.check_shapes(&config.hyperparams())?;
    Ok(checkpoint)
}

/// Evaluates the checkpoint's parameters under each variant's switches.
pub fn evaluate_run(
    checkpoint_path: &Path,
    config: &RunConfig,
    split: Split,
    variants: &[Variant],
) -> Result<EvaluationReport> {
    let checkpoint = load_checkpoint(checkpoint_path, config)?;
    let log = load_log(config)?;
    let [_, val_set, test_set] = split_target_sets(&log, config.ratios(), config.subsequence_len)?;
    let set = match split {
        Split::Val => val_set,
        Split::Test => test_set,
    };
    let base = base_spec(config);
    let mut results = Vec::with_capacity(variants.len());
    for &variant in variants {
        let spec = variant.apply(&base);
        let model = Model::from_named(spec.hyper.clone(), spec.arch, checkpoint.params.clone())?;
        let evaluation = evaluate_set(&model, &spec, &set, config)?;
        results.push(VariantEvaluation {
            variant,
            metrics: evaluation.metrics,
            loss: evaluation.loss,
        });
    }
    Ok(EvaluationReport { split, results })
}

fn evaluate_set(model: &Model, spec: &ModelSpec, set: &TargetSet, config: &RunConfig) -> Result<Evaluation> {
    let graphs = set.build_cached(&spec.subgraph_config(), config.cache_path().as_deref())?;
    evaluate_graphs(model, &graphs, 256)
}

/// Trains `config` with the given variant, subsequence length and seed, and
/// returns test metrics of the best checkpoint.
pub fn train_and_test(log: &InteractionLog, config: &RunConfig, variant: Variant, n: usize, seed: u64) -> Result<Metrics> {
    let mut base = base_spec(config);
    base.hyper.subsequence_len = n;
    let mut train_cfg = config.train_config()?;
    train_cfg.spec = variant.apply(&base);
    train_cfg.seed = seed;
    let [train_set, val_set, test_set] = split_target_sets(log, config.ratios(), n)?;
    let cache = config.cache_path();
    let outcome = train(&train_set, &val_set, &train_cfg, cache.as_deref(), &mut |_| Ok(()))?;
    let model = outcome.best.model()?;
    let evaluation = evaluate_set(&model, &train_cfg.spec, &test_set, config)?;
    info!(
        "{variant} n={n} seed={seed}: test auc {:.4}, acc {:.4}",
        evaluation.metrics.auc, evaluation.metrics.accuracy
    );
    Ok(evaluation.metrics)
}

/// Trains every variant for every seed, then the FULL model at every
/// sweep length.
pub fn ablate_run(config: &RunConfig, variants: &[Variant], lengths: &[usize], out_dir: &Path) -> Result<AblationReport> {
    let log = load_log(config)?;
    let _lock = DirLock::acquire(out_dir)?;
    let seeds = if config.ablate_seeds.is_empty() {
        vec![config.seed]
    } else {
        config.ablate_seeds.clone()
    };
    let mut report = AblationReport {
        variants: Vec::new(),
        sweep: Vec::new(),
    };
    for &variant in variants {
        let runs = seeds
            .iter()
            .map(|&s| train_and_test(&log, config, variant, config.subsequence_len, s))
            .collect::<Result<Vec<_>>>()?;
        report.variants.push((variant, RunGroup::new(variant.name(), seeds.clone(), runs)));
    }
    for &n in lengths {
        let runs = seeds
            .iter()
            .map(|&s| train_and_test(&log, config, Variant::Full, n, s))
            .collect::<Result<Vec<_>>>()?;
        report.sweep.push((n, RunGroup::new(n.to_string(), seeds.clone(), runs)));
    }
    write_json(&out_dir.join("ablation.json"), &report)?;
    let path = out_dir.join("ablation.txt");
    fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

pub fn unseen_run(config: &RunConfig, out_dir: &Path) -> Result<Vec<UnseenResult>> {
    let partitions = config.partitions()?;
    if partitions.is_empty() {
        return Err(Error::Config("unseen_partitions is empty".into()));
    }
    let log = load_log(config)?;
    let _lock = DirLock::acquire(out_dir)?;
    let results = unseen_protocol(&log, &partitions, &config.train_config()?)?;
    write_json(&out_dir.join("unseen.json"), &results)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        let err = DirLock::acquire(dir.path()).unwrap_err();
        assert!(err.is_user_error());
        assert!(err.to_string().contains("in use"), "{err}");
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn split_names() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("train".parse::<Split>().is_err());
    }
}
