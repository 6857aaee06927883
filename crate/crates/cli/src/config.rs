//! Flat TOML run configuration.
//!
//! Values resolve in this order, later sources winning: built-in defaults,
//! the config file, `DGAKT_<KEY>` environment variables, `--set key=value`
//! overrides, and dedicated command-line flags such as `--seed`.

use std::path::{Path, PathBuf};

use dgakt::autodiff::AdamConfig;
use dgakt::eval::unseen::TypePartition;
use dgakt::eval::Variant;
use dgakt::model::{Hyperparams, ModelSpec};
use dgakt::store::{ColumnMap, SplitRatios};
use dgakt::subgraph::NodeTypeScheme;
use dgakt::train::TrainConfig;
use dgakt::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "DGAKT_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: String,
    pub schema: String,
    pub cache_dir: String,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,

    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub attn_dim: usize,
    pub message_dim: usize,
    pub head_dim: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub subsequence_len: usize,
    pub neighbor_cap: usize,
    pub biases: bool,
    pub node_types: NodeTypeScheme,
    pub include_kcs: bool,
    pub variant: String,

    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub early_stopping: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub precision: String,

    pub ablate_seeds: Vec<u64>,
    pub sweep_lengths: Vec<usize>,
    pub unseen_partitions: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hyper = Hyperparams::default();
        let train = TrainConfig::default();
        let ratios = SplitRatios::default();
        Self {
            input: String::new(),
            schema: String::new(),
            cache_dir: String::new(),
            train_ratio: ratios.train,
            val_ratio: ratios.val,
            test_ratio: ratios.test,
            layers: hyper.layers,
            heads: hyper.heads,
            hidden: hyper.hidden,
            attn_dim: 0,
            message_dim: 0,
            head_dim: 0,
            gamma: hyper.gamma,
            lambda: hyper.lambda,
            subsequence_len: hyper.subsequence_len,
            neighbor_cap: hyper.neighbor_cap,
            biases: hyper.biases,
            node_types: hyper.node_types,
            include_kcs: true,
            variant: Variant::Full.name().into(),
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            early_stopping: train.early_stopping,
            lr: train.adam.lr,
            beta1: train.adam.beta1,
            beta2: train.adam.beta2,
            eps: train.adam.eps,
            seed: train.seed,
            precision: "f64".into(),
            ablate_seeds: vec![0, 1, 2, 3, 4],
            sweep_lengths: vec![4, 8, 16, 32],
            unseen_partitions: Vec::new(),
        }
    }
}

/// Every key with a one-line description, in help order.
pub const KEYS: &[(&str, &str)] = &[
    ("input", "interaction CSV"),
    ("schema", "column remapping, e.g. \"student_id=user,kc_ids=skills\""),
    ("cache_dir", "subgraph cache directory (empty: no cache)"),
    ("train_ratio", "chronological train fraction"),
    ("val_ratio", "chronological validation fraction"),
    ("test_ratio", "chronological test fraction"),
    ("layers", "attention layers"),
    ("heads", "attention heads"),
    ("hidden", "node embedding width per head"),
    ("attn_dim", "attention projection width (0: hidden)"),
    ("message_dim", "message width (0: hidden)"),
    ("head_dim", "prediction head width (0: hidden)"),
    ("gamma", "weight of the global prediction, in [0, 1]"),
    ("lambda", "weight of the consistency loss"),
    ("subsequence_len", "interactions per target subsequence"),
    ("neighbor_cap", "neighbor students kept per subgraph (0: no cap)"),
    ("biases", "add bias terms to output and head layers"),
    ("node_types", "virtual-edge typing: labels or kinds"),
    ("include_kcs", "add KC nodes to subgraphs"),
    ("variant", "FULL or V1..V6"),
    ("batch_size", "subgraphs per optimizer step"),
    ("max_epochs", "epoch limit"),
    ("patience", "epochs without validation AUC gain before stopping"),
    ("early_stopping", "stop on patience"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("eps", "Adam epsilon"),
    ("seed", "initialization and shuffling seed"),
    ("precision", "arithmetic precision (only f64)"),
    ("ablate_seeds", "seeds for `ablate`"),
    ("sweep_lengths", "subsequence lengths swept by `ablate`"),
    ("unseen_partitions", "train/test exercise-type splits for `unseen`, e.g. [\"1,2/3\"]"),
];

fn defaults_table() -> toml::Table {
    toml::Table::try_from(RunConfig::default()).expect("default config serializes")
}

/// The key listing shown by `--help`.
pub fn help_text() -> String {
    let defaults = defaults_table();
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = format!(
        "Config keys (file < {ENV_PREFIX}<KEY> env < --set key=value < flags):\n"
    );
    for (key, doc) in KEYS {
        let default = defaults.get(*key).map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("  {key:<width$}  {doc} [default: {default}]\n"));
    }
    out
}

/// `raw` as a TOML value; string-typed keys take it verbatim.
fn parse_value(key: &str, raw: &str, defaults: &toml::Table) -> Result<toml::Value> {
    if let Some(toml::Value::String(_)) = defaults.get(key) {
        return Ok(toml::Value::String(raw.to_owned()));
    }
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .ok_or_else(|| {
            let expected = defaults.get(key).map_or("value", |v| v.type_str());
            Error::Config(format!("`{key}` expects a TOML {expected}, got `{raw}`"))
        })
}

/// Loads and layers the configuration. `env` yields `(name, value)` pairs;
/// only names with the prefix that match a key are used.
pub fn resolve(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[String],
) -> Result<RunConfig> {
    let defaults = defaults_table();
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| Some((k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase(), v)))
        .filter(|(k, _)| defaults.contains_key(k))
        .collect();
    env.sort();
    for (key, raw) in env {
        let value = parse_value(&key, &raw, &defaults)?;
        table.insert(key, value);
    }
    for pair in overrides {
        let (key, raw) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("override `{pair}` is not key=value"))
        })?;
        let key = key.trim();
        if !defaults.contains_key(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        table.insert(key.to_owned(), parse_value(key, raw.trim(), &defaults)?);
    }
    let config: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_owned()))?;
    config.validate()?;
    Ok(config)
}

fn dim(v: usize) -> Option<usize> {
    (v > 0).then_some(v)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.precision != "f64" {
            return Err(Error::Config(format!(
                "precision `{}` is not supported; only f64 is",
                self.precision
            )));
        }
        // TOML integers are signed, and the config must stay saveable.
        if let Some(seed) = std::iter::once(&self.seed).chain(&self.ablate_seeds).find(|&&s| s > i64::MAX as u64) {
            return Err(Error::Config(format!("seeds must be at most {}, got {seed}", i64::MAX)));
        }
        self.variant()?;
        self.ratios().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train_config()?.validate()?;
        for len in &self.sweep_lengths {
            if *len < 2 {
                return Err(Error::Config(format!("sweep_lengths entries must be at least 2, got {len}")));
            }
        }
        self.partitions()?;
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        self.variant.parse().map_err(|_| {
            Error::Config(format!("variant must be FULL or V1..V6, got `{}`", self.variant))
        })
    }

    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            val: self.val_ratio,
            test: self.test_ratio,
        }
    }

    pub fn columns(&self) -> Result<ColumnMap> {
        ColumnMap::from_overrides(&self.schema)
    }

    pub fn partitions(&self) -> Result<Vec<TypePartition>> {
        self.unseen_partitions.iter().map(|p| p.parse()).collect()
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            attn_dim: dim(self.attn_dim),
            message_dim: dim(self.message_dim),
            head_dim: dim(self.head_dim),
            gamma: self.gamma,
            lambda: self.lambda,
            subsequence_len: self.subsequence_len,
            neighbor_cap: self.neighbor_cap,
            biases: self.biases,
            node_types: self.node_types,
        }
    }

    /// The model spec with the configured variant applied.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(self.hyperparams());
        spec.include_kcs = self.include_kcs;
        Ok(self.variant()?.apply(&spec))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            spec: self.model_spec()?,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            early_stopping: self.early_stopping,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            seed: self.seed,
        })
    }

    pub fn input_path(&self) -> Result<PathBuf> {
        if self.input.is_empty() {
            return Err(Error::Config("no input log configured (set `input`)".into()));
        }
        Ok(PathBuf::from(&self.input))
    }

    pub fn cache_path(&self) -> Option<PathBuf> {
        (!self.cache_dir.is_empty()).then(|| PathBuf::from(&self.cache_dir))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn none() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn every_key_is_documented() {
        let documented: BTreeSet<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        let actual: BTreeSet<String> = defaults_table().keys().cloned().collect();
        let actual: BTreeSet<&str> = actual.iter().map(String::as_str).collect();
        assert_eq!(documented, actual);
        let help = help_text();
        for (key, _) in KEYS {
            assert!(help.contains(&format!("  {key} ")), "{key}");
        }
        assert!(help.contains("[default: 0.5]"));
    }

    #[test]
    fn defaults_match_library_defaults() {
        let c = resolve(None, none(), &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.hyperparams(), Hyperparams::default());
        assert_eq!(c.train_config().unwrap(), TrainConfig::default());
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "gamma = 0.1\nlambda = 0.2\nheads = 2\ninput = \"a.csv\"\n").unwrap();
        let env = vec![
            ("DGAKT_LAMBDA".to_owned(), "0.3".to_owned()),
            ("DGAKT_HEADS".to_owned(), "3".to_owned()),
            ("DGAKT_INPUT".to_owned(), "123".to_owned()),
            ("DGAKT_NOT_A_KEY".to_owned(), "x".to_owned()),
            ("OTHER_HEADS".to_owned(), "9".to_owned()),
        ];
        let c = resolve(Some(&path), env, &["heads=5".into(), "sweep_lengths=[4, 8]".into()]).unwrap();
        assert_eq!(c.gamma, 0.1);
        assert_eq!(c.lambda, 0.3);
        assert_eq!(c.heads, 5);
        assert_eq!(c.input, "123");
        assert_eq!(c.sweep_lengths, [4, 8]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "gama = 0.1\n").unwrap();
        let err = resolve(Some(&path), none(), &[]).unwrap_err();
        assert!(err.is_user_error());
        assert!(err.to_string().contains("gama"), "{err}");
        let err = resolve(None, none(), &["hiden=3".into()]).unwrap_err();
        assert!(err.to_string().contains("hiden"), "{err}");
    }

    #[test]
    fn validation_names_the_invariant() {
        let err = resolve(None, none(), &["gamma=1.2".into()]).unwrap_err();
        assert!(err.is_user_error());
        assert!(err.to_string().contains("gamma must lie in [0, 1]"), "{err}");
        assert!(resolve(None, none(), &["precision=\"f32\"".into()]).is_err());
        assert!(resolve(None, none(), &["variant=V9".into()]).is_err());
        assert!(resolve(None, none(), &["train_ratio=0.7".into()]).is_err());
        assert!(resolve(None, none(), &["heads=two".into()]).is_err());
    }

    #[test]
    fn zero_dims_fall_back_to_hidden() {
        let c = resolve(None, none(), &["attn_dim=16".into()]).unwrap();
        let h = c.hyperparams();
        assert_eq!(h.attn_dim, Some(16));
        assert_eq!(h.message_dim, None);
    }

    #[test]
    fn variant_is_applied_to_the_spec() {
        let c = resolve(None, none(), &["variant=v3".into()]).unwrap();
        assert!(!c.model_spec().unwrap().include_kcs);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            unseen_partitions: vec!["1,2/3".into()],
            input: "data/log.csv".into(),
            ..RunConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, c.to_toml()).unwrap();
        assert_eq!(resolve(Some(&path), none(), &[]).unwrap(), c);
    }

    #[test]
    fn seeds_must_fit_toml_integers() {
        let err = resolve(None, none(), &[format!("seed={}", u64::MAX)]).unwrap_err();
        assert!(err.to_string().contains("expects a TOML integer"), "{err}");
        let c = RunConfig {
            seed: u64::MAX,
            ..RunConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("at most"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn env_and_set_agree_and_survive_toml(
            gamma in 0.0..=1.0f64,
            lr in 1e-6..1.0f64,
            hidden in 1usize..128,
            seed in 0..=i64::MAX as u64,
            variant in proptest::sample::select(vec!["FULL", "V1", "V2", "V6"]),
        ) {
            let pairs = [
                ("gamma", gamma.to_string()),
                ("lr", lr.to_string()),
                ("hidden", hidden.to_string()),
                ("seed", seed.to_string()),
                ("variant", variant.to_owned()),
            ];
            let sets: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let env = pairs.iter().map(|(k, v)| (format!("{ENV_PREFIX}{}", k.to_uppercase()), v.clone()));
            let by_set = resolve(None, none(), &sets).unwrap();
            proptest::prop_assert_eq!(&resolve(None, env, &[]).unwrap(), &by_set);
            proptest::prop_assert_eq!((by_set.gamma, by_set.lr, by_set.seed), (gamma, lr, seed));

            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.toml");
            std::fs::write(&path, by_set.to_toml()).unwrap();
            proptest::prop_assert_eq!(resolve(Some(&path), none(), &[]).unwrap(), by_set);
        }
    }
}
