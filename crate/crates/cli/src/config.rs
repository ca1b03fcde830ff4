//! Run configuration: defaults, then a TOML file, then `NEUROHEED__*`
//! environment overrides, then `--set` flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use neuroheed::data::CorpusConfig;
use neuroheed::model::ModelConfig;
use neuroheed::streaming::StreamConfig;
use neuroheed::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Prefix of environment overrides: `NEUROHEED__TRAIN__BATCH_SIZE=2` sets
/// `train.batch_size`.
pub const ENV_PREFIX: &str = "NEUROHEED__";
pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Evaluate only the first this-many examples of the split.
    pub limit: Option<usize>,
    pub split: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            limit: None,
            split: "test".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model initialization seed.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stream: StreamConfig,
    pub corpus: CorpusConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            stream: StreamConfig::default(),
            corpus: CorpusConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

/// A resolved configuration and whether the model section was given
/// explicitly (by file or override) rather than defaulted.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub model_explicit: bool,
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Sets `path` (dot separated) in `table`, creating intermediate tables.
pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("malformed override key '{path}'");
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override '{path}': '{k}' is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{s}' is not of the form key=value"))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

/// Environment overrides as `(dotted.key, value)`, sorted by key.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, Value)> {
    let mut out: Vec<_> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            let key = rest.split("__").map(str::to_lowercase).collect::<Vec<_>>().join(".");
            Some((key, parse_value(&v)))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Merges the layers and deserializes the result.
pub fn resolve(
    file: Option<&Path>,
    env: &[(String, Value)],
    sets: &[(String, Value)],
) -> Result<Resolved> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<Table>()
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Table::new(),
    };
    for (k, v) in env.iter().chain(sets) {
        set_path(&mut table, k, v.clone())?;
    }
    let model_explicit = table.contains_key("model");
    let config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!(neuroheed::Error::Config(e.message().to_string())))?;
    config.validate()?;
    Ok(Resolved { config, model_explicit })
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.stream.validate()?;
        self.corpus.validate()?;
        if self.eval.limit == Some(0) {
            return Err(neuroheed::Error::Config("eval.limit must be at least 1".into()).into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Writes the resolved configuration to `dir/config.toml`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Short hex digest of any serializable value.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    let d = Sha256::digest(&json);
    d.iter().take(6).map(|b| format!("{b:02x}")).collect()
}
