//! Resolved run configuration.
//!
//! Precedence, lowest first: built-in defaults, `--config` file, named flags
//! (`--seed`, `--epochs`, ...), then `--set key=value` overrides. Every layer
//! is merged into one JSON tree and deserialized once, so unknown keys are
//! rejected wherever they come from.

use std::path::{Path, PathBuf};

use ltmlab::cells::CellKind;
use ltmlab::data::Level;
use ltmlab::engine::{ModelConfig, TrainConfig};
use ltmlab::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub dir: PathBuf,
    pub level: Level,
    /// Vocabulary cap including `<unk>`.
    pub cap: Option<usize>,
    pub train_file: String,
    pub valid_file: String,
    pub test_file: String,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            dir: PathBuf::from("data/desk"),
            level: Level::Char,
            cap: None,
            train_file: "train.txt".into(),
            valid_file: "valid.txt".into(),
            test_file: "test.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    /// Seeds used are `train.seed`, `train.seed + 1`, ...
    pub seeds: usize,
    pub hidden: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Grid cells trained concurrently.
    pub jobs: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            seeds: 3,
            hidden: 64,
            layers: 2,
            batch_size: 8,
            epochs: 10,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub cell: CellKind,
    pub hidden: usize,
    pub layers: usize,
    pub vocab: usize,
    pub init_bound: Option<f64>,
    pub rnn_gain: Option<f64>,
    pub horizons: Vec<usize>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ltmlab::harness::ProbeConfig::default();
        ProbeSection {
            cell: p.cell,
            hidden: p.hidden,
            layers: p.layers,
            vocab: p.vocab,
            init_bound: p.init_bound,
            rnn_gain: p.rnn_gain,
            horizons: vec![50, 100, 300, 1000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSection {
    pub lens: Vec<usize>,
    pub repeats: usize,
}

impl Default for TimingSection {
    fn default() -> Self {
        TimingSection {
            lens: ltmlab::harness::TABLE_LENGTHS.to_vec(),
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub cells: Vec<CellKind>,
    /// Seeds used are `train.seed`, `train.seed + 1`, ...
    pub seeds: usize,
    pub hidden: usize,
    pub layers: usize,
    pub steps: usize,
    pub vocab: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        let g = ltmlab::harness::GradcheckSpec::new(CellKind::Ltm, 0);
        GradcheckSection {
            cells: CellKind::ALL.to_vec(),
            seeds: 1,
            hidden: g.hidden,
            layers: g.layers,
            steps: g.steps,
            vocab: g.vocab,
        }
    }
}

/// Everything a run depends on. `train.seed` is the single source of
/// randomness for every subcommand.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationSection,
    pub probe: ProbeSection,
    pub timing: TimingSection,
    pub gradcheck: GradcheckSection,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Reads a TOML or JSON file into a JSON tree. `.json` files are JSON, all
/// others TOML.
pub fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("reading {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    } else {
        let v: toml::Value = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(|e| config_err(e.to_string()))
    }
}

/// Recursively overlays `top` onto `base`. Keys absent from `base` are kept,
/// so that deserialization reports them as unknown.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Parses the right-hand side of `key=value`: a TOML literal if it is one,
/// otherwise a bare string.
fn parse_scalar(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t
            .remove("v")
            .and_then(|v| serde_json::to_value(v).ok())
            .unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Applies one dotted `key=value` override. Every segment of the key must
/// already exist in the tree.
pub fn set_path(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {assignment:?} is not of the form key=value")))?;
    let mut node = tree;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("override key {key:?}: {} is not a table", parts[..i].join("."))))?;
        node = obj
            .get_mut(*part)
            .ok_or_else(|| config_err(format!("override key {key:?} does not exist in the configuration")))?;
    }
    *node = parse_scalar(raw.trim());
    Ok(())
}

pub fn defaults_tree() -> Value {
    serde_json::to_value(RunConfig::default()).expect("default config serializes")
}

pub fn from_tree(tree: Value) -> Result<RunConfig> {
    serde_json::from_value(tree).map_err(|e| config_err(e.to_string()))
}

impl RunConfig {
    /// TOML text of this configuration, loadable with `--config`.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(format!("serializing resolved config: {e}")))
    }
}
