//! Experiment config files: a JSON object holding a `data` section, an
//! optional `split` section and every training field at the top level.
//!
//! ```json
//! {
//!   "data": { "generate": { "counts": [5570, 100], "dims": 8, "separation": 3.0, "spread": 1.0, "seed": 7 } },
//!   "split": { "train_fraction": 0.8 },
//!   "strategy": "SuperCon",
//!   "stage1_epochs": 100,
//!   "focal": { "gamma": 5.0 }
//! }
//! ```
//!
//! `data` may instead be `{ "dir": "path/to/dataset" }`, resolved relative to
//! the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::data::{generate_blobs, load_dataset, stratified_split, BlobSpec, Dataset, SplitSpec};
use crate::error::Error;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    Dir(PathBuf),
    Generate(BlobSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_fraction: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: None,
        }
    }
}

/// A `--a.b.c value` flag applied to the config before validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

impl Override {
    /// Parses the value as JSON when possible, otherwise keeps it as a string.
    pub fn new(dotted: &str, raw: Option<&str>) -> Self {
        let path = dotted.split('.').map(|s| s.replace('-', "_")).collect();
        let value = match raw {
            None => Value::Bool(true),
            Some(r) => serde_json::from_str(r).unwrap_or_else(|_| Value::String(r.to_string())),
        };
        Self { path, value }
    }

    pub fn dotted(&self) -> String {
        self.path.join(".")
    }
}

/// Splits dotted `--x.y [value]` / `--x.y=value` flags out of `args`.
/// A flag without a following value (or followed by another flag) sets `true`.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<Override>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = inline.or_else(|| {
            let takes = it.peek().is_some_and(|next| !next.starts_with("--"));
            if takes {
                it.next()
            } else {
                None
            }
        });
        overrides.push(Override::new(&name, value.as_deref()));
    }
    (rest, overrides)
}

fn apply(root: &mut Value, ov: &Override) -> Result<(), CliError> {
    let mut cur = root;
    for (i, key) in ov.path.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| CliError::Schema {
            path: ov.path[..i].join("."),
            message: "cannot override a field inside a non-object value".into(),
        })?;
        if i + 1 == ov.path.len() {
            obj.insert(key.clone(), ov.value.clone());
            return Ok(());
        }
        cur = obj.entry(key.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn decode<T: DeserializeOwned>(prefix: &str, v: Value) -> Result<T, CliError> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, p) => p.to_string(),
            (false, ".") => prefix.to_string(),
            (false, p) => format!("{prefix}.{p}"),
        };
        CliError::Schema {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

/// A fully resolved experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub data: DataSection,
    pub split: SplitSection,
    pub train: TrainConfig,
    /// Directory that relative data paths are resolved against.
    pub base_dir: PathBuf,
    pub config_path: PathBuf,
    pub config_sha256: String,
    pub overrides: Vec<String>,
}

impl Experiment {
    /// Loads `path`, applies `overrides` in order, then validates.
    /// A seed missing from both the file and the overrides falls back to
    /// `fallback_seed`.
    pub fn load(path: &Path, overrides: &[Override], fallback_seed: Option<u64>) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut root: Value = serde_json::from_slice(&bytes).map_err(|e| CliError::Schema {
            path: ".".into(),
            message: format!("invalid JSON: {e}"),
        })?;
        if !root.is_object() {
            return Err(CliError::Schema {
                path: ".".into(),
                message: "config must be a JSON object".into(),
            });
        }
        for ov in overrides {
            apply(&mut root, ov)?;
        }
        let obj = root.as_object_mut().expect("checked above");
        if !obj.contains_key("seed") {
            if let Some(seed) = fallback_seed {
                obj.insert("seed".into(), Value::from(seed));
            }
        }
        let data = obj.remove("data").ok_or_else(|| CliError::Schema {
            path: "data".into(),
            message: "missing field `data`".into(),
        })?;
        let split = obj.remove("split").unwrap_or_else(|| Value::Object(Map::new()));
        let data: DataSection = decode("data", data)?;
        let split: SplitSection = decode("split", split)?;
        let train: TrainConfig = decode("", root)?;
        train.validate().map_err(|e| match e {
            Error::Config(msg) => CliError::Schema {
                path: msg.split_whitespace().next().unwrap_or(".").trim_end_matches(':').to_string(),
                message: msg,
            },
            other => CliError::Run(other),
        })?;
        if !(split.train_fraction > 0.0 && split.train_fraction < 1.0) {
            return Err(CliError::Schema {
                path: "split.train_fraction".into(),
                message: format!("must lie in (0, 1), got {}", split.train_fraction),
            });
        }
        Ok(Self {
            data,
            split,
            train,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            config_path: path.to_path_buf(),
            config_sha256: hex::encode(Sha256::digest(&bytes)),
            overrides: overrides
                .iter()
                .map(|o| format!("{}={}", o.dotted(), o.value))
                .collect(),
        })
    }

    pub fn dataset(&self) -> crate::Result<Dataset> {
        match &self.data {
            DataSection::Dir(dir) => load_dataset(&self.base_dir.join(dir)),
            DataSection::Generate(spec) => generate_blobs(spec),
        }
    }

    /// Train/test split for a run with `seed`.
    pub fn split(&self, data: &Dataset, seed: u64) -> crate::Result<(Dataset, Dataset)> {
        stratified_split(
            data,
            &SplitSpec {
                train_fraction: self.split.train_fraction,
                seed: self.split.seed.unwrap_or(seed),
            },
        )
    }

    /// The effective config, in the file layout.
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(&self.train).expect("config serializes");
        let obj = v.as_object_mut().expect("struct serializes to an object");
        obj.insert("data".into(), serde_json::to_value(&self.data).expect("data serializes"));
        obj.insert("split".into(), serde_json::to_value(&self.split).expect("split serializes"));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn dotted_flags_are_extracted() {
        let (rest, ov) = extract_overrides(strings(&[
            "train",
            "-c",
            "cfg.json",
            "--focal.gamma",
            "0",
            "--focal.alpha-off",
            "--seed",
            "3",
            "--augment.gaussian_noise.sigma=0.2",
        ]));
        assert_eq!(rest, strings(&["train", "-c", "cfg.json", "--seed", "3"]));
        assert_eq!(ov[0], Override::new("focal.gamma", Some("0")));
        assert_eq!(ov[1].path, vec!["focal", "alpha_off"]);
        assert_eq!(ov[1].value, Value::Bool(true));
        assert_eq!(ov[2].value, serde_json::json!(0.2));
    }

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("cfg.json");
        fs::write(&p, text).unwrap();
        p
    }

    const BASE: &str = r#"{"data": {"generate": {"counts": [30, 10], "separation": 2.0, "spread": 1.0, "seed": 1}},
                           "strategy": "Vanilla"}"#;

    #[test]
    fn unknown_keys_report_their_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), BASE);
        let err = Experiment::load(&p, &[Override::new("focal.gama", Some("1"))], None).unwrap_err();
        match err {
            CliError::Schema { path, .. } => assert_eq!(path, "focal.gama"),
            e => panic!("unexpected {e}"),
        }
        let err = Experiment::load(&p, &[Override::new("split.fraction", Some("0.5"))], None).unwrap_err();
        assert!(matches!(err, CliError::Schema { ref path, .. } if path.starts_with("split")), "{err}");
    }

    #[test]
    fn overrides_and_seed_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), BASE);
        let e = Experiment::load(&p, &[Override::new("focal.gamma", Some("0"))], Some(42)).unwrap();
        assert_eq!(e.train.focal.gamma, 0.0);
        assert_eq!(e.train.seed, 42);
        let e = Experiment::load(&p, &[Override::new("seed", Some("5"))], Some(42)).unwrap();
        assert_eq!(e.train.seed, 5);
    }

    #[test]
    fn two_stage_without_stage1_epochs_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), BASE);
        let err = Experiment::load(&p, &[Override::new("strategy", Some("SuperCon"))], None).unwrap_err();
        assert!(matches!(err, CliError::Schema { ref path, .. } if path == "stage1_epochs"), "{err}");
    }
}
