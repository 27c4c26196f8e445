//! Flat `key = value` configuration with per-value provenance.
//!
//! Every key has a default; a bare `t2i train --data x.csv` runs the
//! reference protocol (batch 64, 100 epochs, 3 repeats, 80/20 split).
//! Values come from the defaults, then a snapshot's stored config, then a
//! config file, then command-line flags; later sources win.

use crate::error::CliError;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use table2image::attribution::{DualShapConfig, ExplainConfig, KernelShapConfig};
use table2image::data::MappingPolicy;
use table2image::model::{ReverseConfig, TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Text,
    Uint,
    Float,
    Fraction,
    Variant,
    Mapping,
    List,
}

struct KeySpec {
    name: &'static str,
    kind: Kind,
    default: fn() -> String,
    doc: &'static str,
}

macro_rules! key {
    ($name:literal, $kind:ident, $default:expr, $doc:literal) => {
        KeySpec { name: $name, kind: Kind::$kind, default: || ($default).to_string(), doc: $doc }
    };
}

const KEYS: &[KeySpec] = &[
    key!("data", Text, "", "dataset: a CSV path or openml:<id>"),
    key!("target", Text, "", "target column name; empty means the last column"),
    key!("images", Text, "data", "directory holding fashion-mnist/ and mnist/ IDX files"),
    key!("out", Text, "t2i-out", "output directory for every artifact"),
    key!("variant", Variant, "base", "model variant: base, vif, dir or mul"),
    key!("mapping", Mapping, "multiple", "row-to-image mapping: multiple, fixed or single"),
    key!("split", Fraction, 0.8, "training fraction of the stratified split"),
    key!("split_seed", Uint, 0, "seed of the train/test split"),
    key!("seed", Uint, 0, "base training seed; repeat k derives its own seed"),
    key!("repeats", Uint, 3, "independent training runs"),
    key!("epochs", Uint, 100, "epochs per run"),
    key!("batch_size", Uint, 64, "mini-batch size"),
    key!("lr", Float, TrainConfig::default().lr, "AdamW learning rate"),
    key!("weight_decay", Float, TrainConfig::default().weight_decay, "AdamW decoupled weight decay"),
    key!("eval_noise_seed", Uint, 7, "seed of the fixed noise image used at evaluation"),
    key!("snapshot", Text, "", "model snapshot to explain or visualize"),
    key!("samples", List, "0", "comma-separated test-split row indices to explain"),
    key!("background_rows", Uint, 32, "training rows drawn as the SHAP background"),
    key!("n_coalitions", Uint, KernelShapConfig::default().n_coalitions, "Kernel SHAP coalitions above the exact limit"),
    key!("explain_seed", Uint, 0, "seed of background choice, coalitions and DualSHAP"),
    key!("dualshap_iters", Uint, DualShapConfig::default().iters, "DualSHAP optimisation steps"),
    key!("dualshap_lr", Float, DualShapConfig::default().lr, "DualSHAP learning rate"),
    key!("dualshap_draws", Uint, DualShapConfig::default().draws, "reparameterised draws averaged per DualSHAP step"),
    key!("reverse_epochs", Uint, ReverseConfig::default().epochs, "epochs of the image-to-row reconstructor"),
    key!("visualize_count", Uint, 16, "test rows rendered by visualize"),
    key!("suite", Text, "", "benchmark suite file: one dataset source per line"),
    key!("runs", Uint, 10, "stability: explanation seeds"),
    key!("stability_instances", Uint, 10, "stability: test rows explained per seed"),
];

fn spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// Where a value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    Snapshot,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::Snapshot => "snapshot",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Entry {
    pub value: String,
    pub source: Source,
}

/// Validated settings. Every known key is present.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Config {
    entries: BTreeMap<&'static str, Entry>,
}

/// Closest known key, if any is reasonably close.
pub fn suggest(unknown: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|k| (strsim::jaro_winkler(unknown, k.name), k.name))
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, name)| name)
}

fn unknown_key(key: &str) -> CliError {
    let hint = suggest(key).map(|s| format!("; did you mean `{s}`?")).unwrap_or_default();
    CliError::Usage(format!("unknown config key `{key}`{hint}"))
}

fn check(kind: Kind, key: &str, value: &str) -> Result<(), CliError> {
    let bad = |what: &str| CliError::Usage(format!("config key `{key}`: expected {what}, got {value:?}"));
    match kind {
        Kind::Text => Ok(()),
        Kind::Uint => value.parse::<u64>().map(drop).map_err(|_| bad("a non-negative integer")),
        Kind::Float => match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(()),
            _ => Err(bad("a finite number")),
        },
        Kind::Fraction => match value.parse::<f64>() {
            Ok(v) if v > 0.0 && v < 1.0 => Ok(()),
            _ => Err(bad("a number strictly between 0 and 1")),
        },
        Kind::Variant => Variant::from_str(value).map(drop).map_err(|_| bad("one of base, vif, dir, mul")),
        Kind::Mapping => parse_mapping(value).map(drop).ok_or_else(|| bad("one of multiple, fixed, single")),
        Kind::List => parse_list(value).map(drop).ok_or_else(|| bad("comma-separated non-negative integers")),
    }
}

fn parse_mapping(s: &str) -> Option<MappingPolicy> {
    match s {
        "multiple" => Some(MappingPolicy::PerEpoch),
        "fixed" => Some(MappingPolicy::Fixed),
        "single" => Some(MappingPolicy::Single),
        _ => None,
    }
}

fn parse_list(s: &str) -> Option<Vec<usize>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`, got {line:?}", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Default for Config {
    fn default() -> Self {
        let entries = KEYS.iter().map(|k| (k.name, Entry { value: (k.default)(), source: Source::Default })).collect();
        Self { entries }
    }
}

impl Config {
    /// Applies one layer of values, rejecting unknown keys and ill-typed values.
    pub fn apply<K: AsRef<str>, V: AsRef<str>>(
        &mut self,
        pairs: impl IntoIterator<Item = (K, V)>,
        source: Source,
    ) -> Result<(), CliError> {
        for (k, v) in pairs {
            let (k, v) = (k.as_ref(), v.as_ref());
            let spec = spec(k).ok_or_else(|| unknown_key(k))?;
            check(spec.kind, k, v)?;
            self.entries.insert(spec.name, Entry { value: v.to_string(), source });
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        self.apply(parse_pairs(&text)?, Source::File)
    }

    pub fn entry(&self, key: &str) -> &Entry {
        self.entries.get(key).unwrap_or_else(|| panic!("`{key}` is not a config key"))
    }

    pub fn get(&self, key: &str) -> &str {
        &self.entry(key).value
    }

    pub fn source(&self, key: &str) -> Source {
        self.entry(key).source
    }

    fn parsed<T: FromStr>(&self, key: &str) -> T {
        self.get(key).parse().unwrap_or_else(|_| panic!("`{key}` was validated on entry"))
    }

    pub fn uint(&self, key: &str) -> usize {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.parsed(key)
    }

    pub fn float(&self, key: &str) -> f64 {
        self.parsed(key)
    }

    /// Non-empty text value, or a usage error naming the key.
    pub fn required(&self, key: &str, command: &str) -> Result<&str, CliError> {
        match self.get(key) {
            "" => Err(CliError::Usage(format!("`{command}` needs `{key}` (flag --{key} or config key)"))),
            v => Ok(v),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn samples(&self) -> Vec<usize> {
        parse_list(self.get("samples")).expect("validated on entry")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.uint("batch_size"),
            epochs: self.uint("epochs"),
            repeats: self.uint("repeats"),
            seed: self.u64("seed"),
            lr: self.float("lr"),
            weight_decay: self.float("weight_decay"),
            mapping: parse_mapping(self.get("mapping")).expect("validated on entry"),
            eval_noise_seed: self.u64("eval_noise_seed"),
            variant: self.parsed("variant"),
            ..TrainConfig::default()
        }
    }

    pub fn explain_config(&self) -> ExplainConfig {
        let seed = self.u64("explain_seed");
        ExplainConfig {
            background_rows: self.uint("background_rows"),
            n_coalitions: self.uint("n_coalitions"),
            noise_seed: self.u64("eval_noise_seed"),
            seed,
            dualshap: DualShapConfig {
                iters: self.uint("dualshap_iters"),
                lr: self.float("dualshap_lr"),
                draws: self.uint("dualshap_draws"),
                seed,
                ..DualShapConfig::default()
            },
            ..ExplainConfig::default()
        }
    }

    pub fn reverse_config(&self) -> ReverseConfig {
        ReverseConfig { epochs: self.uint("reverse_epochs"), seed: self.u64("explain_seed"), ..ReverseConfig::default() }
    }

    /// Plain `key -> value` map without the output directory; the part of
    /// the config a snapshot carries.
    pub fn values(&self) -> BTreeMap<String, String> {
        self.entries.iter().filter(|(k, _)| **k != "out").map(|(k, e)| (k.to_string(), e.value.clone())).collect()
    }

    /// Canonical `key=value` lines of everything except the output directory.
    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .filter(|(k, _)| **k != "out")
            .map(|(k, e)| format!("{k}={}\n", e.value))
            .collect()
    }
}

/// One line per key: name, default and description.
pub fn describe_keys() -> String {
    KEYS.iter().map(|k| format!("{:<20} {:<10} {}\n", k.name, (k.default)(), k.doc)).collect()
}
