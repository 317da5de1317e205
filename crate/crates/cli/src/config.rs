//! INI-style experiment configuration: `[section]` headers and
//! `key = value` lines, a strict key allowlist (typos are errors), `--set
//! section.key=value` overrides, and Cartesian grid expansion over
//! comma-separated list values.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Every key the configuration understands, as `section.key`.
pub const KNOWN_KEYS: &[&str] = &[
    "data.src",
    "data.tgt",
    "data.meta",
    "data.mono",
    "data.src_lang",
    "data.tgt_lang",
    "data.split_dir",
    "prep.truecase",
    "prep.bpe_merges",
    "split.seed",
    "split.dev_size",
    "split.test_size",
    "split.dedup",
    "align.iterations",
    "align.symmetrization",
    "lm.order",
    "lm.big",
    "smt.max_phrase_len",
    "smt.distortion_limit",
    "smt.stack_size",
    "smt.beam_log",
    "mert.n_best",
    "mert.max_iters",
    "mert.seed",
    "nmt.preset",
    "nmt.arch",
    "nmt.enc_layers",
    "nmt.dec_layers",
    "nmt.hidden",
    "nmt.embed",
    "nmt.heads",
    "nmt.ffn",
    "nmt.dropout",
    "nmt.label_smoothing",
    "nmt.tied",
    "nmt.bpe",
    "nmt.min_word_freq",
    "nmt.batch_type",
    "nmt.batch_size",
    "nmt.lr",
    "nmt.warmup",
    "nmt.rsqrt_decay",
    "nmt.average_decay",
    "nmt.patience",
    "nmt.max_epochs",
    "nmt.seed",
    "nmt.beam",
    "nmt.fusion_modes",
    "nmt.fusion_provider",
    "nmt.fusion_embeddings",
    "nmt.fusion_freeze",
    "bt.mono",
    "bt.sample_size",
    "bt.seed",
    "multi.direction",
    "multi.aux_src",
    "multi.aux_tgt",
    "multi.aux_lang",
    "transfer.parent_src",
    "transfer.parent_tgt",
];

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(message: impl Into<String>) -> ConfigError {
    ConfigError {
        message: message.into(),
    }
}

/// Parsed configuration: `section.key` to raw string value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(format!("line {}: unterminated section", i + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", i + 1)))?;
            if section.is_empty() {
                return Err(config_err(format!(
                    "line {}: key outside any [section]",
                    i + 1
                )));
            }
            let full = format!("{section}.{}", key.trim());
            if !KNOWN_KEYS.contains(&full.as_str()) {
                return Err(config_err(format!("line {}: unknown key {full:?}", i + 1)));
            }
            values.insert(full, value.trim().to_string());
        }
        Ok(ExperimentConfig { values })
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {path:?}: {e}")))?;
        ExperimentConfig::parse(&text)
    }

    /// Apply a `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| config_err(format!("override {assignment:?}: expected key=value")))?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(config_err(format!("override: unknown key {key:?}")));
        }
        self.values
            .insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| config_err(format!("missing required key {key:?}")))
    }

    pub fn get_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| config_err(format!("bad value for {key}: {raw:?}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(other) => Err(config_err(format!("bad boolean for {key}: {other:?}"))),
        }
    }

    /// Canonical serialization: sorted `key = value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = String::new();
        for (key, value) in &self.values {
            let (sec, name) = key.split_once('.').unwrap();
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                section = sec.to_string();
            }
            out.push_str(&format!("{name} = {value}\n"));
        }
        out
    }

    pub fn hash(&self) -> u64 {
        lrmt::corpus::fnv1a64(self.render().as_bytes())
    }

    /// Keys holding comma-separated lists, in sorted order.
    pub fn list_keys(&self) -> Vec<String> {
        self.values
            .iter()
            .filter(|(_, v)| v.contains(','))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Cartesian expansion of every list-valued key. Returns the
    /// combinations as (config, name) pairs; the name is a pure function
    /// of the overridden keys.
    pub fn expand_grid(&self) -> Vec<(ExperimentConfig, String)> {
        let list_keys = self.list_keys();
        if list_keys.is_empty() {
            return vec![(self.clone(), "single".to_string())];
        }
        let choices: Vec<Vec<String>> = list_keys
            .iter()
            .map(|k| {
                self.values[k]
                    .split(',')
                    .map(|v| v.trim().to_string())
                    .collect()
            })
            .collect();
        let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
        for options in &choices {
            let mut next = Vec::new();
            for combo in &combos {
                for i in 0..options.len() {
                    let mut extended = combo.clone();
                    extended.push(i);
                    next.push(extended);
                }
            }
            combos = next;
        }
        combos
            .into_iter()
            .map(|combo| {
                let mut config = self.clone();
                let mut name_parts = Vec::new();
                for (key, &choice) in list_keys.iter().zip(&combo) {
                    let value = &choices[list_keys.iter().position(|k| k == key).unwrap()][choice];
                    config.values.insert(key.clone(), value.clone());
                    name_parts.push(format!("{key}={value}"));
                }
                (config, name_parts.join("__"))
            })
            .collect()
    }
}
