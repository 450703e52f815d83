//! Flat `key = value` pipeline configuration.
//!
//! Values resolve with precedence command line > config file > defaults.
//! The config hash covers every key except `out`, so artifacts produced
//! into different directories from the same settings stay compatible.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use spm_core::graph::Bandwidth;
use spm_core::matcher_net::{Activation, AdamConfig, Architecture, TrainConfig};
use spm_core::spectral::EigenMode;
use spm_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generated train/test sets sharing one prototype bank.
    Synth,
    /// UBC subset directories (bitmap sheets, info.txt, match file).
    Ubc,
    /// Binary patch containers written by `spm synth` or `save_dataset`.
    Container,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,

    pub data_source: DataSource,
    pub train_data: String,
    pub test_data: String,
    pub train_matches: String,
    pub test_matches: String,
    pub standardize: bool,

    pub synth_side: usize,
    pub synth_prototypes: usize,
    pub synth_train_pairs_per_class: usize,
    pub synth_test_pairs_per_class: usize,
    pub synth_noise: f64,
    pub synth_shift: usize,

    pub dict_samples: usize,
    pub disjoint_dict_sample: bool,
    pub k: usize,
    pub require_overcomplete: bool,
    pub alpha: f64,
    pub beta: f64,
    pub p: usize,
    pub t: Bandwidth,
    pub squared_distance: bool,
    pub eigen_mode: EigenMode,
    pub drop_trivial: bool,
    pub unit_norm_atoms: bool,

    pub arch: Architecture,
    pub train: TrainConfig,
}

/// Every recognized key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "spm-out"),
    ("data_source", "synth"),
    ("train_data", ""),
    ("test_data", ""),
    ("train_matches", "m50_100000_100000_0.txt"),
    ("test_matches", "m50_100000_100000_0.txt"),
    ("standardize", "false"),
    ("synth_side", "8"),
    ("synth_prototypes", "50"),
    ("synth_train_pairs_per_class", "40"),
    ("synth_test_pairs_per_class", "10"),
    ("synth_noise", "0.05"),
    ("synth_shift", "1"),
    ("dict_samples", "480"),
    ("disjoint_dict_sample", "false"),
    ("k", "96"),
    ("require_overcomplete", "false"),
    ("alpha", "0.1"),
    ("beta", "0.1"),
    ("p", "5"),
    ("t", "auto"),
    ("squared_distance", "false"),
    ("eigen_mode", "smallest"),
    ("drop_trivial", "true"),
    ("unit_norm_atoms", "true"),
    ("arch", "2"),
    ("hidden", ""),
    ("activation", "relu"),
    ("batch_size", "64"),
    ("epochs", "50"),
    ("lr", "0.001"),
    ("adam_beta1", "0.9"),
    ("adam_beta2", "0.999"),
    ("adam_eps", "1e-8"),
    ("val_ratio", "0.2"),
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)));
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn get<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> &'a str {
    kv.get(key).map(String::as_str).unwrap_or("")
}

fn num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = get(kv, key);
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(kv: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match get(kv, key) {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true/false, got {other:?}"))),
    }
}

impl PipelineConfig {
    /// Resolves defaults, then the file at `path` (if any), then `overrides`.
    pub fn resolve(path: Option<&Path>, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            kv.extend(parse_kv(&text)?);
        }
        kv.extend(overrides.clone());
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !DEFAULTS.iter().any(|(d, _)| d == k)) {
            return Err(Error::Config(format!("unknown config key {k:?}")));
        }
        let mut full: BTreeMap<String, String> = DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        full.extend(kv.clone());
        let kv = &full;

        let data_source = match get(kv, "data_source") {
            "synth" => DataSource::Synth,
            "ubc" => DataSource::Ubc,
            "container" => DataSource::Container,
            other => return Err(Error::Config(format!("data_source: unknown value {other:?}"))),
        };
        let t = match get(kv, "t") {
            "auto" | "AUTO" => Bandwidth::Auto,
            _ => Bandwidth::Fixed(num(kv, "t")?),
        };
        let activation: Activation = get(kv, "activation").parse()?;
        let mut arch = match get(kv, "arch") {
            "1" => Architecture::arch1(),
            "2" => Architecture::arch2(),
            other => return Err(Error::Config(format!("arch: expected 1 or 2, got {other:?}"))),
        };
        let hidden = get(kv, "hidden");
        if !hidden.is_empty() {
            arch.hidden = hidden
                .split(',')
                .map(|h| h.trim().parse().map_err(|_| Error::Config(format!("hidden: bad size {h:?}"))))
                .collect::<Result<_>>()?;
        }
        arch = Architecture::new(arch.hidden, activation)?;

        let cfg = PipelineConfig {
            seed: num(kv, "seed")?,
            out: PathBuf::from(get(kv, "out")),
            data_source,
            train_data: get(kv, "train_data").to_string(),
            test_data: get(kv, "test_data").to_string(),
            train_matches: get(kv, "train_matches").to_string(),
            test_matches: get(kv, "test_matches").to_string(),
            standardize: flag(kv, "standardize")?,
            synth_side: num(kv, "synth_side")?,
            synth_prototypes: num(kv, "synth_prototypes")?,
            synth_train_pairs_per_class: num(kv, "synth_train_pairs_per_class")?,
            synth_test_pairs_per_class: num(kv, "synth_test_pairs_per_class")?,
            synth_noise: num(kv, "synth_noise")?,
            synth_shift: num(kv, "synth_shift")?,
            dict_samples: num(kv, "dict_samples")?,
            disjoint_dict_sample: flag(kv, "disjoint_dict_sample")?,
            k: num(kv, "k")?,
            require_overcomplete: flag(kv, "require_overcomplete")?,
            alpha: num(kv, "alpha")?,
            beta: num(kv, "beta")?,
            p: num(kv, "p")?,
            t,
            squared_distance: flag(kv, "squared_distance")?,
            eigen_mode: get(kv, "eigen_mode").parse()?,
            drop_trivial: flag(kv, "drop_trivial")?,
            unit_norm_atoms: flag(kv, "unit_norm_atoms")?,
            arch,
            train: TrainConfig {
                batch_size: num(kv, "batch_size")?,
                epochs: num(kv, "epochs")?,
                adam: AdamConfig {
                    lr: num(kv, "lr")?,
                    beta1: num(kv, "adam_beta1")?,
                    beta2: num(kv, "adam_beta2")?,
                    eps: num(kv, "adam_eps")?,
                },
                val_ratio: num(kv, "val_ratio")?,
                seed: 0,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.dict_samples <= self.k {
            return Err(Error::Config(format!(
                "dictionary learning needs more samples than atoms (n > k), got n = {}, k = {}",
                self.dict_samples, self.k
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.data_source != DataSource::Synth && self.train_data.is_empty() {
            return Err(Error::Config("train_data must be set for non-synthetic sources".into()));
        }
        self.train.validate()
    }

    /// Canonical `key=value` rendering of every hashed setting.
    pub fn canonical(&self) -> String {
        let src = match self.data_source {
            DataSource::Synth => "synth",
            DataSource::Ubc => "ubc",
            DataSource::Container => "container",
        };
        let t = match self.t {
            Bandwidth::Auto => "auto".to_string(),
            Bandwidth::Fixed(t) => format!("{t:e}"),
        };
        let hidden: Vec<String> = self.arch.hidden.iter().map(|h| h.to_string()).collect();
        let a = &self.train.adam;
        let fields: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("data_source", src.into()),
            ("train_data", self.train_data.clone()),
            ("test_data", self.test_data.clone()),
            ("train_matches", self.train_matches.clone()),
            ("test_matches", self.test_matches.clone()),
            ("standardize", self.standardize.to_string()),
            ("synth_side", self.synth_side.to_string()),
            ("synth_prototypes", self.synth_prototypes.to_string()),
            ("synth_train_pairs_per_class", self.synth_train_pairs_per_class.to_string()),
            ("synth_test_pairs_per_class", self.synth_test_pairs_per_class.to_string()),
            ("synth_noise", format!("{:e}", self.synth_noise)),
            ("synth_shift", self.synth_shift.to_string()),
            ("dict_samples", self.dict_samples.to_string()),
            ("disjoint_dict_sample", self.disjoint_dict_sample.to_string()),
            ("k", self.k.to_string()),
            ("require_overcomplete", self.require_overcomplete.to_string()),
            ("alpha", format!("{:e}", self.alpha)),
            ("beta", format!("{:e}", self.beta)),
            ("p", self.p.to_string()),
            ("t", t),
            ("squared_distance", self.squared_distance.to_string()),
            ("eigen_mode", self.eigen_mode.as_str().into()),
            ("drop_trivial", self.drop_trivial.to_string()),
            ("unit_norm_atoms", self.unit_norm_atoms.to_string()),
            ("hidden", hidden.join(",")),
            ("activation", format!("{:?}", self.arch.activation).to_lowercase()),
            ("batch_size", self.train.batch_size.to_string()),
            ("epochs", self.train.epochs.to_string()),
            ("lr", format!("{:e}", a.lr)),
            ("adam_beta1", format!("{:e}", a.beta1)),
            ("adam_beta2", format!("{:e}", a.beta2)),
            ("adam_eps", format!("{:e}", a.eps)),
            ("val_ratio", format!("{:e}", self.train.val_ratio)),
        ];
        fields.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 8 bytes (little endian) of SHA-256 over [`Self::canonical`].
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.canonical().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Per-stage seed: first 8 bytes of SHA-256 over `"<seed>/<stage>"`.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        stage_seed(self.seed, stage)
    }
}

pub fn stage_seed(global: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(format!("{global}/{stage}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
