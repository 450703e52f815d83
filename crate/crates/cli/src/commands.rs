//! Pipeline stages. Each stage reads its inputs from disk (or regenerates
//! deterministic synthetic data) and writes its artifacts under `out`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spm_core::dictionary::{fit_dictionary, load_dictionary, save_dictionary, Dictionary};
use spm_core::evaluation::{evaluate_model, write_metrics, write_roc_csv, write_roc_dat, EvalResult};
use spm_core::graph::{knn_graph, GraphConfig};
use spm_core::matcher_net::{load_checkpoint, save_checkpoint, train, write_history_csv, Checkpoint, PairSample, TrainHistory};
use spm_core::patchdata::{load_dataset, load_ubc_subset, read_pairs_csv, save_dataset, synth_dataset, write_pairs_csv, PairLabel, PatchDataset, SynthConfig};
use spm_core::sparse_coder::{encode_batch, load_encoded, save_encoded, EncodedSet};
use spm_core::spectral::embed;
use spm_core::{Error, Result};

use crate::config::{DataSource, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Artifact locations inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Self {
        Layout { out: out.to_path_buf() }
    }

    pub fn dataset(&self, s: Split) -> (PathBuf, PathBuf) {
        (
            self.out.join(format!("{}.spmp", s.name())),
            self.out.join(format!("{}_pairs.csv", s.name())),
        )
    }

    pub fn dictionary(&self) -> PathBuf {
        self.out.join("dictionary.spmd")
    }

    pub fn codes(&self, s: Split) -> PathBuf {
        self.out.join(format!("{}_codes.spmc", s.name()))
    }

    pub fn code_pairs(&self, s: Split) -> PathBuf {
        self.out.join(format!("{}_code_pairs.csv", s.name()))
    }

    pub fn model(&self) -> PathBuf {
        self.out.join("model.spmn")
    }

    pub fn history(&self) -> PathBuf {
        self.out.join("history.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.out.join("metrics.json")
    }

    pub fn roc_csv(&self) -> PathBuf {
        self.out.join("roc.csv")
    }

    pub fn roc_dat(&self) -> PathBuf {
        self.out.join("roc.dat")
    }
}

fn ensure_out(cfg: &PipelineConfig) -> Result<Layout> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::Config(format!("cannot create {}: {e}", cfg.out.display())))?;
    Ok(Layout::new(&cfg.out))
}

fn synth_config(cfg: &PipelineConfig, split: Split) -> SynthConfig {
    SynthConfig {
        seed: cfg.stage_seed(&format!("synth-{}", split.name())),
        n_prototypes: cfg.synth_prototypes,
        pairs_per_class: match split {
            Split::Train => cfg.synth_train_pairs_per_class,
            Split::Test => cfg.synth_test_pairs_per_class,
        },
        side: cfg.synth_side,
        noise_sigma: cfg.synth_noise,
        shift_max: cfg.synth_shift,
        prototype_seed: Some(cfg.stage_seed("synth-prototypes")),
    }
}

/// The dataset behind a split, per the configured source.
pub fn dataset(cfg: &PipelineConfig, split: Split) -> Result<PatchDataset> {
    let (data, matches) = match split {
        Split::Train => (&cfg.train_data, &cfg.train_matches),
        Split::Test => (&cfg.test_data, &cfg.test_matches),
    };
    match cfg.data_source {
        DataSource::Synth => synth_dataset(&synth_config(cfg, split)),
        DataSource::Ubc => load_ubc_subset(Path::new(data), matches),
        DataSource::Container => load_dataset(&PathBuf::from(format!("{data}.spmp")), &PathBuf::from(format!("{data}_pairs.csv"))),
    }
}

/// Writes both synthetic splits as patch containers.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<Vec<(Split, PatchDataset)>> {
    let layout = ensure_out(cfg)?;
    let mut out = Vec::new();
    for split in [Split::Train, Split::Test] {
        let ds = synth_dataset(&synth_config(cfg, split))?;
        let (bin, csv) = layout.dataset(split);
        save_dataset(&ds, &bin, &csv)?;
        out.push((split, ds));
    }
    Ok(out)
}

/// Patch indices used for dictionary learning.
pub fn dictionary_sample(cfg: &PipelineConfig, ds: &PatchDataset) -> Result<Vec<usize>> {
    let n = ds.patches.len();
    if n < cfg.dict_samples {
        return Err(Error::Config(format!(
            "dictionary sample of {} patches requested but the training set has {n}",
            cfg.dict_samples
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed("learn-dict"));
    let mut idx = sample(&mut rng, n, cfg.dict_samples).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone)]
pub struct DictSummary {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub completeness: &'static str,
    pub bandwidth: f64,
    pub path: PathBuf,
}

pub fn cmd_learn_dict(cfg: &PipelineConfig) -> Result<DictSummary> {
    let layout = ensure_out(cfg)?;
    let ds = dataset(cfg, Split::Train)?;
    let m = ds.dim();
    if cfg.require_overcomplete && cfg.k <= m {
        return Err(Error::Config(format!(
            "over-complete dictionary requested but k = {} <= m = {m}",
            cfg.k
        )));
    }
    let idx = dictionary_sample(cfg, &ds)?;
    let n = idx.len();
    if n <= cfg.k {
        return Err(Error::Config(format!("dictionary learning needs n > k, got n = {n}, k = {}", cfg.k)));
    }
    let x = ds.data_matrix(&idx, cfg.standardize);
    let graph = knn_graph(
        &x,
        &GraphConfig {
            p: cfg.p,
            bandwidth: cfg.t,
            squared_distance: cfg.squared_distance,
        },
    )?;
    let emb = embed(&graph, cfg.k, cfg.eigen_mode, cfg.drop_trivial)?;
    let mut dict = fit_dictionary(&x, &emb.y, cfg.alpha)?;
    if cfg.unit_norm_atoms {
        dict.normalize_columns();
    }
    let meta: BTreeMap<String, String> = [
        ("dataset", ds.name.clone()),
        ("seed", cfg.seed.to_string()),
        ("p", cfg.p.to_string()),
        ("t", format!("{:e}", graph.t)),
        ("mode", cfg.eigen_mode.as_str().to_string()),
        ("n", n.to_string()),
        ("drop_trivial", cfg.drop_trivial.to_string()),
        ("unit_norm_atoms", cfg.unit_norm_atoms.to_string()),
        ("config_hash", format!("{:016x}", cfg.hash())),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    dict.meta = meta;
    let path = layout.dictionary();
    save_dictionary(&dict, &path)?;
    Ok(DictSummary {
        m: dict.m(),
        k: dict.k(),
        n,
        completeness: dict.completeness(),
        bandwidth: graph.t,
        path,
    })
}

fn dictionary_hash(d: &Dictionary) -> Result<u64> {
    let s = d
        .meta
        .get("config_hash")
        .ok_or_else(|| Error::Format("dictionary carries no config hash".into()))?;
    u64::from_str_radix(s, 16).map_err(|_| Error::Format(format!("bad config hash {s:?}")))
}

#[derive(Debug, Clone)]
pub struct EncodeSummary {
    pub split: Split,
    pub patches: usize,
    pub pairs: usize,
    pub mean_support: f64,
    pub mean_reconstruction_error: f64,
    pub wall_time: Duration,
}

/// Codes every patch referenced by the split's pairs with the dictionary at
/// `dict_path`. Pair indices are rewritten to index the code list.
pub fn cmd_encode(cfg: &PipelineConfig, dict_path: &Path, split: Split) -> Result<EncodeSummary> {
    let layout = ensure_out(cfg)?;
    let dict = load_dictionary(dict_path)?;
    let mut ds = dataset(cfg, split)?;
    if ds.dim() != dict.m() {
        return Err(Error::Config(format!(
            "dictionary atoms have dimension {} but {} patches have dimension {}",
            dict.m(),
            split.name(),
            ds.dim()
        )));
    }
    if split == Split::Train && cfg.disjoint_dict_sample {
        let held: std::collections::HashSet<usize> = dictionary_sample(cfg, &ds)?.into_iter().collect();
        ds.pairs.retain(|p| !held.contains(&p.idx_a) && !held.contains(&p.idx_b));
    }
    let mut refs: Vec<usize> = ds.pairs.iter().flat_map(|p| [p.idx_a, p.idx_b]).collect();
    refs.sort_unstable();
    refs.dedup();
    let mut slot = vec![usize::MAX; ds.patches.len()];
    for (i, &r) in refs.iter().enumerate() {
        slot[r] = i;
    }
    let x = ds.data_matrix(&refs, cfg.standardize);
    let (codes, report) = encode_batch(&dict, &x, cfg.beta)?;
    let set = EncodedSet {
        k: dict.k(),
        beta: cfg.beta,
        config_hash: dictionary_hash(&dict)?,
        codes,
    };
    save_encoded(&set, &layout.codes(split))?;
    let pairs: Vec<PairLabel> = ds
        .pairs
        .iter()
        .map(|p| PairLabel {
            idx_a: slot[p.idx_a],
            idx_b: slot[p.idx_b],
            label: p.label,
        })
        .collect();
    write_pairs_csv(&layout.code_pairs(split), &pairs)?;
    Ok(EncodeSummary {
        split,
        patches: refs.len(),
        pairs: pairs.len(),
        mean_support: report.mean_support,
        mean_reconstruction_error: report.mean_reconstruction_error,
        wall_time: report.wall_time,
    })
}

/// Joins a code file with its pair list.
pub fn pair_samples(codes: &EncodedSet, pairs: &[PairLabel]) -> Result<Vec<PairSample>> {
    pairs
        .iter()
        .map(|p| {
            let get = |i: usize| {
                codes
                    .codes
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Range(format!("pair references code {i} of {}", codes.codes.len())))
            };
            Ok(PairSample {
                code_a: get(p.idx_a)?,
                code_b: get(p.idx_b)?,
                label: p.label,
            })
        })
        .collect()
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainHistory> {
    let layout = ensure_out(cfg)?;
    let codes = load_encoded(&layout.codes(Split::Train))?;
    if codes.config_hash != cfg.hash() {
        log::warn!(
            "training codes were produced under config {:016x}, current config is {:016x}",
            codes.config_hash,
            cfg.hash()
        );
    }
    let pairs = read_pairs_csv(&layout.code_pairs(Split::Train))?;
    let samples = pair_samples(&codes, &pairs)?;
    let mut tc = cfg.train;
    tc.seed = cfg.stage_seed("train");
    let (params, history) = train(&samples, &cfg.arch, &tc)?;
    save_checkpoint(
        &Checkpoint {
            params,
            train_config: tc,
            config_hash: codes.config_hash,
        },
        &layout.model(),
    )?;
    write_history_csv(&history, &layout.history())?;
    Ok(history)
}

/// Scores test pairs with a trained model. The model and the codes must
/// share `k`; with `force` unset they must also share the current config
/// hash.
pub fn cmd_eval(cfg: &PipelineConfig, model: &Path, codes: &Path, pairs: &Path, force: bool) -> Result<EvalResult> {
    let layout = ensure_out(cfg)?;
    let ckpt = load_checkpoint(model)?;
    let set = load_encoded(codes)?;
    if ckpt.params.input_dim != 2 * set.k {
        return Err(Error::Config(format!(
            "model expects codes of length {} but the test codes have k = {}",
            ckpt.params.input_dim / 2,
            set.k
        )));
    }
    if !force {
        let want = cfg.hash();
        for (what, h) in [("model", ckpt.config_hash), ("test codes", set.config_hash)] {
            if h != want {
                return Err(Error::Config(format!(
                    "{what} built under config {h:016x}, current config is {want:016x} (use --force to override)"
                )));
            }
        }
    }
    let samples = pair_samples(&set, &read_pairs_csv(pairs)?)?;
    let result = evaluate_model(&ckpt.params, &samples)?;
    write_metrics(&result, &layout.metrics())?;
    write_roc_csv(&result.curve, &layout.roc_csv())?;
    write_roc_dat(&result.curve, &layout.roc_dat())?;
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub dictionary: DictSummary,
    pub encode: Vec<EncodeSummary>,
    pub history: TrainHistory,
    pub eval: EvalResult,
}

/// learn-dict → encode (train, test) → train → eval, all under `cfg.out`.
/// Test patches are coded with the training split's dictionary.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let layout = ensure_out(cfg)?;
    let dictionary = cmd_learn_dict(cfg)?;
    let encode = vec![
        cmd_encode(cfg, &layout.dictionary(), Split::Train)?,
        cmd_encode(cfg, &layout.dictionary(), Split::Test)?,
    ];
    let history = cmd_train(cfg)?;
    let eval = cmd_eval(
        cfg,
        &layout.model(),
        &layout.codes(Split::Test),
        &layout.code_pairs(Split::Test),
        false,
    )?;
    Ok(PipelineReport {
        dictionary,
        encode,
        history,
        eval,
    })
}
