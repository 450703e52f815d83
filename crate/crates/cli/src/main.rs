use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spm_cli::commands::{self, Layout, Split};
use spm_cli::{exit_code, PipelineConfig, EXIT_CONFIG};
use spm_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "spm", version, about = "Patch matching with over-complete sparse codes", args_override_self = true)]
struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dictionary size (number of atoms).
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Sparsity penalty of the lasso coder.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Ridge penalty of the dictionary fit.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true, value_parser = ["1", "2"])]
    arch: Option<String>,
    #[arg(long = "eigen-mode", global = true)]
    eigen_mode: Option<Mode>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Smallest,
    Largest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Which {
    Train,
    Test,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic train/test patch containers.
    Synth,
    /// Learn the dictionary from a sample of training patches.
    LearnDict,
    /// Sparse-code the patches of a split.
    Encode {
        /// Dictionary to code with; defaults to the one in --out.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        split: Which,
    },
    /// Train the pair classifier on encoded training pairs.
    Train,
    /// Score encoded test pairs with a trained model.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Accept artifacts built under a different config.
        #[arg(long)]
        force: bool,
    },
    /// learn-dict, encode, train and eval in sequence.
    Pipeline,
}

fn overrides(cli: &Cli) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s:?}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            kv.insert(k.to_string(), v);
        }
    };
    put("seed", cli.seed.map(|v| v.to_string()));
    put("k", cli.k.map(|v| v.to_string()));
    put("beta", cli.beta.map(|v| v.to_string()));
    put("alpha", cli.alpha.map(|v| v.to_string()));
    put("arch", cli.arch.clone());
    put(
        "eigen_mode",
        cli.eigen_mode.map(|m| match m {
            Mode::Smallest => "smallest".to_string(),
            Mode::Largest => "largest".to_string(),
        }),
    );
    put("out", cli.out.as_ref().map(|p| p.display().to_string()));
    Ok(kv)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::resolve(cli.config.as_deref(), &overrides(&cli)?)?;
    let layout = Layout::new(&cfg.out);
    match cli.cmd {
        Command::Synth => {
            for (split, ds) in commands::cmd_synth(&cfg)? {
                println!(
                    "{}: {} patches, {} pairs, {:.1}% matching",
                    split.name(),
                    ds.patches.len(),
                    ds.pairs.len(),
                    100.0 * ds.positive_fraction()
                );
            }
        }
        Command::LearnDict => {
            let s = commands::cmd_learn_dict(&cfg)?;
            println!(
                "dictionary {}x{} ({}) from n = {} patches, t = {:.4}: {}",
                s.m,
                s.k,
                s.completeness,
                s.n,
                s.bandwidth,
                s.path.display()
            );
        }
        Command::Encode { dict, split } => {
            let dict = dict.unwrap_or_else(|| layout.dictionary());
            let splits: &[Split] = match split {
                Which::Train => &[Split::Train],
                Which::Test => &[Split::Test],
                Which::Both => &[Split::Train, Split::Test],
            };
            for &s in splits {
                let r = commands::cmd_encode(&cfg, &dict, s)?;
                println!(
                    "{}: {} patches, {} pairs, mean support {:.2}, mean residual {:.4}, {:.2?}",
                    s.name(),
                    r.patches,
                    r.pairs,
                    r.mean_support,
                    r.mean_reconstruction_error,
                    r.wall_time
                );
            }
        }
        Command::Train => {
            let h = commands::cmd_train(&cfg)?;
            if let Some(last) = h.epochs().checked_sub(1) {
                println!(
                    "{} epochs, final loss {:.4}, train acc {:.4}, val acc {:.4}; kept epoch {}",
                    h.epochs(),
                    h.train_loss[last],
                    h.train_acc[last],
                    h.val_acc[last],
                    h.best_epoch
                );
            }
        }
        Command::Eval { model, codes, pairs, force } => {
            let r = commands::cmd_eval(
                &cfg,
                &model.unwrap_or_else(|| layout.model()),
                &codes.unwrap_or_else(|| layout.codes(Split::Test)),
                &pairs.unwrap_or_else(|| layout.code_pairs(Split::Test)),
                force,
            )?;
            println!("error@95 {:.4}, accuracy {:.4}, auc {:.4}", r.error95, r.accuracy, r.curve.auc());
        }
        Command::Pipeline => {
            let r = commands::cmd_pipeline(&cfg)?;
            println!(
                "dictionary {}x{} ({}); error@95 {:.4}, accuracy {:.4}",
                r.dictionary.m, r.dictionary.k, r.dictionary.completeness, r.eval.error95, r.eval.accuracy
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
