//! `houndkit` command-line front end.
//!
//! Configuration resolves as preset, then `--config` file, then overrides in
//! command-line order. Every configuration key is also accepted as a flag,
//! so `--cps 50` is shorthand for `--set cps=50`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use houndkit::config::{self, ExperimentConfig};
use houndkit::format::with_ext;
use houndkit::pipeline::{self, EvalInputs, LocateOutputs};
use houndkit::Error;

const EXIT_GENERIC: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_HASH: u8 = 4;
const EXIT_MISSING: u8 = 5;
const EXIT_CONFIG: u8 = 6;

#[derive(Parser)]
#[command(name = "houndkit", version, about = "Locate cipher executions in DFS-deformed power traces")]
struct Cli {
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true, env = "HOUNDKIT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "desk-default")]
    preset: String,

    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Require upstream artifacts to match the hashes in their run manifests.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a trace with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output base name; writes `<out>.f32` and `<out>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the three-class window dataset.
    Dataset {
        #[command(flatten)]
        common: Common,
        /// Cipher trace base name; repeatable.
        #[arg(long, required = true)]
        cipher: Vec<PathBuf>,
        /// Noise-only trace base name.
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Locate CP starts in a trace; writes `<out>.loc.json`.
    Locate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-window classes to `<out>.track.csv`.
        #[arg(long)]
        track: bool,
        /// Also write a plot to `<out>.svg`.
        #[arg(long)]
        svg: bool,
    },
    /// Score locations and/or the classifier; writes `<out>.json` and `<out>.csv`.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Locations base name, as passed to `locate --out`.
        #[arg(long)]
        locations: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Matched-filter baseline; writes `<out>.loc.json`.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Dataset { common, .. }
            | Command::Train { common, .. }
            | Command::Locate { common, .. }
            | Command::Eval { common, .. }
            | Command::Baseline { common, .. } => common,
        }
    }

    /// Every file the command may create, for cleanup after a failure.
    fn planned_outputs(&self) -> Vec<PathBuf> {
        let (out, exts): (&Path, &[&str]) = match self {
            Command::Synth { out, .. } => (out, &["f32", "json"]),
            Command::Dataset { out, .. } => (out, &["json", "f32", "labels"]),
            Command::Train { out, .. } => (out, &["json", "bin"]),
            Command::Locate { out, .. } => (out, &["loc.json", "track.csv", "svg"]),
            Command::Eval { out, .. } => (out, &["json", "csv"]),
            Command::Baseline { out, .. } => (out, &["loc.json"]),
        };
        let mut paths: Vec<PathBuf> = exts.iter().map(|e| with_ext(out, e)).collect();
        paths.push(pipeline::run_manifest_path(out));
        paths
    }
}

/// Rewrites `--<key> <value>` and `--<key>=<value>` for configuration keys
/// into `--set <key>=<value>`, leaving every other argument to clap.
fn expand_key_flags(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            out.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_owned(), Some(v.to_owned())),
            None => (flag.to_owned(), None),
        };
        let key = name.replace('-', "_");
        if !config::KEYS.contains(&key.as_str()) {
            out.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => match it.next() {
                Some(v) => v,
                None => {
                    out.push(arg);
                    continue;
                }
            },
        };
        out.push("--set".into());
        out.push(format!("{key}={value}"));
    }
    out
}

fn resolve_config(common: &Common) -> houndkit::Result<ExperimentConfig> {
    let mut cfg = config::preset(&common.preset)?;
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => EXIT_USAGE,
        Error::FormatVersion { .. } | Error::Malformed { .. } | Error::Json(_) | Error::Shape { .. } => EXIT_FORMAT,
        Error::HashMismatch { .. } => EXIT_HASH,
        Error::MissingFile(_) => EXIT_MISSING,
        Error::Config(_) => EXIT_CONFIG,
        Error::Bounds { .. } | Error::Io(_) => EXIT_GENERIC,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn run(command: &Command) -> houndkit::Result<()> {
    let cfg = resolve_config(command.common())?;
    let strict = command.common().strict;
    match command {
        Command::Synth { out, .. } => {
            let s = pipeline::synth(&cfg, out)?;
            println!(
                "trace {}: {} samples, {} CPs, mean CP length {}",
                s.trace_id,
                s.samples,
                s.n_cps,
                fmt_opt(s.mean_cp_len)
            );
        }
        Command::Dataset { cipher, noise, out, .. } => {
            let s = pipeline::dataset(&cfg, cipher, noise, out, strict)?;
            println!(
                "dataset N={}: {} start / {} spare / {} noise windows, splits {}/{}/{}",
                s.n, s.counts[0], s.counts[1], s.counts[2], s.train, s.valid, s.test
            );
        }
        Command::Train { dataset, out, .. } => {
            let s = pipeline::train(&cfg, dataset, out, strict, |m| {
                eprintln!(
                    "epoch {:>3}  train loss {:.4}  valid loss {}  valid acc {}  lr {:.2e}",
                    m.epoch,
                    m.train_loss,
                    fmt_opt(m.valid_loss),
                    fmt_opt(m.valid_accuracy),
                    m.lr_last
                );
            })?;
            println!(
                "trained {} parameters in {:.1} s, checkpoint from epoch {}",
                s.parameters, s.train_seconds, s.best_epoch
            );
        }
        Command::Locate {
            model, trace, out, track, svg, ..
        } => {
            let extras = LocateOutputs {
                track_csv: *track,
                svg: *svg,
            };
            let s = pipeline::locate(&cfg, model, trace, out, &extras, strict)?;
            println!(
                "{}: {} starts from {} windows (k0={}, avg_cp={:.1}, stride={})",
                s.trace_id,
                s.starts.len(),
                s.windows,
                s.k0,
                s.avg_cp,
                s.stride
            );
        }
        Command::Eval {
            locations,
            trace,
            model,
            dataset,
            out,
            ..
        } => {
            let inputs = EvalInputs {
                locations: locations.clone(),
                trace: trace.clone(),
                model: model.clone(),
                dataset: dataset.clone(),
            };
            let r = pipeline::eval(&cfg, &inputs, out, strict)?;
            if let Some(l) = &r.locations {
                println!(
                    "hits: detection ratio {:.4} ({} predicted / {} true), matched rate {:.4} (tolerance {:.1})",
                    l.hits.detection_ratio, l.predictions, l.ground_truth, l.hits.matched_rate, l.hits.tolerance
                );
                println!("iou: mean {:.4}, std {:.4}", l.iou.mean, l.iou.std);
            }
            if let Some(c) = &r.classifier {
                println!("test accuracy {:.4}", c.accuracy);
                println!("confusion (rows predicted, columns true: start spare noise)");
                for (name, row) in ["start", "spare", "noise"].iter().zip(&c.counts) {
                    println!("  {name:<6} {:>6} {:>6} {:>6}", row[0], row[1], row[2]);
                }
            }
        }
        Command::Baseline { trace, out, .. } => {
            let s = pipeline::baseline(&cfg, trace, out, strict)?;
            println!(
                "{}: {} matched-filter detections (template length {})",
                s.trace_id,
                s.starts.len(),
                s.template_len
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = expand_key_flags(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_GENERIC);
    }

    let planned = cli.command.planned_outputs();
    let preexisting: Vec<bool> = planned.iter().map(|p| p.exists()).collect();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for (p, existed) in planned.iter().zip(preexisting) {
                if !existed {
                    let _ = std::fs::remove_file(p);
                }
            }
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
