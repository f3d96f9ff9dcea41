//! Pipeline stages as library calls. Each stage reads only its declared
//! inputs, writes its versioned artifact, and records a run manifest
//! `<output>.run.json` with the resolved configuration, input and output
//! content hashes, and timings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnn::{self, load_model, save_model, Provenance};
use crate::config::ExperimentConfig;
use crate::dataset::{build_dataset, dataset_paths, read_dataset, write_dataset, Split};
use crate::error::{arg_err, Error, Result};
use crate::eval::{confusion_matrix, matched_filter_locate, score_locations, ConfusionMatrix, HitsReport, IoUReport};
use crate::format;
use crate::locator::{classify_track, read_locations, screen, write_locations, CpLocations};
use crate::synth::{compose_trace, CpTemplate};
use crate::trace::{read_trace, trace_paths, write_trace, GroundTruth};

pub const RUN_FORMAT: &str = "run-v1";
pub const REPORT_FORMAT: &str = "evr-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// File name, resolved relative to the manifest's directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub version: String,
    pub preset: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub timings_ms: BTreeMap<String, f64>,
    pub summary: serde_json::Value,
}

pub fn run_manifest_path(output: &Path) -> PathBuf {
    format::with_ext(output, "run.json")
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn hash_all(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                file: file_name(p),
                sha256: format::sha256_file(p)?,
            })
        })
        .collect()
}

/// With `strict`, every upstream artifact must still match the output hashes
/// its own run manifest recorded.
pub fn verify_upstream(artifact: &Path, files: &[PathBuf]) -> Result<()> {
    let manifest_path = run_manifest_path(artifact);
    let manifest: RunManifest = format::read_json(&manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    for f in files {
        let name = file_name(f);
        let recorded = manifest
            .outputs
            .iter()
            .find(|h| h.file == name)
            .ok_or_else(|| Error::Malformed {
                path: manifest_path.clone(),
                reason: format!("no recorded hash for {name}"),
            })?;
        let actual = format::sha256_file(&dir.join(&name))?;
        if actual != recorded.sha256 {
            return Err(Error::HashMismatch {
                path: f.clone(),
                recorded: recorded.sha256.clone(),
                actual,
            });
        }
    }
    Ok(())
}

/// Timing and configuration shared by every stage.
pub struct Stage<'a> {
    pub command: &'static str,
    pub cfg: &'a ExperimentConfig,
    pub strict: bool,
    started: Instant,
    timings: BTreeMap<String, f64>,
    inputs: Vec<PathBuf>,
}

impl<'a> Stage<'a> {
    pub fn new(command: &'static str, cfg: &'a ExperimentConfig, strict: bool) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            command,
            cfg,
            strict,
            started: Instant::now(),
            timings: BTreeMap::new(),
            inputs: Vec::new(),
        })
    }

    /// Declares the files of an upstream artifact rooted at `base`.
    fn input(&mut self, base: &Path, files: Vec<PathBuf>) -> Result<()> {
        for f in &files {
            if !f.exists() {
                return Err(Error::MissingFile(f.clone()));
            }
        }
        if self.strict {
            verify_upstream(base, &files)?;
        }
        self.inputs.extend(files);
        Ok(())
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.timings.insert(name.to_owned(), t.elapsed().as_secs_f64() * 1e3);
        Ok(out)
    }

    fn finish(mut self, output: &Path, outputs: &[PathBuf], summary: serde_json::Value) -> Result<PathBuf> {
        self.timings
            .insert("total".into(), self.started.elapsed().as_secs_f64() * 1e3);
        let manifest = RunManifest {
            format: RUN_FORMAT.into(),
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            preset: self.cfg.preset.clone(),
            seed: self.cfg.seed,
            config: self.cfg.clone(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(outputs)?,
            timings_ms: self.timings,
            summary,
        };
        let path = run_manifest_path(output);
        format::write_json(&path, &manifest)?;
        Ok(path)
    }
}

fn trace_files(base: &Path) -> Vec<PathBuf> {
    let (data, sidecar) = trace_paths(base);
    vec![data, sidecar]
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

/// Trace ids are the output file name so that runs in different directories
/// produce identical artifacts.
fn artifact_id(out: &Path) -> String {
    file_name(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSummary {
    pub trace_id: String,
    pub samples: usize,
    pub n_cps: usize,
    pub mean_cp_len: Option<f64>,
}

pub fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<SynthSummary> {
    let mut stage = Stage::new("synth", cfg, false)?;
    let synth_cfg = cfg.synth_config()?;
    let st = stage.time("generate", || {
        let template = CpTemplate::synthetic(&cfg.template_params())?;
        compose_trace(&synth_cfg, &template, &artifact_id(out))
    })?;
    let outputs = write_trace(out, &st.trace, Some(&st.ground_truth))?;
    let summary = SynthSummary {
        trace_id: st.trace.id().to_owned(),
        samples: st.trace.len(),
        n_cps: st.ground_truth.len(),
        mean_cp_len: st.ground_truth.mean_length(),
    };
    stage.finish(out, &outputs, to_json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub counts: [usize; 3],
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub mean_cp_len: Option<f64>,
}

pub fn dataset(cfg: &ExperimentConfig, cipher: &[PathBuf], noise: &Path, out: &Path, strict: bool) -> Result<DatasetSummary> {
    let mut stage = Stage::new("dataset", cfg, strict)?;
    if cipher.is_empty() {
        return arg_err("at least one cipher trace is required");
    }
    for base in cipher {
        stage.input(base, trace_files(base))?;
    }
    stage.input(noise, trace_files(noise))?;
    let mut traces = Vec::with_capacity(cipher.len());
    for base in cipher {
        let (trace, gt) = read_trace(base)?;
        let gt = gt.ok_or_else(|| Error::Argument(format!("cipher trace {} has no ground truth", base.display())))?;
        traces.push((trace, gt));
    }
    let (noise_trace, _) = read_trace(noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ds = stage.time("build", || build_dataset(&traces, &noise_trace, cfg.n, &mut rng))?;
    let total_len: usize = traces.iter().map(|(_, gt)| gt.lengths().iter().sum::<usize>()).sum();
    let total_cps: usize = traces.iter().map(|(_, gt)| gt.len()).sum();
    let mean_cp_len = (total_cps > 0).then(|| total_len as f64 / total_cps as f64);
    let outputs = write_dataset(out, &ds, mean_cp_len)?;
    let summary = DatasetSummary {
        n: ds.n,
        counts: ds.class_counts(),
        train: ds.splits.train.len(),
        valid: ds.splits.valid.len(),
        test: ds.splits.test.len(),
        mean_cp_len,
    };
    stage.finish(out, &outputs, to_json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub metrics: Vec<cnn::EpochMetrics>,
    pub train_seconds: f64,
    pub parameters: usize,
}

pub fn train(
    cfg: &ExperimentConfig,
    dataset_base: &Path,
    out: &Path,
    strict: bool,
    progress: impl FnMut(&cnn::EpochMetrics),
) -> Result<TrainSummary> {
    let mut stage = Stage::new("train", cfg, strict)?;
    let files = dataset_paths(dataset_base).to_vec();
    stage.input(dataset_base, files.clone())?;
    let (ds, mean_cp_len) = read_dataset(dataset_base)?;
    let dataset_hash = format::sha256_files(&files)?;
    let t = Instant::now();
    let outcome = stage.time("train", || {
        cnn::train_with_progress(&ds, &cfg.model_config(), &cfg.train_config(), progress)
    })?;
    let train_seconds = t.elapsed().as_secs_f64();
    let provenance = Provenance {
        seed: cfg.seed,
        dataset_hash,
        train: cfg.train_config(),
        best_epoch: outcome.best_epoch,
        metrics: outcome.metrics.clone(),
        mean_cp_len,
    };
    let outputs = save_model(out, &outcome.model, Some(provenance))?;
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        metrics: outcome.metrics,
        train_seconds,
        parameters: outcome.model.params.count(),
    };
    // Timing stays out of the model file and lives only in the run manifest.
    stage.finish(out, &outputs, to_json(&summary))?;
    Ok(summary)
}

/// Optional extra outputs of [`locate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LocateOutputs {
    /// `<out>.track.csv` with the raw per-window classes.
    pub track_csv: bool,
    /// `<out>.svg` plot of the trace with predicted starts and GT bands.
    pub svg: bool,
}

/// Locations written by `locate` and `baseline` for output base `out`.
pub fn locations_path(out: &Path) -> PathBuf {
    format::with_ext(out, "loc.json")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocateSummary {
    pub trace_id: String,
    pub windows: usize,
    pub starts: Vec<usize>,
    pub avg_cp: f64,
    pub k0: usize,
    pub stride: usize,
}

pub fn locate(
    cfg: &ExperimentConfig,
    model_base: &Path,
    trace_base: &Path,
    out: &Path,
    extras: &LocateOutputs,
    strict: bool,
) -> Result<LocateSummary> {
    let mut stage = Stage::new("locate", cfg, strict)?;
    stage.input(model_base, cnn::io::model_paths(model_base).to_vec())?;
    stage.input(trace_base, trace_files(trace_base))?;
    let (model, provenance) = load_model(model_base)?;
    let (trace, gt) = read_trace(trace_base)?;
    let screen_cfg = cfg.screen_config(provenance.and_then(|p| p.mean_cp_len))?;
    let n = model.config.input_len;
    if n != cfg.n {
        return Err(Error::Config(format!("model window length {n} differs from configured n = {}", cfg.n)));
    }
    let track = stage.time("classify", || classify_track(&model, &trace, n, cfg.stride))?;
    let loc = stage.time("screen", || screen(&track.classes, &screen_cfg))?;
    let loc_path = locations_path(out);
    write_locations(&loc_path, trace.id(), n, cfg.stride, &loc)?;
    let mut outputs = vec![loc_path];
    if extras.track_csv {
        let csv = format::with_ext(out, "track.csv");
        track.write_csv(&csv)?;
        outputs.push(csv);
    }
    if extras.svg {
        let svg = format::with_ext(out, "svg");
        std::fs::write(&svg, crate::svg::render(&trace, gt.as_ref(), &loc.starts, Some(&track)))?;
        outputs.push(svg);
    }
    let summary = LocateSummary {
        trace_id: trace.id().to_owned(),
        windows: track.classes.len(),
        starts: loc.starts,
        avg_cp: screen_cfg.avg_cp,
        k0: screen_cfg.k0,
        stride: screen_cfg.stride,
    };
    stage.finish(out, &outputs, to_json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub trace_id: String,
    pub template_len: usize,
    pub starts: Vec<usize>,
}

pub fn baseline(cfg: &ExperimentConfig, trace_base: &Path, out: &Path, strict: bool) -> Result<BaselineSummary> {
    let mut stage = Stage::new("baseline", cfg, strict)?;
    stage.input(trace_base, trace_files(trace_base))?;
    let (trace, _) = read_trace(trace_base)?;
    let template = CpTemplate::synthetic(&cfg.template_params())?;
    let loc = stage.time("correlate", || {
        matched_filter_locate(&trace, template.waveform(), &cfg.matched_filter_config())
    })?;
    let loc_path = locations_path(out);
    write_locations(&loc_path, trace.id(), template.len(), 1, &loc)?;
    let summary = BaselineSummary {
        trace_id: trace.id().to_owned(),
        template_len: template.len(),
        starts: loc.starts,
    };
    stage.finish(out, &[loc_path], to_json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationsEval {
    pub trace_id: String,
    pub predictions: usize,
    pub ground_truth: usize,
    pub hits: HitsReport,
    pub iou: IoUReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEval {
    pub split: String,
    pub accuracy: f64,
    pub per_class_recall: [f64; 3],
    /// `[predicted][true]`.
    pub counts: [[usize; 3]; 3],
    pub percent_of_true: [[f64; 3]; 3],
    pub percent_of_predicted: [[f64; 3]; 3],
}

impl ClassifierEval {
    fn new(cm: &ConfusionMatrix) -> Self {
        Self {
            split: "test".into(),
            accuracy: cm.accuracy(),
            per_class_recall: cm.per_class_recall(),
            counts: cm.counts,
            percent_of_true: cm.percent_of_true(),
            percent_of_predicted: cm.percent_of_predicted(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<LocationsEval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierEval>,
}

/// What to evaluate, as artifact base names: predicted locations against a trace's ground truth,
/// a model on a dataset's test split, or both.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub locations: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

/// Writes `<out>.json` (report) and, when locations are scored, `<out>.csv`
/// with one row per ground-truth CP.
pub fn eval(cfg: &ExperimentConfig, inputs: &EvalInputs, out: &Path, strict: bool) -> Result<EvalReport> {
    let mut stage = Stage::new("eval", cfg, strict)?;
    let mut report = EvalReport {
        format: REPORT_FORMAT.into(),
        locations: None,
        classifier: None,
    };
    let mut outputs = Vec::new();
    let report_path = format::with_ext(out, "json");
    match (&inputs.locations, &inputs.trace) {
        (Some(loc_base), Some(trace_base)) => {
            let loc_path = locations_path(loc_base);
            stage.input(loc_base, vec![loc_path.clone()])?;
            stage.input(trace_base, trace_files(trace_base))?;
            let loc = read_locations(&loc_path)?;
            let (trace, gt) = read_trace(trace_base)?;
            let gt: GroundTruth =
                gt.ok_or_else(|| Error::Argument(format!("trace {} has no ground truth", trace_base.display())))?;
            if loc.trace_id != trace.id() {
                return arg_err(format!(
                    "locations are for trace '{}', not '{}'",
                    loc.trace_id,
                    trace.id()
                ));
            }
            let score = score_locations(&CpLocations { starts: loc.starts.clone() }, &gt, cfg.tolerance())?;
            let csv = format::with_ext(out, "csv");
            score.write_csv(&csv)?;
            outputs.push(csv);
            report.locations = Some(LocationsEval {
                trace_id: trace.id().to_owned(),
                predictions: loc.starts.len(),
                ground_truth: gt.len(),
                hits: score.hits,
                iou: score.iou,
            });
        }
        (None, None) => {}
        _ => return arg_err("scoring locations needs both --locations and --trace"),
    }
    match (&inputs.model, &inputs.dataset) {
        (Some(model_base), Some(ds_base)) => {
            stage.input(model_base, cnn::io::model_paths(model_base).to_vec())?;
            stage.input(ds_base, dataset_paths(ds_base).to_vec())?;
            let (model, _) = load_model(model_base)?;
            let (ds, _) = read_dataset(ds_base)?;
            let cm = stage.time("confusion", || confusion_matrix(&model, &ds, Split::Test))?;
            report.classifier = Some(ClassifierEval::new(&cm));
        }
        (None, None) => {}
        _ => return arg_err("a confusion matrix needs both --model and --dataset"),
    }
    if report.locations.is_none() && report.classifier.is_none() {
        return arg_err("nothing to evaluate: pass --locations/--trace and/or --model/--dataset");
    }
    format::write_json(&report_path, &report)?;
    outputs.insert(0, report_path);
    stage.finish(out, &outputs, to_json(&report))?;
    Ok(report)
}
