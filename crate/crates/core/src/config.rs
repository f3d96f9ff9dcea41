//! Experiment configuration: named presets, a flat `key = value` file format,
//! and per-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::MatchedFilterConfig;
use crate::locator::ScreenConfig;
use crate::synth::{FrequencyPool, SynthConfig, TemplateParams, DEFAULT_SAMPLE_RATE_HZ};

pub const PRESETS: [&str; 5] = ["desk-default", "aes-paper", "aes-masked-paper", "clefia-paper", "camellia-paper"];

/// Every key accepted by [`ExperimentConfig::set`].
pub const KEYS: &[&str] = &[
    "seed", "cps", "interleave", "noise_gap_min", "noise_gap_max", "noise_len", "dfs", "f_min_hz", "f_max_hz",
    "f_step_hz", "pool_drop_lowest", "mean_reconfigs", "jitter_sigma", "awgn_sigma", "sample_rate_hz",
    "round_count", "round_length", "prologue_len", "epilogue_len", "clock_period", "template_seed", "n",
    "conv_kernel", "fc_hidden", "epochs", "batch_size", "lr_max", "dropout_p", "stride", "k0", "avg_cp",
    "mf_quantile", "mf_min_corr", "tolerance",
];

/// Every tunable of the pipeline, flat so it can round-trip through a
/// `key = value` file and be recorded verbatim in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,

    pub cps: usize,
    pub interleave: bool,
    pub noise_gap_min: usize,
    pub noise_gap_max: usize,
    pub noise_len: usize,
    pub dfs: bool,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub f_step_hz: f64,
    /// Drop the lowest pool entry (the 760-entry hardware pool).
    pub pool_drop_lowest: bool,
    pub mean_reconfigs: f64,
    pub jitter_sigma: f64,
    pub awgn_sigma: f64,
    pub sample_rate_hz: f64,
    pub round_count: usize,
    pub round_length: usize,
    pub prologue_len: usize,
    pub epilogue_len: usize,
    pub clock_period: usize,
    pub template_seed: u64,

    pub n: usize,
    pub conv_kernel: usize,
    pub fc_hidden: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub dropout_p: f64,

    pub stride: usize,
    pub k0: usize,
    /// Average CP length for screening; 0 means "use the value recorded with the model".
    pub avg_cp: f64,

    pub mf_quantile: f64,
    pub mf_min_corr: f64,
    /// Matching tolerance for scoring; 0 means half the mean ground-truth length.
    pub tolerance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        preset("desk-default").expect("built-in preset")
    }
}

/// Full-scale preset from a window size, stride, kernel, average CP length
/// and classifier hyperparameters. The synthetic template is sized so a
/// DFS-deformed instance averages `avg_cp` samples.
#[allow(clippy::too_many_arguments)]
fn full_scale(
    name: &str,
    avg_cp: f64,
    k0: usize,
    n: usize,
    stride: usize,
    batch_size: usize,
    lr_max: f64,
    dropout_p: f64,
    round_count: usize,
    mean_reconfigs: f64,
) -> ExperimentConfig {
    let mut cfg = desk_default();
    cfg.preset = name.to_owned();
    cfg.avg_cp = avg_cp;
    cfg.k0 = k0;
    cfg.n = n;
    cfg.stride = stride;
    cfg.batch_size = batch_size;
    cfg.lr_max = lr_max;
    cfg.dropout_p = dropout_p;
    cfg.conv_kernel = 64;
    cfg.round_count = round_count;
    cfg.prologue_len = (n / 4).max(64);
    cfg.epilogue_len = (n / 4).max(64);
    let nominal_len = avg_cp / FrequencyPool::dfs_default().mean_stretch();
    let rounds_len = (nominal_len - (cfg.prologue_len + cfg.epilogue_len) as f64).max(round_count as f64);
    cfg.round_length = (rounds_len / round_count as f64).round().max(1.0) as usize;
    cfg.mean_reconfigs = mean_reconfigs;
    cfg.noise_gap_min = (avg_cp / 3.0) as usize;
    cfg.noise_gap_max = (avg_cp * 1.3) as usize;
    cfg.noise_len = (avg_cp * 40.0) as usize;
    cfg
}

fn desk_default() -> ExperimentConfig {
    let t = TemplateParams::default();
    ExperimentConfig {
        preset: "desk-default".into(),
        seed: 7,
        cps: 50,
        interleave: true,
        noise_gap_min: 4096,
        noise_gap_max: 16384,
        noise_len: 1 << 19,
        dfs: true,
        f_min_hz: 5e6,
        f_max_hz: 100e6,
        f_step_hz: 125e3,
        pool_drop_lowest: true,
        mean_reconfigs: 8.0,
        jitter_sigma: 0.1,
        awgn_sigma: 0.05,
        sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        round_count: t.round_count,
        round_length: t.round_length,
        prologue_len: t.prologue_len,
        epilogue_len: t.epilogue_len,
        clock_period: t.clock_period,
        template_seed: t.seed,
        n: 256,
        conv_kernel: 16,
        fc_hidden: 64,
        epochs: 25,
        batch_size: 32,
        lr_max: 0.01,
        dropout_p: 0.2,
        stride: 64,
        k0: 3,
        avg_cp: 0.0,
        mf_quantile: MatchedFilterConfig::default().threshold_quantile,
        mf_min_corr: MatchedFilterConfig::default().min_correlation,
        tolerance: 0.0,
    }
}

/// Built-in presets. The `*-paper` ones are full-scale settings: window,
/// stride, kernel, average CP length and classifier hyperparameters of the
/// hardware captures with other applications interleaved.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    Ok(match name {
        "desk-default" => desk_default(),
        "aes-paper" => full_scale(name, 145_000.0, 150, 10_000, 62, 256, 0.01, 0.2, 10, 41.0),
        "aes-masked-paper" => full_scale(name, 50_000.0, 10, 5_000, 50, 256, 0.007, 0.35, 10, 14.0),
        "clefia-paper" => full_scale(name, 80_000.0, 150, 3_000, 80, 256, 0.007, 0.3, 18, 23.0),
        "camellia-paper" => full_scale(name, 4_400.0, 80, 1_100, 50, 128, 0.007, 0.4, 18, 1.5),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    })
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean '{value}' for key '{key}'"))),
    }
}

impl ExperimentConfig {
    /// Sets one key; keys use the field names, with `-` accepted for `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "preset" => return Err(Error::Config("select presets with --preset, not as a key".into())),
            "seed" => self.seed = parse(k, value)?,
            "cps" => self.cps = parse(k, value)?,
            "interleave" => self.interleave = parse_bool(k, value)?,
            "noise_gap_min" => self.noise_gap_min = parse(k, value)?,
            "noise_gap_max" => self.noise_gap_max = parse(k, value)?,
            "noise_len" => self.noise_len = parse(k, value)?,
            "dfs" => self.dfs = parse_bool(k, value)?,
            "f_min_hz" => self.f_min_hz = parse(k, value)?,
            "f_max_hz" => self.f_max_hz = parse(k, value)?,
            "f_step_hz" => self.f_step_hz = parse(k, value)?,
            "pool_drop_lowest" => self.pool_drop_lowest = parse_bool(k, value)?,
            "mean_reconfigs" => self.mean_reconfigs = parse(k, value)?,
            "jitter_sigma" => self.jitter_sigma = parse(k, value)?,
            "awgn_sigma" => self.awgn_sigma = parse(k, value)?,
            "sample_rate_hz" => self.sample_rate_hz = parse(k, value)?,
            "round_count" => self.round_count = parse(k, value)?,
            "round_length" => self.round_length = parse(k, value)?,
            "prologue_len" => self.prologue_len = parse(k, value)?,
            "epilogue_len" => self.epilogue_len = parse(k, value)?,
            "clock_period" => self.clock_period = parse(k, value)?,
            "template_seed" => self.template_seed = parse(k, value)?,
            "n" => self.n = parse(k, value)?,
            "conv_kernel" => self.conv_kernel = parse(k, value)?,
            "fc_hidden" => self.fc_hidden = parse(k, value)?,
            "epochs" => self.epochs = parse(k, value)?,
            "batch_size" => self.batch_size = parse(k, value)?,
            "lr_max" => self.lr_max = parse(k, value)?,
            "dropout_p" => self.dropout_p = parse(k, value)?,
            "stride" => self.stride = parse(k, value)?,
            "k0" => self.k0 = parse(k, value)?,
            "avg_cp" => self.avg_cp = parse(k, value)?,
            "mf_quantile" => self.mf_quantile = parse(k, value)?,
            "mf_min_corr" => self.mf_min_corr = parse(k, value)?,
            "tolerance" => self.tolerance = parse(k, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file: one pair per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected 'key = value'", i + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_owned()),
            _ => Error::Io(e),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Checks every derived configuration so errors surface before any work.
    pub fn validate(&self) -> Result<()> {
        self.synth_config()?.validate()?;
        self.template_params().validate()?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if self.k0 == 0 {
            return Err(Error::Config("k0 must be positive".into()));
        }
        if self.avg_cp != 0.0 && !(self.avg_cp >= 1.0 && self.avg_cp.is_finite()) {
            return Err(Error::Config(format!("avg_cp {} must be 0 (auto) or at least 1", self.avg_cp)));
        }
        if !(0.0..=1.0).contains(&self.mf_quantile) {
            return Err(Error::Config(format!("mf_quantile {} not in [0, 1]", self.mf_quantile)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config(format!("tolerance {} must be non-negative", self.tolerance)));
        }
        Ok(())
    }

    pub fn pool(&self) -> Result<FrequencyPool> {
        if !self.dfs {
            return Ok(FrequencyPool::fixed(self.f_max_hz));
        }
        let full = FrequencyPool::from_range(self.f_min_hz, self.f_max_hz, self.f_step_hz)?;
        if self.pool_drop_lowest && full.len() > 1 {
            FrequencyPool::new(full.frequencies_hz()[1..].to_vec(), full.nominal_hz())
        } else {
            Ok(full)
        }
    }

    pub fn template_params(&self) -> TemplateParams {
        TemplateParams {
            round_count: self.round_count,
            round_length: self.round_length,
            prologue_len: self.prologue_len,
            epilogue_len: self.epilogue_len,
            clock_period: self.clock_period,
            seed: self.template_seed,
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            n_cps: self.cps,
            interleave_noise: self.interleave,
            noise_gap_range: (self.noise_gap_min, self.noise_gap_max),
            noise_only_len: self.noise_len,
            dfs: self.pool()?,
            mean_reconfigs_per_cp: self.mean_reconfigs,
            jitter_sigma: self.jitter_sigma,
            awgn_sigma: self.awgn_sigma,
            sample_rate_hz: self.sample_rate_hz,
            seed: self.seed,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::new(self.n, self.conv_kernel);
        m.fc_hidden = self.fc_hidden;
        m.dropout_p = self.dropout_p;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_max: self.lr_max,
            dropout_p: self.dropout_p,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Screening settings, with `fallback_avg_cp` used when `avg_cp` is 0.
    /// An even `k0` is bumped to the next odd kernel.
    pub fn screen_config(&self, fallback_avg_cp: Option<f64>) -> Result<ScreenConfig> {
        let avg = if self.avg_cp > 0.0 {
            self.avg_cp
        } else {
            fallback_avg_cp.ok_or_else(|| {
                Error::Config("avg_cp is 0 and the model records no average CP length".into())
            })?
        };
        ScreenConfig::new(self.k0 | 1, avg, self.stride)?.with_min_cp_floor((self.n as f64).min(avg))
    }

    pub fn matched_filter_config(&self) -> MatchedFilterConfig {
        MatchedFilterConfig {
            threshold_quantile: self.mf_quantile,
            min_correlation: self.mf_min_corr,
        }
    }

    pub fn tolerance(&self) -> Option<f64> {
        (self.tolerance > 0.0).then_some(self.tolerance)
    }
}
