//! Seeded generator of DFS-deformed power traces with exact ground truth.
//!
//! A trace is assembled as `noise, CP, noise, CP, ..., noise`. Every CP is a
//! jittered copy of a [`CpTemplate`] that is cut into contiguous segments, each
//! time-rescaled by `nominal / f` for a clock frequency `f` drawn from a
//! [`FrequencyPool`]. White Gaussian noise is added to the finished trace.
//!
//! Randomness comes from independent ChaCha streams derived from one seed, so
//! the noise activity and gap lengths of a trace do not change when only the
//! frequency pool changes.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::trace::{GroundTruth, Trace};

/// Sampling rate written into synthesized traces (samples per second).
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 125e6;

/// Clock frequencies the DFS actuator may select.
///
/// The nominal frequency is the one at which the CP template is defined; a
/// segment clocked at `f` lasts `nominal / f` times longer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPool {
    frequencies_hz: Vec<f64>,
    nominal_hz: f64,
}

impl FrequencyPool {
    pub fn new(mut frequencies_hz: Vec<f64>, nominal_hz: f64) -> Result<Self> {
        if frequencies_hz.is_empty() {
            return Err(Error::Config("frequency pool is empty".into()));
        }
        if frequencies_hz.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config("pool frequencies must be finite and positive".into()));
        }
        frequencies_hz.sort_by(f64::total_cmp);
        if frequencies_hz.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("pool frequencies must be distinct".into()));
        }
        if !frequencies_hz.contains(&nominal_hz) {
            return Err(Error::Config(format!(
                "nominal frequency {nominal_hz} Hz is not in the pool"
            )));
        }
        Ok(Self {
            frequencies_hz,
            nominal_hz,
        })
    }

    /// Evenly spaced pool `f_min, f_min + step, ..., f_max`; the nominal
    /// frequency is `f_max`, so DFS only ever slows the CP down.
    pub fn from_range(f_min_hz: f64, f_max_hz: f64, step_hz: f64) -> Result<Self> {
        if !(f_min_hz > 0.0 && f_min_hz < f_max_hz && step_hz > 0.0) {
            return Err(Error::Config(format!(
                "invalid pool range {f_min_hz}..{f_max_hz} step {step_hz}"
            )));
        }
        let steps = (f_max_hz - f_min_hz) / step_hz;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::Config(format!(
                "range {f_min_hz}..{f_max_hz} is not a multiple of step {step_hz}"
            )));
        }
        let count = rounded as usize + 1;
        let mut freqs: Vec<f64> = (0..count).map(|i| f_min_hz + i as f64 * step_hz).collect();
        // Pin the top entry so the nominal frequency is exactly representable.
        freqs[count - 1] = f_max_hz;
        Self::new(freqs, f_max_hz)
    }

    /// The 760-entry DFS pool: 125 kHz steps up to a 100 MHz nominal clock.
    /// An inclusive 5 MHz..100 MHz grid has 761 points; the 5 MHz floor is
    /// the one left out so the nominal clock stays in the pool.
    pub fn dfs_default() -> Self {
        let full = Self::from_range(5e6, 100e6, 125e3).expect("static pool is valid");
        Self::new(full.frequencies_hz[1..].to_vec(), full.nominal_hz).expect("static pool is valid")
    }

    /// Pool with only the nominal frequency, i.e. DFS disabled.
    pub fn fixed(nominal_hz: f64) -> Self {
        Self {
            frequencies_hz: vec![nominal_hz],
            nominal_hz,
        }
    }

    pub fn frequencies_hz(&self) -> &[f64] {
        &self.frequencies_hz
    }

    pub fn nominal_hz(&self) -> f64 {
        self.nominal_hz
    }

    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }

    /// Expected time-stretch factor `E[nominal / f]` under uniform draws.
    pub fn mean_stretch(&self) -> f64 {
        self.frequencies_hz.iter().map(|f| self.nominal_hz / f).sum::<f64>() / self.len() as f64
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.frequencies_hz[rng.random_range(0..self.frequencies_hz.len())]
    }
}

/// Shape parameters of the synthetic CP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateParams {
    pub round_count: usize,
    pub round_length: usize,
    pub prologue_len: usize,
    pub epilogue_len: usize,
    /// Template samples per clock cycle.
    pub clock_period: usize,
    pub seed: u64,
}

impl Default for TemplateParams {
    fn default() -> Self {
        // 128 + 10 * 384 + 128 = 4096 samples.
        Self {
            round_count: 10,
            round_length: 384,
            prologue_len: 128,
            epilogue_len: 128,
            clock_period: 8,
            seed: 0x0048_4f55_4e44,
        }
    }
}

impl TemplateParams {
    pub fn total_len(&self) -> usize {
        self.prologue_len + self.round_count * self.round_length + self.epilogue_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.round_count == 0 || self.round_length == 0 || self.clock_period < 2 {
            return Err(Error::Config(
                "template needs at least one round and a clock period >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// CP power shape at the nominal clock: a sawtooth-clocked prologue, a repeated
/// round motif of raised-cosine clock pulses over a per-round ramp, and a
/// decaying epilogue.
///
/// The waveform is kept as a slowly varying `baseline` plus per-cycle `pulse`
/// content so that instances can jitter the pulse amplitudes cycle by cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CpTemplate {
    params: TemplateParams,
    baseline: Vec<f64>,
    pulse: Vec<f64>,
    waveform: Vec<f64>,
}

impl CpTemplate {
    pub fn synthetic(params: &TemplateParams) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let period = params.clock_period;
        let total = params.total_len();
        let mut baseline = Vec::with_capacity(total);
        let mut pulse = Vec::with_capacity(total);

        let phase = |t: usize| (t % period) as f64 / period as f64;
        let bump = |t: usize| 0.5 * (1.0 - (std::f64::consts::TAU * phase(t)).cos()) - 0.5;

        for t in 0..params.prologue_len {
            baseline.push(0.9);
            pulse.push(0.7 * (2.0 * phase(t) - 1.0));
        }

        // Amplitude of every clock pulse within a round; shared by all rounds.
        let cycles_per_round = params.round_length.div_ceil(period);
        let motif: Vec<f64> = (0..cycles_per_round).map(|_| rng.random_range(0.35..0.75)).collect();
        for r in 0..params.round_count {
            let round_gain = 1.0 + 0.08 * rng.random_range(-1.0..1.0);
            for t in 0..params.round_length {
                let x = t as f64 / params.round_length as f64;
                baseline.push(0.8 + 0.4 * x + 0.05 * (r % 2) as f64);
                pulse.push(round_gain * motif[t / period] * bump(t));
            }
        }

        for t in 0..params.epilogue_len {
            let x = t as f64 / params.epilogue_len.max(1) as f64;
            baseline.push(1.0 - 0.6 * x);
            pulse.push(0.5 * (1.0 - x) * bump(t));
        }

        let waveform = baseline.iter().zip(&pulse).map(|(b, p)| b + p).collect();
        Ok(Self {
            params: params.clone(),
            baseline,
            pulse,
            waveform,
        })
    }

    pub fn waveform(&self) -> &[f64] {
        &self.waveform
    }

    pub fn len(&self) -> usize {
        self.waveform.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waveform.is_empty()
    }

    pub fn round_count(&self) -> usize {
        self.params.round_count
    }

    pub fn round_length(&self) -> usize {
        self.params.round_length
    }

    pub fn params(&self) -> &TemplateParams {
        &self.params
    }

    /// One execution: every clock pulse scaled by `1 + sigma * e`, `e ~ N(0,1)`,
    /// standing in for data-dependent leakage.
    pub fn instance<R: Rng + ?Sized>(&self, jitter_sigma: f64, rng: &mut R) -> Vec<f64> {
        let period = self.params.clock_period;
        let cycles = self.len().div_ceil(period);
        let gains: Vec<f64> = (0..cycles)
            .map(|_| 1.0 + jitter_sigma * standard_normal(rng))
            .collect();
        self.baseline
            .iter()
            .zip(&self.pulse)
            .enumerate()
            .map(|(t, (b, p))| b + p * gains[t / period])
            .collect()
    }
}

/// One constant-frequency piece of a deformed CP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfsSegment {
    pub template_start: usize,
    pub template_end: usize,
    pub frequency_hz: f64,
    pub output_len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DfsSchedule {
    pub segments: Vec<DfsSegment>,
}

impl DfsSchedule {
    pub fn output_len(&self) -> usize {
        self.segments.iter().map(|s| s.output_len).sum()
    }
}

/// Rescales each `[cut_i, cut_{i+1})` piece of `waveform` by `nominal / f_i`
/// using linear interpolation. `cuts` are `(template_start, frequency)` pairs;
/// the first start must be 0 and starts must increase.
pub fn deform(waveform: &[f64], cuts: &[(usize, f64)], nominal_hz: f64) -> Result<(Vec<f64>, DfsSchedule)> {
    if waveform.is_empty() {
        return arg_err("cannot deform an empty waveform");
    }
    if cuts.first().map(|c| c.0) != Some(0) {
        return arg_err("DFS schedule must start at template index 0");
    }
    if cuts.windows(2).any(|w| w[0].0 >= w[1].0) || cuts.last().unwrap().0 >= waveform.len() {
        return arg_err("DFS segment starts must be strictly increasing and inside the template");
    }
    if cuts.iter().any(|c| !(c.1 > 0.0)) {
        return arg_err("DFS frequencies must be positive");
    }

    let last = waveform.len() - 1;
    let mut out = Vec::new();
    let mut schedule = DfsSchedule::default();
    for (i, &(start, freq)) in cuts.iter().enumerate() {
        let end = cuts.get(i + 1).map_or(waveform.len(), |c| c.0);
        let span = end - start;
        let stretch = nominal_hz / freq;
        let count = ((span as f64 * stretch).round() as usize).max(1);
        let step = span as f64 / count as f64;
        for j in 0..count {
            let pos = start as f64 + j as f64 * step;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let hi = (lo + 1).min(last);
            out.push(waveform[lo] + frac * (waveform[hi] - waveform[lo]));
        }
        schedule.segments.push(DfsSegment {
            template_start: start,
            template_end: end,
            frequency_hz: freq,
            output_len: count,
        });
    }
    Ok((out, schedule))
}

/// Draws a random DFS schedule and applies it.
///
/// The segment count is `1 + Poisson(mean_reconfigs - 1)` (capped at the
/// template length), cut points are uniform, and each segment's frequency is
/// drawn uniformly from the pool.
pub fn apply_dfs<R: Rng + ?Sized>(
    waveform: &[f64],
    pool: &FrequencyPool,
    mean_reconfigs: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, DfsSchedule)> {
    if waveform.is_empty() {
        return arg_err("cannot deform an empty waveform");
    }
    if !(mean_reconfigs >= 1.0) {
        return Err(Error::Config(format!(
            "mean reconfigurations must be >= 1, got {mean_reconfigs}"
        )));
    }
    let extra = if mean_reconfigs > 1.0 {
        Poisson::new(mean_reconfigs - 1.0)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng) as usize
    } else {
        0
    };
    let segments = (1 + extra).min(waveform.len());
    let mut starts = vec![0usize];
    if segments > 1 {
        let mut inner: Vec<usize> = sample_indices(rng, waveform.len() - 1, segments - 1)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        inner.sort_unstable();
        starts.extend(inner);
    }
    let cuts: Vec<(usize, f64)> = starts.into_iter().map(|s| (s, pool.draw(rng))).collect();
    deform(waveform, &cuts, pool.nominal_hz())
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// General-purpose activity: alternating dwell periods at an idle level and
/// mean-reverting random walks with smoothed (band-limited) increments.
pub fn synth_noise_segment<R: Rng + ?Sized>(length: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(length);
    let mut level = 0.0f64;
    while out.len() < length {
        let piece = rng.random_range(400..4000).min(length - out.len());
        if rng.random_bool(0.35) {
            let idle = rng.random_range(-0.25..0.15);
            out.extend(std::iter::repeat_n(idle, piece));
            level = idle;
        } else {
            let smooth = rng.random_range(0.85..0.97);
            let drive = rng.random_range(0.004..0.02);
            let mut velocity = 0.0f64;
            for _ in 0..piece {
                velocity = smooth * velocity + drive * standard_normal(rng);
                level = 0.995 * level + velocity;
                out.push(level);
            }
        }
    }
    out
}

/// Everything needed to regenerate a synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_cps: usize,
    pub interleave_noise: bool,
    /// Inclusive range of noise-gap lengths in samples. Lead-in and trailing
    /// noise are always present; gaps between CPs only when interleaving.
    pub noise_gap_range: (usize, usize),
    /// Length of the trace when `n_cps == 0`.
    pub noise_only_len: usize,
    pub dfs: FrequencyPool,
    pub mean_reconfigs_per_cp: f64,
    pub jitter_sigma: f64,
    pub awgn_sigma: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cps: 50,
            interleave_noise: true,
            noise_gap_range: (4096, 16384),
            noise_only_len: 1 << 19,
            dfs: FrequencyPool::dfs_default(),
            mean_reconfigs_per_cp: 8.0,
            jitter_sigma: 0.1,
            awgn_sigma: 0.05,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.noise_gap_range;
        if lo > hi {
            return Err(Error::Config(format!("noise gap range {lo}..{hi} is inverted")));
        }
        if !(self.mean_reconfigs_per_cp >= 1.0) {
            return Err(Error::Config("mean reconfigurations per CP must be >= 1".into()));
        }
        if !(self.awgn_sigma >= 0.0 && self.jitter_sigma >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.n_cps == 0 && self.noise_only_len == 0 && hi == 0 {
            return Err(Error::Config("a pure-noise trace needs a positive length".into()));
        }
        Ok(())
    }
}

/// Output of [`compose_trace`].
#[derive(Debug, Clone)]
pub struct SynthTrace {
    pub trace: Trace,
    pub ground_truth: GroundTruth,
    pub schedules: Vec<DfsSchedule>,
    /// Lengths of the noise pieces in trace order, lead-in first.
    pub noise_gaps: Vec<usize>,
}

enum Stream {
    Noise = 1,
    Dfs = 2,
    Jitter = 3,
    Awgn = 4,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn compose_trace(config: &SynthConfig, template: &CpTemplate, id: &str) -> Result<SynthTrace> {
    config.validate()?;
    let mut noise_rng = stream(config.seed, Stream::Noise);
    let mut dfs_rng = stream(config.seed, Stream::Dfs);
    let mut jitter_rng = stream(config.seed, Stream::Jitter);
    let mut awgn_rng = stream(config.seed, Stream::Awgn);

    let (gap_lo, gap_hi) = config.noise_gap_range;
    let mut samples: Vec<f64> = Vec::new();
    let mut gaps = Vec::new();
    let mut push_noise = |samples: &mut Vec<f64>, rng: &mut ChaCha8Rng, len: usize| {
        samples.extend(synth_noise_segment(len, rng));
        gaps.push(len);
    };

    let mut starts = Vec::with_capacity(config.n_cps);
    let mut lengths = Vec::with_capacity(config.n_cps);
    let mut schedules = Vec::with_capacity(config.n_cps);
    if config.n_cps == 0 {
        let len = if config.noise_only_len > 0 {
            config.noise_only_len
        } else {
            noise_rng.random_range(gap_lo.max(1)..=gap_hi)
        };
        push_noise(&mut samples, &mut noise_rng, len);
    } else {
        let lead = noise_rng.random_range(gap_lo..=gap_hi);
        push_noise(&mut samples, &mut noise_rng, lead);
        for i in 0..config.n_cps {
            let instance = template.instance(config.jitter_sigma, &mut jitter_rng);
            let (deformed, schedule) =
                apply_dfs(&instance, &config.dfs, config.mean_reconfigs_per_cp, &mut dfs_rng)?;
            starts.push(samples.len());
            lengths.push(deformed.len());
            samples.extend(deformed);
            schedules.push(schedule);
            let last = i + 1 == config.n_cps;
            if config.interleave_noise || last {
                let gap = noise_rng.random_range(gap_lo..=gap_hi);
                push_noise(&mut samples, &mut noise_rng, gap);
            }
        }
    }

    if config.awgn_sigma > 0.0 {
        let awgn = Normal::new(0.0, config.awgn_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in samples.iter_mut() {
            *v += awgn.sample(&mut awgn_rng);
        }
    }

    let trace = Trace::new(
        id,
        samples.into_iter().map(|v| v as f32).collect(),
        config.sample_rate_hz,
    )?;
    let ground_truth = GroundTruth::new(starts, lengths)?;
    Ok(SynthTrace {
        trace,
        ground_truth,
        schedules,
        noise_gaps: gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> CpTemplate {
        CpTemplate::synthetic(&TemplateParams::default()).unwrap()
    }

    fn mean_and_se(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn default_pool_has_760_entries() {
        let pool = FrequencyPool::dfs_default();
        assert_eq!(pool.len(), 760);
        assert_eq!(pool.frequencies_hz()[0], 5.125e6);
        assert_eq!(FrequencyPool::from_range(5e6, 100e6, 125e3).unwrap().len(), 761);
        assert_eq!(pool.nominal_hz(), 100e6);
        assert!(pool.frequencies_hz().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn pool_from_small_ranges() {
        let pool = FrequencyPool::from_range(1.0, 2.0, 1.0).unwrap();
        assert_eq!(pool.frequencies_hz(), &[1.0, 2.0]);
        assert!(matches!(
            FrequencyPool::from_range(1.0, 2.0, 0.3),
            Err(Error::Config(_))
        ));
        assert!(FrequencyPool::from_range(2.0, 1.0, 0.5).is_err());
        assert!(FrequencyPool::new(vec![1.0, 2.0], 3.0).is_err());
    }

    #[test]
    fn template_lengths_are_consistent() {
        let t = template();
        let p = t.params();
        assert_eq!(t.len(), 4096);
        assert_eq!(t.len(), p.round_count * p.round_length + p.prologue_len + p.epilogue_len);
        assert!(t.waveform().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nominal_frequency_is_identity() {
        let t = template();
        let pool = FrequencyPool::fixed(100e6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, sched) = apply_dfs(t.waveform(), &pool, 8.0, &mut rng).unwrap();
        assert_eq!(out.len(), t.len());
        assert_eq!(out, t.waveform());
        assert_eq!(sched.output_len(), t.len());
    }

    #[test]
    fn half_frequency_doubles_length() {
        let w = template().waveform().to_vec();
        let (out, _) = deform(&w, &[(0, 50e6)], 100e6).unwrap();
        assert!(out.len().abs_diff(2 * w.len()) <= 1);
    }

    #[test]
    fn two_segments_sum_their_stretches() {
        let w = template().waveform().to_vec();
        let half = w.len() / 2;
        let (out, sched) = deform(&w, &[(0, 50e6), (half, 100e6)], 100e6).unwrap();
        let expected = 1.5 * w.len() as f64;
        assert!((out.len() as f64 - expected).abs() <= 1.0);
        assert_eq!(sched.segments.len(), 2);
        assert_eq!(sched.output_len(), out.len());
    }

    #[test]
    fn deform_rejects_bad_schedules() {
        let w = vec![0.0; 10];
        assert!(deform(&w, &[(1, 1.0)], 1.0).is_err());
        assert!(deform(&w, &[(0, 1.0), (0, 1.0)], 1.0).is_err());
        assert!(deform(&w, &[(0, 0.0)], 1.0).is_err());
        assert!(deform(&[], &[(0, 1.0)], 1.0).is_err());
    }

    #[test]
    fn segment_count_tracks_mean_reconfigs() {
        let w = template().waveform().to_vec();
        let pool = FrequencyPool::dfs_default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let runs = 2000;
        let total: usize = (0..runs)
            .map(|_| apply_dfs(&w, &pool, 8.0, &mut rng).unwrap().1.segments.len())
            .sum();
        let mean = total as f64 / runs as f64;
        // Poisson(7) + 1 has sd sqrt(7); 5 standard errors.
        assert!((mean - 8.0).abs() < 5.0 * (7.0f64 / runs as f64).sqrt(), "{mean}");
    }

    #[test]
    fn noise_segment_is_deterministic() {
        assert!(synth_noise_segment(0, &mut ChaCha8Rng::seed_from_u64(1)).is_empty());
        let a = synth_noise_segment(1000, &mut ChaCha8Rng::seed_from_u64(9));
        let b = synth_noise_segment(1000, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.len(), 1000);
        assert_eq!(a, b);
    }

    #[test]
    fn noise_mean_differs_from_cp_mean() {
        let noise = synth_noise_segment(100_000, &mut ChaCha8Rng::seed_from_u64(11));
        let (nm, nse) = mean_and_se(&noise);
        let (cm, cse) = mean_and_se(template().waveform());
        let combined = (nse * nse + cse * cse).sqrt();
        assert!((cm - nm).abs() >= 3.0 * combined, "noise {nm}±{nse}, cp {cm}±{cse}");
    }

    #[test]
    fn pure_noise_trace_has_no_cps() {
        let cfg = SynthConfig {
            n_cps: 0,
            noise_only_len: 5000,
            seed: 4,
            ..SynthConfig::default()
        };
        let out = compose_trace(&cfg, &template(), "n").unwrap();
        assert!(out.ground_truth.is_empty());
        assert_eq!(out.trace.len(), 5000);
    }

    #[test]
    fn composed_trace_bookkeeping() {
        let cfg = SynthConfig {
            n_cps: 5,
            seed: 21,
            ..SynthConfig::default()
        };
        let out = compose_trace(&cfg, &template(), "c").unwrap();
        let gt = &out.ground_truth;
        assert_eq!(gt.len(), 5);
        assert!(gt.starts().windows(2).all(|w| w[0] < w[1]));
        for i in 1..gt.len() {
            assert!(gt.starts()[i - 1] + gt.lengths()[i - 1] <= gt.starts()[i]);
        }
        let total: usize = out.noise_gaps.iter().sum::<usize>() + gt.lengths().iter().sum::<usize>();
        assert_eq!(total, out.trace.len());
        for (len, sched) in gt.lengths().iter().zip(&out.schedules) {
            assert_eq!(*len, sched.output_len());
        }
        // Gaps between consecutive CPs are exactly the recorded noise pieces.
        for i in 1..gt.len() {
            assert_eq!(gt.starts()[i] - gt.starts()[i - 1] - gt.lengths()[i - 1], out.noise_gaps[i]);
        }
    }

    #[test]
    fn consecutive_cps_touch() {
        let cfg = SynthConfig {
            n_cps: 4,
            interleave_noise: false,
            seed: 2,
            ..SynthConfig::default()
        };
        let out = compose_trace(&cfg, &template(), "c").unwrap();
        let gt = &out.ground_truth;
        for i in 1..gt.len() {
            assert_eq!(gt.starts()[i - 1] + gt.lengths()[i - 1], gt.starts()[i]);
        }
        assert_eq!(out.noise_gaps.len(), 2);
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = SynthConfig {
            n_cps: 3,
            seed: 77,
            ..SynthConfig::default()
        };
        let a = compose_trace(&cfg, &template(), "x").unwrap();
        let b = compose_trace(&cfg, &template(), "x").unwrap();
        let bits = |t: &Trace| t.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.trace), bits(&b.trace));
        assert_eq!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn disabling_dfs_keeps_noise_activity() {
        let cfg = SynthConfig {
            n_cps: 3,
            seed: 5,
            ..SynthConfig::default()
        };
        let flat = SynthConfig {
            dfs: FrequencyPool::fixed(100e6),
            ..cfg.clone()
        };
        let a = compose_trace(&cfg, &template(), "a").unwrap();
        let b = compose_trace(&flat, &template(), "b").unwrap();
        assert_eq!(a.noise_gaps, b.noise_gaps);
        assert!(b.ground_truth.lengths().iter().all(|&l| l == 4096));
    }

    #[test]
    fn realized_lengths_vary_under_dfs() {
        let t = template();
        let pool = FrequencyPool::from_range(50e6, 100e6, 125e3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lens: Vec<f64> = (0..100)
            .map(|_| apply_dfs(t.waveform(), &pool, 2.0, &mut rng).unwrap().0.len() as f64)
            .collect();
        let (m, _) = mean_and_se(&lens);
        let sd = (lens.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (lens.len() - 1) as f64).sqrt();
        assert!(sd / m >= 0.05, "cv = {}", sd / m);
    }
}
