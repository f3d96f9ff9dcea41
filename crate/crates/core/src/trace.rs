//! Waveform and labeling types shared by every stage, plus windowing primitives
//! and the `trc-v1` trace file format.
//!
//! A `trc-v1` trace `<name>` is stored as two files:
//!
//! * `<name>.f32`: raw little-endian IEEE-754 `f32` samples,
//! * `<name>.json`: `{format, sample_rate_hz, id, ground_truth?}`.
//!
//! All offsets are zero-based sample indices.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::format;

pub const TRACE_FORMAT: &str = "trc-v1";

/// Windows whose standard deviation falls below this are mapped to all zeros.
pub const MIN_STD: f64 = 1e-12;

/// A single-channel power waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<f32>,
    sample_rate_hz: f64,
    id: String,
}

impl Trace {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, sample_rate_hz: f64) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return arg_err(format!("trace '{id}' has no samples"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return arg_err(format!("trace '{id}' has a non-finite sample at index {i}"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return arg_err(format!("trace '{id}' has invalid sample rate {sample_rate_hz}"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            id,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Returns `samples[offset..offset + n]`.
    pub fn extract_window(&self, offset: usize, n: usize) -> Result<&[f32]> {
        match offset.checked_add(n) {
            Some(end) if end <= self.samples.len() => Ok(&self.samples[offset..end]),
            _ => Err(Error::Bounds {
                trace_id: self.id.clone(),
                offset,
                len: n,
                trace_len: self.samples.len(),
            }),
        }
    }
}

/// Start index and length of every CP execution in a trace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    cp_starts: Vec<usize>,
    cp_lengths: Vec<usize>,
}

impl GroundTruth {
    pub fn new(cp_starts: Vec<usize>, cp_lengths: Vec<usize>) -> Result<Self> {
        if cp_starts.len() != cp_lengths.len() {
            return arg_err(format!(
                "ground truth has {} starts but {} lengths",
                cp_starts.len(),
                cp_lengths.len()
            ));
        }
        if cp_lengths.iter().any(|&l| l == 0) {
            return arg_err("ground truth CP lengths must be positive");
        }
        for i in 1..cp_starts.len() {
            if cp_starts[i - 1] + cp_lengths[i - 1] > cp_starts[i] {
                return arg_err(format!("CP {} overlaps CP {i}", i - 1));
            }
        }
        Ok(Self {
            cp_starts,
            cp_lengths,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn starts(&self) -> &[usize] {
        &self.cp_starts
    }

    pub fn lengths(&self) -> &[usize] {
        &self.cp_lengths
    }

    pub fn len(&self) -> usize {
        self.cp_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cp_starts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cp_starts.iter().copied().zip(self.cp_lengths.iter().copied())
    }

    pub fn mean_length(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        Some(self.cp_lengths.iter().sum::<usize>() as f64 / self.len() as f64)
    }

    /// Checks that every CP ends inside a trace of `trace_len` samples.
    pub fn check_within(&self, trace_len: usize) -> Result<()> {
        match self.iter().find(|&(s, l)| s + l > trace_len) {
            Some((s, l)) => arg_err(format!(
                "CP [{s}, {}) exceeds trace length {trace_len}",
                s + l
            )),
            None => Ok(()),
        }
    }
}

/// Window class. The integer codes are fixed: screening keys on `Start == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum WindowLabel {
    Start = 0,
    Spare = 1,
    Noise = 2,
}

impl WindowLabel {
    pub const ALL: [WindowLabel; 3] = [WindowLabel::Start, WindowLabel::Spare, WindowLabel::Noise];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(WindowLabel::Start),
            1 => Ok(WindowLabel::Spare),
            2 => Ok(WindowLabel::Noise),
            other => arg_err(format!("invalid window label code {other}")),
        }
    }
}

/// Where a window was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub trace_id: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub samples: Vec<f32>,
    pub label: WindowLabel,
    pub origin: WindowOrigin,
}

impl LabeledWindow {
    pub fn from_trace(trace: &Trace, offset: usize, n: usize, label: WindowLabel) -> Result<Self> {
        Ok(Self {
            samples: trace.extract_window(offset, n)?.to_vec(),
            label,
            origin: WindowOrigin {
                trace_id: trace.id().to_owned(),
                offset,
            },
        })
    }
}

/// Z-scores a window with the population standard deviation.
///
/// Windows with standard deviation below [`MIN_STD`] map to all zeros.
pub fn standardize_window(window: &[f64]) -> Result<Vec<f64>> {
    let mut out = window.to_vec();
    standardize_in_place(&mut out)?;
    Ok(out)
}

pub fn standardize_in_place(window: &mut [f64]) -> Result<()> {
    if window.len() < 2 {
        return arg_err(format!(
            "standardization needs at least 2 samples, got {}",
            window.len()
        ));
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < MIN_STD {
        window.fill(0.0);
    } else {
        for v in window.iter_mut() {
            *v = (*v - mean) / std;
        }
    }
    Ok(())
}

/// Widens an `f32` window and standardizes it into `out`.
pub fn standardize_f32_into(window: &[f32], out: &mut [f64]) -> Result<()> {
    debug_assert_eq!(window.len(), out.len());
    for (o, &v) in out.iter_mut().zip(window) {
        *o = f64::from(v);
    }
    standardize_in_place(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceSidecar {
    format: String,
    sample_rate_hz: f64,
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<GroundTruth>,
}

/// The two file paths of a `trc-v1` trace with base name `base`.
pub fn trace_paths(base: &Path) -> (PathBuf, PathBuf) {
    (format::with_ext(base, "f32"), format::with_ext(base, "json"))
}

pub fn write_trace(base: &Path, trace: &Trace, gt: Option<&GroundTruth>) -> Result<Vec<PathBuf>> {
    let (data, sidecar) = trace_paths(base);
    format::write_f32_le(&data, trace.samples().iter().copied())?;
    format::write_json(
        &sidecar,
        &TraceSidecar {
            format: TRACE_FORMAT.to_owned(),
            sample_rate_hz: trace.sample_rate_hz(),
            id: trace.id().to_owned(),
            ground_truth: gt.cloned(),
        },
    )?;
    Ok(vec![data, sidecar])
}

pub fn read_trace(base: &Path) -> Result<(Trace, Option<GroundTruth>)> {
    let (data, sidecar_path) = trace_paths(base);
    format::check_format(&sidecar_path, TRACE_FORMAT)?;
    let sidecar: TraceSidecar = format::read_json(&sidecar_path)?;
    let samples = format::read_f32_le(&data)?;
    let malformed = |e: Error| Error::Malformed {
        path: data.clone(),
        reason: e.to_string(),
    };
    let trace = Trace::new(sidecar.id, samples, sidecar.sample_rate_hz).map_err(malformed)?;
    if let Some(gt) = &sidecar.ground_truth {
        // Deserialization bypasses the constructor, so re-validate.
        let gt = GroundTruth::new(gt.cp_starts.clone(), gt.cp_lengths.clone())
            .and_then(|g| g.check_within(trace.len()).map(|_| g))
            .map_err(|e| Error::Malformed {
                path: sidecar_path.clone(),
                reason: e.to_string(),
            })?;
        return Ok((trace, Some(gt)));
    }
    Ok((trace, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(samples: Vec<f32>) -> Trace {
        Trace::new("t", samples, 1.0).unwrap()
    }

    #[test]
    fn extract_window_slices() {
        let t = trace(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t.extract_window(1, 3).unwrap(), &[2.0, 3.0, 4.0]);
        assert_eq!(t.extract_window(0, 5).unwrap(), t.samples());
    }

    #[test]
    fn extract_window_out_of_bounds_names_trace() {
        let t = Trace::new("probe-7", vec![0.0; 100], 1.0).unwrap();
        let err = t.extract_window(95, 10).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("probe-7") && msg.contains("95"), "{msg}");
        assert!(t.extract_window(usize::MAX, 2).is_err());
    }

    #[test]
    fn trace_rejects_bad_inputs() {
        assert!(Trace::new("a", vec![], 1.0).is_err());
        assert!(Trace::new("a", vec![f32::NAN], 1.0).is_err());
        assert!(Trace::new("a", vec![1.0], 0.0).is_err());
    }

    #[test]
    fn ground_truth_rejects_overlap() {
        assert!(GroundTruth::new(vec![0, 5], vec![6, 1]).is_err());
        assert!(GroundTruth::new(vec![0, 5], vec![5, 1]).is_ok());
        assert!(GroundTruth::new(vec![0], vec![]).is_err());
        assert!(GroundTruth::new(vec![0], vec![0]).is_err());
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize_window(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(standardize_window(&[0.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(standardize_window(&[1.0]).is_err());
    }

    #[test]
    fn label_codes_are_fixed() {
        assert_eq!(WindowLabel::Start.code(), 0);
        assert_eq!(WindowLabel::Spare.code(), 1);
        assert_eq!(WindowLabel::Noise.code(), 2);
        for l in WindowLabel::ALL {
            assert_eq!(WindowLabel::from_code(l.code()).unwrap(), l);
        }
        assert!(WindowLabel::from_code(3).is_err());
    }

    #[test]
    fn trc_v1_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("cap");
        let t = Trace::new("cap", vec![0.5, -1.25, 3.0, 1e-3], 125e6).unwrap();
        let gt = GroundTruth::new(vec![1], vec![2]).unwrap();
        write_trace(&base, &t, Some(&gt)).unwrap();

        let raw = std::fs::read(format::with_ext(&base, "f32")).unwrap();
        assert_eq!(&raw[4..8], &(-1.25f32).to_le_bytes());

        let (back, back_gt) = read_trace(&base).unwrap();
        assert_eq!(back, t);
        assert_eq!(back_gt.unwrap(), gt);
    }

    #[test]
    fn read_trace_rejects_wrong_format() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("x");
        std::fs::write(format::with_ext(&base, "f32"), [0u8; 8]).unwrap();
        std::fs::write(
            format::with_ext(&base, "json"),
            r#"{"format":"trc-v0","sample_rate_hz":1.0,"id":"x"}"#,
        )
        .unwrap();
        assert!(matches!(read_trace(&base), Err(Error::FormatVersion { .. })));
        assert!(matches!(
            read_trace(&dir.path().join("absent")),
            Err(Error::MissingFile(_))
        ));
    }

    proptest! {
        #[test]
        fn standardized_moments(w in prop::collection::vec(-1e3f64..1e3, 2..300)) {
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assume!(std >= 1e-6);
            let z = standardize_window(&w).unwrap();
            let zm = z.iter().sum::<f64>() / n;
            let zs = (z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(zm.abs() < 1e-9);
            prop_assert!((zs - 1.0).abs() < 1e-6);
        }

        #[test]
        fn standardize_is_idempotent(w in prop::collection::vec(-1e3f64..1e3, 2..300)) {
            let once = standardize_window(&w).unwrap();
            let twice = standardize_window(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn non_overlapping_windows_rebuild_prefix(
            samples in prop::collection::vec(-10f32..10.0, 1..200),
            n in 1usize..20,
        ) {
            let t = trace(samples.clone());
            let count = t.len() / n;
            let mut rebuilt = Vec::new();
            for i in 0..count {
                rebuilt.extend_from_slice(t.extract_window(i * n, n).unwrap());
            }
            prop_assert_eq!(&rebuilt[..], &samples[..count * n]);
        }
    }
}
