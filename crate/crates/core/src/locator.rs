//! Inference: sliding-window classification into a segmentation track, the
//! iterative screening that turns a noisy track into CP start indices, and
//! alignment of the trace on those starts.
//!
//! `loc-v1` locations file: `{format, trace_id, n, s, starts}` as JSON.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::{batch_from_windows, Model};
use crate::error::{arg_err, Error, Result};
use crate::format;
use crate::trace::{Trace, WindowLabel};

pub const LOCATIONS_FORMAT: &str = "loc-v1";

/// Windows classified per model call.
const CLASSIFY_BATCH: usize = 256;

const START: u8 = WindowLabel::Start as u8;

/// Per-window argmax classes at stride `stride`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationTrack {
    pub classes: Vec<u8>,
    pub stride: usize,
    pub n: usize,
    pub trace_id: String,
}

impl SegmentationTrack {
    pub fn new(classes: Vec<u8>, stride: usize, n: usize, trace_id: impl Into<String>) -> Result<Self> {
        if classes.is_empty() {
            return arg_err("segmentation track is empty");
        }
        if let Some(bad) = classes.iter().find(|&&c| c > 2) {
            return arg_err(format!("class code {bad} is not 0, 1 or 2"));
        }
        if stride == 0 || n == 0 {
            return arg_err("stride and window size must be positive");
        }
        Ok(Self {
            classes,
            stride,
            n,
            trace_id: trace_id.into(),
        })
    }

    /// `window_index,offset,class` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "window_index,offset,class")?;
        for (i, c) in self.classes.iter().enumerate() {
            writeln!(out, "{i},{},{c}", i * self.stride)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenConfig {
    /// Initial majority-filter kernel; odd.
    pub k0: usize,
    /// Average CP length in samples.
    pub avg_cp: f64,
    pub stride: usize,
    /// Lower bound on the minimum CP length used while screening. A CP
    /// shorter than one window never yields a start window, so the window
    /// length is a safe floor; it keeps duplicate edges one stride apart from
    /// shrinking the merge radius to nothing. Zero disables the floor.
    pub min_cp_floor: f64,
}

impl ScreenConfig {
    pub fn new(k0: usize, avg_cp: f64, stride: usize) -> Result<Self> {
        let cfg = Self {
            k0,
            avg_cp,
            stride,
            min_cp_floor: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_min_cp_floor(mut self, floor: f64) -> Result<Self> {
        self.min_cp_floor = floor;
        self.validate()?;
        Ok(self)
    }

    fn min_cp(&self, starts: &[usize]) -> f64 {
        refine_min(self.avg_cp, starts).max(self.min_cp_floor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k0 == 0 || self.k0.is_multiple_of(2) {
            return Err(Error::Config(format!("screening kernel {} must be odd and positive", self.k0)));
        }
        if !(self.avg_cp >= 1.0 && self.avg_cp.is_finite()) {
            return Err(Error::Config(format!("average CP length {} must be at least 1", self.avg_cp)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if !(self.min_cp_floor >= 0.0 && self.min_cp_floor <= self.avg_cp) {
            return Err(Error::Config(format!(
                "minimum CP floor {} must lie in [0, average CP length]",
                self.min_cp_floor
            )));
        }
        Ok(())
    }
}

/// Offsets `0, s, 2s, ...` of every full window of length `n`.
pub fn sliding_windows(trace_len: usize, n: usize, s: usize) -> Result<Vec<usize>> {
    if n == 0 || s == 0 {
        return arg_err("window size and stride must be positive");
    }
    if n > trace_len {
        return arg_err(format!("window size {n} exceeds trace length {trace_len}"));
    }
    Ok((0..=(trace_len - n) / s).map(|i| i * s).collect())
}

/// Classifies every sliding window of `trace`.
pub fn classify_track(model: &Model, trace: &Trace, n: usize, s: usize) -> Result<SegmentationTrack> {
    if model.config.input_len != n {
        return Err(Error::Shape {
            layer: "input".into(),
            expected: vec![model.config.input_len],
            actual: vec![n],
        });
    }
    let offsets = sliding_windows(trace.len(), n, s)?;
    let samples = trace.samples();
    let mut classes = Vec::with_capacity(offsets.len());
    for chunk in offsets.chunks(CLASSIFY_BATCH) {
        let batch = batch_from_windows(chunk.iter().map(|&o| &samples[o..o + n]), n)?;
        let (pred, _) = model.predict_batch(&batch)?;
        classes.extend(pred.into_iter().map(|c| c as u8));
    }
    SegmentationTrack::new(classes, s, n, trace.id())
}

/// Centered majority filter of odd width `k`; windows shrink at the edges and
/// ties go to the smallest class.
pub fn majority_filter(seg: &[u8], k: usize) -> Result<Vec<u8>> {
    if k == 0 || k.is_multiple_of(2) {
        return arg_err(format!("majority kernel {k} must be odd and positive"));
    }
    if seg.iter().any(|&c| c > 2) {
        return arg_err("track values must be 0, 1 or 2");
    }
    let h = k / 2;
    let len = seg.len();
    let mut counts = [0usize; 3];
    let mut out = Vec::with_capacity(len);
    // Running counts over [lo, hi).
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..len {
        let want_lo = i.saturating_sub(h);
        let want_hi = (i + h + 1).min(len);
        while hi < want_hi {
            counts[seg[hi] as usize] += 1;
            hi += 1;
        }
        while lo < want_lo {
            counts[seg[lo] as usize] -= 1;
            lo += 1;
        }
        let mut best = 0;
        for c in 1..3 {
            if counts[c] > counts[best] {
                best = c;
            }
        }
        out.push(best as u8);
    }
    Ok(out)
}

/// Falling edges to class 0 (`seg[i] == 0`, `seg[i-1] != 0`), scaled by `s`.
/// A leading run of zeros has no predecessor and is not an edge.
pub fn extract_starts(seg: &[u8], s: usize) -> Vec<usize> {
    (1..seg.len())
        .filter(|&i| seg[i] == START && seg[i - 1] != START)
        .map(|i| i * s)
        .collect()
}

/// Halves the kernel, keeping it odd: 150 -> 75, 5 -> 1, 3 -> 1, 1 -> 0.
pub fn refine_k(k: usize) -> usize {
    let h = k / 2;
    if h > 1 && h.is_multiple_of(2) {
        h - 1
    } else {
        h
    }
}

/// Smallest of `avg_cp` and the consecutive gaps of `starts`.
pub fn refine_min(avg_cp: f64, starts: &[usize]) -> f64 {
    starts
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64)
        .fold(avg_cp, f64::min)
}

/// Window-unit ranges `[a / s, b / s)` between consecutive starts further
/// apart than `2 * min_cp`.
fn gap_ranges(starts: &[usize], s: usize, min_cp: f64) -> Vec<(usize, usize)> {
    starts
        .windows(2)
        .filter(|w| (w[1] - w[0]) as f64 > 2.0 * min_cp)
        .map(|w| (w[0] / s, w[1] / s))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub k: usize,
    pub min_cp: f64,
    /// Sub-segments as window-index ranges into the segment that was refined.
    pub ranges: Vec<(usize, usize)>,
}

/// One refine step on a segment whose starts (sample units, relative to the
/// segment) are `starts`.
pub fn refine(k: usize, avg_cp: f64, starts: &[usize], s: usize) -> Refined {
    let min_cp = refine_min(avg_cp, starts);
    Refined {
        k: refine_k(k),
        min_cp,
        ranges: gap_ranges(starts, s, min_cp),
    }
}

/// Detected CP starts, strictly increasing sample indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpLocations {
    pub starts: Vec<usize>,
}

struct Pending {
    /// Window-index range into the full track.
    lo: usize,
    hi: usize,
    /// Starts bracketing the range, in samples.
    left: usize,
    right: usize,
}

/// Adds `candidate` unless an accepted start lies closer than `radius`;
/// a later accepted start within `radius` is replaced by the earlier candidate.
fn merge_start(accepted: &mut BTreeSet<usize>, candidate: usize, radius: f64) {
    let near = |a: usize| (a.abs_diff(candidate) as f64) < radius;
    if accepted.range(..=candidate).next_back().is_some_and(|&a| near(a)) {
        return;
    }
    let later: Vec<usize> = accepted.range(candidate..).take_while(|&&a| near(a)).copied().collect();
    for a in later {
        accepted.remove(&a);
    }
    accepted.insert(candidate);
}

/// Iterative polish/extract/refine. Every level polishes each queued
/// sub-segment with the current kernel, extracts falling edges, and queues
/// the gaps between consecutive starts that could still hide a CP; the kernel
/// halves between levels and the loop ends when the queue empties or the
/// kernel drops below one.
pub fn screen(seg: &[u8], cfg: &ScreenConfig) -> Result<CpLocations> {
    cfg.validate()?;
    if seg.iter().any(|&c| c > 2) {
        return arg_err("track values must be 0, 1 or 2");
    }
    let s = cfg.stride;
    let mut accepted = BTreeSet::new();
    let mut k = cfg.k0;

    let polished = majority_filter(seg, k)?;
    let first = extract_starts(&polished, s);
    let min_cp = cfg.min_cp(&first);
    for &st in &first {
        merge_start(&mut accepted, st, min_cp / 2.0);
    }
    let mut queue: Vec<Pending> = gap_ranges(&first, s, min_cp)
        .into_iter()
        .map(|(lo, hi)| Pending {
            lo,
            hi,
            left: lo * s,
            right: hi * s,
        })
        .collect();
    k = refine_k(k);

    while !queue.is_empty() && k >= 1 {
        let mut next = Vec::new();
        for p in &queue {
            if p.hi <= p.lo {
                continue;
            }
            let polished = majority_filter(&seg[p.lo..p.hi], k)?;
            let found: Vec<usize> = extract_starts(&polished, s).into_iter().map(|st| st + p.lo * s).collect();
            let mut bracketed = Vec::with_capacity(found.len() + 2);
            bracketed.push(p.left);
            bracketed.extend(found.iter().copied().filter(|&st| st > p.left && st < p.right));
            bracketed.push(p.right);
            let min_cp = cfg.min_cp(&bracketed);
            for &st in &bracketed[1..bracketed.len() - 1] {
                merge_start(&mut accepted, st, min_cp / 2.0);
            }
            for (a, b) in gap_ranges(&bracketed, s, min_cp) {
                // Only strictly smaller ranges are queued, so the loop terminates.
                if (a, b) != (p.lo, p.hi) && b > a {
                    next.push(Pending {
                        lo: a,
                        hi: b,
                        left: a * s,
                        right: b * s,
                    });
                }
            }
        }
        queue = next;
        k = refine_k(k);
    }
    Ok(CpLocations {
        starts: accepted.into_iter().collect(),
    })
}

/// Slices `[start, start + chunk_len)` for each start, zero-padded past the end.
pub fn align(trace: &Trace, locations: &CpLocations, chunk_len: usize) -> Result<Vec<Vec<f32>>> {
    if chunk_len == 0 {
        return arg_err("chunk length must be positive");
    }
    let samples = trace.samples();
    locations
        .starts
        .iter()
        .map(|&st| {
            if st >= samples.len() {
                return Err(Error::Bounds {
                    trace_id: trace.id().to_owned(),
                    offset: st,
                    len: chunk_len,
                    trace_len: samples.len(),
                });
            }
            let end = (st + chunk_len).min(samples.len());
            let mut chunk = samples[st..end].to_vec();
            chunk.resize(chunk_len, 0.0);
            Ok(chunk)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationsFile {
    pub format: String,
    pub trace_id: String,
    pub n: usize,
    pub s: usize,
    pub starts: Vec<usize>,
}

pub fn write_locations(path: &Path, trace_id: &str, n: usize, s: usize, loc: &CpLocations) -> Result<()> {
    format::write_json(
        path,
        &LocationsFile {
            format: LOCATIONS_FORMAT.to_owned(),
            trace_id: trace_id.to_owned(),
            n,
            s,
            starts: loc.starts.clone(),
        },
    )
}

pub fn read_locations(path: &Path) -> Result<LocationsFile> {
    format::check_format(path, LOCATIONS_FORMAT)?;
    let file: LocationsFile = format::read_json(path)?;
    if file.starts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Malformed {
            path: path.to_owned(),
            reason: "starts must be strictly increasing".into(),
        });
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn runs(parts: &[(u8, usize)]) -> Vec<u8> {
        parts.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect()
    }

    #[test]
    fn window_offsets() {
        assert_eq!(sliding_windows(100, 10, 10).unwrap().len(), 10);
        assert_eq!(sliding_windows(10, 10, 3).unwrap(), vec![0]);
        assert_eq!(sliding_windows(25, 10, 5).unwrap(), vec![0, 5, 10, 15]);
        assert!(sliding_windows(9, 10, 1).is_err());
        assert!(sliding_windows(9, 3, 0).is_err());
    }

    #[test]
    fn majority_examples() {
        assert_eq!(majority_filter(&[0, 0, 1, 0, 0], 3).unwrap(), vec![0; 5]);
        assert_eq!(majority_filter(&[2, 2, 2, 0, 0, 0], 3).unwrap(), vec![2, 2, 2, 0, 0, 0]);
        let seg = [1, 2, 0, 2, 1, 1, 0];
        assert_eq!(majority_filter(&seg, 1).unwrap(), seg.to_vec());
        // Two-element edge window [2, 1] ties and resolves to the smaller class.
        assert_eq!(majority_filter(&[2, 1], 3).unwrap(), vec![1, 1]);
        assert!(majority_filter(&seg, 2).is_err());
    }

    #[test]
    fn extract_examples() {
        assert_eq!(extract_starts(&[2, 0, 0, 1, 0], 10), vec![10, 40]);
        assert_eq!(extract_starts(&[0, 0, 0], 10), Vec::<usize>::new());
        assert_eq!(extract_starts(&[1, 0], 62), vec![62]);
    }

    #[test]
    fn kernel_halving() {
        assert_eq!(refine_k(150), 75);
        assert_eq!(refine_k(5), 1);
        assert_eq!(refine_k(9), 3);
        assert_eq!(refine_k(3), 1);
        assert_eq!(refine_k(1), 0);
    }

    #[test]
    fn refine_queues_wide_gaps_only() {
        let r = refine(5, 100.0, &[0, 500], 10);
        assert_eq!(r.min_cp, 100.0);
        assert_eq!(r.ranges, vec![(0, 50)]);
        assert_eq!(r.k, 1);
        let r = refine(5, 100.0, &[0, 100, 200], 10);
        assert!(r.ranges.is_empty());
        let r = refine(5, 300.0, &[0, 100, 1000], 10);
        assert_eq!(r.min_cp, 100.0);
        assert_eq!(r.ranges, vec![(10, 100)]);
    }

    #[test]
    fn clean_track_hand_case() {
        let seg = runs(&[(2, 20), (0, 5), (1, 45), (2, 20), (0, 5), (1, 45), (2, 10)]);
        let cfg = ScreenConfig::new(5, 2500.0, 50).unwrap();
        assert_eq!(screen(&seg, &cfg).unwrap().starts, vec![1000, 4500]);
    }

    #[test]
    fn floor_merges_ragged_start_region() {
        let seg = runs(&[(2, 10), (0, 2), (1, 2), (0, 2), (1, 60), (2, 10)]);
        let cfg = ScreenConfig::new(3, 500.0, 10).unwrap();
        assert_eq!(screen(&seg, &cfg).unwrap().starts, vec![100, 140]);
        let cfg = cfg.with_min_cp_floor(256.0).unwrap();
        assert_eq!(screen(&seg, &cfg).unwrap().starts, vec![100]);
        assert!(cfg.with_min_cp_floor(600.0).is_err());
    }

    #[test]
    fn noise_only_and_blips() {
        let cfg = ScreenConfig::new(3, 100.0, 10).unwrap();
        assert!(screen(&[2; 40], &cfg).unwrap().starts.is_empty());
        let mut seg = vec![2u8; 40];
        seg[17] = 0;
        assert!(screen(&seg, &cfg).unwrap().starts.is_empty());
    }

    #[test]
    fn refinement_recovers_a_cp_hidden_by_the_coarse_kernel() {
        // Second CP has a short start run that a width-9 filter erases,
        // but the gap left behind is wide enough to be revisited.
        let seg = runs(&[
            (2, 10),
            (0, 6),
            (1, 30),
            (2, 4),
            (0, 2),
            (1, 30),
            (2, 4),
            (0, 6),
            (1, 30),
            (2, 10),
        ]);
        let coarse = extract_starts(&majority_filter(&seg, 9).unwrap(), 1);
        assert_eq!(coarse, vec![10, 85]);
        let cfg = ScreenConfig::new(9, 30.0, 1).unwrap();
        assert_eq!(screen(&seg, &cfg).unwrap().starts, vec![10, 50, 85]);
    }

    #[test]
    fn merge_keeps_the_earlier_start() {
        let mut set = BTreeSet::from([100, 500]);
        merge_start(&mut set, 90, 20.0);
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec![90, 500]);
        let mut set = BTreeSet::from([100]);
        merge_start(&mut set, 110, 20.0);
        merge_start(&mut set, 300, 20.0);
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec![100, 300]);
    }

    #[test]
    fn screen_rejects_bad_config() {
        assert!(ScreenConfig::new(4, 10.0, 1).is_err());
        assert!(ScreenConfig::new(3, 0.5, 1).is_err());
        assert!(ScreenConfig::new(3, 10.0, 0).is_err());
    }

    #[test]
    fn align_pads_at_the_end() {
        let t = Trace::new("t", vec![1.0, 2.0, 3.0, 4.0], 1.0).unwrap();
        let whole = align(&t, &CpLocations { starts: vec![0] }, 4).unwrap();
        assert_eq!(whole, vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let chunks = align(&t, &CpLocations { starts: vec![1, 3] }, 3).unwrap();
        assert_eq!(chunks, vec![vec![2.0, 3.0, 4.0], vec![4.0, 0.0, 0.0]]);
        assert!(align(&t, &CpLocations { starts: vec![4] }, 1).is_err());
    }

    #[test]
    fn locations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loc.json");
        let loc = CpLocations { starts: vec![5, 70] };
        write_locations(&path, "t", 256, 64, &loc).unwrap();
        let back = read_locations(&path).unwrap();
        assert_eq!(back.starts, loc.starts);
        assert_eq!((back.n, back.s), (256, 64));
    }

    #[test]
    fn track_csv_has_a_row_per_window() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        SegmentationTrack::new(vec![2, 0, 1], 8, 16, "t").unwrap().write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "window_index,offset,class\n0,0,2\n1,8,0\n2,16,1\n");
        assert!(SegmentationTrack::new(vec![3], 1, 1, "t").is_err());
    }

    /// Tracks that open and close with noise runs at least as long as the kernel.
    fn padded_track() -> impl Strategy<Value = (Vec<u8>, usize)> {
        (prop::sample::select(vec![1usize, 3, 5, 7]), prop::collection::vec(0u8..3, 0..200)).prop_map(|(k, body)| {
            let mut seg = vec![2u8; k];
            seg.extend(body);
            seg.extend(std::iter::repeat_n(2u8, k));
            (seg, k)
        })
    }

    proptest! {
        #[test]
        fn starts_are_increasing_multiples_of_stride(
            (seg, k) in padded_track(), s in 1usize..50, avg in 1.0f64..2000.0
        ) {
            let cfg = ScreenConfig::new(k, avg, s).unwrap();
            let loc = screen(&seg, &cfg).unwrap();
            prop_assert!(loc.starts.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(loc.starts.iter().all(|st| st % s == 0 && st / s < seg.len()));
            prop_assert_eq!(screen(&seg, &cfg).unwrap(), loc);
        }

        #[test]
        fn noise_padding_shifts_starts(
            (seg, k) in padded_track(), pad in 0usize..40, s in 1usize..20, avg in 1.0f64..500.0
        ) {
            let cfg = ScreenConfig::new(k, avg, s).unwrap();
            let mut padded = vec![2u8; pad];
            padded.extend_from_slice(&seg);
            padded.extend(std::iter::repeat_n(2u8, pad));
            let base = screen(&seg, &cfg).unwrap().starts;
            let shifted: Vec<usize> = base.iter().map(|st| st + pad * s).collect();
            prop_assert_eq!(screen(&padded, &cfg).unwrap().starts, shifted);
        }

        #[test]
        fn filtered_track_keeps_length_and_alphabet(seg in prop::collection::vec(0u8..3, 0..100), h in 0usize..6) {
            let out = majority_filter(&seg, 2 * h + 1).unwrap();
            prop_assert_eq!(out.len(), seg.len());
            prop_assert!(out.iter().all(|&c| c <= 2));
        }
    }
}
