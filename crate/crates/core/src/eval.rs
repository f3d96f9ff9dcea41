//! Location scoring (hits and IoU), classifier confusion matrices, and the
//! matched-filter baseline locator.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::cnn::{batch_from_windows, Model, N_CLASSES};
use crate::dataset::{Split, WindowDataset};
use crate::error::{arg_err, Result};
use crate::locator::CpLocations;
use crate::trace::{GroundTruth, Trace};

/// Overlap ratio of `[pred, pred + len)` and `[gt, gt + len)`.
pub fn iou(pred_start: usize, gt_start: usize, gt_len: usize) -> Result<f64> {
    if gt_len < 1 {
        return arg_err("ground-truth length must be at least 1");
    }
    let d = pred_start.abs_diff(gt_start);
    if d >= gt_len {
        return Ok(0.0);
    }
    Ok((gt_len - d) as f64 / (gt_len + d) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsReport {
    /// Predictions per ground-truth CP; above 1 with false positives.
    pub detection_ratio: f64,
    /// Fraction of ground-truth CPs matched by a prediction within tolerance.
    pub matched_rate: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_cp_iou: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl IoUReport {
    pub fn from_values(per_cp_iou: Vec<f64>) -> Self {
        let n = per_cp_iou.len().max(1) as f64;
        let mean = per_cp_iou.iter().sum::<f64>() / n;
        let var = per_cp_iou.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            per_cp_iou,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Outcome for one ground-truth CP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpMatch {
    pub gt_start: usize,
    pub gt_len: usize,
    pub pred_start: Option<usize>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationScore {
    pub hits: HitsReport,
    pub iou: IoUReport,
    pub matches: Vec<CpMatch>,
}

impl LocationScore {
    /// One row per ground-truth CP.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "cp_index,gt_start,gt_len,pred_start,distance,iou")?;
        for (i, m) in self.matches.iter().enumerate() {
            let (pred, dist) = match m.pred_start {
                Some(p) => (p.to_string(), p.abs_diff(m.gt_start).to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(out, "{i},{},{},{pred},{dist},{}", m.gt_start, m.gt_len, m.iou)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Default matching tolerance: half the mean ground-truth CP length.
pub fn default_tolerance(gt: &GroundTruth) -> Option<f64> {
    gt.mean_length().map(|m| m / 2.0)
}

/// Greedy one-to-one matching by ascending distance (ties: earlier GT, then
/// earlier prediction); pairs further apart than `tolerance` never match.
pub fn match_starts(pred: &[usize], gt: &[usize], tolerance: f64) -> Vec<Option<usize>> {
    let mut sorted_pred: Vec<usize> = pred.to_vec();
    sorted_pred.sort_unstable();
    let mut pairs = Vec::new();
    for (j, &g) in gt.iter().enumerate() {
        let lo = sorted_pred.partition_point(|&p| (p as f64) < g as f64 - tolerance);
        for (i, &p) in sorted_pred.iter().enumerate().skip(lo) {
            if p as f64 > g as f64 + tolerance {
                break;
            }
            pairs.push((p.abs_diff(g), j, i));
        }
    }
    pairs.sort_unstable();
    let mut pred_used = vec![false; sorted_pred.len()];
    let mut out = vec![None; gt.len()];
    for (_, j, i) in pairs {
        if out[j].is_none() && !pred_used[i] {
            out[j] = Some(sorted_pred[i]);
            pred_used[i] = true;
        }
    }
    out
}

/// Hits and IoU of predicted starts against ground truth. `tolerance`
/// defaults to half the mean CP length.
pub fn score_locations(pred: &CpLocations, gt: &GroundTruth, tolerance: Option<f64>) -> Result<LocationScore> {
    if gt.is_empty() {
        return arg_err("ground truth has no CPs to score against");
    }
    let tolerance = match tolerance {
        Some(t) if t >= 0.0 => t,
        Some(t) => return arg_err(format!("tolerance {t} must be non-negative")),
        None => default_tolerance(gt).expect("non-empty ground truth"),
    };
    let matched = match_starts(&pred.starts, gt.starts(), tolerance);
    let mut matches = Vec::with_capacity(gt.len());
    for ((gs, gl), m) in gt.iter().zip(&matched) {
        let value = match m {
            Some(p) => iou(*p, gs, gl)?,
            None => 0.0,
        };
        matches.push(CpMatch {
            gt_start: gs,
            gt_len: gl,
            pred_start: *m,
            iou: value,
        });
    }
    let n = gt.len() as f64;
    let hits = HitsReport {
        detection_ratio: pred.starts.len() as f64 / n,
        matched_rate: matched.iter().filter(|m| m.is_some()).count() as f64 / n,
        tolerance,
    };
    let iou = IoUReport::from_values(matches.iter().map(|m| m.iou).collect());
    Ok(LocationScore { hits, iou, matches })
}

/// Counts indexed `[predicted][true]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut counts = [[0; N_CLASSES]; N_CLASSES];
        for (pred, truth) in pairs {
            counts[pred][truth] += 1;
        }
        Self { counts }
    }

    pub fn true_totals(&self) -> [usize; N_CLASSES] {
        std::array::from_fn(|t| (0..N_CLASSES).map(|p| self.counts[p][t]).sum())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        (0..N_CLASSES).map(|c| self.counts[c][c]).sum::<usize>() as f64 / self.total().max(1) as f64
    }

    /// Percentages of each true class (columns sum to 100).
    pub fn percent_of_true(&self) -> [[f64; N_CLASSES]; N_CLASSES] {
        let totals = self.true_totals();
        std::array::from_fn(|p| std::array::from_fn(|t| pct(self.counts[p][t], totals[t])))
    }

    /// Percentages of each predicted class (rows sum to 100).
    pub fn percent_of_predicted(&self) -> [[f64; N_CLASSES]; N_CLASSES] {
        std::array::from_fn(|p| {
            let row: usize = self.counts[p].iter().sum();
            std::array::from_fn(|t| pct(self.counts[p][t], row))
        })
    }

    /// Share of each true class predicted correctly.
    pub fn per_class_recall(&self) -> [f64; N_CLASSES] {
        let pc = self.percent_of_true();
        std::array::from_fn(|c| pc[c][c] / 100.0)
    }
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// Confusion matrix of `model` on one dataset split.
pub fn confusion_matrix(model: &Model, ds: &WindowDataset, split: Split) -> Result<ConfusionMatrix> {
    let idx = ds.splits.get(split);
    if idx.is_empty() {
        return arg_err("split is empty");
    }
    let mut pairs = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(256) {
        let batch = batch_from_windows(chunk.iter().map(|&i| ds.windows[i].samples.as_slice()), ds.n)?;
        let (pred, _) = model.predict_batch(&batch)?;
        pairs.extend(pred.into_iter().zip(chunk.iter().map(|&i| ds.windows[i].label as usize)));
    }
    Ok(ConfusionMatrix::from_pairs(pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedFilterConfig {
    /// Peaks must exceed this quantile of all correlation values...
    pub threshold_quantile: f64,
    /// ...and this absolute correlation.
    pub min_correlation: f64,
}

impl Default for MatchedFilterConfig {
    fn default() -> Self {
        Self {
            threshold_quantile: 0.9999,
            min_correlation: 0.5,
        }
    }
}

/// Circular cross-correlation of `x` against `t` for every lag `0..=len(x)-len(t)`.
fn cross_correlate(x: &[f64], t: &[f64]) -> Vec<f64> {
    let size = (x.len() + t.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(size);
    let inv: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = t.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v.conj();
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..=x.len() - t.len()].iter().map(|c| c.re * scale).collect()
}

/// Normalized cross-correlation of `template` at every alignment in `trace`
/// (both sides zero-mean and unit-norm per alignment; flat stretches score 0).
pub fn normalized_correlation(trace: &[f32], template: &[f64]) -> Result<Vec<f64>> {
    let m = template.len();
    if m == 0 || m > trace.len() {
        return arg_err(format!(
            "template of {m} samples does not fit a trace of {} samples",
            trace.len()
        ));
    }
    let t_mean = template.iter().sum::<f64>() / m as f64;
    let t0: Vec<f64> = template.iter().map(|v| v - t_mean).collect();
    let t_norm = t0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let x: Vec<f64> = trace.iter().map(|&v| v as f64).collect();
    let mut prefix = vec![0.0; x.len() + 1];
    let mut prefix_sq = vec![0.0; x.len() + 1];
    for (i, &v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let raw = cross_correlate(&x, &t0);
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(lag, dot)| {
            let sum = prefix[lag + m] - prefix[lag];
            let sq = prefix_sq[lag + m] - prefix_sq[lag];
            let energy = (sq - sum * sum / m as f64).max(0.0);
            let denom = energy.sqrt() * t_norm;
            if denom <= 1e-12 * m as f64 {
                0.0
            } else {
                (dot / denom).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

/// Value at quantile `q` of `values` (nearest rank).
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Template-matching baseline: correlation peaks above the threshold, greedily
/// suppressed within one template length of a stronger peak.
pub fn matched_filter_locate(trace: &Trace, template: &[f64], cfg: &MatchedFilterConfig) -> Result<CpLocations> {
    if !(0.0..=1.0).contains(&cfg.threshold_quantile) {
        return arg_err(format!("quantile {} not in [0, 1]", cfg.threshold_quantile));
    }
    let corr = normalized_correlation(trace.samples(), template)?;
    let threshold = quantile(&corr, cfg.threshold_quantile).max(cfg.min_correlation);
    let mut candidates: Vec<usize> = (0..corr.len()).filter(|&i| corr[i] >= threshold).collect();
    candidates.sort_by(|&a, &b| corr[b].total_cmp(&corr[a]).then(a.cmp(&b)));
    let m = template.len();
    let mut kept: std::collections::BTreeSet<usize> = Default::default();
    for c in candidates {
        let clash = kept.range(c.saturating_sub(m - 1)..=c + (m - 1)).next().is_some();
        if !clash {
            kept.insert(c);
        }
    }
    Ok(CpLocations {
        starts: kept.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iou_examples() {
        assert_eq!(iou(5, 5, 10).unwrap(), 1.0);
        assert_eq!(iou(0, 30, 30).unwrap(), 0.0);
        assert_eq!(iou(40, 30, 30).unwrap(), 0.5);
        assert!(iou(0, 0, 0).is_err());
    }

    fn gt(starts: &[usize], len: usize) -> GroundTruth {
        GroundTruth::new(starts.to_vec(), vec![len; starts.len()]).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let starts: Vec<usize> = (0..50).map(|i| 1000 + i * 5000).collect();
        let s = score_locations(&CpLocations { starts: starts.clone() }, &gt(&starts, 4000), None).unwrap();
        assert_eq!(s.hits.detection_ratio, 1.0);
        assert_eq!(s.hits.matched_rate, 1.0);
        assert_eq!(s.iou.mean, 1.0);
        assert_eq!(s.iou.std, 0.0);
        assert_eq!(s.hits.tolerance, 2000.0);
    }

    #[test]
    fn crowded_predictions_match_once() {
        let truth = gt(&[1000, 9000], 4000);
        let pred = CpLocations {
            starts: vec![990, 1000, 1010, 1500],
        };
        let s = score_locations(&pred, &truth, None).unwrap();
        assert_eq!(s.hits.detection_ratio, 2.0);
        assert_eq!(s.hits.matched_rate, 0.5);
        assert_eq!(s.matches[0].pred_start, Some(1000));
        assert_eq!(s.matches[1].pred_start, None);
        assert_eq!(s.iou.per_cp_iou, vec![1.0, 0.0]);
        assert_eq!(s.iou.mean, 0.5);
        assert_eq!(s.iou.std, 0.5);
    }

    #[test]
    fn matching_is_one_to_one_by_distance() {
        // Prediction 150 is closer to GT 200 than to GT 100; 100 takes 60.
        assert_eq!(match_starts(&[60, 150], &[100, 200], 60.0), vec![Some(60), Some(150)]);
        assert_eq!(match_starts(&[150], &[100, 200], 60.0), vec![Some(150), None]);
        assert_eq!(match_starts(&[100], &[100, 100], 0.0), vec![Some(100), None]);
        assert!(score_locations(&CpLocations::default(), &GroundTruth::empty(), None).is_err());
    }

    #[test]
    fn confusion_matrix_normalizations() {
        let cm = ConfusionMatrix::from_pairs([(0, 0), (0, 0), (1, 0), (1, 1), (2, 2), (2, 2)]);
        assert_eq!(cm.true_totals(), [3, 1, 2]);
        assert_eq!(cm.total(), 6);
        let pt = cm.percent_of_true();
        assert!((pt[0][0] - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(pt[1][1], 100.0);
        let pp = cm.percent_of_predicted();
        assert_eq!(pp[1], [50.0, 50.0, 0.0]);
        assert!((cm.accuracy() - 5.0 / 6.0).abs() < 1e-15);
        let constant = ConfusionMatrix::from_pairs([(0, 0), (0, 1), (0, 2)]);
        assert_eq!(constant.counts[1], [0, 0, 0]);
        assert_eq!(constant.counts[2], [0, 0, 0]);
    }

    fn noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn correlation_is_one_at_exact_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tpl: Vec<f64> = (0..64).map(|i| ((i as f64) * 0.4).sin() + 0.01 * i as f64).collect();
        let mut x = noise(300, &mut rng);
        for (i, v) in tpl.iter().enumerate() {
            x[120 + i] = (*v * 3.0 + 2.0) as f32;
        }
        let c = normalized_correlation(&x, &tpl).unwrap();
        assert_eq!(c.len(), 300 - 64 + 1);
        assert!((c[120] - 1.0).abs() < 1e-6);
        let best = (0..c.len()).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap();
        assert_eq!(best, 120);
        let trace = Trace::new("t", x, 1.0).unwrap();
        let loc = matched_filter_locate(&trace, &tpl, &MatchedFilterConfig::default()).unwrap();
        assert_eq!(loc.starts, vec![120]);
    }

    #[test]
    fn correlation_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = noise(200, &mut rng);
        let tpl: Vec<f64> = noise(17, &mut rng).into_iter().map(|v| v as f64).collect();
        let c = normalized_correlation(&x, &tpl).unwrap();
        for lag in [0, 5, 99, 183] {
            let w: Vec<f64> = x[lag..lag + 17].iter().map(|&v| v as f64).collect();
            let wm = w.iter().sum::<f64>() / 17.0;
            let tm = tpl.iter().sum::<f64>() / 17.0;
            let num: f64 = w.iter().zip(&tpl).map(|(a, b)| (a - wm) * (b - tm)).sum();
            let da: f64 = w.iter().map(|a| (a - wm).powi(2)).sum::<f64>().sqrt();
            let db: f64 = tpl.iter().map(|b| (b - tm).powi(2)).sum::<f64>().sqrt();
            assert!((c[lag] - num / (da * db)).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_noise_yields_few_detections() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trace = Trace::new("n", noise(200_000, &mut rng), 1.0).unwrap();
        let tpl: Vec<f64> = (0..256).map(|i| ((i as f64) * 0.3).sin()).collect();
        let loc = matched_filter_locate(&trace, &tpl, &MatchedFilterConfig::default()).unwrap();
        assert!(loc.starts.len() < 2);
    }

    #[test]
    fn template_longer_than_trace() {
        let trace = Trace::new("t", vec![0.0; 10], 1.0).unwrap();
        assert!(matched_filter_locate(&trace, &[1.0; 11], &MatchedFilterConfig::default()).is_err());
    }

    #[test]
    fn csv_rows_per_cp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let s = score_locations(&CpLocations { starts: vec![105] }, &gt(&[100, 900], 30), None).unwrap();
        s.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,100,30,105,5,"));
        assert_eq!(lines[2], "1,900,30,,,0");
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_monotone(a in 0usize..10_000, b in 0usize..10_000, len in 1usize..5000) {
            prop_assert_eq!(iou(a, b, len).unwrap(), iou(b, a, len).unwrap());
            let d = a.abs_diff(b);
            if d < len {
                let closer = iou(b + d, b, len).unwrap();
                let further = iou(b + d + 1, b, len).unwrap();
                prop_assert!(further < closer);
            }
        }

        #[test]
        fn self_score_is_perfect(gaps in prop::collection::vec(500usize..5000, 1..40)) {
            let starts: Vec<usize> = gaps.iter().scan(0, |acc, g| { *acc += g; Some(*acc) }).collect();
            let truth = gt(&starts, 500);
            let s = score_locations(&CpLocations { starts: starts.clone() }, &truth, None).unwrap();
            prop_assert_eq!(s.hits.matched_rate, 1.0);
            prop_assert_eq!(s.iou.std, 0.0);
        }

        #[test]
        fn column_sums_equal_class_totals(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..200)) {
            let cm = ConfusionMatrix::from_pairs(pairs.iter().copied());
            for t in 0..3 {
                let expected = pairs.iter().filter(|p| p.1 == t).count();
                prop_assert_eq!(cm.true_totals()[t], expected);
            }
        }
    }
}
