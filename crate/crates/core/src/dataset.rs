//! Turns cipher traces with ground truth plus a noise trace into a balanced,
//! stratified three-class window dataset, and the `wds-v1` file format.
//!
//! `wds-v1` dataset `<name>`:
//!
//! * `<name>.json`: manifest `{format, n, counts, splits, origins, ...}`,
//! * `<name>.f32`: windows as little-endian `f32`, `n` samples each, manifest order,
//! * `<name>.labels`: one label byte per window.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::format;
use crate::trace::{GroundTruth, LabeledWindow, Trace, WindowLabel, WindowOrigin};

pub const DATASET_FORMAT: &str = "wds-v1";

pub const TRAIN_FRACTION: f64 = 0.8;
pub const VALID_FRACTION: f64 = 0.1;

/// Index lists into [`WindowDataset::windows`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub n: usize,
    pub windows: Vec<LabeledWindow>,
    pub splits: Splits,
}

impl WindowDataset {
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for w in &self.windows {
            counts[w.label as usize] += 1;
        }
        counts
    }

    pub fn split_class_counts(&self, split: Split) -> [usize; 3] {
        let mut counts = [0; 3];
        for &i in self.splits.get(split) {
            counts[self.windows[i].label as usize] += 1;
        }
        counts
    }
}

/// Start window `[cp_start, cp_start + n)` followed by consecutive disjoint
/// spare windows; a trailing partial window is dropped.
pub fn label_cipher_trace(trace: &Trace, cp_start: usize, cp_len: usize, n: usize) -> Result<Vec<LabeledWindow>> {
    if n == 0 {
        return arg_err("window size must be positive");
    }
    if n > cp_len {
        return arg_err(format!("window size {n} exceeds CP length {cp_len}"));
    }
    if cp_start + cp_len > trace.len() {
        return arg_err(format!(
            "CP [{cp_start}, {}) exceeds trace '{}' of length {}",
            cp_start + cp_len,
            trace.id(),
            trace.len()
        ));
    }
    let mut out = vec![LabeledWindow::from_trace(trace, cp_start, n, WindowLabel::Start)?];
    let spares = (cp_len - n) / n;
    for j in 1..=spares {
        out.push(LabeledWindow::from_trace(trace, cp_start + j * n, n, WindowLabel::Spare)?);
    }
    Ok(out)
}

/// `how_many` noise windows at uniform offsets in `[0, L - n]`; may overlap.
pub fn sample_noise_windows<R: Rng + ?Sized>(
    noise: &Trace,
    n: usize,
    how_many: usize,
    rng: &mut R,
) -> Result<Vec<LabeledWindow>> {
    if n == 0 || noise.len() < n {
        return arg_err(format!(
            "noise trace '{}' of length {} is shorter than window size {n}",
            noise.id(),
            noise.len()
        ));
    }
    let max_offset = noise.len() - n;
    (0..how_many)
        .map(|_| {
            let offset = rng.random_range(0..=max_offset);
            LabeledWindow::from_trace(noise, offset, n, WindowLabel::Noise)
        })
        .collect()
}

/// Builds a dataset balanced to the smaller of the Start and Spare classes.
///
/// Larger classes are downsampled uniformly at random, exactly as many noise
/// windows are drawn, and each class is split 80/10/10 before the windows
/// are shuffled together.
pub fn build_dataset<R: Rng + ?Sized>(
    cipher: &[(Trace, GroundTruth)],
    noise: &Trace,
    n: usize,
    rng: &mut R,
) -> Result<WindowDataset> {
    if cipher.iter().all(|(_, gt)| gt.is_empty()) {
        return arg_err("dataset needs at least one CP instance");
    }
    let mut starts = Vec::new();
    let mut spares = Vec::new();
    for (trace, gt) in cipher {
        gt.check_within(trace.len())?;
        for (s, l) in gt.iter() {
            for w in label_cipher_trace(trace, s, l, n)? {
                match w.label {
                    WindowLabel::Start => starts.push(w),
                    _ => spares.push(w),
                }
            }
        }
    }
    let per_class = starts.len().min(spares.len());
    if per_class == 0 {
        return arg_err("CPs are too short to yield both start and spare windows");
    }
    let noises = sample_noise_windows(noise, n, per_class, rng)?;

    let mut classes = [starts, spares, noises];
    for class in classes.iter_mut() {
        class.shuffle(rng);
        class.truncate(per_class);
    }

    let n_train = (per_class as f64 * TRAIN_FRACTION).round() as usize;
    let n_valid = ((per_class as f64 * VALID_FRACTION).round() as usize).min(per_class - n_train);
    let mut tagged: Vec<(Split, LabeledWindow)> = Vec::with_capacity(3 * per_class);
    for class in classes {
        for (i, w) in class.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
            tagged.push((split, w));
        }
    }
    tagged.shuffle(rng);

    let mut splits = Splits::default();
    let mut windows = Vec::with_capacity(tagged.len());
    for (i, (split, w)) in tagged.into_iter().enumerate() {
        match split {
            Split::Train => splits.train.push(i),
            Split::Valid => splits.valid.push(i),
            Split::Test => splits.test.push(i),
        }
        windows.push(w);
    }
    Ok(WindowDataset { n, windows, splits })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassCounts {
    pub start: usize,
    pub spare: usize,
    pub noise: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    n: usize,
    counts: ClassCounts,
    splits: Splits,
    origins: Vec<WindowOrigin>,
    /// Mean ground-truth CP length of the source traces, in samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean_cp_len: Option<f64>,
}

pub fn dataset_paths(base: &Path) -> [PathBuf; 3] {
    [
        format::with_ext(base, "json"),
        format::with_ext(base, "f32"),
        format::with_ext(base, "labels"),
    ]
}

pub fn write_dataset(base: &Path, ds: &WindowDataset, mean_cp_len: Option<f64>) -> Result<Vec<PathBuf>> {
    let [manifest, data, labels] = dataset_paths(base);
    let [start, spare, noise] = ds.class_counts();
    format::write_json(
        &manifest,
        &DatasetManifest {
            format: DATASET_FORMAT.to_owned(),
            n: ds.n,
            counts: ClassCounts { start, spare, noise },
            splits: ds.splits.clone(),
            origins: ds.windows.iter().map(|w| w.origin.clone()).collect(),
            mean_cp_len,
        },
    )?;
    format::write_f32_le(&data, ds.windows.iter().flat_map(|w| w.samples.iter().copied()))?;
    std::fs::write(&labels, ds.windows.iter().map(|w| w.label.code()).collect::<Vec<u8>>())?;
    Ok(vec![manifest, data, labels])
}

/// Reads a dataset and the mean CP length recorded with it.
pub fn read_dataset(base: &Path) -> Result<(WindowDataset, Option<f64>)> {
    let [manifest_path, data_path, labels_path] = dataset_paths(base);
    format::check_format(&manifest_path, DATASET_FORMAT)?;
    let manifest: DatasetManifest = format::read_json(&manifest_path)?;
    let data = format::read_f32_le(&data_path)?;
    let labels = format::read_bytes(&labels_path)?;
    let malformed = |path: &Path, reason: String| Error::Malformed {
        path: path.to_owned(),
        reason,
    };
    let count = labels.len();
    if manifest.n == 0 || data.len() != count * manifest.n {
        return Err(malformed(
            &data_path,
            format!("{} samples for {count} windows of {}", data.len(), manifest.n),
        ));
    }
    if manifest.origins.len() != count {
        return Err(malformed(&manifest_path, "origin count does not match labels".into()));
    }
    let mut windows = Vec::with_capacity(count);
    for ((chunk, &code), origin) in data.chunks_exact(manifest.n).zip(&labels).zip(manifest.origins) {
        let label = WindowLabel::from_code(code).map_err(|e| malformed(&labels_path, e.to_string()))?;
        windows.push(LabeledWindow {
            samples: chunk.to_vec(),
            label,
            origin,
        });
    }
    let mut seen = vec![false; count];
    for &i in manifest
        .splits
        .train
        .iter()
        .chain(&manifest.splits.valid)
        .chain(&manifest.splits.test)
    {
        if i >= count || std::mem::replace(&mut seen[i], true) {
            return Err(malformed(&manifest_path, format!("bad or repeated split index {i}")));
        }
    }
    Ok((
        WindowDataset {
            n: manifest.n,
            windows,
            splits: manifest.splits,
        },
        manifest.mean_cp_len,
    ))
}
