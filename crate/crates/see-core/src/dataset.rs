//! Dataset loading, segmentation, splitting, hold-last imputation, and
//! synthetic data generation.
//!
//! CSV schema (exact): header `segment_id,t,ch_0,...,ch_{C-1},label`, rows
//! sorted by `(segment_id, t)` with `t` running 0..L-1 inside each segment,
//! label constant per segment, UTF-8, LF line endings, `.` decimal point.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Tensor2;

/// One fixed-length multi-channel window plus its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub segment_id: u64,
    pub data: Tensor2,
    pub label: usize,
}

/// A collection of segments sharing channel count and length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub segments: Vec<Segment>,
    pub class_names: Vec<String>,
    pub channel_names: Vec<String>,
    /// Metadata only; never interpreted.
    pub sample_rate: Option<f64>,
}

impl Dataset {
    pub fn channels(&self) -> usize {
        self.segments.first().map_or(0, |s| s.data.channels())
    }

    pub fn segment_length(&self) -> usize {
        self.segments.first().map_or(0, |s| s.data.length())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Instance count per class; zero-instance classes stay visible.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for s in &self.segments {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Data("dataset has no segments".into()));
        }
        let c = self.channels();
        let l = self.segment_length();
        if self.channel_names.len() != c {
            return Err(Error::Data(format!(
                "{} channel names for {c} channels",
                self.channel_names.len()
            )));
        }
        for s in &self.segments {
            if s.data.channels() != c || s.data.length() != l {
                return Err(Error::Data(format!(
                    "segment {} is {}x{}, dataset is {c}x{l}",
                    s.segment_id,
                    s.data.channels(),
                    s.data.length()
                )));
            }
            if s.label >= self.num_classes() {
                return Err(Error::Data(format!(
                    "segment {} label {} out of range for {} classes",
                    s.segment_id,
                    s.label,
                    self.num_classes()
                )));
            }
        }
        Ok(())
    }
}

// ── CSV I/O ─────────────────────────────────────────────────────────

fn expected_header(channels: usize) -> String {
    let mut h = String::from("segment_id,t");
    for c in 0..channels {
        let _ = write!(h, ",ch_{c}");
    }
    h.push_str(",label");
    h
}

/// Loads a dataset from the documented CSV schema with strict validation.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

/// Parses CSV text; exposed separately so corrupted-input tests need no files.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "segment_id" || cols[1] != "t" || *cols.last().unwrap() != "label" {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be `segment_id,t,ch_0,...,label`, got `{header}`"),
        });
    }
    let channels = cols.len() - 3;
    for (c, col) in cols[2..cols.len() - 1].iter().enumerate() {
        if *col != format!("ch_{c}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("channel column {} must be named ch_{c}, got `{col}`", c + 3),
            });
        }
    }

    struct PendingSegment {
        id: u64,
        label: usize,
        rows: Vec<Vec<f64>>, // per channel
        start_line: usize,
    }

    let mut segments: Vec<Segment> = Vec::new();
    let mut expected_len: Option<usize> = None;
    let mut pending: Option<PendingSegment> = None;
    let mut max_label = 0usize;

    let finish = |p: PendingSegment, line: usize, expected_len: &mut Option<usize>| -> Result<Segment> {
        let len = p.rows[0].len();
        match expected_len {
            None => *expected_len = Some(len),
            Some(l) if *l != len => {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "segment {} has {len} samples, previous segments have {l} (line {} starts it)",
                        p.id, p.start_line
                    ),
                })
            }
            _ => {}
        }
        Ok(Segment {
            segment_id: p.id,
            data: Tensor2::from_rows(&p.rows)?,
            label: p.label,
        })
    };

    let mut last_line = 1usize;
    for (idx, raw) in lines {
        let line = idx + 1; // 1-based
        last_line = line;
        if raw.is_empty() {
            return Err(Error::Parse { line, message: "blank line".into() });
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != channels + 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", channels + 3, fields.len()),
            });
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("bad segment_id `{}`", fields[0]) })?;
        let t: usize = fields[1]
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("bad sample index `{}`", fields[1]) })?;
        let label: usize = fields[channels + 2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("unknown label `{}`", fields[channels + 2]),
        })?;
        let mut values = Vec::with_capacity(channels);
        for (c, f) in fields[2..2 + channels].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("bad value `{f}` in ch_{c}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("non-finite value in ch_{c}") });
            }
            values.push(v);
        }

        match &mut pending {
            Some(p) if p.id == id => {
                if t != p.rows[0].len() {
                    return Err(Error::Parse {
                        line,
                        message: format!("sample index {t} out of order in segment {id} (expected {})", p.rows[0].len()),
                    });
                }
                if label != p.label {
                    return Err(Error::Parse {
                        line,
                        message: format!("label changes inside segment {id} ({} -> {label})", p.label),
                    });
                }
                for (c, v) in values.into_iter().enumerate() {
                    p.rows[c].push(v);
                }
            }
            _ => {
                if let Some(p) = pending.take() {
                    if id <= p.id {
                        return Err(Error::Parse {
                            line,
                            message: format!("segment_id {id} not increasing after {}", p.id),
                        });
                    }
                    segments.push(finish(p, line, &mut expected_len)?);
                }
                if t != 0 {
                    return Err(Error::Parse {
                        line,
                        message: format!("segment {id} must start at t=0, got t={t}"),
                    });
                }
                pending = Some(PendingSegment {
                    id,
                    label,
                    rows: values.into_iter().map(|v| vec![v]).collect(),
                    start_line: line,
                });
            }
        }
        max_label = max_label.max(label);
    }
    if let Some(p) = pending.take() {
        segments.push(finish(p, last_line, &mut expected_len)?);
    }
    if segments.is_empty() {
        return Err(Error::Parse { line: last_line, message: "no data rows".into() });
    }

    Ok(Dataset {
        segments,
        class_names: (0..=max_label).map(|k| format!("class_{k}")).collect(),
        channel_names: (0..channels).map(|c| format!("ch_{c}")).collect(),
        sample_rate: None,
    })
}

/// Writes a dataset in the canonical CSV form; deterministic byte output.
pub fn save_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    fs::write(path, dataset_to_csv(dataset)?)?;
    Ok(())
}

pub fn dataset_to_csv(dataset: &Dataset) -> Result<String> {
    dataset.validate()?;
    let channels = dataset.channels();
    let mut ordered: Vec<&Segment> = dataset.segments.iter().collect();
    ordered.sort_by_key(|s| s.segment_id);
    let mut out = expected_header(channels);
    out.push('\n');
    for seg in ordered {
        for t in 0..seg.data.length() {
            let _ = write!(out, "{},{t}", seg.segment_id);
            for c in 0..channels {
                let _ = write!(out, ",{}", seg.data.at(c, t));
            }
            let _ = writeln!(out, ",{}", seg.label);
        }
    }
    Ok(out)
}

// ── Splitting ───────────────────────────────────────────────────────

/// A stratified train/test partition plus any warnings raised while
/// building it.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub test: Dataset,
    pub warnings: Vec<String>,
}

/// Stratified split: each class contributes `round(train_fraction * n)`
/// segments to the train side (at least one when it has any instance).
/// Deterministic for a fixed seed; the two sides partition the dataset.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    dataset.validate()?;
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Usage(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let mut in_train = vec![false; dataset.segments.len()];

    for class in 0..dataset.num_classes() {
        let mut members: Vec<usize> = dataset
            .segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            warnings.push(format!("class {class} has no instances"));
            continue;
        }
        if members.len() == 1 {
            warnings.push(format!("class {class} has a single instance; assigned to train"));
            in_train[members[0]] = true;
            continue;
        }
        members.shuffle(&mut rng);
        let take = (train_fraction * members.len() as f64).round() as usize;
        for &i in &members[..take.min(members.len())] {
            in_train[i] = true;
        }
    }

    let pick = |keep: bool| Dataset {
        segments: dataset
            .segments
            .iter()
            .enumerate()
            .filter(|(i, _)| in_train[*i] == keep)
            .map(|(_, s)| s.clone())
            .collect(),
        class_names: dataset.class_names.clone(),
        channel_names: dataset.channel_names.clone(),
        sample_rate: dataset.sample_rate,
    };
    Ok(SplitOutcome {
        train: pick(true),
        test: pick(false),
        warnings,
    })
}

// ── Hold-last imputation ────────────────────────────────────────────

/// Keeps the first `floor(fraction * L)` samples and fills the rest of
/// each channel with that channel's last observed value.
pub fn impute_hold_last(segment: &Segment, observed_fraction: f64) -> Result<Segment> {
    let len = segment.data.length();
    let keep = (observed_fraction * len as f64).floor() as usize;
    if !(0.0..=1.0).contains(&observed_fraction) || keep == 0 {
        return Err(Error::Usage(format!(
            "observed fraction {observed_fraction} keeps no samples of a length-{len} segment"
        )));
    }
    let mut data = segment.data.clone();
    for c in 0..data.channels() {
        let hold = data.at(c, keep - 1);
        for t in keep..len {
            *data.at_mut(c, t) = hold;
        }
    }
    Ok(Segment {
        segment_id: segment.segment_id,
        data,
        label: segment.label,
    })
}

// ── Channel normalization ───────────────────────────────────────────

/// Per-channel z-score parameters fitted on a training split and applied
/// identically at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fits per-channel mean and population std over all samples.
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        dataset.validate()?;
        let channels = dataset.channels();
        let mut mean = vec![0.0; channels];
        let mut count = 0usize;
        for s in &dataset.segments {
            for c in 0..channels {
                mean[c] += s.data.channel(c).iter().sum::<f64>();
            }
            count += s.data.length();
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; channels];
        for s in &dataset.segments {
            for c in 0..channels {
                var[c] += s.data.channel(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std = var
            .into_iter()
            .map(|v| (v / count as f64).sqrt().max(1e-9))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply_tensor(&self, data: &Tensor2) -> Tensor2 {
        let mut out = data.clone();
        for c in 0..out.channels() {
            for t in 0..out.length() {
                *out.at_mut(c, t) = (out.at(c, t) - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn apply(&self, dataset: &Dataset) -> Dataset {
        Dataset {
            segments: dataset
                .segments
                .iter()
                .map(|s| Segment {
                    segment_id: s.segment_id,
                    data: self.apply_tensor(&s.data),
                    label: s.label,
                })
                .collect(),
            class_names: dataset.class_names.clone(),
            channel_names: dataset.channel_names.clone(),
            sample_rate: dataset.sample_rate,
        }
    }
}

// ── Synthetic generation ────────────────────────────────────────────

/// Generator spec for the desk-scale synthetic dataset.
///
/// Easy classes carry distinct per-channel constant offsets and are
/// separable from the first samples onward; hard classes share the early
/// window's noise distribution exactly and differ only through a ramp
/// that starts at half the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub easy_class_count: usize,
    pub channels: usize,
    pub segment_length: usize,
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 6,
            easy_class_count: 3,
            channels: 4,
            segment_length: 128,
            n_per_class: 300,
            noise_sigma: 0.3,
            seed: 0,
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.segment_length < 8 {
        return Err(Error::Config(format!(
            "segment length {} too short for the easy/hard construction (need >= 8)",
            spec.segment_length
        )));
    }
    if spec.easy_class_count > spec.num_classes {
        return Err(Error::Config(format!(
            "{} easy classes exceed {} total classes",
            spec.easy_class_count, spec.num_classes
        )));
    }
    if spec.num_classes == 0 || spec.channels == 0 || spec.n_per_class == 0 {
        return Err(Error::Config("class, channel, and per-class counts must be positive".into()));
    }
    if spec.noise_sigma < 0.0 || !spec.noise_sigma.is_finite() {
        return Err(Error::Config("noise sigma must be finite and non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    let l = spec.segment_length;
    let half = l / 2;
    let sign = |c: usize| if c % 2 == 0 { 1.0 } else { -1.0 };

    let mut segments = Vec::with_capacity(spec.num_classes * spec.n_per_class);
    let mut next_id = 0u64;
    for class in 0..spec.num_classes {
        for _ in 0..spec.n_per_class {
            let mut rows = Vec::with_capacity(spec.channels);
            for c in 0..spec.channels {
                let mut row = Vec::with_capacity(l);
                for t in 0..l {
                    let noise: f64 = normal.sample(&mut rng);
                    let mut v = spec.noise_sigma * noise;
                    if class < spec.easy_class_count {
                        // Easy: constant offset over the whole window.
                        v += 1.25 * (class + 1) as f64 * sign(c);
                    } else if t >= half {
                        // Hard: class-specific ramp over the late window.
                        let h = class - spec.easy_class_count;
                        let progress = (t - half + 1) as f64 / (l - half) as f64;
                        v += 1.5 * (h + 1) as f64 * sign(c) * progress;
                    }
                    row.push(v);
                }
                rows.push(row);
            }
            segments.push(Segment {
                segment_id: next_id,
                data: Tensor2::from_rows(&rows)?,
                label: class,
            });
            next_id += 1;
        }
    }

    Ok(Dataset {
        segments,
        class_names: (0..spec.num_classes)
            .map(|k| {
                if k < spec.easy_class_count {
                    format!("easy_{k}")
                } else {
                    format!("hard_{}", k - spec.easy_class_count)
                }
            })
            .collect(),
        channel_names: (0..spec.channels).map(|c| format!("ch_{c}")).collect(),
        sample_rate: None,
    })
}
