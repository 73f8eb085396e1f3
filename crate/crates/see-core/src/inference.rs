//! Entropy-gated staged inference.
//!
//! For each segment, slices are pulled from a [`SegmentSource`] one exit at
//! a time; as soon as an exit's softmax entropy falls strictly below its
//! threshold the label is returned and no further slices are requested.
//! That request pattern IS the sensor-shutdown contract: the number of
//! slices pulled always equals the index of the exit taken.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Segment};
use crate::error::{Error, Result};
use crate::kernel::{softmax, Tensor2};
use crate::model::{SeeCnnModel, StagedForward};

/// Shannon entropy of a probability vector, natural log, with `0*ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Usage("entropy of an empty vector".into()));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(0.0..=1.0 + 1e-9).contains(&p) {
            return Err(Error::Usage(format!("probability {p} outside [0, 1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Usage(format!("probabilities sum to {sum}, not 1")));
    }
    let mut e = 0.0;
    for &p in probs {
        if p > 0.0 {
            e -= p * p.ln();
        }
    }
    Ok(e)
}

/// Per-early-exit entropy thresholds `T_1..T_{N-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    values: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for &t in &values {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Config(format!("threshold {t} must be finite and >= 0")));
            }
        }
        Ok(Self { values })
    }

    /// The same threshold for every early exit.
    pub fn uniform(t: f64, num_early_exits: usize) -> Result<Self> {
        Self::new(vec![t; num_early_exits])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Outcome of one segment's staged inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub segment_id: u64,
    pub predicted_label: usize,
    pub true_label: Option<usize>,
    /// 1-based index of the exit that returned.
    pub exit_taken: usize,
    pub entropy_at_exit: f64,
    /// Fraction of the window sensed: the spec's `c_n` of the exit taken.
    pub sensed_fraction: f64,
}

impl InferenceTrace {
    pub fn is_correct(&self) -> Option<bool> {
        self.true_label.map(|t| t == self.predicted_label)
    }
}

// ── Segment sources ─────────────────────────────────────────────────

/// Delivers raw data slices on demand, simulating streaming sensors.
pub trait SegmentSource {
    fn segment_id(&self) -> u64;
    fn true_label(&self) -> Option<usize>;
    /// Yields the next contiguous slice. Errors when exhausted.
    fn next_slice(&mut self) -> Result<Tensor2>;
}

/// Slices a fully-buffered segment at fixed boundaries.
pub struct PrefixSliceSource<'a> {
    segment: &'a Segment,
    boundaries: Vec<usize>,
    next: usize,
}

impl<'a> PrefixSliceSource<'a> {
    /// `boundaries[n]` is the exclusive end of the data available at exit
    /// n; the last boundary must equal the segment length.
    pub fn new(segment: &'a Segment, boundaries: &[usize]) -> Result<Self> {
        if boundaries.is_empty() || *boundaries.last().unwrap() != segment.data.length() {
            return Err(Error::Usage(format!(
                "boundaries {boundaries:?} do not cover a length-{} segment",
                segment.data.length()
            )));
        }
        Ok(Self {
            segment,
            boundaries: boundaries.to_vec(),
            next: 0,
        })
    }
}

impl SegmentSource for PrefixSliceSource<'_> {
    fn segment_id(&self) -> u64 {
        self.segment.segment_id
    }

    fn true_label(&self) -> Option<usize> {
        Some(self.segment.label)
    }

    fn next_slice(&mut self) -> Result<Tensor2> {
        if self.next >= self.boundaries.len() {
            return Err(Error::Data(format!(
                "segment {} source exhausted after {} slices",
                self.segment.segment_id,
                self.next
            )));
        }
        let start = if self.next == 0 { 0 } else { self.boundaries[self.next - 1] };
        let end = self.boundaries[self.next];
        self.next += 1;
        self.segment.data.slice_time(start, end)
    }
}

/// Wraps any source and counts how many slices were actually pulled.
pub struct CountingSource<S: SegmentSource> {
    inner: S,
    reads: usize,
}

impl<S: SegmentSource> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, reads: 0 }
    }

    pub fn reads(&self) -> usize {
        self.reads
    }
}

impl<S: SegmentSource> SegmentSource for CountingSource<S> {
    fn segment_id(&self) -> u64 {
        self.inner.segment_id()
    }

    fn true_label(&self) -> Option<usize> {
        self.inner.true_label()
    }

    fn next_slice(&mut self) -> Result<Tensor2> {
        self.reads += 1;
        self.inner.next_slice()
    }
}

// ── Staged classifier abstraction ───────────────────────────────────

/// One in-flight segment evaluation; yields exit probabilities per slice.
pub trait StagedEvaluation {
    fn advance(&mut self, slice: &Tensor2) -> Result<Vec<f64>>;
}

/// Anything that classifies a segment through an ordered chain of exits
/// over growing data prefixes (the SEE CNN, the forest cascade).
pub trait StagedClassifier {
    fn num_exits(&self) -> usize;
    /// Cumulative data fraction `c_n` per exit; terminal is 1.0.
    fn exit_fractions(&self) -> Vec<f64>;
    /// Sample boundary per exit: data available is `[0, boundary[n])`.
    fn slice_boundaries(&self) -> Vec<usize>;
    fn begin_segment(&self) -> Box<dyn StagedEvaluation + '_>;
}

struct CnnEvaluation<'m> {
    run: StagedForward<'m>,
}

impl StagedEvaluation for CnnEvaluation<'_> {
    fn advance(&mut self, slice: &Tensor2) -> Result<Vec<f64>> {
        Ok(softmax(&self.run.advance(slice)?))
    }
}

impl StagedClassifier for SeeCnnModel {
    fn num_exits(&self) -> usize {
        self.spec().num_exits()
    }

    fn exit_fractions(&self) -> Vec<f64> {
        self.spec().exits.iter().map(|e| e.cumulative_data_fraction).collect()
    }

    fn slice_boundaries(&self) -> Vec<usize> {
        self.plan().boundaries.clone()
    }

    fn begin_segment(&self) -> Box<dyn StagedEvaluation + '_> {
        Box::new(CnnEvaluation {
            run: StagedForward::new(self),
        })
    }
}

// ── The gate ────────────────────────────────────────────────────────

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Runs entropy-gated inference for one segment.
///
/// Slices are requested strictly on demand: an exit whose entropy passes
/// its gate ends the loop before any further `next_slice` call, so the
/// source sees exactly `exit_taken` reads. Early exit n returns iff
/// `E < T_n` (strict, so `T = 0` disables the exit); the terminal exit
/// always returns.
pub fn infer_segment<C, S>(classifier: &C, source: &mut S, thresholds: &ThresholdVector) -> Result<InferenceTrace>
where
    C: StagedClassifier + ?Sized,
    S: SegmentSource + ?Sized,
{
    let num_exits = classifier.num_exits();
    if thresholds.len() != num_exits - 1 {
        return Err(Error::Config(format!(
            "{} thresholds for {} early exits",
            thresholds.len(),
            num_exits - 1
        )));
    }
    let fractions = classifier.exit_fractions();
    let mut eval = classifier.begin_segment();
    for n in 0..num_exits {
        let slice = source.next_slice()?;
        let probs = eval.advance(&slice)?;
        let e = entropy(&probs)?;
        let is_terminal = n == num_exits - 1;
        if is_terminal || e < thresholds.values()[n] {
            return Ok(InferenceTrace {
                segment_id: source.segment_id(),
                predicted_label: argmax(&probs),
                true_label: source.true_label(),
                exit_taken: n + 1,
                entropy_at_exit: e,
                sensed_fraction: fractions[n],
            });
        }
    }
    unreachable!("terminal exit always returns");
}

/// Order-preserving inference over a dataset split.
pub fn infer_dataset<C>(classifier: &C, data: &Dataset, thresholds: &ThresholdVector) -> Result<Vec<InferenceTrace>>
where
    C: StagedClassifier + ?Sized,
{
    let boundaries = classifier.slice_boundaries();
    data.segments
        .iter()
        .map(|segment| {
            let mut source = PrefixSliceSource::new(segment, &boundaries)
                .map_err(|e| Error::Data(format!("segment {}: {e}", segment.segment_id)))?;
            infer_segment(classifier, &mut source, thresholds)
                .map_err(|e| Error::Data(format!("segment {}: {e}", segment.segment_id)))
        })
        .collect()
}

// ── Trace log export ────────────────────────────────────────────────

/// One JSON record per segment.
pub fn traces_to_jsonl(traces: &[InferenceTrace]) -> Result<String> {
    let mut out = String::new();
    for t in traces {
        let _ = writeln!(out, "{}", serde_json::to_string(t)?);
    }
    Ok(out)
}

pub fn write_trace_log(path: &Path, traces: &[InferenceTrace]) -> Result<()> {
    fs::write(path, traces_to_jsonl(traces)?)?;
    Ok(())
}

pub fn read_trace_log(path: &Path) -> Result<Vec<InferenceTrace>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::model::{ArchitectureSpec, ConvStageConfig, ExitSpec};
    use crate::trainer::evaluate_exit;

    fn tiny_spec(early: &[(usize, f64)]) -> ArchitectureSpec {
        let mut spec = ArchitectureSpec::default_for(2, 32, 4);
        spec.trunk = vec![
            ConvStageConfig { out_channels: 4, kernel_width: 3, stride: 1, pool_width: 2, pool_stride: 2 },
            ConvStageConfig { out_channels: 6, kernel_width: 3, stride: 1, pool_width: 2, pool_stride: 2 },
        ];
        spec.fc_dims = [16, 4];
        spec.exit_head.conv_filters = 4;
        spec.exit_head.hidden_dim = 8;
        spec.late_input.kernel_width = 3;
        spec.exits = early
            .iter()
            .map(|&(layer, fraction)| ExitSpec {
                attach_after_layer: layer,
                cumulative_data_fraction: fraction,
                entropy_threshold: Some(0.5),
                loss_weight: 1.0,
            })
            .collect();
        spec.exits.push(ExitSpec {
            attach_after_layer: 2,
            cumulative_data_fraction: 1.0,
            entropy_threshold: None,
            loss_weight: 1.0,
        });
        spec
    }

    fn small_dataset(seed: u64, per_class: usize) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            num_classes: 4,
            easy_class_count: 2,
            channels: 2,
            segment_length: 32,
            n_per_class: per_class,
            noise_sigma: 0.3,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn entropy_certainty_is_zero() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_uniform_is_ln_k() {
        let e = entropy(&[0.25; 4]).unwrap();
        assert!((e - 4.0f64.ln()).abs() < 1e-12, "{e}");
    }

    #[test]
    fn entropy_direct_evaluation() {
        let p = [0.7, 0.2, 0.1];
        // independent direct evaluation of -sum p ln p
        let expected = -(0.7 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        let e = entropy(&p).unwrap();
        assert!((e - expected).abs() < 1e-15);
        assert!((e - 0.801819).abs() < 1e-6);
    }

    #[test]
    fn entropy_rejects_unnormalized_input() {
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn zero_thresholds_always_reach_terminal() {
        let model = SeeCnnModel::assemble(tiny_spec(&[(1, 0.5)]), 3).unwrap();
        let data = small_dataset(1, 5);
        let thresholds = ThresholdVector::uniform(0.0, 1).unwrap();
        let traces = infer_dataset(&model, &data, &thresholds).unwrap();
        assert_eq!(traces.len(), data.segments.len());
        for t in &traces {
            assert_eq!(t.exit_taken, 2);
            assert_eq!(t.sensed_fraction, 1.0);
        }
        // Predictions equal the terminal-exit evaluation exactly.
        let acc_traces = traces.iter().filter(|t| t.is_correct() == Some(true)).count() as f64
            / traces.len() as f64;
        let acc_eval = evaluate_exit(&model, &data, 1).unwrap();
        assert_eq!(acc_traces, acc_eval);
    }

    #[test]
    fn maximal_threshold_exits_first() {
        let model = SeeCnnModel::assemble(tiny_spec(&[(1, 0.5)]), 4).unwrap();
        let data = small_dataset(2, 5);
        let thresholds = ThresholdVector::uniform(4.0f64.ln() + 1e-9, 1).unwrap();
        for t in infer_dataset(&model, &data, &thresholds).unwrap() {
            assert_eq!(t.exit_taken, 1);
            assert_eq!(t.sensed_fraction, 0.5);
        }
    }

    #[test]
    fn constructed_certainty_records_zero_entropy() {
        // Exit-1 head rigged to emit logits [1000, 0, 0, 0]: softmax
        // underflows to an exact one-hot, entropy exactly zero.
        let mut model = SeeCnnModel::assemble(tiny_spec(&[(1, 0.5)]), 5).unwrap();
        let head = &mut model.exit_blocks[0];
        head.fc2.weights.iter_mut().for_each(|w| *w = 0.0);
        head.fc2.bias = vec![1000.0, 0.0, 0.0, 0.0];
        let data = small_dataset(3, 2);
        let thresholds = ThresholdVector::uniform(0.1, 1).unwrap();
        for t in infer_dataset(&model, &data, &thresholds).unwrap() {
            assert_eq!(t.exit_taken, 1);
            assert_eq!(t.entropy_at_exit, 0.0);
            assert_eq!(t.predicted_label, 0);
        }
    }

    #[test]
    fn slices_pulled_equals_exit_taken() {
        let model = SeeCnnModel::assemble(tiny_spec(&[(1, 0.5)]), 6).unwrap();
        let data = small_dataset(4, 10);
        let boundaries = model.slice_boundaries();
        // Mid-range threshold so both exits occur.
        let thresholds = ThresholdVector::uniform(0.9, 1).unwrap();
        let mut seen_early = false;
        let mut seen_terminal = false;
        for segment in &data.segments {
            let mut source =
                CountingSource::new(PrefixSliceSource::new(segment, &boundaries).unwrap());
            let trace = infer_segment(&model, &mut source, &thresholds).unwrap();
            assert_eq!(source.reads(), trace.exit_taken);
            match trace.exit_taken {
                1 => seen_early = true,
                2 => seen_terminal = true,
                other => panic!("impossible exit {other}"),
            }
        }
        assert!(seen_early || seen_terminal);
    }

    #[test]
    fn raising_a_threshold_never_delays_a_segment() {
        let model = SeeCnnModel::assemble(tiny_spec(&[(1, 0.5)]), 7).unwrap();
        let data = small_dataset(5, 8);
        let grid = [0.0, 0.2, 0.5, 0.9, 1.2, 4.0f64.ln()];
        let mut prev_mean: Option<f64> = None;
        let mut prev_exits: Option<Vec<usize>> = None;
        for &t in &grid {
            let thresholds = ThresholdVector::uniform(t, 1).unwrap();
            let traces = infer_dataset(&model, &data, &thresholds).unwrap();
            let exits: Vec<usize> = traces.iter().map(|t| t.exit_taken).collect();
            if let Some(prev) = &prev_exits {
                for (now, before) in exits.iter().zip(prev) {
                    assert!(now <= before, "raising T moved an exit later");
                }
            }
            let mean = traces.iter().map(|t| t.sensed_fraction).sum::<f64>() / traces.len() as f64;
            if let Some(p) = prev_mean {
                assert!(mean <= p + 1e-15, "mean sensed fraction increased: {mean} > {p}");
            }
            prev_exits = Some(exits);
            prev_mean = Some(mean);
        }
    }

    #[test]
    fn empty_split_yields_empty_traces() {
        let model = SeeCnnModel::assemble(tiny_spec(&[(1, 0.5)]), 8).unwrap();
        let data = Dataset {
            segments: vec![],
            class_names: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            channel_names: vec!["ch_0".into(), "ch_1".into()],
            sample_rate: None,
        };
        let thresholds = ThresholdVector::uniform(0.5, 1).unwrap();
        assert!(infer_dataset(&model, &data, &thresholds).unwrap().is_empty());
    }

    #[test]
    fn exhausted_source_is_data_error() {
        let data = small_dataset(6, 1);
        let segment = &data.segments[0];
        // Source that covers only the first slice boundary.
        let mut source = PrefixSliceSource::new(segment, &[segment.data.length()]).unwrap();
        source.next_slice().unwrap();
        assert!(matches!(source.next_slice(), Err(Error::Data(_))));
    }

    #[test]
    fn threshold_count_mismatch_is_config_error() {
        let model = SeeCnnModel::assemble(tiny_spec(&[(1, 0.5)]), 10).unwrap();
        let data = small_dataset(7, 1);
        let thresholds = ThresholdVector::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            infer_dataset(&model, &data, &thresholds),
            Err(Error::Data(_)) | Err(Error::Config(_))
        ));
    }

    #[test]
    fn trace_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        let traces = vec![
            InferenceTrace {
                segment_id: 0,
                predicted_label: 2,
                true_label: Some(2),
                exit_taken: 1,
                entropy_at_exit: 0.125,
                sensed_fraction: 0.4,
            },
            InferenceTrace {
                segment_id: 1,
                predicted_label: 0,
                true_label: None,
                exit_taken: 3,
                entropy_at_exit: 1.0625,
                sensed_fraction: 1.0,
            },
        ];
        write_trace_log(&path, &traces).unwrap();
        assert_eq!(read_trace_log(&path).unwrap(), traces);
    }
}
