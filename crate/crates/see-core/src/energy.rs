//! Converts inference traces into the headline metrics: sensor energy
//! ratio versus the always-on baseline, exit-usage histograms, accuracy
//! tables, and memory overhead.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{Forest, ForestCascade};
use crate::inference::InferenceTrace;
use crate::model::SeeCnnModel;

/// Relative per-channel sensor power weights (default all 1).
///
/// Sensors stay on for exactly the sensed fraction of the window; with a
/// per-channel weighting the ratio is the weighted mean across channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPowerModel {
    pub channel_weights: Vec<f64>,
}

impl SensorPowerModel {
    pub fn uniform(channels: usize) -> Self {
        Self {
            channel_weights: vec![1.0; channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("channel weights must be finite and >= 0".into()));
        }
        if self.channel_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("channel weights must sum to a positive value".into()));
        }
        Ok(())
    }
}

/// Mean of `values` computed as `x0 + mean(values - x0)`: exact when all
/// entries are equal, which the degenerate-threshold contracts require.
fn shifted_mean(values: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = values.len() as f64;
    let x0 = values.clone().next().expect("non-empty");
    let deviation: f64 = values.map(|v| v - x0).sum();
    x0 + deviation / n
}

/// Ratio of sensor energy consumed versus an always-on baseline.
///
/// Every channel runs until its segment's exit, so each channel's mean
/// sensed fraction is the same value and uniform weights cancel exactly.
pub fn energy_ratio(traces: &[InferenceTrace], power: &SensorPowerModel) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Usage("energy ratio of zero traces".into()));
    }
    power.validate()?;
    let mean_sensed = shifted_mean(traces.iter().map(|t| t.sensed_fraction));
    let first = power.channel_weights[0];
    if power.channel_weights.iter().all(|&w| w == first) {
        // Uniform weights cancel; skipping the arithmetic keeps the
        // all-equal-fractions case exact.
        return Ok(mean_sensed);
    }
    let total: f64 = power.channel_weights.iter().sum();
    let weighted: f64 = power.channel_weights.iter().map(|w| w * mean_sensed).sum();
    Ok(weighted / total)
}

/// Fraction of traces whose prediction matches the true label.
pub fn accuracy_of(traces: &[InferenceTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Usage("accuracy of zero traces".into()));
    }
    let mut correct = 0usize;
    for t in traces {
        match t.is_correct() {
            Some(true) => correct += 1,
            Some(false) => {}
            None => {
                return Err(Error::Usage(format!(
                    "segment {} carries no true label",
                    t.segment_id
                )))
            }
        }
    }
    Ok(correct as f64 / traces.len() as f64)
}

/// Per-class correct fraction; classes with no instances are `None`
/// (absent), not zero.
pub fn per_class_accuracy(traces: &[InferenceTrace], num_classes: usize) -> Result<Vec<Option<f64>>> {
    let mut totals = vec![0usize; num_classes];
    let mut correct = vec![0usize; num_classes];
    for t in traces {
        let label = t.true_label.ok_or_else(|| {
            Error::Usage(format!("segment {} carries no true label", t.segment_id))
        })?;
        if label >= num_classes {
            return Err(Error::Usage(format!(
                "segment {} label {label} out of range for {num_classes} classes",
                t.segment_id
            )));
        }
        totals[label] += 1;
        if t.predicted_label == label {
            correct[label] += 1;
        }
    }
    Ok(totals
        .iter()
        .zip(&correct)
        .map(|(&n, &c)| if n == 0 { None } else { Some(c as f64 / n as f64) })
        .collect())
}

// ── Memory accounting ───────────────────────────────────────────────

/// 64-bit scalars: `count * 8 / 1024` KB.
pub fn kb_from_params(count: usize) -> f64 {
    count as f64 * 8.0 / 1024.0
}

/// 32 bytes per tree node.
pub fn kb_from_nodes(count: usize) -> f64 {
    count as f64 * 32.0 / 1024.0
}

/// A deployable classifier whose storage footprint can be measured.
pub enum Artifact<'a> {
    Cnn(&'a SeeCnnModel),
    Forest(&'a Forest),
    Cascade(&'a ForestCascade),
}

impl Artifact<'_> {
    pub fn memory_kb(&self) -> f64 {
        match self {
            Artifact::Cnn(m) => kb_from_params(m.parameter_count()),
            Artifact::Forest(f) => kb_from_nodes(f.node_count()),
            Artifact::Cascade(c) => kb_from_nodes(c.node_count()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryFigures {
    pub baseline_kb: f64,
    pub see_kb: f64,
}

/// KB figures for a SEE artifact and the baseline it replaces.
pub fn memory_overhead(see: &Artifact, baseline: &Artifact) -> MemoryFigures {
    MemoryFigures {
        baseline_kb: baseline.memory_kb(),
        see_kb: see.memory_kb(),
    }
}

// ── Aggregate report ────────────────────────────────────────────────

/// Aggregate accuracy, energy, exit-usage, per-class, and memory figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub accuracy: f64,
    pub mean_energy_ratio: f64,
    /// Usage count per exit, index 0 = exit 1; sums to the trace count.
    pub per_exit_usage: Vec<usize>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub per_class_counts: Vec<usize>,
    pub memory: MemoryFigures,
    /// Cumulative compute proxy per exit (CNN: multiply-accumulates;
    /// cascade: tree nodes). Exit-block overhead stays outside the energy
    /// model itself.
    pub ops_per_exit: Option<Vec<u64>>,
}

pub fn build_report(
    traces: &[InferenceTrace],
    num_exits: usize,
    num_classes: usize,
    power: &SensorPowerModel,
    memory: MemoryFigures,
    ops_per_exit: Option<Vec<u64>>,
) -> Result<EnergyReport> {
    let mut per_exit_usage = vec![0usize; num_exits];
    for t in traces {
        if t.exit_taken == 0 || t.exit_taken > num_exits {
            return Err(Error::Usage(format!(
                "trace for segment {} has exit {} outside 1..={num_exits}",
                t.segment_id, t.exit_taken
            )));
        }
        per_exit_usage[t.exit_taken - 1] += 1;
    }
    let mut per_class_counts = vec![0usize; num_classes];
    for t in traces {
        if let Some(l) = t.true_label {
            per_class_counts[l] += 1;
        }
    }
    Ok(EnergyReport {
        accuracy: accuracy_of(traces)?,
        mean_energy_ratio: energy_ratio(traces, power)?,
        per_exit_usage,
        per_class_accuracy: per_class_accuracy(traces, num_classes)?,
        per_class_counts,
        memory,
        ops_per_exit,
    })
}

/// Plain-text tables in the shape of the accuracy / energy / memory
/// summaries.
pub fn render_report(report: &EnergyReport, class_names: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "overall accuracy      {:6.2} %", report.accuracy * 100.0);
    let _ = writeln!(out, "mean energy ratio     {:6.4}", report.mean_energy_ratio);
    let _ = writeln!(
        out,
        "memory (KB)           baseline {:.4}   see {:.4}",
        report.memory.baseline_kb, report.memory.see_kb
    );
    let _ = writeln!(out, "\nexit usage");
    for (i, count) in report.per_exit_usage.iter().enumerate() {
        match report.ops_per_exit.as_ref().and_then(|ops| ops.get(i)) {
            Some(ops) => {
                let _ = writeln!(out, "  exit {:<2} {:>8}   (compute to here: {ops} ops)", i + 1, count);
            }
            None => {
                let _ = writeln!(out, "  exit {:<2} {:>8}", i + 1, count);
            }
        }
    }
    let _ = writeln!(out, "\nper-class accuracy (%)");
    for (i, acc) in report.per_class_accuracy.iter().enumerate() {
        let name = class_names.get(i).map(String::as_str).unwrap_or("?");
        match acc {
            Some(a) => {
                let _ = writeln!(out, "  {:<12} {:>6.2}   (n={})", name, a * 100.0, report.per_class_counts[i]);
            }
            None => {
                let _ = writeln!(out, "  {name:<12} absent");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(sensed: f64, exit: usize, pred: usize, label: usize) -> InferenceTrace {
        InferenceTrace {
            segment_id: 0,
            predicted_label: pred,
            true_label: Some(label),
            exit_taken: exit,
            entropy_at_exit: 0.1,
            sensed_fraction: sensed,
        }
    }

    #[test]
    fn all_terminal_traces_give_exactly_one() {
        let traces: Vec<_> = (0..1000).map(|_| trace(1.0, 2, 0, 0)).collect();
        let r = energy_ratio(&traces, &SensorPowerModel::uniform(3)).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn mixed_fractions_average() {
        let traces = vec![trace(0.4, 1, 0, 0), trace(1.0, 2, 0, 0)];
        let r = energy_ratio(&traces, &SensorPowerModel::uniform(1)).unwrap();
        assert!((r - 0.7).abs() < 1e-12);
    }

    #[test]
    fn constant_fraction_is_exact() {
        // 1000 copies of 0.4 must average to exactly 0.4, not 0.4 + eps.
        let traces: Vec<_> = (0..1000).map(|_| trace(0.4, 1, 0, 0)).collect();
        let r = energy_ratio(&traces, &SensorPowerModel::uniform(4)).unwrap();
        assert_eq!(r, 0.4);
    }

    #[test]
    fn empty_traces_is_usage_error() {
        assert!(energy_ratio(&[], &SensorPowerModel::uniform(1)).is_err());
    }

    #[test]
    fn shifted_mean_matches_plain_summation() {
        let traces: Vec<_> = (0..257)
            .map(|i| trace(0.1 + 0.003 * (i % 7) as f64, 1, 0, 0))
            .collect();
        let r = energy_ratio(&traces, &SensorPowerModel::uniform(2)).unwrap();
        let plain: f64 =
            traces.iter().map(|t| t.sensed_fraction).sum::<f64>() / traces.len() as f64;
        assert!((r - plain).abs() < 1e-12);
    }

    #[test]
    fn weighted_power_model_with_identical_fractions() {
        let traces: Vec<_> = (0..10).map(|_| trace(0.5, 1, 0, 0)).collect();
        let power = SensorPowerModel {
            channel_weights: vec![3.0, 1.0],
        };
        let r = energy_ratio(&traces, &power).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_sum_is_rejected() {
        let power = SensorPowerModel { channel_weights: vec![0.0, 0.0] };
        assert!(energy_ratio(&[trace(1.0, 1, 0, 0)], &power).is_err());
    }

    #[test]
    fn per_class_all_correct_is_full_marks() {
        let traces = vec![trace(1.0, 1, 0, 0), trace(1.0, 1, 1, 1)];
        let acc = per_class_accuracy(&traces, 2).unwrap();
        assert_eq!(acc, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn absent_class_is_flagged_not_zero() {
        let traces = vec![trace(1.0, 1, 0, 0)];
        let acc = per_class_accuracy(&traces, 3).unwrap();
        assert_eq!(acc[0], Some(1.0));
        assert_eq!(acc[1], None);
        assert_eq!(acc[2], None);
    }

    #[test]
    fn three_of_four_correct_is_75_percent() {
        let traces = vec![
            trace(1.0, 1, 0, 0),
            trace(1.0, 1, 0, 0),
            trace(1.0, 1, 0, 0),
            trace(1.0, 1, 1, 0),
        ];
        assert_eq!(per_class_accuracy(&traces, 1).unwrap(), vec![Some(0.75)]);
    }

    #[test]
    fn kb_arithmetic() {
        assert_eq!(kb_from_params(1000), 7.8125);
        assert_eq!(kb_from_nodes(32), 1.0);
    }

    #[test]
    fn report_usage_sums_to_trace_count() {
        let traces = vec![
            trace(0.4, 1, 0, 0),
            trace(1.0, 2, 1, 1),
            trace(0.4, 1, 1, 1),
        ];
        let report = build_report(
            &traces,
            2,
            2,
            &SensorPowerModel::uniform(1),
            MemoryFigures { baseline_kb: 1.0, see_kb: 2.0 },
            Some(vec![100, 400]),
        )
        .unwrap();
        assert_eq!(report.per_exit_usage.iter().sum::<usize>(), traces.len());
        assert_eq!(report.per_exit_usage, vec![2, 1]);
        // Accuracy equals trace-level recomputation.
        let manual = traces.iter().filter(|t| t.is_correct() == Some(true)).count() as f64 / 3.0;
        assert_eq!(report.accuracy, manual);
        let rendered = render_report(&report, &["a".into(), "b".into()]);
        assert!(rendered.contains("exit 1"), "{rendered}");
    }
}
