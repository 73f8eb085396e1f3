//! Fixed-length feature extraction over window prefixes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Tensor2;

/// How raw prefixes become forest inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    /// Per-channel {mean, std, min, max, first, last}: 6*C features for
    /// any prefix fraction, so every stage shares one schema shape.
    SummaryStats,
    /// The raw prefix flattened channel-major; dimension grows with the
    /// prefix. Kept for comparison runs.
    RawPrefix,
}

/// Which prefix fraction and featurizer produced a forest's inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub fraction: f64,
    pub mode: FeatureMode,
    pub dim: usize,
}

impl FeatureSchema {
    pub fn for_segment(channels: usize, segment_length: usize, fraction: f64, mode: FeatureMode) -> Result<Self> {
        let prefix = prefix_len(segment_length, fraction)?;
        let dim = match mode {
            FeatureMode::SummaryStats => 6 * channels,
            FeatureMode::RawPrefix => channels * prefix,
        };
        Ok(Self { fraction, mode, dim })
    }
}

fn prefix_len(segment_length: usize, fraction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Usage(format!("prefix fraction {fraction} outside (0, 1]")));
    }
    let len = (fraction * segment_length as f64).floor() as usize;
    if len == 0 {
        return Err(Error::Usage(format!(
            "prefix fraction {fraction} keeps no samples of a length-{segment_length} window"
        )));
    }
    Ok(len)
}

/// Extracts features over the first `floor(fraction * L)` samples.
///
/// Summary statistics use the population (biased) standard deviation.
pub fn featurize_prefix(data: &Tensor2, fraction: f64, mode: FeatureMode) -> Result<Vec<f64>> {
    let len = prefix_len(data.length(), fraction)?;
    match mode {
        FeatureMode::RawPrefix => {
            let mut out = Vec::with_capacity(data.channels() * len);
            for c in 0..data.channels() {
                out.extend_from_slice(&data.channel(c)[..len]);
            }
            Ok(out)
        }
        FeatureMode::SummaryStats => {
            let mut out = Vec::with_capacity(6 * data.channels());
            for c in 0..data.channels() {
                let prefix = &data.channel(c)[..len];
                let n = len as f64;
                let mean = prefix.iter().sum::<f64>() / n;
                let var = prefix.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let min = prefix.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = prefix.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                out.extend_from_slice(&[mean, var.sqrt(), min, max, prefix[0], prefix[len - 1]]);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_repeats_its_value() {
        let data = Tensor2::from_rows(&[vec![3.5; 6]]).unwrap();
        let f = featurize_prefix(&data, 1.0, FeatureMode::SummaryStats).unwrap();
        assert_eq!(f, vec![3.5, 0.0, 3.5, 3.5, 3.5, 3.5]);
    }

    #[test]
    fn closed_form_stats_for_three_samples() {
        let data = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let f = featurize_prefix(&data, 1.0, FeatureMode::SummaryStats).unwrap();
        assert_eq!(f[0], 2.0); // mean
        assert!((f[1] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15); // population std
        assert_eq!(&f[2..], &[1.0, 3.0, 1.0, 3.0]);
    }

    #[test]
    fn single_sample_prefix_collapses_to_that_sample() {
        let data = Tensor2::from_rows(&[vec![7.0, 9.0, 11.0, 13.0]]).unwrap();
        let f = featurize_prefix(&data, 0.25, FeatureMode::SummaryStats).unwrap();
        assert_eq!(f, vec![7.0, 0.0, 7.0, 7.0, 7.0, 7.0]);
    }

    #[test]
    fn empty_prefix_is_usage_error() {
        let data = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(featurize_prefix(&data, 0.2, FeatureMode::SummaryStats).is_err());
    }

    #[test]
    fn summary_dim_is_independent_of_fraction() {
        let data = Tensor2::from_rows(&[vec![1.0; 10], vec![2.0; 10]]).unwrap();
        for fraction in [0.2, 0.5, 1.0] {
            let f = featurize_prefix(&data, fraction, FeatureMode::SummaryStats).unwrap();
            assert_eq!(f.len(), 12);
        }
    }

    #[test]
    fn raw_mode_flattens_exactly_the_prefix() {
        let data = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]).unwrap();
        let f = featurize_prefix(&data, 0.5, FeatureMode::RawPrefix).unwrap();
        assert_eq!(f, vec![1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn features_ignore_post_prefix_samples() {
        let a = Tensor2::from_rows(&[vec![1.0, 2.0, 100.0, -50.0]]).unwrap();
        let b = Tensor2::from_rows(&[vec![1.0, 2.0, 0.0, 0.0]]).unwrap();
        for mode in [FeatureMode::SummaryStats, FeatureMode::RawPrefix] {
            assert_eq!(
                featurize_prefix(&a, 0.5, mode).unwrap(),
                featurize_prefix(&b, 0.5, mode).unwrap()
            );
        }
    }
}
