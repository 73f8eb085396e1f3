//! Channels-first 2-D tensor over f64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `channels x length` array of f64 values, row-major by channel.
///
/// Holds one multi-channel sensor window (or an intermediate feature map).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    channels: usize,
    length: usize,
    values: Vec<f64>,
}

impl Tensor2 {
    pub fn new(channels: usize, length: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::Shape(format!(
                "tensor dimensions must be positive, got {channels}x{length}"
            )));
        }
        if values.len() != channels * length {
            return Err(Error::Shape(format!(
                "tensor {channels}x{length} needs {} values, got {}",
                channels * length,
                values.len()
            )));
        }
        Ok(Self {
            channels,
            length,
            values,
        })
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Self {
            channels,
            length,
            values: vec![0.0; channels * length],
        }
    }

    /// Builds a tensor from per-channel rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first_len = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::Shape("tensor needs at least one channel".into()))?;
        let mut values = Vec::with_capacity(rows.len() * first_len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != first_len {
                return Err(Error::Shape(format!(
                    "channel {i} has length {}, expected {first_len}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), first_len, values)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn length(&self) -> usize {
        self.length
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, channel: usize, t: usize) -> f64 {
        debug_assert!(channel < self.channels && t < self.length);
        self.values[channel * self.length + t]
    }

    #[inline]
    pub fn at_mut(&mut self, channel: usize, t: usize) -> &mut f64 {
        debug_assert!(channel < self.channels && t < self.length);
        &mut self.values[channel * self.length + t]
    }

    #[inline]
    pub fn channel(&self, channel: usize) -> &[f64] {
        let start = channel * self.length;
        &self.values[start..start + self.length]
    }

    /// Copies the time range `[start, end)` of every channel.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.length {
            return Err(Error::Usage(format!(
                "time slice [{start}, {end}) out of bounds for length {}",
                self.length
            )));
        }
        let mut values = Vec::with_capacity(self.channels * (end - start));
        for c in 0..self.channels {
            values.extend_from_slice(&self.channel(c)[start..end]);
        }
        Self::new(self.channels, end - start, values)
    }

    /// Appends `other` after `self` along the time axis.
    pub fn concat_time(&self, other: &Tensor2) -> Result<Self> {
        if self.channels != other.channels {
            return Err(Error::Shape(format!(
                "cannot concatenate {} channels with {} channels",
                self.channels, other.channels
            )));
        }
        let length = self.length + other.length;
        let mut values = Vec::with_capacity(self.channels * length);
        for c in 0..self.channels {
            values.extend_from_slice(self.channel(c));
            values.extend_from_slice(other.channel(c));
        }
        Self::new(self.channels, length, values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
