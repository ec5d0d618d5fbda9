use num_complex::Complex64;

use crate::error::{Error, Result};

/// A fixed-length complex baseband sample.
///
/// Stored as `Complex64`, whose memory layout is interleaved `(i, q)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct IqVector(Vec<Complex64>);

impl IqVector {
    /// Builds a sample, rejecting empty or non-finite input.
    pub fn new(samples: Vec<Complex64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::degenerate("IQ vector must have at least one sample"));
        }
        if let Some(pos) = samples.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::degenerate(format!("non-finite IQ sample at index {pos}")));
        }
        Ok(IqVector(samples))
    }

    /// Wraps samples already known to be finite and non-empty.
    pub(crate) fn from_vec_unchecked(samples: Vec<Complex64>) -> Self {
        debug_assert!(!samples.is_empty());
        IqVector(samples)
    }

    pub fn from_interleaved(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return Err(Error::shape("interleaved IQ data must have even length"));
        }
        IqVector::new(values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    /// Mean power per complex sample.
    pub fn mean_power(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.0.len() as f64
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> IqVector {
        IqVector(self.0.iter().map(|&c| f(c)).collect())
    }

    /// Rounds every component to the nearest `f32`, the precision used on disk.
    pub fn quantize_f32(&self) -> IqVector {
        self.map(|c| Complex64::new(c.re as f32 as f64, c.im as f32 as f64))
    }

    pub fn max_abs_diff(&self, other: &IqVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl AsRef<[Complex64]> for IqVector {
    fn as_ref(&self) -> &[Complex64] {
        &self.0
    }
}
