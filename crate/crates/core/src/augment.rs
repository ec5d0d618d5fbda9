//! Strong augmentation for complex baseband samples.
//!
//! A composite draw applies one transformation picked uniformly from a
//! configured set (rotations and flips), then a k-segmented stochastic
//! permutation.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iq::IqVector;
use crate::rng::Rng;

/// Multiplies every entry by `e^{j theta}`.
pub fn rotate(sample: &IqVector, theta: f64) -> IqVector {
    let w = Complex64::from_polar(1.0, theta);
    sample.map(|c| c * w)
}

/// `conj(-s)`: mirrors the constellation about the imaginary axis.
pub fn flip_h(sample: &IqVector) -> IqVector {
    sample.map(|c| Complex64::new(-c.re, c.im))
}

/// `conj(s)`: mirrors the constellation about the real axis.
pub fn flip_v(sample: &IqVector) -> IqVector {
    sample.map(|c| c.conj())
}

/// Segment boundaries for splitting `len` samples into `k` contiguous
/// segments. The first `len % k` segments get one extra element.
pub fn segment_bounds(len: usize, k: usize) -> Vec<(usize, usize)> {
    let base = len / k;
    let extra = len % k;
    let mut start = 0;
    (0..k)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let seg = (start, start + size);
            start += size;
            seg
        })
        .collect()
}

/// Re-concatenates the `k` segments of `sample` in the given order.
pub fn apply_segment_order(sample: &IqVector, k: usize, order: &[usize]) -> Result<IqVector> {
    if k == 0 || k > sample.len() {
        return Err(Error::config(format!(
            "segment count {k} must lie in [1, {}]",
            sample.len()
        )));
    }
    let mut seen = vec![false; k];
    if order.len() != k || !order.iter().all(|&i| i < k && !std::mem::replace(&mut seen[i], true)) {
        return Err(Error::config("segment order must be a permutation of 0..k"));
    }
    let bounds = segment_bounds(sample.len(), k);
    let src = sample.samples();
    let out = order
        .iter()
        .flat_map(|&i| src[bounds[i].0..bounds[i].1].iter().copied())
        .collect();
    Ok(IqVector::from_vec_unchecked(out))
}

/// k-segmented stochastic permutation.
pub fn permute_segments(sample: &IqVector, k: usize, rng: &mut Rng) -> Result<IqVector> {
    if k == 0 || k > sample.len() {
        return Err(Error::config(format!(
            "segment count {k} must lie in [1, {}]",
            sample.len()
        )));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    apply_segment_order(sample, k, &order)
}

/// One member of the transformation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// Rotation by the given angle in radians.
    Rotate(f64),
    FlipH,
    FlipV,
}

impl Transform {
    pub fn apply(&self, sample: &IqVector) -> IqVector {
        match *self {
            Transform::Rotate(theta) => rotate(sample, theta),
            Transform::FlipH => flip_h(sample),
            Transform::FlipV => flip_v(sample),
        }
    }

    /// True for a rotation by a multiple of 2*pi.
    pub fn is_identity(&self) -> bool {
        match *self {
            Transform::Rotate(theta) => {
                let r = theta.rem_euclid(2.0 * PI);
                r < 1e-12 || 2.0 * PI - r < 1e-12
            }
            _ => false,
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Transform::Rotate(theta) => {
                let deg = theta.to_degrees();
                if (deg - deg.round()).abs() < 1e-9 {
                    write!(f, "rot{}", deg.round() as i64)
                } else {
                    write!(f, "rot{deg}")
                }
            }
            Transform::FlipH => f.write_str("fliph"),
            Transform::FlipV => f.write_str("flipv"),
        }
    }
}

impl FromStr for Transform {
    type Err = Error;

    /// Accepts `fliph`, `flipv` and `rot<degrees>` (e.g. `rot90`).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fliph" => Ok(Transform::FlipH),
            "flipv" => Ok(Transform::FlipV),
            "rot90" => Ok(Transform::Rotate(FRAC_PI_2)),
            "rot180" => Ok(Transform::Rotate(PI)),
            "rot270" => Ok(Transform::Rotate(3.0 * FRAC_PI_2)),
            _ => {
                let deg: f64 = s
                    .strip_prefix("rot")
                    .and_then(|d| d.parse().ok())
                    .filter(|d: &f64| d.is_finite())
                    .ok_or_else(|| Error::config(format!("unknown transform {s:?}")))?;
                Ok(Transform::Rotate(deg.to_radians()))
            }
        }
    }
}

impl Serialize for Transform {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Transform {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_k() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub transforms: Vec<Transform>,
    #[serde(default = "default_k")]
    pub k_segments: usize,
    #[serde(default)]
    pub exclude_identity: bool,
}

impl Default for AugmentConfig {
    /// Four quarter-turn rotations and a 2-segment permutation.
    fn default() -> Self {
        AugmentConfig {
            transforms: quarter_turns(),
            k_segments: 2,
            exclude_identity: false,
        }
    }
}

fn quarter_turns() -> Vec<Transform> {
    (0..4).map(|i| Transform::Rotate(i as f64 * FRAC_PI_2)).collect()
}

impl AugmentConfig {
    /// Quarter-turn rotations, both flips and a 64-segment permutation.
    pub fn modulation_recognition() -> Self {
        let mut transforms = quarter_turns();
        transforms.extend([Transform::FlipH, Transform::FlipV]);
        AugmentConfig {
            transforms,
            k_segments: 64,
            exclude_identity: false,
        }
    }

    /// The transforms a draw chooses from.
    pub fn effective_transforms(&self) -> Vec<Transform> {
        self.transforms
            .iter()
            .copied()
            .filter(|t| !(self.exclude_identity && t.is_identity()))
            .collect()
    }

    pub fn validate(&self, sample_len: usize) -> Result<()> {
        if self.effective_transforms().is_empty() {
            return Err(Error::config("augmentation has no transforms to draw from"));
        }
        if self.k_segments == 0 || self.k_segments > sample_len {
            return Err(Error::config(format!(
                "k_segments {} must lie in [1, {sample_len}]",
                self.k_segments
            )));
        }
        Ok(())
    }
}

/// One uniformly drawn transform followed by a k-segment permutation.
pub fn composite_augment(sample: &IqVector, config: &AugmentConfig, rng: &mut Rng) -> Result<IqVector> {
    let set = config.effective_transforms();
    if set.is_empty() {
        return Err(Error::config("augmentation has no transforms to draw from"));
    }
    let t = set[rng.gen_range(0..set.len())];
    permute_segments(&t.apply(sample), config.k_segments, rng)
}
