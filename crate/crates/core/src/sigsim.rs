//! Simulated QPSK emitters with power-amplifier fingerprints.
//!
//! The signal chain for one sample is: random QPSK symbols, root-raised-cosine
//! pulse shaping, a memoryless Saleh power amplifier whose coefficients are
//! specific to the emitting device, and an AWGN channel.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{LabeledSample, SignalDataset};
use crate::error::{Error, Result};
use crate::iq::IqVector;
use crate::rng::{rng_from, Rng};

const STREAM_SAMPLE: u64 = 0x5a11;
const STREAM_SPLIT: u64 = 0x5b17;
const STREAM_PROFILE: u64 = 0x9a0f;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
}

/// Draws `n` unit-energy symbols from the constellation of `modulation`.
pub fn generate_symbols(modulation: Modulation, n: usize, rng: &mut Rng) -> Result<Vec<Complex64>> {
    if n == 0 {
        return Err(Error::config("symbol count must be at least 1"));
    }
    match modulation {
        Modulation::Qpsk => Ok((0..n)
            .map(|_| {
                let bits: u8 = rng.gen_range(0..4);
                let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                Complex64::new(re, im)
            })
            .collect()),
    }
}

/// Hard QPSK decision: nearest constellation point.
pub fn qpsk_decide(z: Complex64) -> Complex64 {
    Complex64::new(FRAC_1_SQRT_2.copysign(z.re), FRAC_1_SQRT_2.copysign(z.im))
}

/// Unnormalized root-raised-cosine impulse response at `t` samples from the
/// center, for a symbol period of `oversample` samples.
pub fn rrc_response(t: f64, rolloff: f64, oversample: usize) -> f64 {
    let period = oversample as f64;
    let b = rolloff;
    let x = t / period;
    let scale = 1.0 / period.sqrt();
    if x.abs() < 1e-12 {
        return scale * (1.0 - b + 4.0 * b / PI);
    }
    let singular = 1.0 / (4.0 * b);
    if (x.abs() - singular).abs() < 1e-9 {
        let arg = PI / (4.0 * b);
        return scale * (b / 2f64.sqrt()) * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos());
    }
    let num = (PI * x * (1.0 - b)).sin() + 4.0 * b * x * (PI * x * (1.0 + b)).cos();
    let den = PI * x * (1.0 - (4.0 * b * x).powi(2));
    scale * num / den
}

/// Unit-energy, odd-length root-raised-cosine taps spanning `span_symbols`.
pub fn rrc_taps(rolloff: f64, span_symbols: usize, oversample: usize) -> Result<Vec<f64>> {
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(Error::config(format!("rolloff must lie in (0, 1], got {rolloff}")));
    }
    if span_symbols < 4 {
        return Err(Error::config("filter span must be at least 4 symbols"));
    }
    if oversample < 2 {
        return Err(Error::config("oversampling factor must be at least 2"));
    }
    let half = (span_symbols * oversample / 2) as i64;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|n| rrc_response(n as f64, rolloff, oversample))
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    Ok(taps)
}

/// Upsamples by zero insertion and filters, trimming the filter transients so
/// the output has exactly `symbols.len() * oversample` samples.
pub fn pulse_shape(symbols: &[Complex64], taps: &[f64], oversample: usize) -> Result<IqVector> {
    if symbols.is_empty() {
        return Err(Error::degenerate("no symbols to shape"));
    }
    if taps.len().is_multiple_of(2) {
        return Err(Error::config("pulse-shaping taps must have odd length"));
    }
    let delay = (taps.len() / 2) as i64;
    let out_len = symbols.len() * oversample;
    let mut out = vec![Complex64::new(0.0, 0.0); out_len];
    for (n, &s) in symbols.iter().enumerate() {
        let start = (n * oversample) as i64 - delay;
        for (j, &h) in taps.iter().enumerate() {
            let m = start + j as i64;
            if m >= 0 && (m as usize) < out_len {
                out[m as usize] += s * h;
            }
        }
    }
    Ok(IqVector::from_vec_unchecked(out))
}

/// Matched-filters `signal` with `taps` and samples at symbol centers.
pub fn matched_filter_symbols(signal: &IqVector, taps: &[f64], oversample: usize) -> Vec<Complex64> {
    let x = signal.samples();
    let delay = (taps.len() / 2) as i64;
    (0..x.len() / oversample)
        .map(|n| {
            let center = (n * oversample) as i64;
            taps.iter()
                .enumerate()
                .filter_map(|(j, &h)| {
                    let m = center - delay + j as i64;
                    (m >= 0 && (m as usize) < x.len()).then(|| x[m as usize] * h)
                })
                .sum()
        })
        .collect()
}

/// Saleh-model power amplifier coefficients of one emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub device_id: u32,
    pub alpha_a: f64,
    pub beta_a: f64,
    pub alpha_p: f64,
    pub beta_p: f64,
}

impl DeviceProfile {
    /// Unit gain, no compression, no phase distortion.
    pub fn linear(device_id: u32) -> Self {
        DeviceProfile {
            device_id,
            alpha_a: 1.0,
            beta_a: 0.0,
            alpha_p: 0.0,
            beta_p: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha_a, self.beta_a, self.alpha_p, self.beta_p]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.beta_a < 0.0 || self.beta_p < 0.0 {
            return Err(Error::config(format!(
                "device {}: PA coefficients must be finite with non-negative denominators",
                self.device_id
            )));
        }
        Ok(())
    }
}

pub const ALPHA_A_RANGE: (f64, f64) = (0.95, 1.05);
pub const BETA_A_RANGE: (f64, f64) = (0.01, 0.10);
pub const ALPHA_P_RANGE: (f64, f64) = (0.0, 0.3);
pub const BETA_P_RANGE: (f64, f64) = (0.5, 1.5);

/// Draws `num_devices` PA profiles.
///
/// Each coefficient is stratified: its range is cut into `num_devices` equal
/// bins, every device lands in a different bin (bins assigned by a seeded
/// permutation) and takes a uniform position inside it. Distinct devices
/// therefore always get distinct coefficient tuples.
pub fn draw_profiles(num_devices: usize, seed: u64) -> Vec<DeviceProfile> {
    let mut rng = rng_from(seed, &[STREAM_PROFILE]);
    let ranges = [ALPHA_A_RANGE, BETA_A_RANGE, ALPHA_P_RANGE, BETA_P_RANGE];
    let mut values = vec![[0.0; 4]; num_devices];
    for (k, &(lo, hi)) in ranges.iter().enumerate() {
        let mut bins: Vec<usize> = (0..num_devices).collect();
        bins.shuffle(&mut rng);
        for (dev, &bin) in bins.iter().enumerate() {
            let u: f64 = rng.gen();
            values[dev][k] = lo + (hi - lo) * (bin as f64 + u) / num_devices as f64;
        }
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| DeviceProfile {
            device_id: i as u32,
            alpha_a: v[0],
            beta_a: v[1],
            alpha_p: v[2],
            beta_p: v[3],
        })
        .collect()
}

/// Memoryless Saleh AM/AM and AM/PM distortion.
pub fn apply_pa(signal: &IqVector, profile: &DeviceProfile) -> IqVector {
    let p = *profile;
    signal.map(|c| {
        let r2 = c.norm_sqr();
        if r2 == 0.0 {
            return c;
        }
        // |c| * gain = alpha_a r / (1 + beta_a r^2)
        let gain = p.alpha_a / (1.0 + p.beta_a * r2);
        let shift = p.alpha_p * r2 / (1.0 + p.beta_p * r2);
        c * gain * Complex64::from_polar(1.0, shift)
    })
}

/// Adds circular white Gaussian noise at `snr_db` relative to the measured
/// mean power of `signal`. An infinite SNR leaves the signal untouched.
pub fn add_awgn(signal: &IqVector, snr_db: f64, rng: &mut Rng) -> Result<IqVector> {
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::config(format!("invalid SNR {snr_db} dB")));
    }
    let power = signal.mean_power();
    if power <= 0.0 {
        return Err(Error::degenerate("cannot calibrate noise against a zero-power signal"));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let noisy = signal
        .samples()
        .iter()
        .map(|&c| {
            let ni: f64 = rng.sample(StandardNormal);
            let nq: f64 = rng.sample(StandardNormal);
            c + Complex64::new(ni, nq) * sigma
        })
        .collect();
    Ok(IqVector::from_vec_unchecked(noisy))
}

/// Empirical SNR in dB of `noisy` against the clean reference.
pub fn measured_snr_db(clean: &IqVector, noisy: &IqVector) -> f64 {
    let signal: f64 = clean.samples().iter().map(|c| c.norm_sqr()).sum();
    let noise: f64 = clean
        .samples()
        .iter()
        .zip(noisy.samples())
        .map(|(a, b)| (b - a).norm_sqr())
        .sum();
    10.0 * (signal / noise).log10()
}

fn default_span() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub num_devices: usize,
    pub samples_per_class: usize,
    pub sample_len: usize,
    pub oversample: usize,
    pub rolloff: f64,
    pub snr_db: f64,
    pub modulation: Modulation,
    pub seed: u64,
    #[serde(default = "default_span")]
    pub span_symbols: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_devices: 10,
            samples_per_class: 10_000,
            sample_len: 1024,
            oversample: 8,
            rolloff: 0.35,
            snr_db: 18.0,
            modulation: Modulation::Qpsk,
            seed: 0,
            span_symbols: 8,
        }
    }
}

impl SimConfig {
    /// Four devices with 2000 samples each; otherwise the defaults.
    pub fn desk() -> Self {
        SimConfig {
            num_devices: 4,
            samples_per_class: 2000,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_devices < 2 {
            return Err(Error::config("at least two devices are required"));
        }
        if self.samples_per_class < 1 {
            return Err(Error::config("samples_per_class must be at least 1"));
        }
        if self.sample_len == 0 || self.oversample == 0 || !self.sample_len.is_multiple_of(self.oversample) {
            return Err(Error::config(format!(
                "sample_len {} must be a positive multiple of oversample {}",
                self.sample_len, self.oversample
            )));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::config("snr_db must be a number"));
        }
        // Validates rolloff, span and oversample.
        rrc_taps(self.rolloff, self.span_symbols, self.oversample)?;
        Ok(())
    }
}

/// Per-class split sizes in the 3:1:1 proportion.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 3 / 5;
    let val = n / 5;
    (train, val, n - train - val)
}

/// Generates sample `index` of the device described by `profile`.
///
/// The shaped waveform is driven at unit average power (gain `sqrt(oversample)`
/// on unit-energy taps) so the PA operates in its nonlinear region.
pub fn generate_sample(config: &SimConfig, profile: &DeviceProfile, taps: &[f64], index: usize) -> Result<IqVector> {
    let mut rng = rng_from(config.seed, &[STREAM_SAMPLE, profile.device_id as u64, index as u64]);
    let n_symbols = config.sample_len / config.oversample;
    let symbols = generate_symbols(config.modulation, n_symbols, &mut rng)?;
    let drive = (config.oversample as f64).sqrt();
    let shaped = pulse_shape(&symbols, taps, config.oversample)?.map(|c| c * drive);
    let amplified = apply_pa(&shaped, profile);
    let noisy = add_awgn(&amplified, config.snr_db, &mut rng)?;
    Ok(noisy.quantize_f32())
}

/// Simulates every device and splits each class 3:1:1 into train/val/test.
///
/// The training split is returned entirely as labeled data; use
/// [`crate::dataio::assign_condition`] to carve out a data condition.
pub fn simulate_dataset(config: &SimConfig, profiles: &[DeviceProfile]) -> Result<SignalDataset> {
    config.validate()?;
    if profiles.len() != config.num_devices {
        return Err(Error::config(format!(
            "expected {} device profiles, got {}",
            config.num_devices,
            profiles.len()
        )));
    }
    for (i, p) in profiles.iter().enumerate() {
        p.validate()?;
        if profiles[..i].iter().any(|q| q.device_id == p.device_id) {
            return Err(Error::config(format!("duplicate device id {}", p.device_id)));
        }
    }
    let taps = rrc_taps(config.rolloff, config.span_symbols, config.oversample)?;
    let (n_train, n_val, _) = split_sizes(config.samples_per_class);

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (class, profile) in profiles.iter().enumerate() {
        let mut order: Vec<usize> = (0..config.samples_per_class).collect();
        order.shuffle(&mut rng_from(config.seed, &[STREAM_SPLIT, profile.device_id as u64]));
        for (rank, &idx) in order.iter().enumerate() {
            let sample = LabeledSample {
                iq: generate_sample(config, profile, &taps, idx)?,
                label: class,
            };
            if rank < n_train {
                train.push(sample);
            } else if rank < n_train + n_val {
                val.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok(SignalDataset {
        labeled: train,
        unlabeled: Vec::new(),
        val,
        test,
        num_classes: config.num_devices,
        sample_len: config.sample_len,
    })
}
