//! Contact transient synthesis.
//!
//! A tap is rendered as a velocity-scaled decaying sinusoid
//! `V(t) = A·v·exp(−B·t)·sin(2π·f·t)`, where `(A, B, f)` are per-material
//! coefficients and `v` is the impact velocity. Rendered buffers are
//! normalized to `[-1, 1]`, saturating at the configured output clamp, and can
//! be quantized to the 12-bit DAC code range.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest code of the 12-bit DAC.
pub const DAC_MAX_CODE: u16 = 4095;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("impact velocity must be finite and non-negative, got {0}")]
    NegativeVelocity(f64),
    #[error("time must be finite and non-negative, got {0}")]
    NegativeTime(f64),
    #[error("invalid material parameters: {0}")]
    InvalidParams(String),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("frequency {frequency} Hz is not below the Nyquist limit of {nyquist} Hz")]
    AboveNyquist { frequency: f64, nyquist: f64 },
    #[error("DAC input {0} outside [-1, 1]")]
    OutOfRange(f64),
    #[error("unknown material `{0}`")]
    UnknownMaterial(String),
}

/// The two cube materials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Rubber,
    Aluminum,
}

impl Material {
    pub const ALL: [Material; 2] = [Material::Rubber, Material::Aluminum];

    /// The material an incongruent trial pairs with this one.
    pub fn other(self) -> Material {
        match self {
            Material::Rubber => Material::Aluminum,
            Material::Aluminum => Material::Rubber,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Material::Rubber => "rubber",
            Material::Aluminum => "aluminum",
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Material {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rubber" => Ok(Material::Rubber),
            "aluminum" | "aluminium" => Ok(Material::Aluminum),
            _ => Err(SignalError::UnknownMaterial(s.to_string())),
        }
    }
}

/// Transient coefficients for one material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub material: Material,
    /// Initial amplitude per unit impact velocity (output units per m/s).
    pub amplitude_coeff: f64,
    /// Exponential decay rate in 1/s.
    pub decay_rate: f64,
    /// Oscillation frequency in Hz.
    pub frequency: f64,
}

impl MaterialParams {
    pub fn new(
        material: Material,
        amplitude_coeff: f64,
        decay_rate: f64,
        frequency: f64,
    ) -> Result<Self, SignalError> {
        let params = Self {
            material,
            amplitude_coeff,
            decay_rate,
            frequency,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.amplitude_coeff.is_finite() && self.amplitude_coeff >= 0.0) {
            return Err(SignalError::InvalidParams(format!(
                "amplitude coefficient must be >= 0, got {}",
                self.amplitude_coeff
            )));
        }
        if !(self.decay_rate.is_finite() && self.decay_rate >= 0.0) {
            return Err(SignalError::InvalidParams(format!(
                "decay rate must be >= 0, got {}",
                self.decay_rate
            )));
        }
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(SignalError::InvalidParams(format!(
                "frequency must be > 0, got {}",
                self.frequency
            )));
        }
        Ok(())
    }

    /// Checks the params against a config, including the Nyquist limit.
    pub fn validate_for(&self, config: &SynthesisConfig) -> Result<(), SignalError> {
        self.validate()?;
        let nyquist = f64::from(config.sample_rate) / 2.0;
        if self.frequency >= nyquist {
            return Err(SignalError::AboveNyquist {
                frequency: self.frequency,
                nyquist,
            });
        }
        Ok(())
    }

    /// Transient length until the envelope falls to `cutoff` of its initial
    /// value. Infinite when the decay rate is zero.
    pub fn decay_time(&self, cutoff: f64) -> f64 {
        if self.decay_rate == 0.0 {
            f64::INFINITY
        } else {
            (1.0 / cutoff).ln() / self.decay_rate
        }
    }
}

/// Rubber and aluminum parameters as loaded from a material file.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTable {
    pub rubber: MaterialParams,
    pub aluminum: MaterialParams,
}

impl MaterialTable {
    /// Built-in values used when no material file is supplied.
    ///
    /// These are PLACEHOLDERS chosen only to be audibly distinct (low, damped
    /// rubber; higher, ringing aluminum). They are not measured constants.
    pub fn placeholder() -> Self {
        Self {
            rubber: MaterialParams {
                material: Material::Rubber,
                amplitude_coeff: 0.6,
                decay_rate: 80.0,
                frequency: 60.0,
            },
            aluminum: MaterialParams {
                material: Material::Aluminum,
                amplitude_coeff: 1.0,
                decay_rate: 25.0,
                frequency: 300.0,
            },
        }
    }

    pub fn get(&self, material: Material) -> &MaterialParams {
        match material {
            Material::Rubber => &self.rubber,
            Material::Aluminum => &self.aluminum,
        }
    }
}

impl Default for MaterialTable {
    fn default() -> Self {
        Self::placeholder()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub sample_rate: u32,
    /// Fraction of the initial envelope at which the transient is cut off.
    pub envelope_cutoff: f64,
    /// Upper bound on transient length in seconds.
    pub max_duration: f64,
    /// Saturation bound on normalized output, in (0, 1].
    pub output_clamp: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            sample_rate: 10_000,
            envelope_cutoff: 0.01,
            max_duration: 1.0,
            output_clamp: 1.0,
        }
    }
}

impl SynthesisConfig {
    pub fn with_sample_rate(mut self, sample_rate: u32) -> Self {
        self.sample_rate = sample_rate;
        self
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.sample_rate == 0 {
            return Err(SignalError::InvalidConfig("sample rate must be > 0".into()));
        }
        if !(self.envelope_cutoff > 0.0 && self.envelope_cutoff < 1.0) {
            return Err(SignalError::InvalidConfig(format!(
                "envelope cutoff must lie in (0, 1), got {}",
                self.envelope_cutoff
            )));
        }
        if !(self.max_duration.is_finite() && self.max_duration > 0.0) {
            return Err(SignalError::InvalidConfig(format!(
                "max duration must be > 0, got {}",
                self.max_duration
            )));
        }
        if !(self.output_clamp > 0.0 && self.output_clamp <= 1.0) {
            return Err(SignalError::InvalidConfig(format!(
                "output clamp must lie in (0, 1], got {}",
                self.output_clamp
            )));
        }
        Ok(())
    }

    /// Number of samples a transient with `params` renders to.
    pub fn transient_len(&self, params: &MaterialParams) -> usize {
        let rate = f64::from(self.sample_rate);
        let cap = (self.max_duration * rate).ceil();
        let decay = params.decay_time(self.envelope_cutoff);
        let n = if decay.is_finite() {
            (decay * rate).ceil().min(cap)
        } else {
            cap
        };
        n as usize
    }
}

/// Normalized samples on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformBuffer {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl WaveformBuffer {
    pub fn empty(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// 12-bit DAC codes for every sample.
    pub fn dac_codes(&self) -> Result<Vec<u16>, SignalError> {
        self.samples.iter().map(|&x| quantize_dac(x)).collect()
    }
}

/// `sin(2π·f·t)` with the phase `f·t` reduced exactly before scaling by 2π,
/// so the result keeps full relative precision even for many cycles.
fn sin_two_pi_product(f: f64, t: f64) -> f64 {
    let hi = f * t;
    let lo = f.mul_add(t, -hi);
    // Nearest half cycle; hi - half is exact.
    let half = (2.0 * hi).round() / 2.0;
    let r = (hi - half) + lo;
    let s = (2.0 * PI * r).sin();
    // sin(2π(n/2 + r)) = (−1)^n · sin(2πr)
    if ((2.0 * half) as i64) % 2 == 0 {
        s
    } else {
        -s
    }
}

/// One unclamped sample of the transient at time `t` seconds after contact.
pub fn synth_sample(params: &MaterialParams, v: f64, t: f64) -> Result<f64, SignalError> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(SignalError::NegativeVelocity(v));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(SignalError::NegativeTime(t));
    }
    Ok(synth_unchecked(params, v, t))
}

#[inline]
fn synth_unchecked(params: &MaterialParams, v: f64, t: f64) -> f64 {
    params.amplitude_coeff * v * (-params.decay_rate * t).exp() * sin_two_pi_product(params.frequency, t)
}

/// Renders the transient for an impact at `v` m/s.
///
/// Sample `k` is taken at `t = k / sample_rate`. The buffer stops when the
/// envelope has decayed to `envelope_cutoff` of its start value or at
/// `max_duration`, whichever is first. A zero velocity renders nothing.
pub fn render_transient(
    params: &MaterialParams,
    v: f64,
    config: &SynthesisConfig,
) -> Result<WaveformBuffer, SignalError> {
    config.validate()?;
    params.validate_for(config)?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(SignalError::NegativeVelocity(v));
    }
    if v == 0.0 {
        return Ok(WaveformBuffer::empty(config.sample_rate));
    }

    let rate = f64::from(config.sample_rate);
    let clamp = config.output_clamp;
    let samples = (0..config.transient_len(params))
        .map(|k| synth_unchecked(params, v, k as f64 / rate).clamp(-clamp, clamp))
        .collect();
    Ok(WaveformBuffer {
        sample_rate: config.sample_rate,
        samples,
    })
}

/// Maps a normalized amplitude onto the 12-bit DAC range, rounding half
/// away from zero.
pub fn quantize_dac(x: f64) -> Result<u16, SignalError> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(SignalError::OutOfRange(x));
    }
    Ok(((x + 1.0) / 2.0 * f64::from(DAC_MAX_CODE)).round() as u16)
}

/// Inverse of [`quantize_dac`] at code centers.
pub fn dequantize_dac(code: u16) -> f64 {
    2.0 * f64::from(code.min(DAC_MAX_CODE)) / f64::from(DAC_MAX_CODE) - 1.0
}

/// Seeded white noise, i.i.d. uniform on `[-amplitude, amplitude]`.
pub fn gen_masking_noise(
    seed: u64,
    n: usize,
    amplitude: f64,
    sample_rate: u32,
) -> Result<WaveformBuffer, SignalError> {
    if !(0.0..=1.0).contains(&amplitude) {
        return Err(SignalError::OutOfRange(amplitude));
    }
    if amplitude == 0.0 {
        return Ok(WaveformBuffer {
            sample_rate,
            samples: vec![0.0; n],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| rng.random_range(-amplitude..=amplitude))
        .collect();
    Ok(WaveformBuffer {
        sample_rate,
        samples,
    })
}
