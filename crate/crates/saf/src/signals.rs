//! Excitation and plant data: seeded signal generators, WAV audio I/O,
//! synthetic echo paths and SNR-calibrated background noise.
//!
//! Every generator is a pure function of its seed and parameters, so any two
//! calls with the same arguments produce bit-identical buffers.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textio;

/// Errors from signal generation and audio I/O.
#[derive(Debug, Error)]
pub enum SignalError {
    #[error("AR pole magnitude {0} is not strictly inside the unit circle")]
    UnstablePole(f64),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("echo signal has zero power; cannot calibrate noise for an SNR")]
    ZeroPower,
    #[error("shift {shift} out of range for a path of {len} taps")]
    ShiftOutOfRange { shift: usize, len: usize },
    #[error("echo path length {0} is below the minimum of 64 taps")]
    PathTooShort(usize),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// A mono sample buffer with an informational sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub label: String,
}

impl SignalBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64, label: impl Into<String>) -> Self {
        SignalBuffer {
            samples,
            sample_rate,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean-square power of the buffer.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }
}

/// Echo-path structure: a handful of dominant taps, or energy spread
/// across the whole support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Sparse,
    Dispersive,
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathKind::Sparse => write!(f, "sparse"),
            PathKind::Dispersive => write!(f, "dispersive"),
        }
    }
}

/// The unknown impulse response the adaptive filter identifies.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoPath {
    pub coeffs: Vec<f64>,
    pub kind: PathKind,
    /// Nominal number of significant taps; only meaningful for sparse paths.
    pub active_taps: usize,
}

impl EchoPath {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Squared l2-norm of the impulse response.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// Number of taps whose magnitude exceeds the given fraction of the peak.
    pub fn taps_above(&self, fraction_of_peak: f64) -> usize {
        let peak = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let thresh = fraction_of_peak * peak;
        self.coeffs.iter().filter(|c| c.abs() > thresh).count()
    }

    /// Export as plain text, one coefficient per line.
    pub fn export(&self, path: &Path) -> Result<(), SignalError> {
        textio::write_column(path, &self.coeffs)?;
        Ok(())
    }

    /// Import coefficients written by [`EchoPath::export`].
    pub fn import(path: &Path, kind: PathKind) -> Result<EchoPath, SignalError> {
        let coeffs = textio::read_column(path)?;
        let active_taps = coeffs.len();
        Ok(EchoPath {
            coeffs,
            kind,
            active_taps,
        })
    }
}

/// Background-noise description: variance and generator seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn generate(&self, length: usize) -> SignalBuffer {
        gen_wgn(self.seed, length, self.variance)
    }
}

/// First-order autoregressive signal with unit-variance Gaussian innovations:
/// `x(n) = pole * x(n-1) + g(n)`, `x(-1) = 0`.
pub fn gen_ar1(seed: u64, length: usize, pole: f64) -> Result<SignalBuffer, SignalError> {
    if !(pole.abs() < 1.0) {
        return Err(SignalError::UnstablePole(pole));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(length);
    let mut prev = 0.0;
    for _ in 0..length {
        let g: f64 = StandardNormal.sample(&mut rng);
        prev = pole * prev + g;
        samples.push(prev);
    }
    Ok(SignalBuffer::new(samples, 1.0, format!("ar1(pole={pole})")))
}

/// Zero-mean white Gaussian noise with the given variance.
pub fn gen_wgn(seed: u64, length: usize, variance: f64) -> SignalBuffer {
    let mut samples = vec![0.0; length];
    if variance > 0.0 {
        let std_dev = variance.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in samples.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *s = std_dev * g;
        }
    }
    SignalBuffer::new(samples, 1.0, format!("wgn(var={variance})"))
}

/// Synthetic stand-in for a speech recording: an 8th-order all-pole process
/// with formant-like resonances, amplitude-modulated by a slow syllabic
/// envelope that includes near-silent gaps. Normalized to unit RMS.
pub fn gen_speechlike(seed: u64, length: usize) -> SignalBuffer {
    const RATE: f64 = 8000.0;
    // Resonators near typical formant frequencies (Hz) at 8 kHz.
    const FORMANTS: [(f64, f64); 4] = [(500.0, 0.97), (1200.0, 0.95), (2400.0, 0.92), (3400.0, 0.90)];
    // Expand the cascade of 2nd-order sections into AR(8) coefficients.
    let mut a = vec![1.0f64];
    for &(freq, r) in &FORMANTS {
        let theta = 2.0 * std::f64::consts::PI * freq / RATE;
        let (b1, b2) = (-2.0 * r * theta.cos(), r * r);
        let mut next = vec![0.0; a.len() + 2];
        for (j, &aj) in a.iter().enumerate() {
            next[j] += aj;
            next[j + 1] += aj * b1;
            next[j + 2] += aj * b2;
        }
        a = next;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = a.len() - 1;
    let mut state = vec![0.0f64; order];
    let mut samples = Vec::with_capacity(length);
    for n in 0..length {
        let g: f64 = StandardNormal.sample(&mut rng);
        let mut x = g;
        for (j, s) in state.iter().enumerate() {
            x -= a[j + 1] * s;
        }
        state.rotate_right(1);
        state[0] = x;
        // Syllabic on/off envelope at roughly 3 Hz with soft gaps.
        let phase = 2.0 * std::f64::consts::PI * 3.1 * n as f64 / RATE;
        let env = phase.sin().max(0.0).powf(1.5) + 0.05;
        samples.push(x * env);
    }
    let rms = (samples.iter().map(|x| x * x).sum::<f64>() / length.max(1) as f64).sqrt();
    if rms > 0.0 {
        for s in samples.iter_mut() {
            *s /= rms;
        }
    }
    SignalBuffer::new(samples, RATE, "speechlike")
}

// ---------------------------------------------------------------------------
// WAV I/O: RIFF/WAVE, PCM format code 1, 16-bit, mono.
// ---------------------------------------------------------------------------

fn read_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

fn read_u16(buf: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([buf[at], buf[at + 1]])
}

/// Load a 16-bit PCM mono WAV file, scaling samples to `[-1.0, 1.0)`.
pub fn load_audio(path: &Path) -> Result<SignalBuffer, SignalError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(SignalError::UnsupportedFormat(
            "missing RIFF/WAVE header".into(),
        ));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(&bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(SignalError::UnsupportedFormat("truncated chunk".into()));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(SignalError::UnsupportedFormat("short fmt chunk".into()));
                }
                let format_code = read_u16(&bytes, body_start);
                let channels = read_u16(&bytes, body_start + 2);
                let rate = read_u32(&bytes, body_start + 4);
                let bits = read_u16(&bytes, body_start + 14);
                if format_code != 1 {
                    return Err(SignalError::UnsupportedFormat(format!(
                        "PCM format code 1 required, found {format_code}"
                    )));
                }
                if channels != 1 {
                    return Err(SignalError::UnsupportedFormat(format!(
                        "mono required, found {channels} channels"
                    )));
                }
                if bits != 16 {
                    return Err(SignalError::UnsupportedFormat(format!(
                        "16-bit samples required, found {bits}"
                    )));
                }
                sample_rate = Some(rate as f64);
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {} // skip LIST, fact, etc.
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }
    let sample_rate =
        sample_rate.ok_or_else(|| SignalError::UnsupportedFormat("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| SignalError::UnsupportedFormat("missing data chunk".into()))?;
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(SignalBuffer::new(samples, sample_rate, "wav"))
}

/// Write a 16-bit PCM mono WAV file. Samples are scaled by 32768, rounded
/// and clamped; a buffer produced by [`load_audio`] round-trips bit-exactly.
pub fn save_audio(path: &Path, buffer: &SignalBuffer) -> Result<(), SignalError> {
    let n = buffer.samples.len();
    let data_size = (n * 2) as u32;
    let rate = buffer.sample_rate.max(1.0).round() as u32;
    let byte_rate = rate * 2;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for s in &buffer.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Echo paths
// ---------------------------------------------------------------------------

/// Number of dominant taps in the synthetic sparse path.
pub const SPARSE_ACTIVE_TAPS: usize = 32;

/// Build a unit-energy synthetic echo path.
///
/// Sparse: 32 taps at seeded random positions in the first 80% of the
/// support, with magnitudes bounded away from zero under a decaying
/// envelope, so exactly 32 taps stand above 1% of the peak. Dispersive:
/// every tap Gaussian, shaped by `exp(-n / (M/4))`.
pub fn make_echo_path(kind: PathKind, taps: usize, seed: u64) -> Result<EchoPath, SignalError> {
    if taps < 64 {
        return Err(SignalError::PathTooShort(taps));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = vec![0.0f64; taps];
    let active_taps;
    match kind {
        PathKind::Sparse => {
            active_taps = SPARSE_ACTIVE_TAPS;
            let limit = (taps as f64 * 0.8) as usize;
            let mut positions = Vec::with_capacity(active_taps);
            while positions.len() < active_taps {
                let p = (rand::Rng::gen::<u64>(&mut rng) % limit as u64) as usize;
                if !positions.contains(&p) {
                    positions.push(p);
                }
            }
            positions.sort_unstable();
            let decay = taps as f64 / 3.0;
            for &p in &positions {
                let g: f64 = StandardNormal.sample(&mut rng);
                let sign = if g >= 0.0 { 1.0 } else { -1.0 };
                // Magnitude floor keeps every active tap above 1% of peak.
                let magnitude = (1.0 + 0.5 * g.abs()) * (-(p as f64) / decay).exp();
                coeffs[p] = sign * magnitude;
            }
        }
        PathKind::Dispersive => {
            active_taps = taps;
            let decay = taps as f64 / 4.0;
            for (j, c) in coeffs.iter_mut().enumerate() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *c = g * (-(j as f64) / decay).exp();
            }
        }
    }
    let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    for c in coeffs.iter_mut() {
        *c /= norm;
    }
    Ok(EchoPath {
        coeffs,
        kind,
        active_taps,
    })
}

/// Right-shift the impulse response, zero-filling the front and truncating
/// the tail. Models an abrupt change of the echo path.
pub fn shift_path(path: &EchoPath, shift: usize) -> Result<EchoPath, SignalError> {
    let m = path.coeffs.len();
    if shift >= m {
        return Err(SignalError::ShiftOutOfRange { shift, len: m });
    }
    let mut coeffs = vec![0.0f64; m];
    coeffs[shift..].copy_from_slice(&path.coeffs[..m - shift]);
    Ok(EchoPath {
        coeffs,
        kind: path.kind,
        active_taps: path.active_taps,
    })
}

/// Noise variance that realizes the requested SNR against a noiseless echo:
/// `sigma^2 = power(echo) / 10^(snr_db / 10)`.
pub fn noise_variance_for_snr(echo_signal: &SignalBuffer, snr_db: f64) -> Result<f64, SignalError> {
    let power = echo_signal.power();
    if !(power > 0.0) {
        return Err(SignalError::ZeroPower);
    }
    Ok(power / 10.0f64.powf(snr_db / 10.0))
}

/// Direct-form convolution of an input with an impulse response, evaluated
/// over the input's support (output length equals input length).
pub fn convolve(input: &[f64], impulse: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for (n, o) in out.iter_mut().enumerate() {
        let span = impulse.len().min(n + 1);
        let mut acc = 0.0;
        for j in 0..span {
            acc += impulse[j] * input[n - j];
        }
        *o = acc;
    }
    out
}
