//! Cosine-modulated analysis filter bank: prototype lowpass design,
//! band-splitting and N-fold decimation.
//!
//! The prototype is a Kaiser-windowed linear-phase lowpass with cutoff near
//! `pi/(2N)`. The window parameter is tuned by bisection until the stopband
//! attenuation target is met, and the cutoff is tuned so the squared
//! responses of the modulated filters sum to a near-constant across
//! frequency (the paraunitary proxy). Filters carry unit passband gain, so
//! the N subband responses are power-complementary to 1 and each analysis
//! filter holds roughly 1/N of the input power.

use std::f64::consts::PI;
use std::path::Path;

use thiserror::Error;

use crate::textio;

/// Errors from filter design and stream analysis.
#[derive(Debug, Error)]
pub enum FilterbankError {
    #[error("filter length {len} must be a positive multiple of 2N = {two_n}")]
    BadLength { len: usize, two_n: usize },
    #[error("subband count must be at least 1")]
    BadSubbands,
    #[error(
        "no window parameter reaches {target_db} dB stopband attenuation at length {len}; \
         best achieved {best_db:.2} dB (increase the filter length)"
    )]
    DesignInfeasible {
        target_db: f64,
        len: usize,
        best_db: f64,
    },
    #[error("stream of {len} samples is shorter than the {required} needed for warm-up")]
    StreamTooShort { len: usize, required: usize },
    #[error("input and desired streams differ in length ({0} vs {1})")]
    StreamLengthMismatch(usize, usize),
    #[error("frequency grid of {got} points is too coarse; need at least {min}")]
    GridTooSmall { got: usize, min: usize },
    #[error("prototype is invalid: {0}")]
    InvalidPrototype(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Linear-phase lowpass prototype from which every analysis filter is
/// derived by cosine modulation.
#[derive(Debug, Clone)]
pub struct PrototypeFilter {
    pub coeffs: Vec<f64>,
    pub num_subbands: usize,
    /// Attenuation measured at design time on the reference grid.
    pub stopband_attenuation_db: f64,
}

impl PrototypeFilter {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Export coefficients as plain text, one per line.
    pub fn export(&self, path: &Path) -> Result<(), FilterbankError> {
        textio::write_column(path, &self.coeffs)?;
        Ok(())
    }

    /// Import coefficients written by [`PrototypeFilter::export`].
    pub fn import(path: &Path, num_subbands: usize) -> Result<PrototypeFilter, FilterbankError> {
        let coeffs = textio::read_column(path)?;
        validate_prototype(&coeffs, num_subbands)?;
        Ok(PrototypeFilter {
            coeffs,
            num_subbands,
            stopband_attenuation_db: f64::NAN,
        })
    }
}

fn validate_prototype(coeffs: &[f64], num_subbands: usize) -> Result<(), FilterbankError> {
    if num_subbands == 0 {
        return Err(FilterbankError::BadSubbands);
    }
    let len = coeffs.len();
    if len == 0 || len % (2 * num_subbands) != 0 {
        return Err(FilterbankError::BadLength {
            len,
            two_n: 2 * num_subbands,
        });
    }
    for j in 0..len / 2 {
        if (coeffs[j] - coeffs[len - 1 - j]).abs() > 1e-12 {
            return Err(FilterbankError::InvalidPrototype(format!(
                "coefficients are not linear-phase symmetric at index {j}"
            )));
        }
    }
    Ok(())
}

/// The N modulated analysis filters.
#[derive(Debug, Clone)]
pub struct AnalysisBank {
    filters: Vec<Vec<f64>>,
    num_subbands: usize,
}

impl AnalysisBank {
    /// Build a bank directly from explicit filters (mainly for tests and
    /// degenerate single-band setups).
    pub fn from_filters(filters: Vec<Vec<f64>>) -> AnalysisBank {
        let num_subbands = filters.len();
        AnalysisBank {
            filters,
            num_subbands,
        }
    }

    pub fn num_subbands(&self) -> usize {
        self.num_subbands
    }

    pub fn filter(&self, i: usize) -> &[f64] {
        &self.filters[i]
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn filter_len(&self) -> usize {
        self.filters.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// One decimated time step: per-subband regressors for the far-end input
/// and the decimated microphone samples.
#[derive(Debug, Clone)]
pub struct SubbandFrame {
    /// Decimated-time index; the frame observes fullband time `k * N`.
    pub k: usize,
    /// True while the regressors are not yet fully populated.
    pub warm_up: bool,
    /// `u_vectors[i][j]` is the subband input `u_i(kN - j)`, `j = 0..M-1`.
    pub u_vectors: Vec<Vec<f64>>,
    /// `d_decimated[i]` is the subband desired sample `d_i(kN)`.
    pub d_decimated: Vec<f64>,
}

impl SubbandFrame {
    pub fn num_subbands(&self) -> usize {
        self.u_vectors.len()
    }

    pub fn regressor_len(&self) -> usize {
        self.u_vectors.first().map(|u| u.len()).unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Prototype design
// ---------------------------------------------------------------------------

/// Zeroth-order modified Bessel function, for the Kaiser window.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc lowpass, normalized to unit DC gain.
fn windowed_lowpass(len: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let center = (len - 1) as f64 / 2.0;
    let denom = bessel_i0(beta);
    let mut coeffs = Vec::with_capacity(len);
    for j in 0..len {
        let t = j as f64 - center;
        let sinc = if t == 0.0 {
            cutoff / PI
        } else {
            (cutoff * t).sin() / (PI * t)
        };
        let r = 2.0 * t / (len - 1).max(1) as f64;
        let window = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom;
        coeffs.push(sinc * window);
    }
    let dc: f64 = coeffs.iter().sum();
    for c in coeffs.iter_mut() {
        *c /= dc;
    }
    coeffs
}

/// Magnitude response |P(e^{j omega})|.
fn magnitude_at(coeffs: &[f64], omega: f64) -> f64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (j, &c) in coeffs.iter().enumerate() {
        let phase = omega * j as f64;
        re += c * phase.cos();
        im -= c * phase.sin();
    }
    (re * re + im * im).sqrt()
}

/// Stopband attenuation in dB: peak magnitude over `[pi/N, pi]` relative to
/// the DC gain. Infinite when the stopband region is empty or silent.
fn stopband_attenuation_db(coeffs: &[f64], num_subbands: usize, grid: usize) -> f64 {
    let stop_edge = PI / num_subbands as f64;
    let dc = magnitude_at(coeffs, 0.0);
    let mut peak = 0.0f64;
    for g in 0..grid {
        let omega = stop_edge + (PI - stop_edge) * g as f64 / (grid - 1).max(1) as f64;
        peak = peak.max(magnitude_at(coeffs, omega));
    }
    if peak <= 0.0 {
        f64::INFINITY
    } else {
        -20.0 * (peak / dc).log10()
    }
}

/// Maximum dB deviation of the bank's total squared response from its mean,
/// on a coarse tuning grid.
fn flatness_deviation_db(proto_coeffs: &[f64], num_subbands: usize, grid: usize) -> f64 {
    let bank = modulate(proto_coeffs, num_subbands);
    total_power_curve(&bank, grid)
        .iter()
        .fold(0.0f64, |m, &(_, dev)| m.max(dev.abs()))
}

fn total_power_curve(bank: &AnalysisBank, grid: usize) -> Vec<(f64, f64)> {
    let mut totals = Vec::with_capacity(grid);
    for g in 0..grid {
        let omega = PI * g as f64 / (grid - 1).max(1) as f64;
        let total: f64 = bank
            .filters
            .iter()
            .map(|h| {
                let m = magnitude_at(h, omega);
                m * m
            })
            .sum();
        totals.push((omega, total));
    }
    let mean = totals.iter().map(|&(_, t)| t).sum::<f64>() / totals.len() as f64;
    totals
        .into_iter()
        .map(|(omega, t)| (omega, 10.0 * (t / mean).log10()))
        .collect()
}

fn modulate(proto: &[f64], num_subbands: usize) -> AnalysisBank {
    let len = proto.len();
    let center = (len - 1) as f64 / 2.0;
    let mut filters = Vec::with_capacity(num_subbands);
    for i in 0..num_subbands {
        let theta = if i % 2 == 0 { PI / 4.0 } else { -PI / 4.0 };
        let band = PI / num_subbands as f64 * (i as f64 + 0.5);
        let filter: Vec<f64> = proto
            .iter()
            .enumerate()
            .map(|(j, &p)| 2.0 * p * (band * (j as f64 - center) + theta).cos())
            .collect();
        filters.push(filter);
    }
    AnalysisBank::from_filters(filters)
}

const DESIGN_GRID: usize = 4096;
const TUNING_GRID: usize = 1024;
const BETA_MAX: f64 = 40.0;

/// Smallest Kaiser parameter meeting the attenuation target at this cutoff.
///
/// Attenuation over `[pi/N, pi]` rises with the window parameter only until
/// the widening transition skirt reaches the stopband edge, then falls
/// again, so the peak is located first and the rising branch bisected.
fn bisect_beta(
    len: usize,
    num_subbands: usize,
    cutoff: f64,
    target_db: f64,
) -> Result<f64, FilterbankError> {
    let att = |beta: f64| {
        stopband_attenuation_db(&windowed_lowpass(len, cutoff, beta), num_subbands, DESIGN_GRID)
    };
    // Half a dB of design margin so the final grid measurement clears the
    // stated target.
    let goal = target_db + 0.5;
    if att(0.0) >= goal {
        return Ok(0.0);
    }
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, BETA_MAX);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (att(x1), att(x2));
    for _ in 0..40 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = att(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = att(x2);
        }
    }
    let beta_peak = 0.5 * (a + b);
    let best = att(beta_peak);
    if best < goal {
        return Err(FilterbankError::DesignInfeasible {
            target_db,
            len,
            best_db: best,
        });
    }
    let (mut lo, mut hi) = (0.0, beta_peak);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if att(mid) >= goal {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Cutoff minimizing the bank's power-complementarity deviation, by golden
/// section over a bracket around the nominal `pi/(2N)`.
fn tune_cutoff(len: usize, num_subbands: usize, beta: f64) -> f64 {
    let nominal = PI / (2.0 * num_subbands as f64);
    let dev = |cutoff: f64| {
        flatness_deviation_db(&windowed_lowpass(len, cutoff, beta), num_subbands, TUNING_GRID)
    };
    let (mut a, mut b) = (0.6 * nominal, 1.4 * nominal);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (dev(x1), dev(x2));
    for _ in 0..40 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = dev(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = dev(x2);
        }
    }
    0.5 * (a + b)
}

/// Design the linear-phase lowpass prototype for an N-band bank.
///
/// Deterministic for fixed inputs. Fails with
/// [`FilterbankError::DesignInfeasible`] when no window parameter reaches
/// the attenuation target at the given length.
pub fn design_prototype(
    num_subbands: usize,
    len: usize,
    attenuation_target_db: f64,
) -> Result<PrototypeFilter, FilterbankError> {
    if num_subbands == 0 {
        return Err(FilterbankError::BadSubbands);
    }
    if len == 0 || len % (2 * num_subbands) != 0 {
        return Err(FilterbankError::BadLength {
            len,
            two_n: 2 * num_subbands,
        });
    }
    let nominal = PI / (2.0 * num_subbands as f64);
    let mut cutoff = nominal;
    let mut beta = bisect_beta(len, num_subbands, cutoff, attenuation_target_db)?;
    if num_subbands > 1 {
        cutoff = tune_cutoff(len, num_subbands, beta);
        // Moving the cutoff shifts the stopband peak; restore the target and
        // re-flatten once, then settle the window parameter for the final
        // cutoff so the measured attenuation is guaranteed.
        beta = bisect_beta(len, num_subbands, cutoff, attenuation_target_db)?;
        cutoff = tune_cutoff(len, num_subbands, beta);
        beta = bisect_beta(len, num_subbands, cutoff, attenuation_target_db)?;
    }
    let coeffs = windowed_lowpass(len, cutoff, beta);
    let measured = stopband_attenuation_db(&coeffs, num_subbands, DESIGN_GRID);
    if measured < attenuation_target_db {
        return Err(FilterbankError::DesignInfeasible {
            target_db: attenuation_target_db,
            len,
            best_db: measured,
        });
    }
    Ok(PrototypeFilter {
        coeffs,
        num_subbands,
        stopband_attenuation_db: measured,
    })
}

/// Modulate the prototype onto the even-stacked N-band partition of
/// `[0, pi]`.
pub fn build_analysis_bank(proto: &PrototypeFilter) -> Result<AnalysisBank, FilterbankError> {
    validate_prototype(&proto.coeffs, proto.num_subbands)?;
    Ok(modulate(&proto.coeffs, proto.num_subbands))
}

/// Report on the bank's deviation from power complementarity.
#[derive(Debug, Clone)]
pub struct ParaunitaryReport {
    pub max_deviation_db: f64,
    /// Per-frequency deviation of the total squared response from its mean,
    /// in dB, as `(omega, deviation)` pairs.
    pub curve: Vec<(f64, f64)>,
}

/// Evaluate the total squared response of the bank over a dense grid and
/// report its maximum dB deviation from the mean.
pub fn check_paraunitary(
    bank: &AnalysisBank,
    grid_size: usize,
) -> Result<ParaunitaryReport, FilterbankError> {
    let min = 8 * bank.filter_len();
    if grid_size < min {
        return Err(FilterbankError::GridTooSmall {
            got: grid_size,
            min,
        });
    }
    let curve = total_power_curve(bank, grid_size);
    let max_deviation_db = curve.iter().fold(0.0f64, |m, &(_, d)| m.max(d.abs()));
    Ok(ParaunitaryReport {
        max_deviation_db,
        curve,
    })
}

// ---------------------------------------------------------------------------
// Streaming analysis
// ---------------------------------------------------------------------------

/// Full-rate subband decomposition of a signal: one convolution per filter.
pub fn subband_decompose(bank: &AnalysisBank, signal: &[f64]) -> Vec<Vec<f64>> {
    bank.filters
        .iter()
        .map(|h| crate::signals::convolve(signal, h))
        .collect()
}

/// Iterator over the decimated frames of a far-end/microphone signal pair.
pub struct FrameSequence {
    u_subbands: Vec<Vec<f64>>,
    d_decimated: Vec<Vec<f64>>,
    num_subbands: usize,
    regressor_len: usize,
    num_frames: usize,
    warmup_frames: usize,
    next_k: usize,
}

impl FrameSequence {
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    /// Frames before this index have partially populated regressors.
    pub fn warmup_frames(&self) -> usize {
        self.warmup_frames
    }

    fn frame_at(&self, k: usize) -> SubbandFrame {
        let n = self.num_subbands;
        let t = k * n;
        let mut u_vectors = Vec::with_capacity(n);
        for sub in &self.u_subbands {
            let mut reg = vec![0.0; self.regressor_len];
            let available = self.regressor_len.min(t + 1);
            for (j, r) in reg.iter_mut().enumerate().take(available) {
                *r = sub[t - j];
            }
            u_vectors.push(reg);
        }
        let d_decimated = self.d_decimated.iter().map(|d| d[k]).collect();
        SubbandFrame {
            k,
            warm_up: k < self.warmup_frames,
            u_vectors,
            d_decimated,
        }
    }
}

impl Iterator for FrameSequence {
    type Item = SubbandFrame;

    fn next(&mut self) -> Option<SubbandFrame> {
        if self.next_k >= self.num_frames {
            return None;
        }
        let frame = self.frame_at(self.next_k);
        self.next_k += 1;
        Some(frame)
    }
}

/// Band-split and N-fold decimate a far-end/microphone signal pair into
/// regressor frames. One frame is emitted per N fullband samples; the
/// first `ceil((L + M) / N)` frames are flagged as warm-up.
pub fn analyze_decimate(
    bank: &AnalysisBank,
    far_end: &[f64],
    microphone: &[f64],
    regressor_len: usize,
) -> Result<FrameSequence, FilterbankError> {
    if far_end.len() != microphone.len() {
        return Err(FilterbankError::StreamLengthMismatch(
            far_end.len(),
            microphone.len(),
        ));
    }
    let n = bank.num_subbands();
    let l = bank.filter_len();
    let required = l + regressor_len * n;
    if far_end.len() < required {
        return Err(FilterbankError::StreamTooShort {
            len: far_end.len(),
            required,
        });
    }
    let u_subbands = subband_decompose(bank, far_end);
    let num_frames = far_end.len() / n;
    // The microphone signal is only needed on the decimated grid.
    let mut d_decimated = vec![Vec::with_capacity(num_frames); n];
    for k in 0..num_frames {
        let t = k * n;
        for (i, h) in bank.filters.iter().enumerate() {
            let span = h.len().min(t + 1);
            let mut acc = 0.0;
            for (j, &hj) in h.iter().enumerate().take(span) {
                acc += hj * microphone[t - j];
            }
            d_decimated[i].push(acc);
        }
    }
    let warmup_frames = (l + regressor_len).div_ceil(n);
    Ok(FrameSequence {
        u_subbands,
        d_decimated,
        num_subbands: n,
        regressor_len,
        num_frames,
        warmup_frames,
        next_k: 0,
    })
}
