//! Simulation harness: full echo-cancellation trials in the delayless
//! open-loop structure, NMSD and update-rate metrics, seeded Monte-Carlo
//! ensembles and the analytic complexity model.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::{
    adapt_step, threshold_gamma, AdaptiveError, AlgoConfig, SmoothState, Variant, WeightHistory,
};
use crate::filterbank::{
    analyze_decimate, build_analysis_bank, design_prototype, AnalysisBank, FilterbankError,
};
use crate::signals::{
    gen_ar1, gen_speechlike, gen_wgn, load_audio, make_echo_path, noise_variance_for_snr,
    shift_path, EchoPath, PathKind, SignalBuffer, SignalError,
};

/// NMSD above this level aborts a trial as divergent.
pub const DIVERGENCE_NMSD_DB: f64 = 50.0;
/// Floor reported when the estimate matches the target exactly.
pub const NMSD_FLOOR_DB: f64 = -320.0;
/// Stopband attenuation target for every designed bank.
pub const PROTOTYPE_ATTENUATION_DB: f64 = 60.0;

/// One diverging run.
#[derive(Debug, Clone)]
pub struct DivergenceReport {
    pub label: String,
    pub seed: u64,
    pub at_iteration: usize,
    pub nmsd_db: f64,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("target impulse response has zero norm")]
    ZeroNormTarget,
    #[error("divergence detected: {}", format_divergences(.0))]
    Divergence(Vec<DivergenceReport>),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Filterbank(#[from] FilterbankError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

fn format_divergences(reports: &[DivergenceReport]) -> String {
    reports
        .iter()
        .map(|r| {
            format!(
                "{} (seed {}) at iteration {} with NMSD {:.1} dB",
                r.label, r.seed, r.at_iteration, r.nmsd_db
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Excitation source for a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Ar1,
    Wgn,
    Wav,
    Speechlike,
}

/// Everything a simulation run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::input_kind")]
    pub input_kind: InputKind,
    /// Pole of the AR(1) excitation.
    #[serde(default = "defaults::ar_pole")]
    pub ar_pole: f64,
    /// WAV file used when `input_kind` is `wav`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_path: Option<PathBuf>,
    #[serde(default = "defaults::path_kind")]
    pub path_kind: PathKind,
    /// Echo-path and adaptive-filter length.
    #[serde(default = "defaults::m")]
    pub m: usize,
    /// Number of subbands.
    #[serde(default = "defaults::n")]
    pub n: usize,
    #[serde(default = "defaults::snr_db")]
    pub snr_db: f64,
    #[serde(default = "defaults::num_samples")]
    pub num_samples: usize,
    /// Shift the echo path right at the halfway sample.
    #[serde(default)]
    pub shift_at_half: bool,
    #[serde(default = "defaults::shift_amount")]
    pub shift_amount: usize,
    #[serde(
        default = "defaults::algos",
        deserialize_with = "crate::cli::deserialize_algos"
    )]
    pub algos: Vec<AlgoConfig>,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default = "defaults::base_seed")]
    pub base_seed: u64,
}

mod defaults {
    use super::*;

    pub fn input_kind() -> InputKind {
        InputKind::Ar1
    }
    pub fn ar_pole() -> f64 {
        0.9
    }
    pub fn path_kind() -> PathKind {
        PathKind::Dispersive
    }
    pub fn m() -> usize {
        512
    }
    pub fn n() -> usize {
        8
    }
    pub fn snr_db() -> f64 {
        10.0
    }
    pub fn num_samples() -> usize {
        100_000
    }
    pub fn shift_amount() -> usize {
        12
    }
    pub fn algos() -> Vec<AlgoConfig> {
        vec![
            AlgoConfig::new(Variant::SmInsaf),
            AlgoConfig::new(Variant::SsmInsaf),
            AlgoConfig::new(Variant::SmIpInsaf),
            AlgoConfig::new(Variant::SsmIpInsaf),
        ]
    }
    pub fn trials() -> usize {
        10
    }
    pub fn base_seed() -> u64 {
        1
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            input_kind: defaults::input_kind(),
            ar_pole: defaults::ar_pole(),
            input_path: None,
            path_kind: defaults::path_kind(),
            m: defaults::m(),
            n: defaults::n(),
            snr_db: defaults::snr_db(),
            num_samples: defaults::num_samples(),
            shift_at_half: false,
            shift_amount: defaults::shift_amount(),
            algos: defaults::algos(),
            trials: defaults::trials(),
            base_seed: defaults::base_seed(),
        }
    }
}

impl ExperimentConfig {
    /// Analysis-filter length: 16 taps per subband.
    pub fn filter_len(&self) -> usize {
        16 * self.n
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.m < 64 {
            return fail(format!("m = {} is below the minimum of 64 taps", self.m));
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if self.ar_pole.abs() >= 1.0 {
            return fail(format!("ar_pole = {} is unstable", self.ar_pole));
        }
        if self.input_kind == InputKind::Wav && self.input_path.is_none() {
            return fail("input_kind \"wav\" requires input_path".into());
        }
        let required = self.filter_len() + self.m * self.n;
        if self.num_samples < required {
            return fail(format!(
                "num_samples = {} is below the {} needed for warm-up (L + M*N)",
                self.num_samples, required
            ));
        }
        if self.shift_at_half && self.shift_amount >= self.m {
            return fail(format!(
                "shift_amount = {} must be below m = {}",
                self.shift_amount, self.m
            ));
        }
        if self.algos.is_empty() {
            return fail("at least one algorithm is required".into());
        }
        for algo in &self.algos {
            algo.validate_strict()
                .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }
}

/// Outcome of one simulated run of one algorithm.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub label: String,
    /// Decimated index of the first recorded metric (end of warm-up).
    pub first_k: usize,
    /// NMSD in dB per decimated iteration, from `first_k` onwards.
    pub nmsd_db: Vec<f64>,
    /// Per-subband count of iterations that updated the weights.
    pub update_counts: Vec<u64>,
    /// Per-subband count of recorded iterations.
    pub total_iterations: Vec<u64>,
    pub final_nmsd_db: f64,
}

/// Per-subband and average update rates of a trial.
#[derive(Debug, Clone)]
pub struct UpdateRateReport {
    pub per_subband: Vec<f64>,
    pub average: f64,
}

/// `F_up,i = N_update,i / N_total,i` and their average across subbands.
pub fn update_rate_report(result: &TrialResult) -> Result<UpdateRateReport, HarnessError> {
    if result.total_iterations.iter().any(|&t| t == 0) {
        return Err(HarnessError::InvalidConfig(
            "update rates need at least one recorded iteration".into(),
        ));
    }
    let per_subband: Vec<f64> = result
        .update_counts
        .iter()
        .zip(&result.total_iterations)
        .map(|(u, t)| *u as f64 / *t as f64)
        .collect();
    let average = per_subband.iter().sum::<f64>() / per_subband.len() as f64;
    Ok(UpdateRateReport {
        per_subband,
        average,
    })
}

/// Normalized mean square deviation in dB:
/// `10 log10(||w_o - w||^2 / ||w_o||^2)`, clamped at -320 dB.
pub fn nmsd(weights: &[f64], target: &[f64]) -> Result<f64, HarnessError> {
    assert_eq!(weights.len(), target.len(), "nmsd length mismatch");
    let target_norm: f64 = target.iter().map(|t| t * t).sum();
    if target_norm <= 0.0 {
        return Err(HarnessError::ZeroNormTarget);
    }
    let deviation: f64 = weights
        .iter()
        .zip(target)
        .map(|(w, t)| (t - w) * (t - w))
        .sum();
    if deviation == 0.0 {
        return Ok(NMSD_FLOOR_DB);
    }
    Ok((10.0 * (deviation / target_norm).log10()).max(NMSD_FLOOR_DB))
}

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

/// Banks keyed by (subbands, length); design is deterministic, so sharing
/// across trials and experiments is safe.
fn cached_bank(n: usize, l: usize) -> Result<Arc<AnalysisBank>, HarnessError> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<AnalysisBank>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(bank) = cache.lock().unwrap().get(&(n, l)) {
        return Ok(bank.clone());
    }
    let proto = design_prototype(n, l, PROTOTYPE_ATTENUATION_DB)?;
    let bank = Arc::new(build_analysis_bank(&proto)?);
    cache.lock().unwrap().insert((n, l), bank.clone());
    Ok(bank)
}

/// The analysis bank an experiment uses.
pub fn experiment_bank(cfg: &ExperimentConfig) -> Result<Arc<AnalysisBank>, HarnessError> {
    cached_bank(cfg.n, cfg.filter_len())
}

struct TrialData {
    far_end: Vec<f64>,
    microphone: Vec<f64>,
    path: EchoPath,
    shifted: Option<EchoPath>,
    /// Fullband sample index at which the path changes.
    switch_at: usize,
    sigma_eta_sq: f64,
}

const NOISE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn input_signal(cfg: &ExperimentConfig, seed: u64) -> Result<SignalBuffer, HarnessError> {
    match cfg.input_kind {
        InputKind::Ar1 => Ok(gen_ar1(seed, cfg.num_samples, cfg.ar_pole)?),
        InputKind::Wgn => Ok(gen_wgn(seed, cfg.num_samples, 1.0)),
        InputKind::Speechlike => Ok(gen_speechlike(seed, cfg.num_samples)),
        InputKind::Wav => {
            let path = cfg.input_path.as_ref().expect("validated");
            let buf = load_audio(path)?;
            if buf.len() < cfg.num_samples {
                return Err(HarnessError::InvalidConfig(format!(
                    "wav file holds {} samples but num_samples is {}",
                    buf.len(),
                    cfg.num_samples
                )));
            }
            Ok(SignalBuffer::new(
                buf.samples[..cfg.num_samples].to_vec(),
                buf.sample_rate,
                buf.label,
            ))
        }
    }
}

/// Echo through a path that may switch mid-run.
fn echo_signal(u: &[f64], path: &EchoPath, shifted: Option<&EchoPath>, switch_at: usize) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    for (n, o) in out.iter_mut().enumerate() {
        let coeffs = match shifted {
            Some(s) if n >= switch_at => &s.coeffs,
            _ => &path.coeffs,
        };
        let span = coeffs.len().min(n + 1);
        let mut acc = 0.0;
        for j in 0..span {
            acc += coeffs[j] * u[n - j];
        }
        *o = acc;
    }
    out
}

fn prepare_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialData, HarnessError> {
    let far_end = input_signal(cfg, seed)?;
    let path = make_echo_path(cfg.path_kind, cfg.m, cfg.base_seed)?;
    let (shifted, switch_at) = if cfg.shift_at_half {
        (
            Some(shift_path(&path, cfg.shift_amount)?),
            cfg.num_samples / 2,
        )
    } else {
        (None, usize::MAX)
    };
    let echo = echo_signal(&far_end.samples, &path, shifted.as_ref(), switch_at);
    let echo_buf = SignalBuffer::new(echo, far_end.sample_rate, "echo");
    let sigma_eta_sq = if cfg.snr_db.is_infinite() && cfg.snr_db > 0.0 {
        0.0
    } else {
        noise_variance_for_snr(&echo_buf, cfg.snr_db)?
    };
    let noise = gen_wgn(seed ^ NOISE_SEED_SALT, cfg.num_samples, sigma_eta_sq);
    let microphone: Vec<f64> = echo_buf
        .samples
        .iter()
        .zip(&noise.samples)
        .map(|(y, eta)| y + eta)
        .collect();
    Ok(TrialData {
        far_end: far_end.samples,
        microphone,
        path,
        shifted,
        switch_at,
        sigma_eta_sq,
    })
}

/// Run every algorithm over one shared realization of the signals.
///
/// All algorithms see bit-identical frames; a diverging algorithm aborts
/// the whole set with a report.
pub fn run_trial_set(
    cfg: &ExperimentConfig,
    algos: &[AlgoConfig],
    seed: u64,
    bank: &AnalysisBank,
) -> Result<Vec<TrialResult>, HarnessError> {
    let data = prepare_trial(cfg, seed)?;
    let frames = analyze_decimate(bank, &data.far_end, &data.microphone, cfg.m)?;
    let first_k = frames.warmup_frames();
    let num_frames = frames.num_frames();
    let n = cfg.n;

    struct AlgoState {
        history: WeightHistory,
        smooth: SmoothState,
        gamma: Vec<f64>,
        result: TrialResult,
    }
    let mut states = Vec::with_capacity(algos.len());
    for algo in algos {
        algo.validate_structure()?;
        let beta = SmoothState::default_beta(n, cfg.m, algo.kappa);
        let gamma = vec![threshold_gamma(algo.t, data.sigma_eta_sq, n); n];
        states.push(AlgoState {
            history: WeightHistory::new(algo.reuse, cfg.m),
            smooth: SmoothState::new(n, beta)?,
            gamma,
            result: TrialResult {
                label: algo.label(),
                first_k,
                nmsd_db: Vec::with_capacity(num_frames.saturating_sub(first_k)),
                update_counts: vec![0; n],
                total_iterations: vec![0; n],
                final_nmsd_db: 0.0,
            },
        });
    }

    for frame in frames {
        // Adaptation starts once the regressors are fully populated;
        // warm-up frames neither update nor count.
        if frame.warm_up {
            continue;
        }
        let target = match &data.shifted {
            Some(s) if frame.k * n >= data.switch_at => &s.coeffs,
            _ => &data.path.coeffs,
        };
        for (algo, state) in algos.iter().zip(states.iter_mut()) {
            let outcome = adapt_step(&state.history, &frame, algo, &mut state.smooth, &state.gamma)?;
            let level = nmsd(&outcome.weights, target)?;
            state.history.push(outcome.weights);
            if !(level <= DIVERGENCE_NMSD_DB) {
                return Err(HarnessError::Divergence(vec![DivergenceReport {
                    label: algo.label(),
                    seed,
                    at_iteration: frame.k,
                    nmsd_db: level,
                }]));
            }
            state.result.nmsd_db.push(level);
            for (i, updated) in outcome.updated.iter().enumerate() {
                state.result.total_iterations[i] += 1;
                if *updated {
                    state.result.update_counts[i] += 1;
                }
            }
        }
    }

    Ok(states
        .into_iter()
        .map(|mut s| {
            s.result.final_nmsd_db = s.result.nmsd_db.last().copied().unwrap_or(0.0);
            s.result
        })
        .collect())
}

/// Simulate one algorithm on one seeded realization.
pub fn run_trial(
    cfg: &ExperimentConfig,
    algo: &AlgoConfig,
    seed: u64,
) -> Result<TrialResult, HarnessError> {
    let bank = experiment_bank(cfg)?;
    let mut results = run_trial_set(cfg, std::slice::from_ref(algo), seed, &bank)?;
    Ok(results.pop().expect("one algorithm in, one result out"))
}

/// Ensemble averages across seeded trials.
#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub labels: Vec<String>,
    pub first_k: usize,
    pub num_subbands: usize,
    pub trials: usize,
    /// Per algorithm: trial-averaged NMSD (dB) per decimated iteration.
    pub nmsd_db: Vec<Vec<f64>>,
    /// Per algorithm: trial-averaged update rate per subband.
    pub f_up_subband: Vec<Vec<f64>>,
    /// Per algorithm: average update rate across subbands.
    pub f_up: Vec<f64>,
    pub final_nmsd_db: Vec<f64>,
}

impl MonteCarloResult {
    /// Mean of the averaged trace over its last tenth.
    pub fn steady_state_nmsd_db(&self, algo: usize) -> f64 {
        let trace = &self.nmsd_db[algo];
        let window = (trace.len() / 10).max(1);
        trace[trace.len() - window..].iter().sum::<f64>() / window as f64
    }

    /// First decimated iteration at which the averaged trace reaches the
    /// threshold, as an absolute index.
    pub fn iterations_to_reach(&self, algo: usize, threshold_db: f64) -> Option<usize> {
        self.nmsd_db[algo]
            .iter()
            .position(|&v| v <= threshold_db)
            .map(|pos| self.first_k + pos)
    }
}

/// Run the configured trial ensemble. Trial `r` uses seed `base_seed + r`;
/// within a trial every algorithm sees identical signals. Traces are
/// averaged in the dB domain; update rates are averaged per subband.
pub fn monte_carlo(cfg: &ExperimentConfig) -> Result<MonteCarloResult, HarnessError> {
    cfg.validate()?;
    let bank = experiment_bank(cfg)?;
    let outcomes: Vec<Result<Vec<TrialResult>, HarnessError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|r| run_trial_set(cfg, &cfg.algos, cfg.base_seed + r as u64, &bank))
        .collect();

    let mut per_trial = Vec::with_capacity(cfg.trials);
    let mut divergences = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(results) => per_trial.push(results),
            Err(HarnessError::Divergence(reports)) => divergences.extend(reports),
            Err(other) => return Err(other),
        }
    }
    if !divergences.is_empty() {
        return Err(HarnessError::Divergence(divergences));
    }

    let num_algos = cfg.algos.len();
    let first_k = per_trial[0][0].first_k;
    let trace_len = per_trial[0][0].nmsd_db.len();
    let scale = 1.0 / cfg.trials as f64;

    let mut nmsd_db = vec![vec![0.0; trace_len]; num_algos];
    let mut f_up_subband = vec![vec![0.0; cfg.n]; num_algos];
    for results in &per_trial {
        for (a, result) in results.iter().enumerate() {
            for (acc, v) in nmsd_db[a].iter_mut().zip(&result.nmsd_db) {
                *acc += scale * v;
            }
            let rates = update_rate_report(result)?;
            for (acc, v) in f_up_subband[a].iter_mut().zip(&rates.per_subband) {
                *acc += scale * v;
            }
        }
    }
    let f_up: Vec<f64> = f_up_subband
        .iter()
        .map(|rates| rates.iter().sum::<f64>() / rates.len() as f64)
        .collect();
    let final_nmsd_db: Vec<f64> = nmsd_db
        .iter()
        .map(|t| t.last().copied().unwrap_or(0.0))
        .collect();

    Ok(MonteCarloResult {
        labels: cfg.algos.iter().map(|a| a.label()).collect(),
        first_k,
        num_subbands: cfg.n,
        trials: cfg.trials,
        nmsd_db,
        f_up_subband,
        f_up,
        final_nmsd_db,
    })
}

// ---------------------------------------------------------------------------
// Complexity model
// ---------------------------------------------------------------------------

/// Operation counts per input sample, kept as exact rationals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpCounts {
    pub additions: Ratio<i64>,
    pub multiplications: Ratio<i64>,
    pub divisions: Ratio<i64>,
    pub comparisons: Ratio<i64>,
}

/// Average operations per iteration, weighted by the update rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CostAverages {
    pub additions: f64,
    pub multiplications: f64,
    pub divisions: f64,
    pub comparisons: f64,
}

/// Update/no-update operation counts and their update-rate-weighted average.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub algorithm: String,
    pub update: OpCounts,
    /// Absent for the always-updating (non-set-membership) variants.
    pub no_update: Option<OpCounts>,
    pub f_up: f64,
    pub average: CostAverages,
}

/// Evaluate the closed-form per-input-sample complexity of a variant and the
/// update-rate-weighted average `C_av = F_up C_up + (1 - F_up) C_nup`.
pub fn cost_model(
    algo: &AlgoConfig,
    m: usize,
    n: usize,
    l: usize,
    f_up: f64,
) -> Result<CostReport, HarnessError> {
    if m == 0 || n == 0 || l == 0 {
        return Err(HarnessError::InvalidConfig(
            "cost model needs positive M, N and L".into(),
        ));
    }
    if !(0.0..=1.0).contains(&f_up) {
        return Err(HarnessError::InvalidConfig(format!(
            "update rate {f_up} must lie in [0,1]"
        )));
    }
    let int = |v: usize| Ratio::from_integer(v as i64);
    let (m_r, n_r, l_r) = (int(m), int(n), int(l));
    let p_r = int(algo.reuse);
    let one = Ratio::from_integer(1);
    let two = Ratio::from_integer(2);

    // Shared filtering terms.
    let analysis_adds = two * n_r * (l_r - one);
    let analysis_muls = two * n_r * l_r;

    // Every set-membership variant skips the same work when gated.
    let gated = OpCounts {
        additions: two * m_r + analysis_adds + m_r * (p_r - one) / n_r,
        multiplications: two * m_r + m_r / n_r + analysis_muls,
        divisions: Ratio::from_integer(0),
        comparisons: Ratio::from_integer(0),
    };

    let plain_up_adds = int(4) * m_r + analysis_adds + m_r * (p_r - one) / n_r;
    let plain_up_muls = int(4) * m_r + m_r / n_r + analysis_muls + one;
    let prop_up_adds = int(6) * m_r + analysis_adds + m_r * (p_r + one) / n_r;
    let prop_up_muls = int(6) * m_r + int(3) * m_r / n_r + analysis_muls + one;

    let (update, no_update) = match algo.variant {
        Variant::Nsaf | Variant::Insaf => (
            OpCounts {
                additions: plain_up_adds,
                multiplications: plain_up_muls,
                divisions: one,
                comparisons: Ratio::from_integer(0),
            },
            None,
        ),
        Variant::SmInsaf => (
            OpCounts {
                additions: plain_up_adds + one,
                multiplications: plain_up_muls,
                divisions: two,
                comparisons: one,
            },
            Some(gated),
        ),
        Variant::SsmInsaf => (
            OpCounts {
                additions: plain_up_adds + two,
                multiplications: plain_up_muls + two,
                divisions: two,
                comparisons: two,
            },
            Some(gated),
        ),
        Variant::IpInsaf => (
            OpCounts {
                additions: prop_up_adds,
                multiplications: prop_up_muls,
                divisions: one + m_r / n_r,
                comparisons: Ratio::from_integer(0),
            },
            None,
        ),
        Variant::SmIpInsaf => (
            OpCounts {
                additions: prop_up_adds + one,
                multiplications: prop_up_muls,
                divisions: two + m_r / n_r,
                comparisons: one,
            },
            Some(gated),
        ),
        Variant::SsmIpInsaf => (
            OpCounts {
                additions: prop_up_adds + two,
                multiplications: prop_up_muls + two,
                divisions: two + m_r / n_r,
                comparisons: two,
            },
            Some(gated),
        ),
    };

    let to_f = |r: Ratio<i64>| *r.numer() as f64 / *r.denom() as f64;
    let avg = |up: Ratio<i64>, nup: Option<Ratio<i64>>| {
        let nup = nup.unwrap_or(up);
        f_up * to_f(up) + (1.0 - f_up) * to_f(nup)
    };
    let average = CostAverages {
        additions: avg(update.additions, no_update.as_ref().map(|c| c.additions)),
        multiplications: avg(
            update.multiplications,
            no_update.as_ref().map(|c| c.multiplications),
        ),
        divisions: avg(update.divisions, no_update.as_ref().map(|c| c.divisions)),
        comparisons: avg(update.comparisons, no_update.as_ref().map(|c| c.comparisons)),
    };

    Ok(CostReport {
        algorithm: algo.label(),
        update,
        no_update,
        f_up,
        average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            m: 64,
            n: 4,
            num_samples: 20_000,
            trials: 2,
            algos: vec![AlgoConfig::new(Variant::SmInsaf)],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn nmsd_values() {
        let w_o = vec![3.0, 4.0];
        assert_relative_eq!(nmsd(&[0.0, 0.0], &w_o).unwrap(), 0.0, epsilon = 1e-12);
        let w = vec![3.0 - 0.3, 4.0 - 0.4];
        assert_relative_eq!(nmsd(&w, &w_o).unwrap(), -20.0, epsilon = 1e-9);
        assert_eq!(nmsd(&w_o, &w_o).unwrap(), NMSD_FLOOR_DB);
        assert!(matches!(
            nmsd(&[1.0], &[0.0]),
            Err(HarnessError::ZeroNormTarget)
        ));
    }

    #[test]
    fn update_rate_arithmetic() {
        let result = TrialResult {
            label: "x".into(),
            first_k: 0,
            nmsd_db: vec![],
            update_counts: vec![250, 1000, 0],
            total_iterations: vec![1000, 1000, 1000],
            final_nmsd_db: 0.0,
        };
        let report = update_rate_report(&result).unwrap();
        assert_eq!(report.per_subband, vec![0.25, 1.0, 0.0]);
        assert_relative_eq!(report.average, 1.25 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn cost_model_matches_table_formulas() {
        let (m, n, l) = (512usize, 8usize, 128usize);
        let mut sm = AlgoConfig::new(Variant::SmInsaf);
        sm.reuse = 2;
        let report = cost_model(&sm, m, n, l, 0.295).unwrap();
        assert_eq!(report.update.multiplications, Ratio::from_integer(4161));
        assert_eq!(
            report.update.additions,
            Ratio::from_integer((4 * 512 + 2 * 8 * 127 + 512 / 8 + 1) as i64)
        );
        assert_eq!(report.update.divisions, Ratio::from_integer(2));
        let nup = report.no_update.as_ref().unwrap();
        assert_eq!(
            nup.additions,
            Ratio::from_integer((2 * 512 + 2 * 8 * 127 + 512 / 8) as i64)
        );
        assert_eq!(
            nup.multiplications,
            Ratio::from_integer((2 * 512 + 512 / 8 + 2 * 8 * 128) as i64)
        );

        let mut ip = AlgoConfig::new(Variant::IpInsaf);
        ip.reuse = 2;
        let report = cost_model(&ip, m, n, l, 1.0).unwrap();
        assert_eq!(report.update.divisions, Ratio::from_integer(65));
        // F_up = 1 makes the average equal the update cost.
        assert_relative_eq!(report.average.multiplications, 6.0 * 512.0 + 3.0 * 64.0 + 2048.0 + 1.0);
    }

    #[test]
    fn cost_average_identity_and_ordering() {
        let sm = AlgoConfig::new(Variant::SsmIpInsaf);
        let report = cost_model(&sm, 512, 8, 128, 0.478).unwrap();
        let to_f = |r: Ratio<i64>| *r.numer() as f64 / *r.denom() as f64;
        let up = to_f(report.update.additions);
        let nup = to_f(report.no_update.as_ref().unwrap().additions);
        assert!(nup <= up);
        assert_eq!(report.average.additions, 0.478 * up + (1.0 - 0.478) * nup);
    }

    #[test]
    fn config_validation_messages() {
        let mut cfg = small_config();
        cfg.algos[0].rho = 1.5;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("rho must lie in (0,1]"), "{err}");

        let mut cfg = small_config();
        cfg.num_samples = 100;
        assert!(cfg.validate().is_err());

        let mut cfg = small_config();
        cfg.m = 32;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trial_is_seed_reproducible() {
        let cfg = small_config();
        let algo = &cfg.algos[0];
        let a = run_trial(&cfg, algo, 7).unwrap();
        let b = run_trial(&cfg, algo, 7).unwrap();
        assert_eq!(a.nmsd_db, b.nmsd_db);
        assert_eq!(a.update_counts, b.update_counts);
        let c = run_trial(&cfg, algo, 8).unwrap();
        assert_ne!(a.nmsd_db, c.nmsd_db);
    }

    #[test]
    fn huge_threshold_freezes_the_filter() {
        let mut cfg = small_config();
        cfg.algos[0].t = 1e6;
        let result = run_trial(&cfg, &cfg.algos[0], 3).unwrap();
        assert!(result.update_counts.iter().all(|&c| c == 0));
        // Weights stay at zero, so the NMSD never moves off 0 dB.
        for v in &result.nmsd_db {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn noiseless_insaf_identifies_the_path() {
        let mut cfg = small_config();
        cfg.m = 128;
        cfg.n = 8;
        cfg.snr_db = f64::INFINITY;
        cfg.num_samples = 60_000;
        cfg.algos = vec![AlgoConfig::new(Variant::Insaf)];
        let result = run_trial(&cfg, &cfg.algos[0], 5).unwrap();
        assert!(
            result.final_nmsd_db < -80.0,
            "final NMSD {}",
            result.final_nmsd_db
        );
    }

    #[test]
    fn unstable_step_size_triggers_divergence_report() {
        // P = 1, where every projection overshoots by |1 - mu| > 1. Weight
        // averaging at P >= 2 widens the stable region past mu = 2, so the
        // sharp boundary case is the degenerate one.
        let mut cfg = small_config();
        let mut algo = AlgoConfig::new(Variant::Insaf);
        algo.mu = 2.5;
        algo.reuse = 1;
        cfg.algos = vec![algo.clone()];
        match run_trial(&cfg, &algo, 11) {
            Err(HarnessError::Divergence(reports)) => {
                assert_eq!(reports.len(), 1);
                assert!(reports[0].at_iteration < 5000);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn monte_carlo_single_trial_equals_run_trial() {
        let mut cfg = small_config();
        cfg.trials = 1;
        let mc = monte_carlo(&cfg).unwrap();
        let single = run_trial(&cfg, &cfg.algos[0], cfg.base_seed).unwrap();
        assert_eq!(mc.nmsd_db[0], single.nmsd_db);
        let rates = update_rate_report(&single).unwrap();
        assert_eq!(mc.f_up_subband[0], rates.per_subband);
    }

    #[test]
    fn algorithms_share_identical_inputs_within_a_trial() {
        let cfg = small_config();
        let bank = experiment_bank(&cfg).unwrap();
        let a = prepare_trial(&cfg, 42).unwrap();
        let b = prepare_trial(&cfg, 42).unwrap();
        assert_eq!(a.far_end, b.far_end);
        assert_eq!(a.microphone, b.microphone);
        // Non-SM algorithms update every subband on every iteration.
        let mut insaf = AlgoConfig::new(Variant::Insaf);
        insaf.mu = 1.0;
        let results = run_trial_set(&cfg, &[insaf], 42, &bank).unwrap();
        let rates = update_rate_report(&results[0]).unwrap();
        assert!(rates.per_subband.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn shift_event_reduces_then_recovers_identification() {
        let mut cfg = small_config();
        cfg.shift_at_half = true;
        cfg.num_samples = 40_000;
        cfg.algos = vec![AlgoConfig::new(Variant::Insaf)];
        let result = run_trial(&cfg, &cfg.algos[0], 2).unwrap();
        // The NMSD jumps at the shift and then re-descends.
        let shift_pos = cfg.num_samples / 2 / cfg.n - result.first_k;
        let before = result.nmsd_db[shift_pos - 1];
        let after = result.nmsd_db[shift_pos + 2];
        assert!(after > before + 5.0, "before {before}, after {after}");
        assert!(result.final_nmsd_db < after - 5.0);
    }
}
