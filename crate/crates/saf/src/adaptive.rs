//! The adaptive algorithm family: weight-history averaging, subband errors,
//! proportionate gains, set-membership and smoothed step-size policies, and
//! the unified weight update that covers every variant.
//!
//! All variants share one update form,
//!
//! ```text
//! w(k+1) = wbar(k) + sum_i  mu_i(k) * G(k) u_i(k) eps_i(k)
//!                           ----------------------------------
//!                           u_i(k)^T G(k) u_i(k) + delta
//! ```
//!
//! where `wbar` is the forgetting-weighted average of the P most recent
//! weight vectors, `G` is the identity for non-proportionate variants, and
//! the per-subband step size `mu_i` is a constant for the non-set-membership
//! variants, error-gated for the set-membership ones, and computed from a
//! smoothed absolute-error estimate for the smoothed variants.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filterbank::SubbandFrame;
use crate::textio;

/// Errors from state construction and the update operations.
#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("subband Gram matrix is singular")]
    SingularMatrix,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "nsaf")]
    Nsaf,
    #[serde(rename = "insaf")]
    Insaf,
    #[serde(rename = "ip-insaf")]
    IpInsaf,
    #[serde(rename = "sm-insaf")]
    SmInsaf,
    #[serde(rename = "ssm-insaf")]
    SsmInsaf,
    #[serde(rename = "sm-ip-insaf")]
    SmIpInsaf,
    #[serde(rename = "ssm-ip-insaf")]
    SsmIpInsaf,
}

impl Variant {
    /// Per-coefficient gains enabled.
    pub fn is_proportionate(self) -> bool {
        matches!(self, Variant::IpInsaf | Variant::SmIpInsaf | Variant::SsmIpInsaf)
    }

    /// Error-gated updating (set-membership or smoothed set-membership).
    pub fn is_set_membership(self) -> bool {
        !matches!(self, Variant::Nsaf | Variant::Insaf | Variant::IpInsaf)
    }

    /// Step sizes computed from the smoothed absolute-error estimate.
    pub fn is_smoothed(self) -> bool {
        matches!(self, Variant::SsmInsaf | Variant::SsmIpInsaf)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nsaf => "nsaf",
            Variant::Insaf => "insaf",
            Variant::IpInsaf => "ip-insaf",
            Variant::SmInsaf => "sm-insaf",
            Variant::SsmInsaf => "ssm-insaf",
            Variant::SmIpInsaf => "sm-ip-insaf",
            Variant::SsmIpInsaf => "ssm-ip-insaf",
        }
    }

    pub fn parse(name: &str) -> Option<Variant> {
        match name.to_ascii_lowercase().as_str() {
            "nsaf" => Some(Variant::Nsaf),
            "insaf" => Some(Variant::Insaf),
            "ip-insaf" => Some(Variant::IpInsaf),
            "sm-insaf" => Some(Variant::SmInsaf),
            "ssm-insaf" => Some(Variant::SsmInsaf),
            "sm-ip-insaf" => Some(Variant::SmIpInsaf),
            "ssm-ip-insaf" => Some(Variant::SsmIpInsaf),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Every tunable of the algorithm family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub variant: Variant,
    /// Fixed step size for the non-set-membership variants.
    pub mu: f64,
    /// Number of past weight vectors reused in the average.
    #[serde(rename = "p")]
    pub reuse: usize,
    /// Forgetting factor over the weight history, in (0, 1].
    pub rho: f64,
    /// Threshold scale: the error bound is `sqrt(t * sigma_eta^2 / N)`.
    pub t: f64,
    /// Proportionate mixing parameter in [-1, 1].
    pub lambda: f64,
    /// Small positive constant guarding the proportionate normalization.
    pub zeta: f64,
    /// Smoothing-horizon factor: `beta = 1 - N / (kappa * M)`.
    pub kappa: f64,
    /// Regularization added to every update denominator.
    pub delta: f64,
    /// Column label in reports; defaults to the variant name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl AlgoConfig {
    /// Experiment defaults for a variant: `mu = 1`, `P = 2` (1 for NSAF),
    /// `rho = 1`, `t = 2` for set-membership / `0.75` with `kappa = 1` for
    /// the smoothed variants, `lambda = 0`, `zeta = 1e-4`, `delta = 0`.
    pub fn new(variant: Variant) -> AlgoConfig {
        AlgoConfig {
            variant,
            mu: 1.0,
            reuse: if variant == Variant::Nsaf { 1 } else { 2 },
            rho: 1.0,
            t: if variant.is_smoothed() {
                0.75
            } else if variant.is_set_membership() {
                2.0
            } else {
                0.0
            },
            lambda: 0.0,
            zeta: 1e-4,
            kappa: 1.0,
            delta: 0.0,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> AlgoConfig {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.variant.name().to_string())
    }

    /// Structural checks required for the update to be well defined.
    pub fn validate_structure(&self) -> Result<(), AdaptiveError> {
        if self.reuse == 0 {
            return Err(AdaptiveError::InvalidConfig("p must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(AdaptiveError::InvalidConfig("rho must lie in (0,1]".into()));
        }
        if !(self.t >= 0.0) {
            return Err(AdaptiveError::InvalidConfig("t must be non-negative".into()));
        }
        if !((-1.0..=1.0).contains(&self.lambda)) {
            return Err(AdaptiveError::InvalidConfig("lambda must lie in [-1,1]".into()));
        }
        if !(self.zeta >= 0.0) {
            return Err(AdaptiveError::InvalidConfig("zeta must be non-negative".into()));
        }
        if !(self.kappa >= 1.0) {
            return Err(AdaptiveError::InvalidConfig("kappa must be at least 1".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(AdaptiveError::InvalidConfig("delta must be non-negative".into()));
        }
        if self.variant == Variant::Nsaf && self.reuse != 1 {
            return Err(AdaptiveError::InvalidConfig(
                "nsaf uses no weight reuse; p must be 1".into(),
            ));
        }
        Ok(())
    }

    /// Full validation, including the `0 < mu < 2` convergence bound for the
    /// non-set-membership variants. Applied at the configuration boundary;
    /// the harness itself accepts out-of-range step sizes so the divergence
    /// detector can be demonstrated.
    pub fn validate_strict(&self) -> Result<(), AdaptiveError> {
        self.validate_structure()?;
        if !self.variant.is_set_membership() && !(self.mu > 0.0 && self.mu < 2.0) {
            return Err(AdaptiveError::InvalidConfig(
                "mu must lie in (0,2) for non-set-membership variants".into(),
            ));
        }
        Ok(())
    }
}

/// Ring of the P most recent weight vectors, newest first.
#[derive(Debug, Clone)]
pub struct WeightHistory {
    vectors: VecDeque<Vec<f64>>,
    taps: usize,
}

impl WeightHistory {
    /// All-zero history of `reuse` vectors of `taps` coefficients.
    pub fn new(reuse: usize, taps: usize) -> WeightHistory {
        let mut vectors = VecDeque::with_capacity(reuse);
        for _ in 0..reuse.max(1) {
            vectors.push_back(vec![0.0; taps]);
        }
        WeightHistory { vectors, taps }
    }

    pub fn reuse(&self) -> usize {
        self.vectors.len()
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    /// The current weight vector w(k).
    pub fn newest(&self) -> &[f64] {
        self.vectors.front().expect("history is never empty")
    }

    /// Push w(k+1), discarding the oldest vector.
    pub fn push(&mut self, weights: Vec<f64>) {
        debug_assert_eq!(weights.len(), self.taps);
        self.vectors.pop_back();
        self.vectors.push_front(weights);
    }

    /// Vectors ordered newest to oldest: w(k), w(k-1), ...
    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.vectors.iter()
    }

    /// Snapshot the newest weights as plain text, one coefficient per line.
    pub fn export_newest(&self, path: &Path) -> Result<(), AdaptiveError> {
        textio::write_column(path, self.newest())?;
        Ok(())
    }
}

/// Per-subband smoothed absolute-error estimates.
#[derive(Debug, Clone)]
pub struct SmoothState {
    pub sigma: Vec<f64>,
    pub beta: f64,
}

impl SmoothState {
    pub fn new(num_subbands: usize, beta: f64) -> Result<SmoothState, AdaptiveError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(AdaptiveError::InvalidConfig(format!(
                "smoothing factor beta = {beta} must lie in (0,1)"
            )));
        }
        Ok(SmoothState {
            sigma: vec![0.0; num_subbands],
            beta,
        })
    }

    /// The default smoothing factor `1 - N / (kappa * M)`.
    pub fn default_beta(num_subbands: usize, taps: usize, kappa: f64) -> f64 {
        1.0 - num_subbands as f64 / (kappa * taps as f64)
    }
}

/// Diagonal proportionate gain matrix.
#[derive(Debug, Clone)]
pub struct GainMatrix {
    pub diag: Vec<f64>,
}

impl GainMatrix {
    pub fn sum(&self) -> f64 {
        self.diag.iter().sum()
    }
}

/// Classified subband errors for one frame.
#[derive(Debug, Clone)]
pub struct SubbandErrors {
    pub eps: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Indices whose error magnitude strictly exceeds the bound.
    pub update_set: Vec<usize>,
}

impl SubbandErrors {
    pub fn classify(eps: Vec<f64>, gamma: Vec<f64>) -> SubbandErrors {
        let update_set = eps
            .iter()
            .zip(&gamma)
            .enumerate()
            .filter(|(_, (e, g))| e.abs() > **g)
            .map(|(i, _)| i)
            .collect();
        SubbandErrors {
            eps,
            gamma,
            update_set,
        }
    }
}

/// Result of one adaptation step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// The next weight vector w(k+1); push it into the history.
    pub weights: Vec<f64>,
    /// The step size applied per subband.
    pub step_sizes: Vec<f64>,
    /// Whether each subband contributed an update this iteration.
    pub updated: Vec<bool>,
}

/// Forgetting-weighted average of the stored weight vectors:
/// `wbar = alpha * sum_p rho^p w(k-p)` with `alpha = 1 / sum_p rho^p`.
/// The coefficients sum to one for any (P, rho).
pub fn weighted_average(history: &WeightHistory, rho: f64) -> Vec<f64> {
    let reuse = history.reuse();
    if reuse == 1 || history.taps == 0 {
        return history.newest().to_vec();
    }
    let mut coeff = Vec::with_capacity(reuse);
    let mut power = 1.0;
    let mut total = 0.0;
    for _ in 0..reuse {
        coeff.push(power);
        total += power;
        power *= rho;
    }
    let alpha = 1.0 / total;
    let mut avg = vec![0.0; history.taps];
    for (c, w) in coeff.iter().zip(history.iter()) {
        let scale = alpha * c;
        for (a, v) in avg.iter_mut().zip(w) {
            *a += scale * v;
        }
    }
    avg
}

/// Subband output errors against a candidate weight vector:
/// `eps_i = d_i - u_i^T w`.
pub fn subband_error(frame: &SubbandFrame, weights: &[f64]) -> Result<Vec<f64>, AdaptiveError> {
    if frame.regressor_len() != weights.len() {
        return Err(AdaptiveError::DimensionMismatch(format!(
            "regressor length {} vs weight length {}",
            frame.regressor_len(),
            weights.len()
        )));
    }
    Ok(frame
        .u_vectors
        .iter()
        .zip(&frame.d_decimated)
        .map(|(u, d)| d - dot(u, weights))
        .collect())
}

/// Per-coefficient proportionate gains:
/// `g_m = (1 - lambda) / (2M) + (1 + lambda) |w_m| / (2 ||w||_1 + zeta)`.
pub fn proportionate_gain(
    weights: &[f64],
    lambda: f64,
    zeta: f64,
) -> Result<GainMatrix, AdaptiveError> {
    let l1: f64 = weights.iter().map(|w| w.abs()).sum();
    let denom = 2.0 * l1 + zeta;
    if denom <= 0.0 {
        return Err(AdaptiveError::InvalidInput(
            "zero weights with zeta = 0 leave the gain normalization undefined".into(),
        ));
    }
    let m = weights.len() as f64;
    let floor = (1.0 - lambda) / (2.0 * m);
    let diag = weights
        .iter()
        .map(|w| floor + (1.0 + lambda) * w.abs() / denom)
        .collect();
    Ok(GainMatrix { diag })
}

/// Error bound shared by all subbands: `gamma = sqrt(t * sigma_eta^2 / N)`.
pub fn threshold_gamma(t: f64, sigma_eta_sq: f64, num_subbands: usize) -> f64 {
    (t * sigma_eta_sq / num_subbands as f64).sqrt()
}

/// Set-membership step size: `1 - gamma / |eps|` past the bound, else zero.
pub fn sm_step_size(eps_abs: f64, gamma: f64) -> f64 {
    if eps_abs > gamma {
        1.0 - gamma / eps_abs
    } else {
        0.0
    }
}

/// Advance the smoothed absolute-error estimate for one subband:
/// `sigma(k) = beta * sigma(k-1) + (1 - beta) * |eps(k)|`.
pub fn smooth_update(state: &mut SmoothState, subband: usize, eps_abs: f64) -> f64 {
    let sigma = state.beta * state.sigma[subband] + (1.0 - state.beta) * eps_abs;
    state.sigma[subband] = sigma;
    sigma
}

/// Smoothed set-membership step size: `1 - gamma / sigma` when both the
/// instantaneous and smoothed errors exceed the bound, else zero. The min()
/// guard keeps the step size non-negative.
pub fn ssm_step_size(eps_abs: f64, sigma: f64, gamma: f64) -> f64 {
    if eps_abs.min(sigma) > gamma {
        1.0 - gamma / sigma
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One unified adaptation step over all subbands of a frame.
///
/// The caller owns the state: push the returned weights into the history
/// afterwards. `gamma` supplies the per-subband bounds for the
/// set-membership variants and is ignored by the others. Subbands whose
/// step size is zero (or whose normalization is zero with `delta = 0`)
/// contribute nothing and are flagged as non-updating.
pub fn adapt_step(
    history: &WeightHistory,
    frame: &SubbandFrame,
    cfg: &AlgoConfig,
    smooth: &mut SmoothState,
    gamma: &[f64],
) -> Result<StepOutcome, AdaptiveError> {
    cfg.validate_structure()?;
    let num_subbands = frame.num_subbands();
    if frame.regressor_len() != history.taps() {
        return Err(AdaptiveError::DimensionMismatch(format!(
            "regressor length {} vs filter length {}",
            frame.regressor_len(),
            history.taps()
        )));
    }
    if cfg.variant.is_set_membership() && gamma.len() != num_subbands {
        return Err(AdaptiveError::DimensionMismatch(format!(
            "{} thresholds for {} subbands",
            gamma.len(),
            num_subbands
        )));
    }

    let w_bar = weighted_average(history, cfg.rho);
    let eps = subband_error(frame, &w_bar)?;

    // Gains follow the newest weight vector w(k), not the average.
    let gain = if cfg.variant.is_proportionate() {
        Some(proportionate_gain(history.newest(), cfg.lambda, cfg.zeta)?)
    } else {
        None
    };

    let mut step_sizes = Vec::with_capacity(num_subbands);
    for (i, e) in eps.iter().enumerate() {
        let mu = if cfg.variant.is_smoothed() {
            // The estimate is refreshed every iteration, gated or not.
            let sigma = smooth_update(smooth, i, e.abs());
            ssm_step_size(e.abs(), sigma, gamma[i])
        } else if cfg.variant.is_set_membership() {
            sm_step_size(e.abs(), gamma[i])
        } else {
            cfg.mu
        };
        step_sizes.push(mu);
    }

    let mut weights = w_bar;
    let mut updated = vec![false; num_subbands];
    for i in 0..num_subbands {
        let mu = step_sizes[i];
        if mu == 0.0 {
            continue;
        }
        let u = &frame.u_vectors[i];
        match &gain {
            Some(g) => {
                let denom: f64 = u
                    .iter()
                    .zip(&g.diag)
                    .map(|(ui, gi)| gi * ui * ui)
                    .sum::<f64>()
                    + cfg.delta;
                if denom <= 0.0 {
                    continue;
                }
                let scale = mu * eps[i] / denom;
                for ((w, ui), gi) in weights.iter_mut().zip(u).zip(&g.diag) {
                    *w += scale * gi * ui;
                }
            }
            None => {
                let denom = dot(u, u) + cfg.delta;
                if denom <= 0.0 {
                    continue;
                }
                let scale = mu * eps[i] / denom;
                for (w, ui) in weights.iter_mut().zip(u) {
                    *w += scale * ui;
                }
            }
        }
        updated[i] = true;
    }

    Ok(StepOutcome {
        weights,
        step_sizes,
        updated,
    })
}

/// Exact solution of the constrained minimal-disturbance problem, used as a
/// test oracle for the diagonal assumption.
///
/// Starting from the weighted average, the weights move so that every
/// subband whose error magnitude exceeds its bound lands on the nearest
/// boundary of the constraint set (`b_i = gamma_i * sgn(eps_i)`), while
/// already-satisfied subbands stay untouched. The restricted Gram system
/// `(U_s^T U_s) theta = eps_s - b_s` is solved exactly, so no diagonal
/// approximation is involved. Small instances only.
pub fn exact_update_oracle(
    history: &WeightHistory,
    frame: &SubbandFrame,
    rho: f64,
    gamma: &[f64],
) -> Result<Vec<f64>, AdaptiveError> {
    let w_bar = weighted_average(history, rho);
    let eps = subband_error(frame, &w_bar)?;
    if gamma.len() != eps.len() {
        return Err(AdaptiveError::DimensionMismatch(format!(
            "{} thresholds for {} subbands",
            gamma.len(),
            eps.len()
        )));
    }
    let active: Vec<usize> = (0..eps.len())
        .filter(|&i| eps[i].abs() > gamma[i])
        .collect();
    if active.is_empty() {
        return Ok(w_bar);
    }
    let n = active.len();
    // Gram matrix of the active regressors and the boundary-shifted errors.
    let mut a = vec![vec![0.0f64; n]; n];
    let mut rhs = vec![0.0f64; n];
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            a[r][c] = dot(&frame.u_vectors[i], &frame.u_vectors[j]);
        }
        rhs[r] = eps[i] - gamma[i] * eps[i].signum();
    }
    let theta = solve_dense(&mut a, &mut rhs)?;
    let mut weights = w_bar;
    for (r, &i) in active.iter().enumerate() {
        for (w, ui) in weights.iter_mut().zip(&frame.u_vectors[i]) {
            *w += theta[r] * ui;
        }
    }
    Ok(weights)
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_dense(a: &mut [Vec<f64>], rhs: &mut [f64]) -> Result<Vec<f64>, AdaptiveError> {
    let n = rhs.len();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() <= 1e-12 * scale.max(1e-300) {
            return Err(AdaptiveError::SingularMatrix);
        }
        a.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for c in row + 1..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn history_from(vectors: &[Vec<f64>]) -> WeightHistory {
        // vectors[0] is the oldest; pushing leaves the last one newest.
        let mut h = WeightHistory::new(vectors.len(), vectors[0].len());
        for v in vectors {
            h.push(v.clone());
        }
        h
    }

    fn frame_from(u_vectors: Vec<Vec<f64>>, d: Vec<f64>) -> SubbandFrame {
        SubbandFrame {
            k: 0,
            warm_up: false,
            u_vectors,
            d_decimated: d,
        }
    }

    #[test]
    fn weighted_average_examples() {
        let h = history_from(&[vec![3.0, -1.0]]);
        assert_eq!(weighted_average(&h, 0.7), vec![3.0, -1.0]);

        let h = history_from(&[vec![0.0], vec![2.0]]);
        assert_relative_eq!(weighted_average(&h, 1.0)[0], 1.0, epsilon = 1e-15);

        let h = history_from(&[vec![4.0], vec![1.0]]);
        assert_relative_eq!(weighted_average(&h, 0.5)[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_average_coefficients_sum_to_one() {
        for &(reuse, rho) in &[(1usize, 0.3), (2, 1.0), (3, 0.2), (5, 0.9), (8, 0.5)] {
            let vectors: Vec<Vec<f64>> = (0..reuse).map(|_| vec![1.0]).collect();
            let h = history_from(&vectors);
            // A history of all-ones vectors averages to exactly one iff the
            // coefficients sum to one.
            assert_relative_eq!(weighted_average(&h, rho)[0], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn subband_error_examples() {
        let frame = frame_from(vec![vec![1.0, 2.0], vec![0.5, -1.0]], vec![5.0, -0.5]);
        let eps = subband_error(&frame, &[1.0, 2.0]).unwrap();
        assert_relative_eq!(eps[0], 0.0, epsilon = 1e-15);
        // -0.5 - (0.5 * 1 + (-1) * 2) = 1.0
        assert_relative_eq!(eps[1], 1.0, epsilon = 1e-12);
        // dimension mismatch
        assert!(subband_error(&frame, &[1.0]).is_err());
    }

    #[test]
    fn proportionate_gain_examples() {
        let g = proportionate_gain(&[1.0, 0.0, 0.0, 0.0], 0.0, 0.0).unwrap();
        assert_eq!(g.diag, vec![0.625, 0.125, 0.125, 0.125]);

        let g = proportionate_gain(&[0.3, -2.0, 0.7], -1.0, 0.5).unwrap();
        for v in &g.diag {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }

        let g = proportionate_gain(&[0.0; 4], 0.0, 0.1).unwrap();
        for v in &g.diag {
            assert_relative_eq!(*v, 1.0 / 8.0, epsilon = 1e-15);
        }

        assert!(proportionate_gain(&[0.0; 4], 0.0, 0.0).is_err());
    }

    #[test]
    fn gain_sum_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = rng.gen_range(1..32);
            let w: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let lambda = rng.gen_range(-1.0..1.0);
            let zeta = rng.gen_range(1e-6..1e-2);
            let g = proportionate_gain(&w, lambda, zeta).unwrap();
            let l1: f64 = w.iter().map(|x| x.abs()).sum();
            let expected = (1.0 - lambda) / 2.0 + (1.0 + lambda) * l1 / (2.0 * l1 + zeta);
            assert_relative_eq!(g.sum(), expected, epsilon = 1e-12);
            assert!(g.sum() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_gamma(0.0, 0.3, 8), 0.0);
        assert_relative_eq!(threshold_gamma(3.0, 0.08, 8), 0.03f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(threshold_gamma(2.0, 0.1, 8), 0.158113883, epsilon = 1e-9);
    }

    #[test]
    fn sm_step_size_examples() {
        assert_relative_eq!(sm_step_size(0.4, 0.2), 0.5, epsilon = 1e-15);
        assert_eq!(sm_step_size(0.2, 0.2), 0.0);
        assert_eq!(sm_step_size(0.1, 0.2), 0.0);
        assert_eq!(sm_step_size(0.7, 0.0), 1.0);
        assert_eq!(sm_step_size(0.0, 0.0), 0.0);
    }

    #[test]
    fn ssm_step_size_examples() {
        let gamma = 0.1;
        assert_relative_eq!(ssm_step_size(0.3, 0.2, gamma), 0.5, epsilon = 1e-15);
        // Smoothed estimate below the bound: no update even for large errors.
        assert_eq!(ssm_step_size(0.5, 0.05, gamma), 0.0);
        // Instantaneous error within the bound: no update regardless of sigma.
        assert_eq!(ssm_step_size(0.08, 0.4, gamma), 0.0);
    }

    #[test]
    fn smoothing_examples_and_closed_form() {
        let mut s = SmoothState::new(1, 0.5).unwrap();
        assert_relative_eq!(smooth_update(&mut s, 0, 2.0), 1.0, epsilon = 1e-15);

        s.sigma[0] = 0.7;
        assert_relative_eq!(smooth_update(&mut s, 0, 0.7), 0.7, epsilon = 1e-15);

        // Constant |eps| = c from sigma(0) = 0 follows (1 - beta^k) c.
        let beta = 0.97;
        let c = 1.3;
        let mut s = SmoothState::new(1, beta).unwrap();
        for k in 1..=200 {
            let sigma = smooth_update(&mut s, 0, c);
            let expected = (1.0 - beta.powi(k)) * c;
            assert_relative_eq!(sigma, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn step_sizes_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let gamma = rng.gen_range(1e-6..2.0);
            let eps: f64 = rng.gen_range(0.0..4.0);
            let sigma: f64 = rng.gen_range(0.0..4.0);
            let mu = sm_step_size(eps, gamma);
            assert!((0.0..1.0).contains(&mu), "sm mu = {mu}");
            let mu = ssm_step_size(eps, sigma, gamma);
            assert!((0.0..1.0).contains(&mu), "ssm mu = {mu}");
        }
    }

    #[test]
    fn adapt_step_scalar_normalized_update() {
        // One subband, regressor e1, error 2: the first weight moves to 2.
        let history = WeightHistory::new(1, 4);
        let mut u = vec![0.0; 4];
        u[0] = 1.0;
        let frame = frame_from(vec![u], vec![2.0]);
        let mut cfg = AlgoConfig::new(Variant::SmInsaf);
        cfg.reuse = 1;
        let mut smooth = SmoothState::new(1, 0.9).unwrap();
        let out = adapt_step(&history, &frame, &cfg, &mut smooth, &[0.0]).unwrap();
        assert_eq!(out.weights[0], 2.0);
        assert!(out.updated[0]);
        assert_eq!(out.step_sizes[0], 1.0);
    }

    #[test]
    fn gated_step_returns_average_exactly() {
        let mut history = WeightHistory::new(2, 3);
        history.push(vec![1.0, -2.0, 0.5]);
        let frame = frame_from(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            vec![0.51, -1.01],
        );
        let cfg = AlgoConfig::new(Variant::SmInsaf);
        let mut smooth = SmoothState::new(2, 0.9).unwrap();
        // Bounds larger than any error: no subband updates.
        let out = adapt_step(&history, &frame, &cfg, &mut smooth, &[10.0, 10.0]).unwrap();
        let w_bar = weighted_average(&history, cfg.rho);
        assert_eq!(out.weights, w_bar);
        assert!(out.updated.iter().all(|u| !u));
        assert!(out.step_sizes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn reduction_sm_equals_insaf_when_gamma_zero_and_mu_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n) = (8, 4);
        let mut history = WeightHistory::new(2, m);
        history.push((0..m).map(|_| StandardNormal.sample(&mut rng)).collect());
        let frame = frame_from(
            (0..n)
                .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect(),
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        );
        let sm = AlgoConfig {
            t: 0.0,
            ..AlgoConfig::new(Variant::SmInsaf)
        };
        let insaf = AlgoConfig::new(Variant::Insaf);
        let mut smooth = SmoothState::new(n, 0.9).unwrap();
        let a = adapt_step(&history, &frame, &sm, &mut smooth, &[0.0; 4]).unwrap();
        let b = adapt_step(&history, &frame, &insaf, &mut smooth, &[0.0; 4]).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn reduction_uniform_gain_matches_non_proportionate() {
        // lambda = -1 gives g_m = 1/M; with delta = 0 and M a power of two
        // the proportionate route is bit-identical to the plain one.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, n) = (8, 3);
        let mut history = WeightHistory::new(2, m);
        history.push((0..m).map(|_| StandardNormal.sample(&mut rng)).collect());
        let frame = frame_from(
            (0..n)
                .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect(),
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        );
        let gamma = vec![0.4; n];
        let prop = AlgoConfig {
            lambda: -1.0,
            ..AlgoConfig::new(Variant::SmIpInsaf)
        };
        let plain = AlgoConfig::new(Variant::SmInsaf);
        let mut smooth = SmoothState::new(n, 0.9).unwrap();
        let a = adapt_step(&history, &frame, &prop, &mut smooth, &gamma).unwrap();
        let b = adapt_step(&history, &frame, &plain, &mut smooth, &gamma).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.updated, b.updated);
    }

    #[test]
    fn reduction_single_reuse_is_bit_exact() {
        // With P = 1 the average is w(k) itself, bit for bit.
        let mut history = WeightHistory::new(1, 3);
        history.push(vec![0.1, -0.7, 3.3e-5]);
        let avg = weighted_average(&history, 0.37);
        assert_eq!(avg.as_slice(), history.newest());
    }

    fn orthogonalize(vectors: &mut [Vec<f64>]) {
        for i in 0..vectors.len() {
            for j in 0..i {
                let proj = dot(&vectors[i], &vectors[j]) / dot(&vectors[j], &vectors[j]);
                let vj = vectors[j].clone();
                for (vi, pj) in vectors[i].iter_mut().zip(&vj) {
                    *vi -= proj * pj;
                }
            }
        }
    }

    #[test]
    fn oracle_matches_adapt_step_on_orthogonal_regressors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for round in 0..100 {
            let m = rng.gen_range(4..=8);
            let n = rng.gen_range(1..=4.min(m));
            let reuse = rng.gen_range(1..=3);
            let rho = rng.gen_range(0.2..=1.0);
            let mut history = WeightHistory::new(reuse, m);
            for _ in 0..reuse {
                history.push((0..m).map(|_| StandardNormal.sample(&mut rng)).collect());
            }
            let mut u: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            orthogonalize(&mut u);
            let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let frame = frame_from(u, d);
            let gamma_val = rng.gen_range(0.0..0.5);
            let gamma = vec![gamma_val; n];
            let cfg = AlgoConfig {
                rho,
                reuse,
                ..AlgoConfig::new(Variant::SmInsaf)
            };
            let mut smooth = SmoothState::new(n, 0.9).unwrap();
            let step = adapt_step(&history, &frame, &cfg, &mut smooth, &gamma).unwrap();
            let oracle = exact_update_oracle(&history, &frame, rho, &gamma).unwrap();
            for (a, b) in step.weights.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "round {round}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn oracle_satisfies_constraint_with_zero_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (m, n) = (6, 3);
        let mut history = WeightHistory::new(1, m);
        history.push((0..m).map(|_| StandardNormal.sample(&mut rng)).collect());
        let u: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let frame = frame_from(u.clone(), d.clone());
        let w = exact_update_oracle(&history, &frame, 1.0, &[0.0; 3]).unwrap();
        for i in 0..n {
            assert!((d[i] - dot(&u[i], &w)).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_single_band_is_a_normalized_step() {
        let mut history = WeightHistory::new(1, 2);
        history.push(vec![0.5, 0.0]);
        let frame = frame_from(vec![vec![2.0, 0.0]], vec![3.0]);
        let w = exact_update_oracle(&history, &frame, 1.0, &[0.0]).unwrap();
        // eps = 3 - 1 = 2; w0 = 0.5 + 2 * 2 / 4 = 1.5.
        assert_relative_eq!(w[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(w[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_rejects_singular_gram() {
        let mut history = WeightHistory::new(1, 3);
        history.push(vec![0.0; 3]);
        let u = vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]];
        let frame = frame_from(u, vec![1.0, 2.0]);
        assert!(matches!(
            exact_update_oracle(&history, &frame, 1.0, &[0.0, 0.0]),
            Err(AdaptiveError::SingularMatrix)
        ));
    }

    #[test]
    fn sm_update_lands_on_constraint_boundary() {
        // Single violating subband with orthogonal regressors: the
        // post-update error magnitude equals gamma.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 6;
        let mut history = WeightHistory::new(2, m);
        history.push((0..m).map(|_| StandardNormal.sample(&mut rng)).collect());
        let mut u: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        orthogonalize(&mut u);
        let w_bar = weighted_average(&history, 1.0);
        // Subband 0 violates; subband 1 sits inside its bound.
        let d = vec![dot(&u[0], &w_bar) + 2.0, dot(&u[1], &w_bar) + 0.01];
        let frame = frame_from(u.clone(), d.clone());
        let gamma = vec![0.5, 0.5];
        let cfg = AlgoConfig::new(Variant::SmInsaf);
        let mut smooth = SmoothState::new(2, 0.9).unwrap();
        let out = adapt_step(&history, &frame, &cfg, &mut smooth, &gamma).unwrap();
        assert!(out.updated[0] && !out.updated[1]);
        let post = (d[0] - dot(&u[0], &out.weights)).abs();
        assert!((post - 0.5).abs() < 1e-9, "post-update error {post}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = AlgoConfig::new(Variant::SmInsaf);
        cfg.rho = 1.5;
        assert!(cfg.validate_structure().is_err());

        let mut cfg = AlgoConfig::new(Variant::Insaf);
        cfg.mu = 2.5;
        assert!(cfg.validate_structure().is_ok());
        assert!(cfg.validate_strict().is_err());

        let mut cfg = AlgoConfig::new(Variant::SmInsaf);
        cfg.mu = 2.5; // unused by the gated policy
        assert!(cfg.validate_strict().is_ok());

        let mut cfg = AlgoConfig::new(Variant::Nsaf);
        cfg.reuse = 2;
        assert!(cfg.validate_structure().is_err());
    }

    #[test]
    fn history_ring_discipline() {
        let mut h = WeightHistory::new(3, 1);
        h.push(vec![1.0]);
        h.push(vec![2.0]);
        h.push(vec![3.0]);
        h.push(vec![4.0]);
        let got: Vec<f64> = h.iter().map(|v| v[0]).collect();
        assert_eq!(got, vec![4.0, 3.0, 2.0]);
        assert_eq!(h.newest(), &[4.0]);
        assert_eq!(h.reuse(), 3);
    }

    #[test]
    fn subband_errors_classification() {
        let se = SubbandErrors::classify(vec![0.5, -0.1, -0.9, 0.2], vec![0.2; 4]);
        assert_eq!(se.update_set, vec![0, 2]);
        // Tie |eps| == gamma stays out of the update set.
        let se = SubbandErrors::classify(vec![0.2], vec![0.2]);
        assert!(se.update_set.is_empty());
    }
}
