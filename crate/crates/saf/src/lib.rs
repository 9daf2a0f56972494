//! Subband adaptive filtering for acoustic echo cancellation.
//!
//! This crate implements the improved normalized subband adaptive filter
//! (INSAF) family together with its proportionate, set-membership and
//! smoothed-set-membership variants, built on a cosine-modulated analysis
//! filter bank in the delayless open-loop multiband structure. A Monte-Carlo
//! harness drives seeded echo-cancellation experiments and reports NMSD
//! learning curves, per-subband update rates and an analytic cost model.
//!
//! Modules:
//! - [`filterbank`]: prototype lowpass design, cosine modulation,
//!   band-splitting with N-fold decimation, paraunitarity checks.
//! - [`signals`]: seeded AR(1)/white-noise/speech-like generators, WAV I/O,
//!   synthetic sparse and dispersive echo paths, SNR calibration.
//! - [`adaptive`]: weight-history averaging, proportionate gains,
//!   set-membership step-size policies and the unified weight update.
//! - [`harness`]: full simulation trials, NMSD metric, Monte-Carlo
//!   ensembles, update-rate reports and the complexity model.
//! - [`cli`]: configuration files, experiment presets and CSV output.

pub mod adaptive;
pub mod cli;
pub mod filterbank;
pub mod harness;
pub mod signals;
pub mod textio;
