//! Command-line front end: JSON experiment configs, presets keyed to the
//! standard experiment setups, and CSV result files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use num_rational::Ratio;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer};

use crate::adaptive::{AlgoConfig, Variant};
use crate::harness::{cost_model, monte_carlo, ExperimentConfig, HarnessError, MonteCarloResult};
use crate::signals::PathKind;

/// CLI failure modes, each mapped to a distinct exit status.
#[derive(Debug)]
pub enum CliError {
    /// Exit status 1.
    Validation(String),
    /// Exit status 1.
    Parse(String),
    /// Exit status 2.
    Divergence(String),
    /// Exit status 3.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Parse(_) => 1,
            CliError::Divergence(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m)
            | CliError::Parse(m)
            | CliError::Divergence(m)
            | CliError::Io(m) => m,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(err: HarnessError) -> CliError {
        match err {
            HarnessError::Divergence(_) => CliError::Divergence(err.to_string()),
            HarnessError::Filterbank(crate::filterbank::FilterbankError::Io(e)) => {
                CliError::Io(e.to_string())
            }
            HarnessError::Signal(crate::signals::SignalError::Io(e)) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// Raw per-algorithm entry; unset fields fall back to the variant defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlgoSpec {
    variant: String,
    mu: Option<f64>,
    p: Option<usize>,
    rho: Option<f64>,
    t: Option<f64>,
    lambda: Option<f64>,
    zeta: Option<f64>,
    kappa: Option<f64>,
    delta: Option<f64>,
    label: Option<String>,
}

impl AlgoSpec {
    fn resolve(self) -> Result<AlgoConfig, String> {
        let variant = Variant::parse(&self.variant).ok_or_else(|| {
            format!(
                "unknown variant {:?}; expected one of nsaf, insaf, ip-insaf, sm-insaf, \
                 ssm-insaf, sm-ip-insaf, ssm-ip-insaf",
                self.variant
            )
        })?;
        let mut cfg = AlgoConfig::new(variant);
        if let Some(v) = self.mu {
            cfg.mu = v;
        }
        if let Some(v) = self.p {
            cfg.reuse = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.t {
            cfg.t = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.zeta {
            cfg.zeta = v;
        }
        if let Some(v) = self.kappa {
            cfg.kappa = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        cfg.label = self.label;
        Ok(cfg)
    }
}

/// Deserialize an algorithm list, applying per-variant defaults.
pub fn deserialize_algos<'de, D>(deserializer: D) -> Result<Vec<AlgoConfig>, D::Error>
where
    D: Deserializer<'de>,
{
    let specs = Vec::<AlgoSpec>::deserialize(deserializer)?;
    specs
        .into_iter()
        .map(|s| s.resolve().map_err(D::Error::custom))
        .collect()
}

/// Keys that configure algorithms rather than the experiment; at the top
/// level of a config file (or in `--set`) they apply to every algorithm.
const ALGO_KEYS: [&str; 8] = ["mu", "p", "rho", "t", "lambda", "zeta", "kappa", "delta"];

const EXPERIMENT_KEYS: [&str; 12] = [
    "input_kind",
    "ar_pole",
    "input_path",
    "path_kind",
    "m",
    "n",
    "snr_db",
    "num_samples",
    "shift_at_half",
    "shift_amount",
    "trials",
    "base_seed",
];

/// Parse and fully validate an experiment config from JSON text.
///
/// Top-level keys mirror the experiment fields; algorithm-parameter keys at
/// the top level apply to every entry of `algos`. An empty object yields
/// the standard defaults.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| CliError::Parse(format!("config parse error: {e}")))?;
    let object = value
        .as_object_mut()
        .ok_or_else(|| CliError::Parse("config must be a JSON object".into()))?;
    let mut algo_overrides = Vec::new();
    for key in ALGO_KEYS {
        if let Some(v) = object.remove(key) {
            algo_overrides.push((key, json_scalar_to_string(&v, key)?));
        }
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Parse(format!("config parse error: {e}")))?;
    for (key, v) in algo_overrides {
        apply_override(&mut cfg, key, &v)?;
    }
    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(cfg)
}

/// Parse a config file; see [`parse_config_str`].
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn json_scalar_to_string(v: &serde_json::Value, key: &str) -> Result<String, CliError> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        _ => Err(CliError::Parse(format!("key {key:?} must be a scalar"))),
    }
}

/// Apply one `key=value` override. Experiment keys set the matching field;
/// algorithm keys apply to every configured algorithm.
pub fn apply_override(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), CliError> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
        value.parse().map_err(|_| {
            CliError::Validation(format!("cannot parse {value:?} as a value for {key:?}"))
        })
    }
    match key {
        "input_kind" => {
            cfg.input_kind = match value {
                "ar1" => crate::harness::InputKind::Ar1,
                "wgn" => crate::harness::InputKind::Wgn,
                "wav" => crate::harness::InputKind::Wav,
                "speechlike" => crate::harness::InputKind::Speechlike,
                _ => {
                    return Err(CliError::Validation(format!(
                        "input_kind {value:?} is not one of ar1, wgn, wav, speechlike"
                    )))
                }
            }
        }
        "ar_pole" => cfg.ar_pole = parse(key, value)?,
        "input_path" => cfg.input_path = Some(PathBuf::from(value)),
        "path_kind" => {
            cfg.path_kind = match value {
                "sparse" => PathKind::Sparse,
                "dispersive" => PathKind::Dispersive,
                _ => {
                    return Err(CliError::Validation(format!(
                        "path_kind {value:?} is not one of sparse, dispersive"
                    )))
                }
            }
        }
        "m" => cfg.m = parse(key, value)?,
        "n" => cfg.n = parse(key, value)?,
        "snr_db" => cfg.snr_db = parse(key, value)?,
        "num_samples" => cfg.num_samples = parse(key, value)?,
        "shift_at_half" => cfg.shift_at_half = parse(key, value)?,
        "shift_amount" => cfg.shift_amount = parse(key, value)?,
        "trials" => cfg.trials = parse(key, value)?,
        "base_seed" => cfg.base_seed = parse(key, value)?,
        "mu" => for_each_algo(cfg, |a| a.mu = parse("mu", value).unwrap_or(a.mu), key, value)?,
        "p" => {
            let v: usize = parse(key, value)?;
            for a in &mut cfg.algos {
                a.reuse = v;
            }
        }
        "rho" => {
            let v: f64 = parse(key, value)?;
            for a in &mut cfg.algos {
                a.rho = v;
            }
        }
        "t" => {
            let v: f64 = parse(key, value)?;
            for a in &mut cfg.algos {
                a.t = v;
            }
        }
        "lambda" => {
            let v: f64 = parse(key, value)?;
            for a in &mut cfg.algos {
                a.lambda = v;
            }
        }
        "zeta" => {
            let v: f64 = parse(key, value)?;
            for a in &mut cfg.algos {
                a.zeta = v;
            }
        }
        "kappa" => {
            let v: f64 = parse(key, value)?;
            for a in &mut cfg.algos {
                a.kappa = v;
            }
        }
        "delta" => {
            let v: f64 = parse(key, value)?;
            for a in &mut cfg.algos {
                a.delta = v;
            }
        }
        _ => {
            return Err(CliError::Validation(format!(
                "unknown config key {key:?}; experiment keys: {}; algorithm keys: {}",
                EXPERIMENT_KEYS.join(", "),
                ALGO_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

fn for_each_algo(
    cfg: &mut ExperimentConfig,
    f: impl Fn(&mut AlgoConfig),
    key: &str,
    value: &str,
) -> Result<(), CliError> {
    // validate parsability once up front
    let _: f64 = value
        .parse()
        .map_err(|_| CliError::Validation(format!("cannot parse {value:?} as a value for {key:?}")))?;
    for a in &mut cfg.algos {
        f(a);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// One experiment bound to a label inside a preset.
#[derive(Debug, Clone)]
pub struct PresetRun {
    pub label: String,
    pub config: ExperimentConfig,
}

/// A named experiment setup; larger presets expand to several runs.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub runs: Vec<PresetRun>,
}

pub const PRESET_NAMES: [&str; 7] = [
    "fig3a", "fig3b", "fig3c", "fig4a", "fig6a", "fig7a", "table3",
];

fn base_experiment(path_kind: PathKind, shift: bool) -> ExperimentConfig {
    ExperimentConfig {
        path_kind,
        shift_at_half: shift,
        algos: Vec::new(),
        ..ExperimentConfig::default()
    }
}

fn sm_insaf(reuse: usize, rho: f64, t: f64, label: &str) -> AlgoConfig {
    let mut a = AlgoConfig::new(Variant::SmInsaf);
    a.reuse = reuse;
    a.rho = rho;
    a.t = t;
    a.with_label(label)
}

/// Look up a preset by name.
pub fn preset(name: &str) -> Option<Preset> {
    let p = match name {
        "fig3a" => {
            // Subband-count sweep: one run per N.
            let runs = [2usize, 4, 8]
                .iter()
                .map(|&n| {
                    let mut cfg = base_experiment(PathKind::Dispersive, false);
                    cfg.n = n;
                    cfg.algos = vec![sm_insaf(3, 1.0, 2.0, "sm-insaf")];
                    PresetRun {
                        label: format!("n{n}"),
                        config: cfg,
                    }
                })
                .collect();
            Preset {
                name: "fig3a",
                description: "sm-insaf subband-count sweep (N = 2, 4, 8)",
                runs,
            }
        }
        "fig3b" => {
            let mut cfg = base_experiment(PathKind::Dispersive, false);
            cfg.algos = vec![
                sm_insaf(3, 0.2, 2.0, "sm-insaf-rho0.2"),
                sm_insaf(3, 0.6, 2.0, "sm-insaf-rho0.6"),
                sm_insaf(3, 1.0, 2.0, "sm-insaf-rho1"),
            ];
            Preset {
                name: "fig3b",
                description: "sm-insaf forgetting-factor sweep (rho = 0.2, 0.6, 1)",
                runs: vec![PresetRun {
                    label: String::new(),
                    config: cfg,
                }],
            }
        }
        "fig3c" => {
            let mut cfg = base_experiment(PathKind::Dispersive, false);
            cfg.algos = vec![
                sm_insaf(1, 1.0, 2.0, "sm-insaf-p1"),
                sm_insaf(2, 1.0, 2.0, "sm-insaf-p2"),
                sm_insaf(3, 1.0, 2.0, "sm-insaf-p3"),
            ];
            Preset {
                name: "fig3c",
                description: "sm-insaf weight-reuse sweep (P = 1, 2, 3)",
                runs: vec![PresetRun {
                    label: String::new(),
                    config: cfg,
                }],
            }
        }
        "fig4a" => {
            let mut cfg = base_experiment(PathKind::Dispersive, true);
            let mut nsaf = AlgoConfig::new(Variant::Nsaf);
            nsaf.mu = 1.0;
            let mut insaf1 = AlgoConfig::new(Variant::Insaf).with_label("insaf-mu1");
            insaf1.mu = 1.0;
            let mut insaf01 = AlgoConfig::new(Variant::Insaf).with_label("insaf-mu0.1");
            insaf01.mu = 0.1;
            cfg.algos = vec![
                nsaf,
                insaf1,
                insaf01,
                sm_insaf(1, 1.0, 3.0, "sm-nsaf"),
                sm_insaf(2, 1.0, 2.0, "sm-insaf"),
                AlgoConfig::new(Variant::SsmInsaf),
            ];
            Preset {
                name: "fig4a",
                description: "dispersive path: nsaf, insaf, sm-nsaf and the proposed variants",
                runs: vec![PresetRun {
                    label: String::new(),
                    config: cfg,
                }],
            }
        }
        "fig6a" => {
            let mut cfg = base_experiment(PathKind::Sparse, true);
            let mut sm_ipnsaf = AlgoConfig::new(Variant::SmIpInsaf).with_label("sm-ipnsaf");
            sm_ipnsaf.reuse = 1;
            cfg.algos = vec![
                sm_ipnsaf,
                AlgoConfig::new(Variant::IpInsaf),
                sm_insaf(2, 1.0, 2.0, "sm-insaf"),
                AlgoConfig::new(Variant::SsmInsaf),
                AlgoConfig::new(Variant::SmIpInsaf),
                AlgoConfig::new(Variant::SsmIpInsaf),
            ];
            Preset {
                name: "fig6a",
                description: "sparse path: proportionate variants against their baselines",
                runs: vec![PresetRun {
                    label: String::new(),
                    config: cfg,
                }],
            }
        }
        "fig7a" => {
            let mut cfg = base_experiment(PathKind::Dispersive, true);
            let mut sm_ip = AlgoConfig::new(Variant::SmIpInsaf);
            sm_ip.lambda = -0.5;
            let mut ssm_ip = AlgoConfig::new(Variant::SsmIpInsaf);
            ssm_ip.lambda = -0.5;
            cfg.algos = vec![
                sm_insaf(2, 1.0, 2.0, "sm-insaf"),
                AlgoConfig::new(Variant::SsmInsaf),
                sm_ip,
                ssm_ip,
            ];
            Preset {
                name: "fig7a",
                description: "dispersive path: the four proposed variants, lambda = -0.5",
                runs: vec![PresetRun {
                    label: String::new(),
                    config: cfg,
                }],
            }
        }
        "table3" => {
            let mut dispersive = base_experiment(PathKind::Dispersive, true);
            dispersive.algos = vec![
                AlgoConfig::new(Variant::Insaf),
                sm_insaf(2, 1.0, 2.0, "sm-insaf"),
                AlgoConfig::new(Variant::SsmInsaf),
            ];
            let mut sparse = base_experiment(PathKind::Sparse, true);
            sparse.algos = vec![
                AlgoConfig::new(Variant::IpInsaf),
                AlgoConfig::new(Variant::SmIpInsaf),
                AlgoConfig::new(Variant::SsmIpInsaf),
            ];
            Preset {
                name: "table3",
                description: "per-subband update rates on the dispersive and sparse paths",
                runs: vec![
                    PresetRun {
                        label: "dispersive".into(),
                        config: dispersive,
                    },
                    PresetRun {
                        label: "sparse".into(),
                        config: sparse,
                    },
                ],
            }
        }
        _ => return None,
    };
    Some(p)
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// Where and what to write.
#[derive(Debug, Clone)]
pub struct OutputSpec {
    pub out_dir: PathBuf,
    pub write_traces: bool,
    pub write_rates: bool,
    pub write_costs: bool,
}

impl OutputSpec {
    pub fn new(out_dir: impl Into<PathBuf>) -> OutputSpec {
        OutputSpec {
            out_dir: out_dir.into(),
            write_traces: true,
            write_rates: true,
            write_costs: true,
        }
    }
}

/// Nine significant digits, the fixed precision of every float cell.
fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

fn ratio_cell(r: Ratio<i64>) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    let mut f =
        fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// NMSD traces: `iteration,<label>_nmsd_db,...`, one row per decimated index.
pub fn traces_csv(result: &MonteCarloResult) -> String {
    let mut out = String::new();
    out.push_str("iteration");
    for label in &result.labels {
        let _ = write!(out, ",{label}_nmsd_db");
    }
    out.push('\n');
    let len = result.nmsd_db.first().map(Vec::len).unwrap_or(0);
    for row in 0..len {
        let _ = write!(out, "{}", result.first_k + row);
        for trace in &result.nmsd_db {
            let _ = write!(out, ",{}", sig9(trace[row]));
        }
        out.push('\n');
    }
    out
}

/// Update rates: one row per subband plus the across-subband average.
pub fn rates_csv(result: &MonteCarloResult) -> String {
    let mut out = String::new();
    out.push_str("subband");
    for label in &result.labels {
        let _ = write!(out, ",{label}_f_up");
    }
    out.push('\n');
    for i in 0..result.num_subbands {
        let _ = write!(out, "{i}");
        for rates in &result.f_up_subband {
            let _ = write!(out, ",{}", sig9(rates[i]));
        }
        out.push('\n');
    }
    out.push_str("average");
    for f in &result.f_up {
        let _ = write!(out, ",{}", sig9(*f));
    }
    out.push('\n');
    out
}

/// Cost-model table: one row per algorithm and operation class.
pub fn costs_csv(cfg: &ExperimentConfig, result: &MonteCarloResult) -> Result<String, CliError> {
    let mut out = String::from("algorithm,operation,c_up,c_nup,c_av,f_up\n");
    for (algo, f_up) in cfg.algos.iter().zip(&result.f_up) {
        let report = cost_model(algo, cfg.m, cfg.n, cfg.filter_len(), *f_up)?;
        let rows = [
            ("additions", report.update.additions, report.no_update.as_ref().map(|c| c.additions), report.average.additions),
            ("multiplications", report.update.multiplications, report.no_update.as_ref().map(|c| c.multiplications), report.average.multiplications),
            ("divisions", report.update.divisions, report.no_update.as_ref().map(|c| c.divisions), report.average.divisions),
            ("comparisons", report.update.comparisons, report.no_update.as_ref().map(|c| c.comparisons), report.average.comparisons),
        ];
        for (op, up, nup, avg) in rows {
            let nup_cell = nup.map(ratio_cell).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{op},{},{nup_cell},{},{}",
                report.algorithm,
                ratio_cell(up),
                sig9(avg),
                sig9(report.f_up),
            );
        }
    }
    Ok(out)
}

fn output_stem(preset_name: &str, run_label: &str) -> String {
    if run_label.is_empty() {
        preset_name.to_string()
    } else {
        format!("{preset_name}_{run_label}")
    }
}

/// Write the requested CSV files for one completed run.
pub fn emit_csv(
    stem: &str,
    cfg: &ExperimentConfig,
    result: &MonteCarloResult,
    out: &OutputSpec,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    if out.write_traces {
        let path = out.out_dir.join(format!("{stem}_traces.csv"));
        write_file(&path, &traces_csv(result))?;
        written.push(path);
    }
    if out.write_rates {
        let path = out.out_dir.join(format!("{stem}_rates.csv"));
        write_file(&path, &rates_csv(result))?;
        written.push(path);
    }
    if out.write_costs {
        let path = out.out_dir.join(format!("{stem}_costs.csv"));
        write_file(&path, &costs_csv(cfg, result)?)?;
        written.push(path);
    }
    Ok(written)
}

fn print_summary(stem: &str, cfg: &ExperimentConfig, result: &MonteCarloResult) {
    println!(
        "{stem}: {} trials, {} samples, N={}, M={}, {} path",
        result.trials, cfg.num_samples, cfg.n, cfg.m, cfg.path_kind
    );
    println!("  {:<18} {:>16} {:>10}", "algorithm", "final NMSD (dB)", "avg F_up");
    for (i, label) in result.labels.iter().enumerate() {
        println!(
            "  {:<18} {:>16.2} {:>10.3}",
            label, result.final_nmsd_db[i], result.f_up[i]
        );
    }
}

fn execute_run(
    stem: &str,
    cfg: &ExperimentConfig,
    out: &OutputSpec,
) -> Result<(), CliError> {
    cfg.validate().map_err(CliError::from)?;
    let result = monte_carlo(cfg)?;
    print_summary(stem, cfg, &result);
    for path in emit_csv(stem, cfg, &result, out)? {
        println!("  wrote {}", path.display());
    }
    Ok(())
}

/// Execute a named preset with overrides applied to every run.
pub fn run_preset(
    name: &str,
    overrides: &[(String, String)],
    out: &OutputSpec,
) -> Result<(), CliError> {
    let preset = preset(name).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown preset {name:?}; valid presets: {}",
            PRESET_NAMES.join(", ")
        ))
    })?;
    for run in &preset.runs {
        let mut cfg = run.config.clone();
        for (key, value) in overrides {
            apply_override(&mut cfg, key, value)?;
        }
        execute_run(&output_stem(preset.name, &run.label), &cfg, out)?;
    }
    Ok(())
}

/// Execute an experiment described by a config file.
pub fn run_config_file(
    path: &Path,
    overrides: &[(String, String)],
    out: &OutputSpec,
) -> Result<(), CliError> {
    let mut cfg = parse_config(path)?;
    for (key, value) in overrides {
        apply_override(&mut cfg, key, value)?;
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    execute_run(&stem, &cfg, out)
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "saf",
    about = "Subband adaptive filter experiments for acoustic echo cancellation",
    version
)]
struct Cli {
    /// Run a named preset experiment.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,

    /// Run an experiment described by a JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Number of Monte-Carlo trials (use 100 to match the reference scale).
    #[arg(long)]
    trials: Option<usize>,

    /// Base seed; trial r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for CSV files.
    #[arg(long, default_value = "results")]
    out: PathBuf,

    /// Override a config key, e.g. --set snr_db=20 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// List the available presets and exit.
    #[arg(long)]
    list_presets: bool,
}

fn run_cli(cli: Cli) -> Result<(), CliError> {
    if cli.list_presets {
        for name in PRESET_NAMES {
            let p = preset(name).expect("listed presets exist");
            println!("{name:<8} {}", p.description);
        }
        return Ok(());
    }
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(t) = cli.trials {
        overrides.push(("trials".into(), t.to_string()));
    }
    if let Some(s) = cli.seed {
        overrides.push(("base_seed".into(), s.to_string()));
    }
    for entry in &cli.set {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            CliError::Validation(format!("--set expects KEY=VALUE, got {entry:?}"))
        })?;
        overrides.push((key.to_string(), value.to_string()));
    }
    let out = OutputSpec::new(&cli.out);
    match (&cli.preset, &cli.config) {
        (Some(name), _) => run_preset(name, &overrides, &out),
        (None, Some(path)) => run_config_file(path, &overrides, &out),
        (None, None) => Err(CliError::Validation(
            "nothing to run: pass --preset NAME or --config FILE (see --list-presets)".into(),
        )),
    }
}

/// Entry point used by the binary; returns the process exit status.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version land here as non-errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_with_args(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_paper_defaults() {
        let cfg = parse_config_str("{}").unwrap();
        assert_eq!(cfg.n, 8);
        assert_eq!(cfg.m, 512);
        assert_eq!(cfg.snr_db, 10.0);
        assert_eq!(cfg.num_samples, 100_000);
        assert_eq!(cfg.trials, 10);
        assert!(!cfg.algos.is_empty());
        for a in &cfg.algos {
            assert_eq!(a.reuse, 2);
            assert_eq!(a.rho, 1.0);
            assert_eq!(a.lambda, 0.0);
            assert_eq!(a.zeta, 1e-4);
        }
    }

    #[test]
    fn bad_rho_names_the_constraint() {
        let err = parse_config_str(r#"{"rho": 1.5}"#).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
        assert!(err.message().contains("rho must lie in (0,1]"), "{}", err.message());
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn config_round_trips_through_serialization() {
        let cfg = parse_config_str(
            r#"{
                "n": 4, "m": 256, "snr_db": 20, "path_kind": "sparse",
                "num_samples": 30000, "trials": 3, "base_seed": 9,
                "algos": [
                    {"variant": "sm-insaf", "t": 3.0},
                    {"variant": "insaf", "mu": 0.5, "label": "slow"}
                ]
            }"#,
        )
        .unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = parse_config_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_and_variants_are_rejected() {
        assert!(matches!(
            parse_config_str(r#"{"bogus": 1}"#),
            Err(CliError::Parse(_))
        ));
        assert!(matches!(
            parse_config_str(r#"{"algos": [{"variant": "sm-apa"}]}"#),
            Err(CliError::Parse(_))
        ));
    }

    #[test]
    fn preset_lookup_and_unknown_name() {
        for name in PRESET_NAMES {
            assert!(preset(name).is_some(), "{name}");
        }
        assert!(preset("fig9z").is_none());
    }

    #[test]
    fn preset_parameters_match_their_captions() {
        // fig3a: N sweep with P=3, rho=1, t=2.
        let p = preset("fig3a").unwrap();
        let ns: Vec<usize> = p.runs.iter().map(|r| r.config.n).collect();
        assert_eq!(ns, vec![2, 4, 8]);
        for run in &p.runs {
            assert!(!run.config.shift_at_half);
            let a = &run.config.algos[0];
            assert_eq!((a.reuse, a.rho, a.t), (3, 1.0, 2.0));
            assert_eq!(a.variant, Variant::SmInsaf);
        }

        // fig3b: rho sweep 0.2 / 0.6 / 1 at P=3, N=8, t=2.
        let p = preset("fig3b").unwrap();
        let rhos: Vec<f64> = p.runs[0].config.algos.iter().map(|a| a.rho).collect();
        assert_eq!(rhos, vec![0.2, 0.6, 1.0]);
        assert!(p.runs[0].config.algos.iter().all(|a| a.reuse == 3 && a.t == 2.0));

        // fig3c: P sweep 1 / 2 / 3 at rho=1, N=8, t=2.
        let p = preset("fig3c").unwrap();
        let ps: Vec<usize> = p.runs[0].config.algos.iter().map(|a| a.reuse).collect();
        assert_eq!(ps, vec![1, 2, 3]);

        // fig4a: tracking run on the dispersive path.
        let p = preset("fig4a").unwrap();
        let cfg = &p.runs[0].config;
        assert!(cfg.shift_at_half);
        assert_eq!(cfg.path_kind, PathKind::Dispersive);
        assert_eq!(cfg.algos.len(), 6);
        let labels: Vec<String> = cfg.algos.iter().map(|a| a.label()).collect();
        assert_eq!(
            labels,
            vec!["nsaf", "insaf-mu1", "insaf-mu0.1", "sm-nsaf", "sm-insaf", "ssm-insaf"]
        );
        let sm_nsaf = &cfg.algos[3];
        assert_eq!((sm_nsaf.reuse, sm_nsaf.t), (1, 3.0));
        let ssm = &cfg.algos[5];
        assert_eq!((ssm.t, ssm.kappa, ssm.reuse), (0.75, 1.0, 2));
        assert_eq!(cfg.algos[2].mu, 0.1);

        // fig6a: sparse path with lambda=0, zeta=1e-4 on proportionate rows.
        let p = preset("fig6a").unwrap();
        let cfg = &p.runs[0].config;
        assert_eq!(cfg.path_kind, PathKind::Sparse);
        assert_eq!(cfg.algos.len(), 6);
        assert!(cfg
            .algos
            .iter()
            .filter(|a| a.variant.is_proportionate())
            .all(|a| a.lambda == 0.0 && a.zeta == 1e-4));
        assert_eq!(cfg.algos[0].reuse, 1); // sm-ipnsaf reduction

        // fig7a: lambda = -0.5 on the proportionate rows.
        let p = preset("fig7a").unwrap();
        assert!(p.runs[0]
            .config
            .algos
            .iter()
            .filter(|a| a.variant.is_proportionate())
            .all(|a| a.lambda == -0.5));

        // table3: dispersive + sparse runs at P=2, rho=1, t=2 / 0.75.
        let p = preset("table3").unwrap();
        assert_eq!(p.runs.len(), 2);
        assert_eq!(p.runs[0].config.path_kind, PathKind::Dispersive);
        assert_eq!(p.runs[1].config.path_kind, PathKind::Sparse);
        for run in &p.runs {
            for a in &run.config.algos {
                assert_eq!(a.reuse, 2);
                assert_eq!(a.rho, 1.0);
                if a.variant.is_smoothed() {
                    assert_eq!((a.t, a.kappa), (0.75, 1.0));
                } else if a.variant.is_set_membership() {
                    assert_eq!(a.t, 2.0);
                }
            }
        }
    }

    #[test]
    fn csv_layout() {
        let result = MonteCarloResult {
            labels: vec!["a".into(), "b".into()],
            first_k: 5,
            num_subbands: 2,
            trials: 1,
            nmsd_db: vec![vec![-1.0, -2.0, -3.0], vec![-1.5, -2.5, -3.5]],
            f_up_subband: vec![vec![1.0, 1.0], vec![0.25, 0.75]],
            f_up: vec![1.0, 0.5],
            final_nmsd_db: vec![-3.0, -3.5],
        };
        let csv = traces_csv(&result);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "iteration,a_nmsd_db,b_nmsd_db");
        assert!(lines[1].starts_with("5,"));
        assert!(!csv.contains('\r'));

        let csv = rates_csv(&result);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "subband,a_f_up,b_f_up");
        assert!(lines[3].starts_with("average,"));
    }

    #[test]
    fn costs_csv_pins_table_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.algos = vec![AlgoConfig::new(Variant::SmInsaf)];
        let result = MonteCarloResult {
            labels: vec!["sm-insaf".into()],
            first_k: 0,
            num_subbands: 8,
            trials: 1,
            nmsd_db: vec![vec![]],
            f_up_subband: vec![vec![0.295; 8]],
            f_up: vec![0.295],
            final_nmsd_db: vec![0.0],
        };
        let csv = costs_csv(&cfg, &result).unwrap();
        let mult_row: Vec<&str> = csv
            .lines()
            .find(|l| l.contains(",multiplications,"))
            .unwrap()
            .split(',')
            .collect();
        assert_eq!(mult_row[2], "4161");
    }

    #[test]
    fn unknown_preset_is_a_validation_error() {
        let out = OutputSpec::new(std::env::temp_dir());
        let err = run_preset("fig9z", &[], &out).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.message().contains("table3"));
    }

    #[test]
    fn override_parsing() {
        let mut cfg = ExperimentConfig::default();
        apply_override(&mut cfg, "snr_db", "20").unwrap();
        assert_eq!(cfg.snr_db, 20.0);
        apply_override(&mut cfg, "t", "3.5").unwrap();
        assert!(cfg.algos.iter().all(|a| a.t == 3.5));
        assert!(apply_override(&mut cfg, "nonsense", "1").is_err());
        assert!(apply_override(&mut cfg, "m", "abc").is_err());
    }
}
