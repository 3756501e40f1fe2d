//! Command-line experiments with persisted CSV/JSON artifacts.
//!
//! Every run writes `config.json`, the effective configuration together with
//! the library version. The output directory itself is not echoed, so two
//! runs with the same configuration and seed produce byte-identical files
//! wherever they are written.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::counterexample::{build, verify_stages, BuildStatus, ConstructionParams, LambdaMode};
use crate::error::{Error, Result};
use crate::innovations::{draw_past, InnovationLaw, SeedSpec};
use crate::linear_process::{CoefficientSeq, ThetaGrid};
use crate::phase::special_angle;
use crate::quenched::{doubling_schedule, limit_diagnosis, quenched_sample, sigma_theta, sigma_theta_cesaro, Verdict};
use crate::stats::{independence_check, ks_normal};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Column headers of the CSV artifacts.
pub const ENSEMBLE_HEADER: &[&str] = &[
    "theta",
    "n",
    "replicate",
    "re_S",
    "im_S",
    "re_Y",
    "im_Y",
    "re_Z",
    "im_Z",
];
pub const CONDITIONAL_HEADER: &[&str] = &["theta", "n", "re_E0S", "im_E0S"];
pub const SWEEP_HEADER: &[&str] = &[
    "theta",
    "n",
    "sigma_sq",
    "sigma_sq_cesaro",
    "ks_re",
    "ks_im",
    "ks_critical",
    "corr",
    "corr_threshold",
    "pass",
    "excluded",
];
pub const STAGE_HEADER: &[&str] = &["k", "theta", "frequency", "level", "required_frequency", "pass"];
pub const TRAJECTORY_HEADER: &[&str] = &["past", "theta", "n", "re", "im", "modulus", "running_max"];
pub const VERDICT_HEADER: &[&str] = &[
    "past",
    "theta",
    "verdict",
    "limit_re",
    "limit_im",
    "final_modulus",
    "final_running_max",
];

const FORMATS_HELP: &str = "\
Artifacts (see FORMATS.md for the full column reference):
  verify-clt            config.json coeffs.json ensemble.csv conditional.csv sweep.csv summary.json
  build-counterexample  config.json coeffs.json construction_log.json verify_stage.csv summary.json
  diverge-report        config.json coeffs.json trajectories.csv verdicts.csv summary.json

ensemble.csv      theta,n,replicate,re_S,im_S,re_Y,im_Y,re_Z,im_Z
conditional.csv   theta,n,re_E0S,im_E0S
sweep.csv         theta,n,sigma_sq,sigma_sq_cesaro,ks_re,ks_im,ks_critical,corr,corr_threshold,pass,excluded
verify_stage.csv  k,theta,frequency,level,required_frequency,pass
trajectories.csv  past,theta,n,re,im,modulus,running_max
verdicts.csv      past,theta,verdict,limit_re,limit_im,final_modulus,final_running_max

Exit status: 0 pass, 1 fail, 2 error.";

#[derive(Debug, Parser)]
#[command(name = "quenched-dft", version, about = "Quenched CLT experiments for DFTs of linear processes", after_help = FORMATS_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample quenched ensembles and test them against the Gaussian limit.
    VerifyClt(Flags),
    /// Build the sparse counterexample sequence and verify every stage.
    BuildCounterexample(Flags),
    /// Trace |E_0 S_n(θ)|/√n over frozen pasts and classify its behaviour.
    DivergeReport(Flags),
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::VerifyClt(_) => CommandKind::VerifyClt,
            Command::BuildCounterexample(_) => CommandKind::BuildCounterexample,
            Command::DivergeReport(_) => CommandKind::DivergeReport,
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::VerifyClt(f) | Command::BuildCounterexample(f) | Command::DivergeReport(f) => f,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    VerifyClt,
    BuildCounterexample,
    DivergeReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LambdaModeArg {
    Deterministic,
    McQuantile,
}

impl From<LambdaModeArg> for LambdaMode {
    fn from(m: LambdaModeArg) -> Self {
        match m {
            LambdaModeArg::Deterministic => LambdaMode::Deterministic,
            LambdaModeArg::McQuantile => LambdaMode::McQuantile,
        }
    }
}

/// Flags shared by every command. Flags override values from `--config`.
#[derive(Clone, Debug, Default, Args)]
pub struct Flags {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Coefficients: inline JSON, a JSON file, or a preset
    /// (`identity`, `zero`, `geometric:<ratio>:<max_index>`).
    #[arg(long)]
    pub coeffs: Option<String>,
    /// Innovation law: `rademacher` or `standard_normal`.
    #[arg(long)]
    pub law: Option<InnovationLaw>,
    /// Frequency grid: `equispaced:<m>`, `interior:<m>` or `list:<θ1>,<θ2>,…`.
    #[arg(long = "theta-grid")]
    pub theta_grid: Option<String>,
    /// Horizon schedule, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Replicates: futures per frozen past (verify-clt) or fresh pasts per stage check (build-counterexample).
    #[arg(long = "M")]
    pub replicates: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Depth of the frozen past (verify-clt).
    #[arg(long = "past-depth")]
    pub past_depth: Option<usize>,
    /// Frozen pasts to trace (diverge-report).
    #[arg(long)]
    pub pasts: Option<usize>,
    /// KS level (verify-clt).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Required pass fraction over the grid (verify-clt).
    #[arg(long = "pass-threshold")]
    pub pass_threshold: Option<f64>,
    /// Number of construction stages (build-counterexample).
    #[arg(long = "k-max")]
    pub k_max: Option<usize>,
    /// Growth base of the stage thresholds (build-counterexample).
    #[arg(long)]
    pub base: Option<f64>,
    #[arg(long = "lambda-mode", value_enum)]
    pub lambda_mode: Option<LambdaModeArg>,
    /// Walks per probe of the stage horizon (build-counterexample).
    #[arg(long = "probe-replicates")]
    pub probe_replicates: Option<usize>,
    /// Pasts sampled for the quantile mode of lambda (build-counterexample).
    #[arg(long = "lambda-replicates")]
    pub lambda_replicates: Option<usize>,
    /// Largest stage horizon the search may probe (build-counterexample).
    #[arg(long = "max-horizon")]
    pub max_horizon: Option<usize>,
}

/// Fully explicit experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub coeffs: Option<String>,
    pub law: InnovationLaw,
    pub theta_grid: String,
    pub n: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    pub past_depth: Option<usize>,
    pub pasts: usize,
    pub alpha: f64,
    pub pass_threshold: f64,
    pub construction: ConstructionSettings,
}

/// Construction parameters other than the grid and law, which come from the
/// shared settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionSettings {
    pub k_max: usize,
    pub base: f64,
    pub lambda_mode: LambdaMode,
    pub probe_replicates: usize,
    pub lambda_replicates: usize,
    pub success_slack: f64,
    pub tail_slack: f64,
    pub max_horizon: usize,
    pub confidence_z: f64,
    pub quantile_safety: f64,
}

impl Default for ConstructionSettings {
    fn default() -> Self {
        let p = ConstructionParams::default();
        Self {
            k_max: p.k_max,
            base: p.base,
            lambda_mode: p.lambda_mode,
            probe_replicates: p.probe_replicates,
            lambda_replicates: p.lambda_replicates,
            success_slack: p.success_slack,
            tail_slack: p.tail_slack,
            max_horizon: p.max_horizon,
            confidence_z: p.confidence_z,
            quantile_safety: p.quantile_safety,
        }
    }
}

/// Partial configuration as read from `--config`; missing keys take the
/// command defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    /// Present in echoed configurations; not checked.
    #[serde(rename = "version")]
    _version: Option<String>,
    command: Option<CommandKind>,
    coeffs: Option<serde_json::Value>,
    law: Option<InnovationLaw>,
    theta_grid: Option<String>,
    n: Option<Vec<usize>>,
    #[serde(alias = "M")]
    replicates: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    past_depth: Option<usize>,
    pasts: Option<usize>,
    alpha: Option<f64>,
    pass_threshold: Option<f64>,
    construction: Option<ConstructionFile>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstructionFile {
    k_max: Option<usize>,
    base: Option<f64>,
    lambda_mode: Option<LambdaMode>,
    probe_replicates: Option<usize>,
    lambda_replicates: Option<usize>,
    success_slack: Option<f64>,
    tail_slack: Option<f64>,
    max_horizon: Option<usize>,
    confidence_z: Option<f64>,
    quantile_safety: Option<f64>,
}

impl ExperimentConfig {
    pub fn defaults(command: CommandKind) -> Self {
        let (grid, n, replicates) = match command {
            CommandKind::VerifyClt => ("interior:16", vec![4096], 10_000),
            CommandKind::BuildCounterexample => ("equispaced:64", vec![], 200),
            CommandKind::DivergeReport => ("equispaced:16", vec![1 << 20], 0),
        };
        Self {
            command,
            coeffs: match command {
                CommandKind::VerifyClt => Some("geometric:0.5:20".into()),
                _ => None,
            },
            law: InnovationLaw::Rademacher,
            theta_grid: grid.into(),
            n,
            replicates,
            seed: 0,
            out: PathBuf::from("out"),
            past_depth: None,
            pasts: 20,
            alpha: crate::stats::DEFAULT_ALPHA,
            pass_threshold: 0.9,
            construction: ConstructionSettings::default(),
        }
    }

    /// Merge defaults, then `--config`, then explicit flags.
    pub fn resolve(command: CommandKind, flags: &Flags) -> Result<Self> {
        let mut cfg = Self::defaults(command);
        if let Some(path) = &flags.config {
            let file: ConfigFile = serde_json::from_str(&fs::read_to_string(path)?)?;
            cfg.apply_file(file)?;
        }
        cfg.apply_flags(flags);
        if cfg.command == CommandKind::BuildCounterexample
            && flags.lambda_mode.is_none()
            && cfg.law.bound().is_none()
            && cfg.construction.lambda_mode == LambdaMode::Deterministic
        {
            cfg.construction.lambda_mode = LambdaMode::McQuantile;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, file: ConfigFile) -> Result<()> {
        if let Some(c) = file.command {
            if c != self.command {
                return Err(Error::InvalidArgument(format!(
                    "config is for {c:?}, but the command is {:?}",
                    self.command
                )));
            }
        }
        if let Some(v) = file.coeffs {
            self.coeffs = Some(match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            });
        }
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = file.$field { self.$field = v; } )* };
        }
        take!(law, theta_grid, n, replicates, seed, out, pasts, alpha, pass_threshold);
        if file.past_depth.is_some() {
            self.past_depth = file.past_depth;
        }
        if let Some(c) = file.construction {
            let s = &mut self.construction;
            macro_rules! take_c {
                ($($field:ident),*) => { $( if let Some(v) = c.$field { s.$field = v; } )* };
            }
            take_c!(
                k_max,
                base,
                lambda_mode,
                probe_replicates,
                lambda_replicates,
                success_slack,
                tail_slack,
                max_horizon,
                confidence_z,
                quantile_safety
            );
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Flags) {
        if let Some(v) = &f.coeffs {
            self.coeffs = Some(v.clone());
        }
        if let Some(v) = f.law {
            self.law = v;
        }
        if let Some(v) = &f.theta_grid {
            self.theta_grid = v.clone();
        }
        if let Some(v) = &f.n {
            self.n = v.clone();
        }
        if let Some(v) = f.replicates {
            self.replicates = v;
        }
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = &f.out {
            self.out = v.clone();
        }
        if f.past_depth.is_some() {
            self.past_depth = f.past_depth;
        }
        if let Some(v) = f.pasts {
            self.pasts = v;
        }
        if let Some(v) = f.alpha {
            self.alpha = v;
        }
        if let Some(v) = f.pass_threshold {
            self.pass_threshold = v;
        }
        let c = &mut self.construction;
        if let Some(v) = f.k_max {
            c.k_max = v;
        }
        if let Some(v) = f.base {
            c.base = v;
        }
        if let Some(v) = f.lambda_mode {
            c.lambda_mode = v.into();
        }
        if let Some(v) = f.probe_replicates {
            c.probe_replicates = v;
        }
        if let Some(v) = f.lambda_replicates {
            c.lambda_replicates = v;
        }
        if let Some(v) = f.max_horizon {
            c.max_horizon = v;
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.grid()?;
        if self.n.contains(&0) {
            return bad("horizons must be positive".into());
        }
        match self.command {
            CommandKind::VerifyClt => {
                if self.n.is_empty() {
                    return bad("verify-clt needs at least one horizon".into());
                }
                if self.replicates < 2 {
                    return bad("verify-clt needs at least two replicates".into());
                }
                if self.coeffs.is_none() {
                    return bad("verify-clt needs --coeffs".into());
                }
            }
            CommandKind::BuildCounterexample => {
                if self.replicates == 0 {
                    return bad("stage verification needs at least one replicate".into());
                }
                self.construction_params()?.validate()?;
            }
            CommandKind::DivergeReport => {
                if self.coeffs.is_none() {
                    return bad("diverge-report needs --coeffs".into());
                }
                if self.pasts == 0 {
                    return bad("diverge-report needs at least one past".into());
                }
            }
        }
        if !(0.0..=1.0).contains(&self.pass_threshold) {
            return bad(format!(
                "pass threshold must lie in [0, 1], got {}",
                self.pass_threshold
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<ThetaGrid> {
        self.theta_grid.parse()
    }

    pub fn coefficients(&self) -> Result<CoefficientSeq> {
        let spec = self
            .coeffs
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("no coefficients given".into()))?;
        parse_coeffs(spec)
    }

    pub fn construction_params(&self) -> Result<ConstructionParams> {
        let c = &self.construction;
        Ok(ConstructionParams {
            k_max: c.k_max,
            grid: self.grid()?,
            base: c.base,
            law: self.law,
            lambda_mode: c.lambda_mode,
            probe_replicates: c.probe_replicates,
            lambda_replicates: c.lambda_replicates,
            success_slack: c.success_slack,
            tail_slack: c.tail_slack,
            max_horizon: c.max_horizon,
            confidence_z: c.confidence_z,
            quantile_safety: c.quantile_safety,
        })
    }
}

/// Parse a coefficient source: a preset, inline JSON, or a JSON file.
pub fn parse_coeffs(spec: &str) -> Result<CoefficientSeq> {
    let s = spec.trim();
    match s {
        "identity" => return Ok(CoefficientSeq::identity()),
        "zero" => return Ok(CoefficientSeq::zero()),
        _ => {}
    }
    if let Some(rest) = s.strip_prefix("geometric:") {
        let (ratio, max) = rest
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("expected geometric:<ratio>:<max_index>, got `{s}`")))?;
        let ratio: f64 = ratio
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad ratio in `{s}`")))?;
        let max: usize = max
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad max index in `{s}`")))?;
        return CoefficientSeq::geometric(ratio, max);
    }
    if s.starts_with('{') {
        return Ok(serde_json::from_str(s)?);
    }
    Ok(serde_json::from_str(&fs::read_to_string(s)?)?)
}

#[derive(Serialize)]
struct Echo<'a> {
    version: &'static str,
    #[serde(flatten)]
    config: &'a ExperimentConfig,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// CSV writer that always emits the header row, even for empty tables.
fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv_writer(path, header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn prepare(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    write_json(
        &cfg.out.join("config.json"),
        &Echo {
            version: VERSION,
            config: cfg,
        },
    )
}

#[derive(Serialize)]
struct EnsembleRow {
    theta: f64,
    n: usize,
    replicate: usize,
    #[serde(rename = "re_S")]
    re_s: f64,
    #[serde(rename = "im_S")]
    im_s: f64,
    #[serde(rename = "re_Y")]
    re_y: f64,
    #[serde(rename = "im_Y")]
    im_y: f64,
    #[serde(rename = "re_Z")]
    re_z: f64,
    #[serde(rename = "im_Z")]
    im_z: f64,
}

#[derive(Serialize)]
struct ConditionalRow {
    theta: f64,
    n: usize,
    #[serde(rename = "re_E0S")]
    re: f64,
    #[serde(rename = "im_E0S")]
    im: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub n: usize,
    pub sigma_sq: f64,
    pub sigma_sq_cesaro: f64,
    pub ks_re: f64,
    pub ks_im: f64,
    pub ks_critical: f64,
    pub corr: f64,
    pub corr_threshold: f64,
    pub pass: bool,
    /// Special angles 0 and π are reported but left out of the pass fraction.
    pub excluded: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltSummary {
    pub command: CommandKind,
    pub grid_size: usize,
    pub schedule: Vec<usize>,
    pub replicates: usize,
    pub past_depth: usize,
    pub alpha: f64,
    pub tested_cells: usize,
    pub passed_cells: usize,
    pub pass_fraction: f64,
    pub pass_threshold: f64,
    /// Largest `|σ²_Cesàro(n) - σ²|` over the grid and schedule.
    pub max_cesaro_gap: f64,
    pub notes: Vec<String>,
    pub pass: bool,
}

/// Quenched ensembles over one frozen past, tested against `N(0, σ_θ²)`.
pub fn cmd_verify_clt(cfg: &ExperimentConfig) -> Result<CltSummary> {
    let coeffs = cfg.coefficients()?;
    let grid = cfg.grid()?;
    let depth = cfg.past_depth.unwrap_or(64).max(coeffs.max_index().unwrap_or(0));
    let past = draw_past(cfg.law, depth, &SeedSpec::new(cfg.seed, "past", 0, 0));
    prepare(cfg)?;
    write_json(&cfg.out.join("coeffs.json"), &coeffs)?;

    let mut ensemble = csv_writer(&cfg.out.join("ensemble.csv"), ENSEMBLE_HEADER)?;
    let mut conditional = Vec::new();
    let mut sweep = Vec::new();
    for &n in &cfg.n {
        let ens = quenched_sample(&coeffs, &past, cfg.law, n, &grid, cfg.replicates, cfg.seed)?;
        for (t, &theta) in grid.points().iter().enumerate() {
            conditional.push(ConditionalRow {
                theta,
                n,
                re: ens.conditional[t].re,
                im: ens.conditional[t].im,
            });
            for r in 0..ens.replicates() {
                let (s, y, z) = (ens.s[t][r], ens.y[t][r], ens.z[t][r]);
                ensemble.serialize(EnsembleRow {
                    theta,
                    n,
                    replicate: r,
                    re_s: s.re,
                    im_s: s.im,
                    re_y: y.re,
                    im_y: y.im,
                    re_z: z.re,
                    im_z: z.im,
                })?;
            }
            let sigma_sq = sigma_theta(&coeffs, theta);
            let sigma = sigma_sq.sqrt();
            let re: Vec<f64> = ens.y[t].iter().map(|c| c.re).collect();
            let im: Vec<f64> = ens.y[t].iter().map(|c| c.im).collect();
            let ks_re = ks_normal(&re, sigma, cfg.alpha)?;
            let ks_im = ks_normal(&im, sigma, cfg.alpha)?;
            let corr = independence_check(&re, &im)?;
            sweep.push(SweepRow {
                theta,
                n,
                sigma_sq,
                sigma_sq_cesaro: sigma_theta_cesaro(&coeffs, theta, n),
                ks_re: ks_re.ks_statistic,
                ks_im: ks_im.ks_statistic,
                ks_critical: ks_re.critical_value,
                corr: corr.correlation,
                corr_threshold: corr.threshold,
                pass: ks_re.pass && ks_im.pass && corr.pass,
                excluded: special_angle(theta).is_some(),
            });
        }
    }
    ensemble.flush()?;
    write_csv(&cfg.out.join("conditional.csv"), CONDITIONAL_HEADER, conditional)?;

    let mut notes = Vec::new();
    if grid.points().iter().any(|&t| special_angle(t).is_some()) {
        notes.push(
            "theta = 0 and theta = pi are excluded from the pass fraction: there the transform is real \
             and the limit is the classical one-dimensional CLT, not the complex Gaussian limit"
                .to_string(),
        );
    }
    if sweep.iter().any(|r| r.sigma_sq == 0.0) {
        notes.push("grid points with sigma_theta = 0 are tested against the point mass at 0".to_string());
    }
    notes.push(format!(
        "no multiple-testing correction: {} cells tested at level {}",
        sweep.iter().filter(|r| !r.excluded).count(),
        cfg.alpha
    ));
    let tested: Vec<&SweepRow> = sweep.iter().filter(|r| !r.excluded).collect();
    let passed = tested.iter().filter(|r| r.pass).count();
    let pass_fraction = if tested.is_empty() {
        0.0
    } else {
        passed as f64 / tested.len() as f64
    };
    let max_cesaro_gap = sweep
        .iter()
        .map(|r| (r.sigma_sq_cesaro - r.sigma_sq).abs())
        .fold(0.0, f64::max);
    write_csv(&cfg.out.join("sweep.csv"), SWEEP_HEADER, &sweep)?;
    let summary = CltSummary {
        command: cfg.command,
        grid_size: grid.len(),
        schedule: cfg.n.clone(),
        replicates: cfg.replicates,
        past_depth: depth,
        alpha: cfg.alpha,
        tested_cells: tested.len(),
        passed_cells: passed,
        pass_fraction,
        pass_threshold: cfg.pass_threshold,
        max_cesaro_gap,
        notes,
        pass: !tested.is_empty() && pass_fraction >= cfg.pass_threshold,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageCsvRow {
    pub k: usize,
    pub theta: f64,
    pub frequency: f64,
    pub level: f64,
    pub required_frequency: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BuildSummary {
    pub command: CommandKind,
    pub status: BuildStatus,
    pub completed_stages: usize,
    pub error: Option<String>,
    pub stage_pass: Vec<bool>,
    pub running_max_monotone: bool,
    pub pass: bool,
}

/// Run the construction, persist the sequence and log, and check each stage
/// on fresh pasts. A stopped search still writes the partial sequence and log.
pub fn cmd_build_counterexample(cfg: &ExperimentConfig) -> Result<BuildSummary> {
    let params = cfg.construction_params()?;
    prepare(cfg)?;
    let (construction, error) = match build(&params, cfg.seed) {
        Ok(c) => (c, None),
        Err(failure) => (failure.partial, Some(failure.error.to_string())),
    };
    for stage in &construction.log.stages {
        if stage.k > 0 {
            eprintln!(
                "stage {}: n_k = {}, {:.3} s",
                stage.k,
                stage.n_k,
                stage.wall_clock.as_secs_f64()
            );
        }
    }
    write_json(&cfg.out.join("coeffs.json"), &construction.coeffs)?;
    write_json(&cfg.out.join("construction_log.json"), &construction.log)?;

    let stages: Vec<usize> = construction.log.stages.iter().map(|s| s.k).filter(|&k| k > 0).collect();
    let (rows, stage_pass, monotone) = if stages.is_empty() {
        (Vec::new(), Vec::new(), true)
    } else {
        let outcome = verify_stages(
            &construction.coeffs,
            params.base,
            &stages,
            &params.grid,
            params.law,
            cfg.replicates,
            cfg.seed,
        )?;
        let monotone = outcome
            .running_max
            .iter()
            .flatten()
            .all(|m| m.windows(2).all(|w| w[0] <= w[1]));
        let mut rows = Vec::new();
        for r in &outcome.reports {
            for row in &r.rows {
                rows.push(StageCsvRow {
                    k: r.k,
                    theta: row.theta,
                    frequency: row.frequency,
                    level: r.level,
                    required_frequency: r.required_frequency,
                    pass: row.frequency >= r.required_frequency,
                });
            }
        }
        (rows, outcome.reports.iter().map(|r| r.pass()).collect(), monotone)
    };
    write_csv(&cfg.out.join("verify_stage.csv"), STAGE_HEADER, rows)?;
    let summary = BuildSummary {
        command: cfg.command,
        status: construction.log.status,
        completed_stages: stages.len(),
        pass: error.is_none() && monotone && stage_pass.iter().all(|&p| p),
        error,
        stage_pass,
        running_max_monotone: monotone,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct TrajectoryRow {
    past: usize,
    theta: f64,
    n: usize,
    re: f64,
    im: f64,
    modulus: f64,
    running_max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerdictRow {
    pub past: usize,
    pub theta: f64,
    pub verdict: String,
    pub limit_re: Option<f64>,
    pub limit_im: Option<f64>,
    pub final_modulus: f64,
    pub final_running_max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DivergeSummary {
    pub command: CommandKind,
    pub pasts: usize,
    pub grid_size: usize,
    pub schedule: Vec<usize>,
    pub cells: usize,
    pub diverges: usize,
    pub converges: usize,
    pub undecided: usize,
    pub diverges_fraction: f64,
}

/// Schedule of horizons: powers of two up to the largest requested horizon,
/// the requested horizons, and the block boundaries of a built sequence.
pub fn diverge_schedule(coeffs: &CoefficientSeq, requested: &[usize]) -> Vec<usize> {
    let boundaries = coeffs.blocks().iter().map(|b| b.n_k);
    let limit = requested.iter().copied().chain(boundaries.clone()).max().unwrap_or(1);
    let mut out = doubling_schedule(limit);
    out.extend(requested.iter().copied());
    out.extend(boundaries);
    out.sort_unstable();
    out.dedup();
    out
}

/// Trajectories of `|E_0 S_n(θ)|/√n` over independent frozen pasts.
pub fn cmd_diverge_report(cfg: &ExperimentConfig) -> Result<DivergeSummary> {
    let coeffs = cfg.coefficients()?;
    let grid = cfg.grid()?;
    let schedule = diverge_schedule(&coeffs, &cfg.n);
    let depth = coeffs.max_index().unwrap_or(0);
    prepare(cfg)?;
    write_json(&cfg.out.join("coeffs.json"), &coeffs)?;

    use rayon::prelude::*;
    let cells: Vec<(usize, f64)> = (0..cfg.pasts)
        .flat_map(|p| grid.points().iter().map(move |&t| (p, t)))
        .collect();
    let diagnoses = cells
        .par_iter()
        .map(|&(p, theta)| {
            let past = draw_past(cfg.law, depth, &SeedSpec::new(cfg.seed, "past", p as u64, 0));
            limit_diagnosis(&coeffs, &past, theta, &schedule)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trajectories = csv_writer(&cfg.out.join("trajectories.csv"), TRAJECTORY_HEADER)?;
    let mut verdicts = Vec::with_capacity(cells.len());
    for (&(past, theta), diag) in cells.iter().zip(&diagnoses) {
        for pt in &diag.trajectory {
            trajectories.serialize(TrajectoryRow {
                past,
                theta,
                n: pt.n,
                re: pt.value.re,
                im: pt.value.im,
                modulus: pt.value.norm(),
                running_max: pt.running_max,
            })?;
        }
        let last = diag.trajectory.last().expect("nonempty schedule");
        let (limit_re, limit_im) = match diag.verdict {
            Verdict::ConvergesTo { re, im } => (Some(re), Some(im)),
            _ => (None, None),
        };
        verdicts.push(VerdictRow {
            past,
            theta,
            verdict: diag.verdict.label().to_string(),
            limit_re,
            limit_im,
            final_modulus: last.value.norm(),
            final_running_max: last.running_max,
        });
    }
    trajectories.flush()?;
    let count = |label: &str| verdicts.iter().filter(|v| v.verdict == label).count();
    let summary = DivergeSummary {
        command: cfg.command,
        pasts: cfg.pasts,
        grid_size: grid.len(),
        schedule,
        cells: verdicts.len(),
        diverges: count("diverges"),
        converges: count("converges"),
        undecided: count("undecided"),
        diverges_fraction: count("diverges") as f64 / verdicts.len() as f64,
    };
    write_csv(&cfg.out.join("verdicts.csv"), VERDICT_HEADER, &verdicts)?;
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Parse arguments, run the command, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
        }
    };
    match execute(&cli.command) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// Run one command; `Ok(pass)` on completion.
pub fn execute(command: &Command) -> Result<bool> {
    let cfg = ExperimentConfig::resolve(command.kind(), command.flags())?;
    match cfg.command {
        CommandKind::VerifyClt => {
            let s = cmd_verify_clt(&cfg)?;
            eprintln!("pass fraction {:.3} (threshold {})", s.pass_fraction, s.pass_threshold);
            Ok(s.pass)
        }
        CommandKind::BuildCounterexample => {
            let s = cmd_build_counterexample(&cfg)?;
            if let Some(e) = &s.error {
                eprintln!("construction stopped: {e}");
            }
            Ok(s.pass)
        }
        CommandKind::DivergeReport => {
            let s = cmd_diverge_report(&cfg)?;
            eprintln!(
                "{} cells: {} diverge, {} converge, {} undecided",
                s.cells, s.diverges, s.converges, s.undecided
            );
            Ok(true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> Flags {
        Flags::default()
    }

    #[test]
    fn presets_parse() {
        assert_eq!(parse_coeffs("identity").unwrap(), CoefficientSeq::identity());
        assert!(parse_coeffs("zero").unwrap().is_empty());
        let g = parse_coeffs("geometric:0.5:20").unwrap();
        assert_eq!(g.support().len(), 21);
        assert_eq!(g.coefficient(3), 0.125);
        let inline = parse_coeffs(r#"{"support":[0,2],"values":[1.0,-0.5]}"#).unwrap();
        assert_eq!(inline.coefficient(2), -0.5);
        assert!(parse_coeffs("geometric:0.5").is_err());
        assert!(parse_coeffs("/nonexistent/coeffs.json").is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(
            &path,
            r#"{"command":"verify_clt","coeffs":"identity","n":[16],"M":50,"seed":3,"construction":{"k_max":2}}"#,
        )
        .unwrap();
        let f = Flags {
            config: Some(path),
            seed: Some(9),
            ..flags()
        };
        let cfg = ExperimentConfig::resolve(CommandKind::VerifyClt, &f).unwrap();
        assert_eq!(cfg.coeffs.as_deref(), Some("identity"));
        assert_eq!(cfg.n, vec![16]);
        assert_eq!(cfg.replicates, 50);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.construction.k_max, 2);
    }

    #[test]
    fn config_for_another_command_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"command":"diverge_report"}"#).unwrap();
        let f = Flags {
            config: Some(path.clone()),
            ..flags()
        };
        assert!(ExperimentConfig::resolve(CommandKind::VerifyClt, &f).is_err());
        fs::write(&path, r#"{"unknown_key":1}"#).unwrap();
        assert!(ExperimentConfig::resolve(CommandKind::VerifyClt, &f).is_err());
    }

    #[test]
    fn gaussian_build_switches_to_quantile_lambda() {
        let f = Flags {
            law: Some(InnovationLaw::StandardNormal),
            ..flags()
        };
        let cfg = ExperimentConfig::resolve(CommandKind::BuildCounterexample, &f).unwrap();
        assert_eq!(cfg.construction.lambda_mode, LambdaMode::McQuantile);
        let f = Flags {
            lambda_mode: Some(LambdaModeArg::Deterministic),
            ..f
        };
        assert!(ExperimentConfig::resolve(CommandKind::BuildCounterexample, &f).is_err());
    }

    #[test]
    fn echoed_config_omits_output_directory() {
        let mut cfg = ExperimentConfig::defaults(CommandKind::VerifyClt);
        cfg.out = PathBuf::from("/somewhere/else");
        let json = serde_json::to_string(&Echo {
            version: VERSION,
            config: &cfg,
        })
        .unwrap();
        assert!(!json.contains("somewhere"));
        assert!(json.starts_with(r#"{"version":""#));
    }

    #[test]
    fn schedule_includes_block_boundaries() {
        let seq = CoefficientSeq::new(vec![1, 5, 300], vec![0.5, 0.2, 0.1])
            .unwrap()
            .with_blocks(vec![
                crate::linear_process::Block { k: 0, n_k: 1, a: 0.5 },
                crate::linear_process::Block { k: 1, n_k: 5, a: 0.2 },
                crate::linear_process::Block { k: 2, n_k: 300, a: 0.1 },
            ])
            .unwrap();
        let s = diverge_schedule(&seq, &[100]);
        assert_eq!(s, vec![1, 2, 4, 5, 8, 16, 32, 64, 100, 128, 256, 300]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["quenched-dft", "no-such-command"]), EXIT_ERROR);
        assert_eq!(
            run(["quenched-dft", "verify-clt", "--coeffs", "geometric:2"]),
            EXIT_ERROR
        );
    }
}
