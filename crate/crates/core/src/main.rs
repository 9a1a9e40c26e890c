use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gmpid::analysis::{AsymptoticParams, ConvergenceReport, GammaChoice, REPORT_CSV_HEADER};
use gmpid::detectors::{
    mean_squared_distance, mmse_detect, DetectorConfig, DetectorKind, InitMode, VariableRule, WMode,
};
use gmpid::harness::{
    bench_iteration, format_regime_table, regime_table, run_experiment, ExperimentSpec, RegimeSpec, BENCH_CSV_HEADER,
};
use gmpid::model::{Dimensions, SystemInstance};
use gmpid::{Error, RngSeed};

#[derive(Parser)]
#[command(
    name = "gmpid",
    version,
    about = "Gaussian message-passing detection for massive MU-MIMO uplink"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect one seeded instance and print the estimate, MSE and verdict.
    Detect(Common),
    /// Monte Carlo sweep over SNR and iteration count.
    Sweep(Common),
    /// Convergence verdicts (C/D) per detector across load regimes.
    Regimes(Common),
    /// Per-iteration GMPID timing.
    Bench(Common),
    /// Convergence analysis of one seeded channel.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WModeArg {
    Exact,
    Mp,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Paper,
    Prior,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Broadcast,
    Extrinsic,
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaArg {
    Asymptotic,
    FixedPoint,
}

#[derive(Args, Clone)]
struct Common {
    /// Number of users K (repeatable where a list makes sense).
    #[arg(short = 'K', long = "users")]
    users: Vec<usize>,
    /// Number of antennas M (repeatable where a list makes sense).
    #[arg(short = 'M', long = "antennas")]
    antennas: Vec<usize>,
    /// Linear SNR = 1/σn² (repeatable).
    #[arg(long)]
    snr: Vec<f64>,
    /// Iteration count (repeatable for sweeps).
    #[arg(long)]
    iters: Vec<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Detector (repeatable): mmse, gmpid, sagmpid, jacobi, richardson.
    #[arg(long = "detector")]
    detectors: Vec<String>,
    /// Override the SA-GMPID relaxation factor.
    #[arg(long)]
    w: Option<f64>,
    #[arg(long = "w-mode", value_enum)]
    w_mode: Option<WModeArg>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    #[arg(long = "variable-rule", value_enum)]
    variable_rule: Option<RuleArg>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML experiment file (sweep only).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(short = 'K', long = "users", default_value_t = 100)]
    users: usize,
    #[arg(short = 'M', long = "antennas", default_value_t = 300)]
    antennas: usize,
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GammaArg::Asymptotic)]
    gamma: GammaArg,
    /// Also write a CSV header and row here.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::NotConverged(_) | Error::DegenerateVariance { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

impl Common {
    fn single<T: Copy>(list: &[T], default: T, name: &str) -> CliResult<T> {
        match list {
            [] => Ok(default),
            [v] => Ok(*v),
            _ => Err(Failure::Usage(format!(
                "{name} takes a single value for this subcommand"
            ))),
        }
    }

    fn detector_list(&self) -> CliResult<Vec<DetectorKind>> {
        self.detectors
            .iter()
            .map(|d| d.parse::<DetectorKind>().map_err(Failure::from))
            .collect()
    }

    fn apply_cfg(&self, mut cfg: DetectorConfig) -> DetectorConfig {
        if let Some(w) = self.w {
            cfg.relaxation_w = Some(w);
        }
        if let Some(m) = self.w_mode {
            cfg.w_mode = match m {
                WModeArg::Exact => WMode::ExactEigen,
                WModeArg::Mp => WMode::MarchenkoPastur,
            };
        }
        if let Some(i) = self.init {
            cfg.init = match i {
                InitArg::Paper => InitMode::PaperInfinite,
                InitArg::Prior => InitMode::Prior,
            };
        }
        if let Some(r) = self.variable_rule {
            cfg.variable_rule = match r {
                RuleArg::Broadcast => VariableRule::Broadcast,
                RuleArg::Extrinsic => VariableRule::Extrinsic,
            };
        }
        cfg
    }

    fn open_out(&self) -> CliResult<Option<BufWriter<File>>> {
        Ok(match &self.out {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        })
    }
}

fn noise_for(snr: f64) -> CliResult<f64> {
    if snr > 0.0 && snr.is_finite() {
        Ok(1.0 / snr)
    } else {
        Err(Failure::Usage(format!("SNR must be positive, got {snr}")))
    }
}

fn detect(a: &Common) -> CliResult<ExitCode> {
    let dims = Dimensions::new(
        Common::single(&a.users, 100, "--users")?,
        Common::single(&a.antennas, 300, "--antennas")?,
    )?;
    let snr = Common::single(&a.snr, 10.0, "--snr")?;
    let detector = match a.detector_list()?.as_slice() {
        [] => DetectorKind::Gmpid,
        [d] => *d,
        _ => return Err(Failure::Usage("detect runs a single --detector".into())),
    };
    let cfg = a
        .apply_cfg(DetectorConfig::default())
        .with_max_iters(Common::single(&a.iters, 200, "--iters")?);
    cfg.validate()?;
    let inst = SystemInstance::generate_uniform(dims, 1.0, noise_for(snr)?, RngSeed(a.seed.unwrap_or(0)))?;
    let result = detector.run(&inst, &cfg)?;
    let mmse = mmse_detect(&inst)?;
    let out = io::stdout();
    let mut out = out.lock();
    writeln!(out, "detector={detector}")?;
    writeln!(out, "verdict={}", result.verdict)?;
    writeln!(out, "iterations={}", result.iterations_run)?;
    writeln!(
        out,
        "mse={:.6e}",
        mean_squared_distance(&result.estimates, inst.x().as_slice())
    )?;
    writeln!(
        out,
        "dist_mmse={:.6e}",
        mean_squared_distance(&result.estimates, mmse.estimates.as_slice())
    )?;
    let xs: Vec<String> = result.estimates.iter().map(|v| format!("{v:.6e}")).collect();
    writeln!(out, "xhat={}", xs.join(","))?;
    if let Some(w) = a.open_out()? {
        result.write_trace_csv(w)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(a: &Common) -> CliResult<ExitCode> {
    let mut spec = match &a.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::new(
            Dimensions {
                users: 200,
                antennas: 300,
            },
            vec![10.0],
            vec![1, 2, 5, 10, 20, 50, 100],
            vec![DetectorKind::Mmse, DetectorKind::Gmpid, DetectorKind::Sagmpid],
        ),
    };
    if !a.users.is_empty() {
        spec.dims.users = Common::single(&a.users, 0, "--users")?;
    }
    if !a.antennas.is_empty() {
        spec.dims.antennas = Common::single(&a.antennas, 0, "--antennas")?;
    }
    if !a.snr.is_empty() {
        spec.snr_grid = a.snr.clone();
    }
    if !a.iters.is_empty() {
        spec.iteration_grid = a.iters.clone();
    }
    if !a.detectors.is_empty() {
        spec.detectors = a.detector_list()?;
    }
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    if let Some(s) = a.seed {
        spec.base_seed = RngSeed(s);
    }
    if a.workers.is_some() {
        spec.workers = a.workers;
    }
    spec.detector_cfg = a.apply_cfg(spec.detector_cfg.clone());
    spec.validate()?;
    let result = run_experiment(&spec)?;
    match a.open_out()? {
        Some(mut w) => {
            result.write_csv(&mut w)?;
            w.flush()?;
        }
        None => result.write_csv(io::stdout().lock())?,
    }
    for e in &result.errors {
        eprintln!("trial {} snr {} {}: {}", e.trial, e.snr, e.detector, e.error);
    }
    Ok(if result.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn regimes(a: &Common) -> CliResult<ExitCode> {
    let mut spec = RegimeSpec::default();
    if !a.users.is_empty() {
        spec.users = a.users.clone();
    }
    spec.antennas = Common::single(&a.antennas, spec.antennas, "--antennas")?;
    spec.snr = Common::single(&a.snr, spec.snr, "--snr")?;
    noise_for(spec.snr)?;
    spec.max_iters = Common::single(&a.iters, spec.max_iters, "--iters")?;
    spec.trials = a.trials.unwrap_or(spec.trials);
    if spec.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    if let Some(s) = a.seed {
        spec.base_seed = RngSeed(s);
    }
    if !a.detectors.is_empty() {
        spec.detectors = a.detector_list()?;
    }
    spec.workers = a.workers;
    spec.detector_cfg = a.apply_cfg(spec.detector_cfg);
    spec.detector_cfg.validate()?;
    let rows = regime_table(&spec)?;
    let table = format_regime_table(&rows);
    print!("{table}");
    if let Some(mut w) = a.open_out()? {
        w.write_all(table.as_bytes())?;
    }
    let errors: usize = rows.iter().flat_map(|r| &r.cells).map(|c| c.errors).sum();
    Ok(if errors == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn bench(a: &Common) -> CliResult<ExitCode> {
    let users = if a.users.is_empty() { vec![64] } else { a.users.clone() };
    let antennas = if a.antennas.is_empty() {
        vec![256, 512, 1024]
    } else {
        a.antennas.clone()
    };
    let mut dims = Vec::new();
    for &k in &users {
        for &m in &antennas {
            dims.push(Dimensions::new(k, m)?);
        }
    }
    dims.sort_by_key(|d| d.users * d.antennas);
    let sweeps = Common::single(&a.iters, 100, "--iters")?;
    let with_mmse = a.detectors.iter().any(|d| d.eq_ignore_ascii_case("mmse"));
    let rows = bench_iteration(&dims, sweeps, with_mmse, RngSeed(a.seed.unwrap_or(0)))?;
    let mut text = format!("{BENCH_CSV_HEADER}\n");
    for r in &rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    print!("{text}");
    if let Some(mut w) = a.open_out()? {
        w.write_all(text.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn analyze(a: &AnalyzeArgs) -> CliResult<ExitCode> {
    let dims = Dimensions::new(a.users, a.antennas)?;
    let inst = SystemInstance::generate_uniform(dims, 1.0, noise_for(a.snr)?, RngSeed(a.seed))?;
    let params = AsymptoticParams::from_instance(&inst)?;
    let gamma = match a.gamma {
        GammaArg::Asymptotic => GammaChoice::Asymptotic,
        GammaArg::FixedPoint => GammaChoice::FixedPoint,
    };
    let report = ConvergenceReport::compute(inst.h(), &params, gamma)?;
    print!("{}", report.to_key_value());
    if let Some(p) = &a.out {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "{REPORT_CSV_HEADER}")?;
        writeln!(w, "{}", report.csv_row())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Detect(a) => detect(a),
        Command::Sweep(a) => sweep(a),
        Command::Regimes(a) => regimes(a),
        Command::Bench(a) => bench(a),
        Command::Analyze(a) => analyze(a),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
