//! Command-line front end for the timebin-relay simulator.
//!
//! Every subcommand writes a CSV table (with `#` header and footer lines)
//! and, when `--out` is given, a JSON summary next to it.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use thiserror::Error;

use timebin_relay::experiments::{
    distance_at_fidelity, phase_grid, relay_fidelity_curve, run_franson_scan, run_hom_scan, run_sweep,
    run_teleportation_equator, run_teleportation_poles, ExperimentConfig, FidelityReport, PairOrder, Pole,
    RelayModelParams, RunMode, ScanResult, Summary, SweepParameter, SweepPoint,
};

/// Bumped whenever CSV columns or JSON keys change.
pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    MissingFile { path: PathBuf, source: io::Error },

    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },

    #[error("invalid configuration: {0}")]
    Constraint(String),

    #[error("experiment failed: {0}")]
    Experiment(#[from] timebin_relay::Error),

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingFile { .. } => 10,
            CliError::Parse { .. } => 11,
            CliError::Constraint(_) => 12,
            CliError::Experiment(_) | CliError::Write { .. } => 20,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "timebin-relay",
    version,
    about = "Time-bin qubit teleportation and relay simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Bob's fringe as a function of his analyzer phase.
    TeleportEquator {
        #[command(flatten)]
        run: RunArgs,
        /// Number of analyzer phases over one period.
        #[arg(long, default_value_t = 8)]
        points: usize,
    },
    /// Correct and wrong four-fold rates for the two pole inputs.
    TeleportPoles {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Two-photon dip versus path mismatch.
    Hom {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = -300.0, allow_hyphen_values = true)]
        min_um: f64,
        #[arg(long, default_value_t = 300.0)]
        max_um: f64,
        #[arg(long, default_value_t = 20.0)]
        step_um: f64,
    },
    /// Entanglement fringe of the EPR source.
    Franson {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 8)]
        points: usize,
    },
    /// Fidelity against distance for one to four relay segments.
    RelayCurve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 300.0)]
        max_km: f64,
        #[arg(long, default_value_t = 1.0)]
        step_km: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        segments: Vec<u32>,
    },
    /// Pole, equator and total fidelity while one parameter varies.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// One of pump_ratio, delay_um, mode_overlap, dark_prob_per_ns.
        #[arg(long)]
        parameter: SweepParameter,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSON experiment configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV output path. The JSON summary goes to the same path with a .json extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Mode::Analytic)]
    pub mode: Mode,
    #[arg(long)]
    pub pulses: Option<u64>,
    /// Keep only first-order pair emission.
    #[arg(long)]
    pub first_order: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Analytic,
    Montecarlo,
    Both,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Analytic => "analytic",
            Mode::Montecarlo => "montecarlo",
            Mode::Both => "both",
        }
    }
}

/// CSV text plus the JSON summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub summary: Value,
}

/// Reads a JSON document, filling omitted keys with defaults. A missing path
/// means all defaults.
pub fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|source| CliError::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig = load_json(path)?;
    config.validate().map_err(constraint)?;
    Ok(config)
}

fn constraint(e: timebin_relay::Error) -> CliError {
    CliError::Constraint(e.to_string())
}

/// Resolves flags against the config file into a validated config and run mode.
pub fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, RunMode), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if args.first_order {
        config.pair_order = PairOrder::FirstOrder;
    }
    if let Some(pulses) = args.pulses {
        config.pulses = pulses;
    }
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    config.validate().map_err(constraint)?;
    let mode = match args.mode {
        Mode::Analytic => RunMode::analytic(),
        sampled => {
            let seed = config
                .seed
                .ok_or_else(|| CliError::Constraint(format!("--mode {} needs a seed", sampled.name())))?;
            if sampled == Mode::Both {
                RunMode::both(config.pulses, seed)
            } else {
                RunMode::monte_carlo(config.pulses, seed)
            }
        }
    };
    Ok((config, mode))
}

pub fn execute(command: &Command) -> Result<Report, CliError> {
    match command {
        Command::TeleportEquator { run, points } => {
            let (config, mode) = resolve(run)?;
            let r = run_teleportation_equator(&config, &phase_grid(*points), &mode)?;
            Ok(scan_report("teleport-equator", run, &config, &r))
        }
        Command::TeleportPoles { run } => {
            let (config, mode) = resolve(run)?;
            let r = run_teleportation_poles(&config, &[Pole::Early, Pole::Late], &mode)?;
            Ok(scan_report("teleport-poles", run, &config, &r))
        }
        Command::Hom {
            run,
            min_um,
            max_um,
            step_um,
        } => {
            let (config, mode) = resolve(run)?;
            let grid = linear_grid(*min_um, *max_um, *step_um)?;
            let r = run_hom_scan(&config, &grid, &mode)?;
            Ok(scan_report("hom", run, &config, &r))
        }
        Command::Franson { run, points } => {
            let (config, mode) = resolve(run)?;
            let r = run_franson_scan(&config, &phase_grid(*points), &mode)?;
            Ok(scan_report("franson", run, &config, &r))
        }
        Command::Sweep { run, parameter, values } => {
            let (config, mode) = resolve(run)?;
            let points = run_sweep(&config, *parameter, values, &mode)?;
            Ok(sweep_report(run, &config, *parameter, &points))
        }
        Command::RelayCurve {
            config,
            max_km,
            step_km,
            segments,
            ..
        } => {
            let params: RelayModelParams = load_json(config.as_deref())?;
            params.validate().map_err(constraint)?;
            if segments.is_empty() || segments.contains(&0) {
                return Err(CliError::Constraint("segments must be positive".into()));
            }
            let grid = linear_grid(0.0, *max_km, *step_km)?;
            relay_report(&params, segments, &grid)
        }
    }
}

/// Runs a parsed command line and writes its outputs.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let report = execute(&cli.command)?;
    let out = match &cli.command {
        Command::TeleportEquator { run, .. }
        | Command::TeleportPoles { run }
        | Command::Hom { run, .. }
        | Command::Franson { run, .. }
        | Command::Sweep { run, .. } => run.out.as_deref(),
        Command::RelayCurve { out, .. } => out.as_deref(),
    };
    write_report(&report, out)
}

pub fn write_report(report: &Report, out: Option<&Path>) -> Result<(), CliError> {
    let Some(path) = out else {
        print!("{}", report.csv);
        return Ok(());
    };
    let write = |p: &Path, text: &str| {
        fs::write(p, text).map_err(|source| CliError::Write {
            path: p.to_path_buf(),
            source,
        })
    };
    write(path, &report.csv)?;
    let mut json = serde_json::to_string_pretty(&report.summary).expect("summary is plain JSON");
    json.push('\n');
    write(&summary_path(path), &json)
}

pub fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn linear_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && min.is_finite() && max.is_finite() && max >= min) {
        return Err(CliError::Constraint(format!("bad grid {min}..{max} step {step}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| min + k as f64 * step).collect())
}

struct Meta {
    experiment: &'static str,
    mode: Mode,
    seed: Option<u64>,
    pulses: Option<u64>,
    config: Value,
    derived: Vec<(&'static str, f64)>,
}

impl Meta {
    fn new(experiment: &'static str, args: &RunArgs, config: &ExperimentConfig) -> Self {
        let sampled = args.mode != Mode::Analytic;
        Self {
            experiment,
            mode: args.mode,
            seed: config.seed.filter(|_| sampled),
            pulses: sampled.then_some(config.pulses),
            config: serde_json::to_value(config).expect("config serializes"),
            derived: vec![("epr_pair_probability", config.epr_pair_probability())],
        }
    }

    fn header(&self, csv: &mut String) {
        line(csv, format_args!("# timebin-relay {VERSION}"));
        line(csv, format_args!("# schema: {SCHEMA_VERSION}"));
        line(csv, format_args!("# experiment: {}", self.experiment));
        line(csv, format_args!("# mode: {}", self.mode.name()));
        if let Some(seed) = self.seed {
            line(csv, format_args!("# seed: {seed}"));
        }
        if let Some(pulses) = self.pulses {
            line(csv, format_args!("# pulses: {pulses}"));
        }
        line(csv, format_args!("# config: {}", self.config));
        for (name, value) in &self.derived {
            line(csv, format_args!("# {name}: {}", num(*value)));
        }
    }

    fn summary(&self) -> Value {
        let derived: serde_json::Map<String, Value> =
            self.derived.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        json!({
            "schema": SCHEMA_VERSION,
            "version": VERSION,
            "experiment": self.experiment,
            "mode": self.mode.name(),
            "seed": self.seed,
            "pulses": self.pulses,
            "config": self.config,
            "derived": derived,
        })
    }
}

fn line(csv: &mut String, args: std::fmt::Arguments) {
    csv.write_fmt(args).expect("writing to a String");
    csv.push('\n');
}

/// Shortest round-trip form, switching to exponent notation far from unity.
fn num(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn row(csv: &mut String, cells: &[String]) {
    csv.push_str(&cells.join(","));
    csv.push('\n');
}

fn scan_report(experiment: &'static str, args: &RunArgs, config: &ExperimentConfig, r: &ScanResult) -> Report {
    let meta = Meta::new(experiment, args, config);
    let mut csv = String::new();
    meta.header(&mut csv);

    let analytic = r.rows.iter().all(|row| row.analytic.is_some());
    let sampled = r.rows.iter().all(|row| row.counts.is_some());
    let mut columns = vec![r.axis.clone()];
    for rule in &r.rules {
        if analytic {
            columns.push(format!("{rule}_analytic"));
        }
        if sampled {
            columns.push(format!("{rule}_count"));
            columns.push(format!("{rule}_count_err"));
        }
    }
    row(&mut csv, &columns);
    for point in &r.rows {
        let mut cells = vec![num(point.x)];
        for k in 0..r.rules.len() {
            if let Some(a) = &point.analytic {
                cells.push(num(a[k]));
            }
            if let Some(c) = &point.counts {
                cells.push(c[k].to_string());
                cells.push(num((c[k] as f64).sqrt()));
            }
        }
        row(&mut csv, &cells);
    }
    for (label, summary) in [("analytic", &r.analytic), ("sampled", &r.sampled)] {
        if let Some(s) = summary {
            summary_footer(&mut csv, label, s);
        }
    }

    let mut summary = meta.summary();
    summary["rules"] = json!(r.rules);
    summary["axis"] = json!(r.axis);
    summary["analytic"] = json!(r.analytic);
    summary["sampled"] = json!(r.sampled);
    Report { csv, summary }
}

fn summary_footer(csv: &mut String, label: &str, s: &Summary) {
    if let Some(v) = s.visibility {
        line(
            csv,
            format_args!("# {label} visibility: {} +/- {}", num(v.value), num(v.error)),
        );
    }
    if let Some(f) = s.fidelity {
        line(
            csv,
            format_args!("# {label} fidelity: {} +/- {}", num(f.value), num(f.error)),
        );
    }
}

fn sweep_report(args: &RunArgs, config: &ExperimentConfig, parameter: SweepParameter, points: &[SweepPoint]) -> Report {
    let meta = Meta::new("sweep", args, config);
    let mut csv = String::new();
    meta.header(&mut csv);
    line(&mut csv, format_args!("# parameter: {}", parameter.name()));

    let fields = ["f_poles", "f_equator", "visibility", "f_total"];
    let pick = |r: &FidelityReport| [r.poles, r.equator, r.visibility, r.total];
    type Source = fn(&SweepPoint) -> Option<&FidelityReport>;
    let sources: Vec<(&str, Source)> = vec![
        ("analytic", |p| p.analytic.as_ref()),
        ("sampled", |p| p.sampled.as_ref()),
    ];
    let active: Vec<_> = sources
        .into_iter()
        .filter(|(_, get)| points.iter().all(|p| get(p).is_some()))
        .collect();

    let mut columns = vec![parameter.name().to_string()];
    for (label, _) in &active {
        for f in fields {
            columns.push(format!("{label}_{f}"));
            columns.push(format!("{label}_{f}_err"));
        }
    }
    row(&mut csv, &columns);
    for p in points {
        let mut cells = vec![num(p.value)];
        for (_, get) in &active {
            if let Some(r) = get(p) {
                for e in pick(r) {
                    cells.push(num(e.value));
                    cells.push(num(e.error));
                }
            }
        }
        row(&mut csv, &cells);
    }

    let mut summary = meta.summary();
    summary["parameter"] = json!(parameter.name());
    summary["points"] = json!(points);
    Report { csv, summary }
}

const RELAY_TARGET_FIDELITY: f64 = 0.9;

fn relay_report(params: &RelayModelParams, segments: &[u32], grid: &[f64]) -> Result<Report, CliError> {
    let curve = relay_fidelity_curve(params, segments, grid)?;
    let mut reach = Vec::with_capacity(segments.len());
    for &n in segments {
        let p = RelayModelParams { segments: n, ..*params };
        reach.push(distance_at_fidelity(&p, RELAY_TARGET_FIDELITY, 1e4)?);
    }
    let params_json = serde_json::to_value(params).expect("params serialize");

    let mut csv = String::new();
    line(&mut csv, format_args!("# timebin-relay {VERSION}"));
    line(&mut csv, format_args!("# schema: {SCHEMA_VERSION}"));
    line(&mut csv, format_args!("# experiment: relay-curve"));
    line(&mut csv, format_args!("# config: {params_json}"));
    let mut columns = vec!["l_km".to_string()];
    columns.extend(segments.iter().map(|n| format!("F_n{n}")));
    row(&mut csv, &columns);
    for (l, f) in curve.length_km.iter().zip(&curve.fidelity) {
        let mut cells = vec![num(*l)];
        cells.extend(f.iter().copied().map(num));
        row(&mut csv, &cells);
    }
    for (n, l) in segments.iter().zip(&reach) {
        match l {
            Some(l) => line(
                &mut csv,
                format_args!("# n={n} reaches F={RELAY_TARGET_FIDELITY} at {} km", num(*l)),
            ),
            None => line(
                &mut csv,
                format_args!("# n={n} never crosses F={RELAY_TARGET_FIDELITY}"),
            ),
        }
    }

    let reach_json: serde_json::Map<String, Value> = segments
        .iter()
        .zip(&reach)
        .map(|(n, l)| (format!("n{n}"), json!(l)))
        .collect();
    let summary = json!({
        "schema": SCHEMA_VERSION,
        "version": VERSION,
        "experiment": "relay-curve",
        "config": params_json,
        "segments": segments,
        "target_fidelity": RELAY_TARGET_FIDELITY,
        "distance_km": reach_json,
    });
    Ok(Report { csv, summary })
}
