//! Command-line front end.
//!
//! Subcommands emit sweep tables as CSV (17 significant digits) or JSON.
//! Options come from flags and, optionally, a flat TOML file given with
//! `--config`; flags win over the file.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fidelity::{analytic_point, bound_check, FidelityPoint, Method};
use crate::measurement::{validate_angle, ProbeConfig};
use crate::sequential::{
    estimation_fidelity_single_measure, simulate_chain_trajectories, transmission_fidelity_closed_form,
    two_user_sweep, Budget, ChainConfig,
};
use crate::verify::{self, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "infodist", version, about = "Information/disturbance trade-off of qudit probe measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-user optimal curve: theta,G,F,bound_slack
    Tradeoff(RunArgs),
    /// N-user homogeneous line: theta,G,F_N
    Sequential(RunArgs),
    /// Two users with independent probe angles: theta_a,theta_b,G,F
    TwoUser(RunArgs),
    /// Stochastic simulation of a homogeneous line
    Simulate(RunArgs),
    /// Run the invariant suite
    Verify(RunArgs),
}

impl Command {
    fn kind(&self) -> Kind {
        match self {
            Command::Tradeoff(_) => Kind::Tradeoff,
            Command::Sequential(_) => Kind::Sequential,
            Command::TwoUser(_) => Kind::TwoUser,
            Command::Simulate(_) => Kind::Simulate,
            Command::Verify(_) => Kind::Verify,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Tradeoff(a)
            | Command::Sequential(a)
            | Command::TwoUser(a)
            | Command::Simulate(a)
            | Command::Verify(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Tradeoff,
    Sequential,
    TwoUser,
    Simulate,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Options shared by every subcommand. Angles accept plain numbers or
/// multiples of `pi` (`pi/2`, `4pi/9`); sweeps are `start:stop:count`.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunArgs {
    /// Qudit dimension d
    #[arg(long = "dim")]
    pub dim: Option<usize>,
    /// Probe angle or sweep
    #[arg(long)]
    pub theta: Option<AngleSpec>,
    /// First user's angle or sweep (two-user)
    #[arg(long = "theta-a")]
    pub theta_a: Option<AngleSpec>,
    /// Second user's angle or sweep (two-user)
    #[arg(long = "theta-b")]
    pub theta_b: Option<AngleSpec>,
    /// Number of users N
    #[arg(long)]
    pub users: Option<usize>,
    /// Monte Carlo samples / simulated signals
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Maximum number of terms in exact sums
    #[arg(long)]
    pub budget: Option<u64>,
    /// Override every verification threshold
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Flat TOML file with any of the options above
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl RunArgs {
    /// Fills unset fields from `other`.
    fn or(self, other: RunArgs) -> RunArgs {
        RunArgs {
            dim: self.dim.or(other.dim),
            theta: self.theta.or(other.theta),
            theta_a: self.theta_a.or(other.theta_a),
            theta_b: self.theta_b.or(other.theta_b),
            users: self.users.or(other.users),
            samples: self.samples.or(other.samples),
            seed: self.seed.or(other.seed),
            out: self.out.or(other.out),
            format: self.format.or(other.format),
            budget: self.budget.or(other.budget),
            tolerance: self.tolerance.or(other.tolerance),
            config: self.config.or(other.config),
        }
    }
}

/// Angle or evenly spaced sweep as written by the user.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "TomlAngle")]
pub struct AngleSpec(pub Sweep);

#[derive(Deserialize)]
#[serde(untagged)]
enum TomlAngle {
    Number(f64),
    Text(String),
}

impl TryFrom<TomlAngle> for AngleSpec {
    type Error = String;

    fn try_from(v: TomlAngle) -> std::result::Result<Self, String> {
        match v {
            TomlAngle::Number(x) => Ok(AngleSpec(Sweep::single(x))),
            TomlAngle::Text(s) => s.parse(),
        }
    }
}

impl std::str::FromStr for AngleSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Sweep::parse(s).map(AngleSpec).map_err(|e| e.to_string())
    }
}

/// `count` evenly spaced values from `start` to `stop`, both included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Sweep {
    pub fn single(v: f64) -> Self {
        Sweep {
            start: v,
            stop: v,
            count: 1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [v] => Ok(Sweep::single(parse_angle(v)?)),
            [a, b, n] => {
                let count: usize = n
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad sweep count `{n}`")))?;
                if count == 0 {
                    return Err(Error::invalid("sweep count must be positive"));
                }
                Ok(Sweep {
                    start: parse_angle(a)?,
                    stop: parse_angle(b)?,
                    count,
                })
            }
            _ => Err(Error::invalid(format!(
                "expected `value` or `start:stop:count`, got `{s}`"
            ))),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let last = self.count - 1;
        (0..self.count)
            .map(|i| {
                if i == last {
                    self.stop
                } else {
                    self.start + (self.stop - self.start) * i as f64 / last as f64
                }
            })
            .collect()
    }
}

/// Parses `0.7`, `pi`, `pi/2`, `4pi/9`, `4*pi/9`.
pub fn parse_angle(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::invalid(format!("cannot parse angle `{s}`"));
    let Some(idx) = s.find("pi") else {
        return s.parse::<f64>().map_err(|_| bad());
    };
    let coef = s[..idx].trim().trim_end_matches('*').trim();
    let coef = match coef {
        "" => 1.0,
        "-" => -1.0,
        c => c.parse::<f64>().map_err(|_| bad())?,
    };
    let rest = s[idx + 2..].trim();
    let den = if rest.is_empty() {
        1.0
    } else {
        rest.strip_prefix('/')
            .ok_or_else(bad)?
            .trim()
            .parse::<f64>()
            .map_err(|_| bad())?
    };
    Ok(coef * PI / den)
}

/// Fully resolved options for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub d: usize,
    pub theta: Sweep,
    pub theta_a: Sweep,
    pub theta_b: Sweep,
    pub users: usize,
    pub samples: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub budget: Budget,
    pub tolerance: Option<f64>,
}

fn load_config_file(path: &Path) -> Result<RunArgs> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| Error::invalid(format!("config file {}: {e}", path.display())))
}

fn resolve(kind: Kind, args: &RunArgs) -> Result<RunConfig> {
    let mut args = args.clone();
    if let Some(path) = args.config.clone() {
        args = args.or(load_config_file(&path)?);
    }
    let full = Sweep {
        start: 0.0,
        stop: FRAC_PI_2,
        count: 91,
    };
    let default_theta = match kind {
        Kind::Simulate => Sweep::single(0.7),
        _ => full,
    };
    let cfg = RunConfig {
        d: args.dim.unwrap_or(2),
        theta: args.theta.map(|a| a.0).unwrap_or(default_theta),
        theta_a: args.theta_a.map(|a| a.0).unwrap_or(Sweep {
            start: PI / 9.0,
            stop: 4.0 * PI / 9.0,
            count: 4,
        }),
        theta_b: args.theta_b.map(|a| a.0).unwrap_or(full),
        users: args.users.unwrap_or(match kind {
            Kind::Simulate => 2,
            _ => 1,
        }),
        samples: args.samples.unwrap_or(match kind {
            Kind::Verify => 200_000,
            _ => 100_000,
        }),
        seed: args.seed.unwrap_or(0),
        out: args.out,
        format: args.format.unwrap_or(Format::Csv),
        budget: args.budget.map(Budget).unwrap_or_default(),
        tolerance: args.tolerance,
    };
    if cfg.d < 2 {
        return Err(Error::invalid(format!("--dim must be at least 2, got {}", cfg.d)));
    }
    if cfg.users == 0 || cfg.samples == 0 {
        return Err(Error::invalid("--users and --samples must be positive"));
    }
    for sweep in [&cfg.theta, &cfg.theta_a, &cfg.theta_b] {
        validate_angle(sweep.start)?;
        validate_angle(sweep.stop)?;
    }
    if kind == Kind::Simulate && cfg.theta.count != 1 {
        return Err(Error::invalid("simulate takes a single --theta value"));
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Copy)]
pub enum Cell {
    Int(u64),
    Real(f64),
}

/// Header plus rows, rendered as CSV or JSON.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    fn push_reals(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|&x| Cell::Real(x)).collect());
    }

    /// Real column by header name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| *h == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match r[idx] {
                    Cell::Int(v) => v as f64,
                    Cell::Real(v) => v,
                })
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(v) => v.to_string(),
                    Cell::Real(v) => format!("{v:.16e}"),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj = self
                    .header
                    .iter()
                    .zip(row)
                    .map(|(h, c)| {
                        let v = match c {
                            Cell::Int(v) => serde_json::Value::from(*v),
                            Cell::Real(v) => serde_json::Value::from(*v),
                        };
                        (h.to_string(), v)
                    })
                    .collect::<serde_json::Map<_, _>>();
                serde_json::Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("finite table serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

/// Single-user curve with bound slack per point.
pub fn run_tradeoff(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(vec!["theta", "G", "F", "bound_slack"]);
    for theta in cfg.theta.values() {
        let p = analytic_point(&ProbeConfig::new(cfg.d, theta)?);
        t.push_reals(&[theta, p.g, p.f, bound_check(&p, cfg.d, 0.0).slack]);
    }
    Ok(t)
}

/// `(G, F_N)` of a homogeneous line at one angle.
pub fn sequential_point(d: usize, theta: f64, users: usize, budget: Budget) -> Result<FidelityPoint> {
    if users == 1 {
        return Ok(analytic_point(&ProbeConfig::new(d, theta)?));
    }
    let f = transmission_fidelity_closed_form(d, theta, users, budget)?;
    let g = estimation_fidelity_single_measure(d, theta)?;
    Ok(FidelityPoint::exact(g, f, Method::Analytic))
}

/// Homogeneous N-user curve.
pub fn run_sequential(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(vec!["theta", "G", "F_N"]);
    for theta in cfg.theta.values() {
        let p = sequential_point(cfg.d, theta, cfg.users, cfg.budget)?;
        t.push_reals(&[theta, p.g, p.f]);
    }
    Ok(t)
}

/// Two-user sweep, `theta_a` varying slowest.
pub fn run_two_user(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(vec!["theta_a", "theta_b", "G", "F"]);
    for cell in two_user_sweep(cfg.d, &cfg.theta_a.values(), &cfg.theta_b.values())? {
        t.push_reals(&[cell.theta_a, cell.theta_b, cell.point.g, cell.point.f]);
    }
    Ok(t)
}

/// Trajectory statistics against the exact values.
pub fn run_simulate(cfg: &RunConfig) -> Result<Table> {
    let theta = cfg.theta.start;
    let chain = ChainConfig::homogeneous(cfg.d, theta, cfg.users)?;
    let stats = simulate_chain_trajectories(&chain, cfg.samples, cfg.seed)?;
    let exact = sequential_point(cfg.d, theta, cfg.users, cfg.budget)?;
    let mut t = Table::new(vec![
        "d", "users", "theta", "signals", "seed", "F_emp", "F_stderr", "F_exact", "G_emp", "G_stderr", "G_exact",
    ]);
    t.rows.push(vec![
        Cell::Int(cfg.d as u64),
        Cell::Int(cfg.users as u64),
        Cell::Real(theta),
        Cell::Int(cfg.samples as u64),
        Cell::Int(cfg.seed),
        Cell::Real(stats.f_mean),
        Cell::Real(stats.f_stderr),
        Cell::Real(exact.f),
        Cell::Real(stats.g_mean),
        Cell::Real(stats.g_stderr),
        Cell::Real(exact.g),
    ]);
    Ok(t)
}

fn write_output(cfg: &RunConfig, body: &str, stdout: &mut dyn Write) -> Result<()> {
    match &cfg.out {
        Some(path) => fs::write(path, body).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        }),
        None => stdout.write_all(body.as_bytes()).map_err(|source| Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BudgetExceeded { .. } => EXIT_BUDGET,
        _ => EXIT_VALIDATION,
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<i32> {
    let kind = cli.command.kind();
    let cfg = resolve(kind, cli.command.args())?;
    let table = match kind {
        Kind::Tradeoff => run_tradeoff(&cfg)?,
        Kind::Sequential => run_sequential(&cfg)?,
        Kind::TwoUser => run_two_user(&cfg)?,
        Kind::Simulate => run_simulate(&cfg)?,
        Kind::Verify => {
            let opts = VerifyOptions {
                samples: cfg.samples,
                signals: cfg.samples.min(100_000),
                seed: cfg.seed,
                tolerance: cfg.tolerance,
                budget: cfg.budget,
            };
            let checks = verify::run_suite(&opts)?;
            let report = verify::render_report(&checks);
            stdout.write_all(report.as_bytes()).map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })?;
            if cfg.out.is_some() {
                let mut t = Table::new(vec!["check", "passed", "measured", "threshold"]);
                for (i, c) in checks.iter().enumerate() {
                    t.rows.push(vec![
                        Cell::Int(i as u64 + 1),
                        Cell::Int(c.passed as u64),
                        Cell::Real(c.measured),
                        Cell::Real(c.threshold),
                    ]);
                }
                write_output(&cfg, &t.render(cfg.format), stdout)?;
            }
            return Ok(if checks.iter().all(|c| c.passed) {
                EXIT_OK
            } else {
                EXIT_VERIFY_FAILED
            });
        }
    };
    write_output(&cfg, &table.render(cfg.format), stdout)?;
    Ok(EXIT_OK)
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["infodist"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn angle_parsing() {
        assert_eq!(parse_angle("0.7").unwrap(), 0.7);
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert_eq!(parse_angle("pi/2").unwrap(), PI / 2.0);
        assert_eq!(parse_angle("4pi/9").unwrap(), 4.0 * PI / 9.0);
        assert_eq!(parse_angle(" 4*pi / 9 ").unwrap(), 4.0 * PI / 9.0);
        assert!(parse_angle("x").is_err());
        assert!(parse_angle("pi2").is_err());
    }

    #[test]
    fn sweep_parsing() {
        let s = Sweep::parse("0:pi/2:3").unwrap();
        assert_eq!(s.values(), vec![0.0, PI / 4.0, FRAC_PI_2]);
        assert_eq!(Sweep::parse("0.3").unwrap().values(), vec![0.3]);
        assert!(Sweep::parse("0:1:0").is_err());
        assert!(Sweep::parse("0:1").is_err());
    }

    #[test]
    fn tradeoff_three_points() {
        let (code, out, _) = run_capture(&["tradeoff", "--dim", "2", "--theta", "0:pi/2:3"]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "theta,G,F,bound_slack");
        assert_eq!(lines.len(), 4);
        let parse = |l: &str| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>();
        let first = parse(lines[1]);
        let last = parse(lines[3]);
        assert!((first[1] - 2.0 / 3.0).abs() < 1e-12 && (first[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((last[1] - 0.5).abs() < 1e-12 && (last[2] - 1.0).abs() < 1e-12);
        for l in &lines[1..] {
            assert!(parse(l)[3].abs() <= 1e-9);
        }
    }

    #[test]
    fn unknown_flag_and_bad_values_are_validation_errors() {
        assert_eq!(run_capture(&["tradeoff", "--bogus", "1"]).0, EXIT_VALIDATION);
        assert_eq!(run_capture(&["tradeoff", "--theta", "2.0"]).0, EXIT_VALIDATION);
        assert_eq!(run_capture(&["tradeoff", "--dim", "1"]).0, EXIT_VALIDATION);
        assert_eq!(run_capture(&["simulate", "--theta", "0:1:3"]).0, EXIT_VALIDATION);
    }

    #[test]
    fn budget_error_exit_code() {
        let (code, _, err) = run_capture(&["sequential", "--dim", "8", "--users", "40", "--budget", "100"]);
        assert_eq!(code, EXIT_BUDGET);
        assert!(err.contains("budget"));
    }

    #[test]
    fn unwritable_output_names_path() {
        let (code, _, err) = run_capture(&["tradeoff", "--out", "/nonexistent-dir/x.csv"]);
        assert_eq!(code, EXIT_VALIDATION);
        assert!(err.contains("/nonexistent-dir/x.csv"));
    }

    #[test]
    fn qutrit_two_users_at_third_turn() {
        let (code, out, _) = run_capture(&["sequential", "--dim", "3", "--users", "2", "--theta", "pi/3"]);
        assert_eq!(code, 0);
        let row: Vec<f64> = out.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert!((row[2] - 0.78125).abs() < 1e-12);
    }

    #[test]
    fn json_mirror() {
        let (code, out, _) = run_capture(&["tradeoff", "--theta", "0:pi/2:2", "--format", "json"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
        assert!((v[1]["F"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_file_and_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "dim = 3\ntheta = \"0:pi/2:5\"\nusers = 2\n").unwrap();
        let p = path.to_str().unwrap();
        let (code, out, _) = run_capture(&["sequential", "--config", p]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 6);
        let (_, out2, _) = run_capture(&["sequential", "--config", p, "--theta", "pi/3"]);
        assert_eq!(out2.lines().count(), 2);
        let row: Vec<f64> = out2.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert!((row[2] - 0.78125).abs() < 1e-12);

        fs::write(&path, "dim = 3\nfoo = 1\n").unwrap();
        assert_eq!(run_capture(&["tradeoff", "--config", p]).0, EXIT_VALIDATION);
        fs::write(&path, "theta = 0.5\n").unwrap();
        let (code, out, _) = run_capture(&["tradeoff", "--config", p]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 2);
    }
}
