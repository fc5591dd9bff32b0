//! Command line: a JSON config with explicit units, five subcommands, and
//! deterministic CSV or JSON tables.
//!
//! Exit codes: 0 success, 1 I/O, 2 configuration, 3 numerical failure.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;
use thiserror::Error;

use crate::dcsl::{boost_velocity_bound, KickMode};
use crate::error::Error as ModelError;
use crate::kick_error::protocol_kick_error;
use crate::model::{AtomSpecies, Ccsl, Csl, Dcsl, DetectionClock, GasMoments, NoiseModel, Protocol};
use crate::pipeline::{
    calibrate_initial_p2, propagate_oracle, run_protocol_with, sweep_kick_time_with, sweep_noise_temperature, sweep_rc,
    trajectory_oracle, Observables, RunOptions, SweepRow,
};
use crate::scan::{
    analytic_csl_bound, boost_exclusion, logspace, scan_exclusion, ExclusionGrid, MeasurementBand, Verdict,
};

pub const CONFIG_ENV: &str = "KICKCOOL_CONFIG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(e) if e.is_numerical() => 3,
            CliError::Model(_) => 2,
            CliError::Io { .. } => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "kickcool", version, about = "Delta-kick cooling moments under collapse noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config; falls back to $KICKCOOL_CONFIG, then to built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Size of the worker pool for sweeps and scans.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Add RK4 cross-check columns.
    #[arg(long, global = true)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Trajectory of the moments through the protocol.
    Simulate,
    /// Exclusion grid and boundary over (lambda, r_C).
    Scan,
    /// dCSL kick error bounds against kick length and noise temperature.
    KickError,
    /// Largest dCSL boost speed compatible with the displacement limit.
    BoostBound,
    /// Final spread and energy against kick length, noise temperature or r_C.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

// ---------------------------------------------------------------- quantities

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    Time,
    Length,
    Temperature,
    Rate,
    AngularFrequency,
    Velocity,
    Mass,
}

impl Dim {
    /// Units and how many of them make one SI unit; dividing by an exact power
    /// of ten keeps "120 um" equal to the literal 120e-6.
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dim::Time => &[("s", 1.0), ("ms", 1e3), ("us", 1e6), ("ns", 1e9)],
            Dim::Length => &[("m", 1.0), ("mm", 1e3), ("um", 1e6), ("µm", 1e6), ("nm", 1e9)],
            Dim::Temperature => &[("K", 1.0), ("mK", 1e3), ("uK", 1e6), ("nK", 1e9), ("pK", 1e12)],
            Dim::Rate => &[("/s", 1.0), ("1/s", 1.0), ("s^-1", 1.0)],
            Dim::AngularFrequency => &[("rad/s", 1.0)],
            Dim::Velocity => &[("m/s", 1.0), ("km/s", 1e-3)],
            Dim::Mass => &[("kg", 1.0), ("u", 1.0 / 1.660_539_066_60e-27)],
        }
    }

    fn hint(self) -> String {
        self.units().iter().map(|(u, _)| *u).collect::<Vec<_>>().join(", ")
    }
}

fn parse_quantity(text: &str, dim: Dim) -> std::result::Result<f64, String> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit() || c == '.' || c == '+' || c == '-')
                && !((c == 'e' || c == 'E')
                    && t[i + 1..].starts_with(|d: char| d.is_ascii_digit() || d == '-' || d == '+'))
        })
        .map(|(i, _)| i)
        .unwrap_or(t.len());
    let (num, unit) = (t[..split].trim(), t[split..].trim());
    if unit.is_empty() {
        return Err(format!("\"{text}\" has no unit; expected one of {}", dim.hint()));
    }
    let value: f64 = num.parse().map_err(|_| format!("cannot read a number from \"{text}\""))?;
    let per = dim
        .units()
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, f)| *f)
        .ok_or_else(|| format!("unit \"{unit}\" in \"{text}\" is not one of {}", dim.hint()))?;
    if !value.is_finite() {
        return Err(format!("\"{text}\" is not finite"));
    }
    Ok(value / per)
}

struct QuantityVisitor(Dim);

impl<'de> Visitor<'de> for QuantityVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        write!(f, "a string with a unit ({})", self.0.hint())
    }

    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<f64, E> {
        parse_quantity(v, self.0).map_err(E::custom)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<f64, E> {
        Err(E::custom(format!("bare number {v} needs a unit ({})", self.0.hint())))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<f64, E> {
        self.visit_f64(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<f64, E> {
        self.visit_f64(v as f64)
    }
}

macro_rules! quantity {
    ($name:ident, $dim:expr) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        struct $name(f64);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                d.deserialize_any(QuantityVisitor($dim)).map($name)
            }
        }

        impl Si for $name {
            fn si(&self) -> f64 {
                self.0
            }
        }
    };
}

trait Si {
    fn si(&self) -> f64;
}

quantity!(Time, Dim::Time);
quantity!(Length, Dim::Length);
quantity!(Temperature, Dim::Temperature);
quantity!(Rate, Dim::Rate);
quantity!(AngularFrequency, Dim::AngularFrequency);
quantity!(Velocity, Dim::Velocity);
quantity!(Mass, Dim::Mass);

// ---------------------------------------------------------------- raw config

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    protocol: RawProtocol,
    noise: Option<RawNoise>,
    simulate: RawSimulate,
    scan: RawScan,
    sweep: Option<RawSweep>,
    kick_error: RawKickError,
    boost: RawBoost,
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawProtocol {
    dt1: Option<Time>,
    dt2: Option<Time>,
    dt3: Option<Time>,
    omega: Option<AngularFrequency>,
    species: Option<RawSpecies>,
    initial_sigma: Option<Length>,
    initial_temperature: Option<Temperature>,
    /// Fit the initial momentum spread so quantum evolution ends at this spread.
    calibrate_to: Option<Length>,
    clock: Option<RawClock>,
    dcsl_kick: Option<RawKickMode>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSpecies {
    Named(String),
    Custom { mass: Mass, nucleons: u32 },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawClock {
    KickEnd,
    Release,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawKickMode {
    Analytic,
    Numeric,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    model: Option<String>,
    lambda: Option<Rate>,
    r_c: Option<Length>,
    tau: Option<Time>,
    t_csl: Option<Temperature>,
    boost: Option<[Velocity; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSimulate {
    sampling: Option<Time>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAxis<Q> {
    from: Q,
    to: Q,
    points: usize,
    #[serde(default)]
    spacing: Spacing,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Spacing {
    #[default]
    Log,
    Linear,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawScan {
    lambda: Option<RawAxis<Rate>>,
    r_c: Option<RawAxis<Length>>,
    band: Option<RawBand>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBand {
    mean: Length,
    sigma: Length,
    level: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    dt2: Option<RawAxis<Time>>,
    t_csl: Option<RawAxis<Temperature>>,
    r_c: Option<RawAxis<Length>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawKickError {
    dt2: Option<RawAxis<Time>>,
    t_csl: Option<RawAxis<Temperature>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawBoost {
    t_total: Option<Time>,
    limit: Option<Length>,
    t_csl: Option<Vec<Temperature>>,
    u: Option<Velocity>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    format: Option<Format>,
    path: Option<PathBuf>,
    precision: Option<usize>,
}

// ---------------------------------------------------------------- resolved config

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    KickTime(Vec<f64>),
    Temperature(Vec<f64>),
    Rc(Vec<f64>),
}

/// Validated configuration in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub run: RunOptions,
    pub calibrated_to: Option<f64>,
    pub noise: Option<NoiseModel>,
    pub sampling: f64,
    pub lambda_axis: Vec<f64>,
    pub rc_axis: Vec<f64>,
    pub band: MeasurementBand,
    pub sweep: Option<SweepAxis>,
    pub kick_dt2: Vec<f64>,
    pub kick_t_csl: Vec<f64>,
    pub boost_t_total: Option<f64>,
    pub boost_limit: f64,
    pub boost_t_csl: Option<Vec<f64>>,
    pub boost_u: Option<f64>,
    pub format: Format,
    pub path: Option<PathBuf>,
    pub precision: usize,
}

/// Location of the first `"key"` in `text` as `origin:line`.
fn anchor(text: &str, origin: &str, key: &str) -> String {
    let needle = format!("\"{key}\"");
    match text.find(&needle) {
        Some(i) => format!("{origin}:{}", text[..i].matches('\n').count() + 1),
        None => origin.to_string(),
    }
}

fn axis<Q: Si>(raw: &RawAxis<Q>, name: &str, at: &dyn Fn(&str) -> String) -> CliResult<Vec<f64>> {
    let (a, b) = (raw.from.si(), raw.to.si());
    let bad = |msg: String| CliError::Config(format!("{}: {name}: {msg}", at(name)));
    if raw.points == 0 {
        return Err(bad("points must be at least 1".into()));
    }
    if raw.points > 1 && !(b > a) {
        return Err(bad(format!("'to' ({b}) must exceed 'from' ({a})")));
    }
    Ok(match raw.spacing {
        Spacing::Log => {
            if !(a > 0.0) {
                return Err(bad("log spacing needs positive end points".into()));
            }
            logspace(a, b, raw.points)
        }
        Spacing::Linear => match raw.points {
            1 => vec![a],
            n => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        },
    })
}

fn noise_model(raw: &RawNoise, at: &dyn Fn(&str) -> String) -> CliResult<Option<NoiseModel>> {
    let Some(model) = raw.model.as_deref() else {
        return Ok(None);
    };
    let lambda = raw.lambda.map(|q| q.0).unwrap_or(0.0);
    let r_c = raw.r_c.map(|q| q.0).unwrap_or(1e-7);
    let forbid = |field: &str, present: bool| -> CliResult<()> {
        if present {
            return Err(CliError::Config(format!("{}: noise.{field} does not apply to model \"{model}\"", at(field))));
        }
        Ok(())
    };
    let need = |field: &str, v: Option<f64>| -> CliResult<f64> {
        v.ok_or_else(|| CliError::Config(format!("{}: model \"{model}\" needs noise.{field}", at("model"))))
    };
    let domain = |e: ModelError| CliError::Config(format!("{}: {e}", at("noise")));
    let built = match model {
        "qm" => {
            for (f, p) in [("lambda", raw.lambda.is_some()), ("r_c", raw.r_c.is_some())] {
                forbid(f, p)?;
            }
            forbid("tau", raw.tau.is_some())?;
            forbid("t_csl", raw.t_csl.is_some())?;
            forbid("boost", raw.boost.is_some())?;
            NoiseModel::QmOnly
        }
        "csl" => {
            forbid("tau", raw.tau.is_some())?;
            forbid("t_csl", raw.t_csl.is_some())?;
            forbid("boost", raw.boost.is_some())?;
            NoiseModel::Csl(Csl::new(lambda, r_c).map_err(domain)?)
        }
        "ccsl" => {
            forbid("t_csl", raw.t_csl.is_some())?;
            forbid("boost", raw.boost.is_some())?;
            let tau = need("tau", raw.tau.map(|q| q.0))?;
            NoiseModel::Ccsl(Ccsl::new(lambda, r_c, tau).map_err(domain)?)
        }
        "dcsl" => {
            forbid("tau", raw.tau.is_some())?;
            let t = need("t_csl", raw.t_csl.map(|q| q.0))?;
            let boost = raw.boost.map(|b| b.map(|v| v.0)).unwrap_or([0.0; 3]);
            NoiseModel::Dcsl(Dcsl::boosted(lambda, r_c, t, boost).map_err(domain)?)
        }
        other => {
            return Err(CliError::Config(format!(
                "{}: unknown noise model \"{other}\"; expected qm, csl, ccsl or dcsl",
                at("model")
            )))
        }
    };
    Ok(Some(built))
}

/// Parses and validates a config. `origin` names the source in messages.
pub fn load_config(text: &str, origin: &str) -> CliResult<RunConfig> {
    let raw: RawConfig = if text.trim().is_empty() {
        RawConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let msg = msg.rfind(" at line ").map(|i| msg[..i].to_string()).unwrap_or(msg);
            CliError::Config(format!("{origin}:{}:{}: {msg}", e.line(), e.column()))
        })?
    };
    let at = |key: &str| anchor(text, origin, key);
    let cfg_err = |key: &str, msg: String| CliError::Config(format!("{}: {msg}", at(key)));

    let p = &raw.protocol;
    let mut protocol = Protocol::standard();
    protocol.species = match &p.species {
        None => AtomSpecies::RB87,
        Some(RawSpecies::Named(n)) if n.eq_ignore_ascii_case("rb87") => AtomSpecies::RB87,
        Some(RawSpecies::Named(n)) => return Err(cfg_err("species", format!("unknown species \"{n}\""))),
        Some(RawSpecies::Custom { mass, nucleons }) => {
            AtomSpecies::new(mass.0, *nucleons).map_err(|e| cfg_err("species", e.to_string()))?
        }
    };
    protocol.dt1 = p.dt1.map_or(protocol.dt1, |q| q.0);
    protocol.dt2 = p.dt2.map_or(protocol.dt2, |q| q.0);
    protocol.dt3 = p.dt3.map_or(protocol.dt3, |q| q.0);
    protocol.omega = p.omega.map_or(protocol.omega, |q| q.0);
    protocol.clock = match p.clock {
        Some(RawClock::Release) => DetectionClock::Release,
        _ => DetectionClock::KickEnd,
    };
    let sigma0 = p.initial_sigma.map_or(Protocol::DEFAULT_SIGMA0, |q| q.0);
    let t0 = p.initial_temperature.map_or(Protocol::DEFAULT_T0, |q| q.0);
    protocol.initial =
        GasMoments::thermal(sigma0, t0, &protocol.species).map_err(|e| cfg_err("protocol", e.to_string()))?;
    protocol.validate().map_err(|e| cfg_err("protocol", e.to_string()))?;
    let calibrated_to = p.calibrate_to.map(|q| q.0);
    if let Some(target) = calibrated_to {
        if p.initial_temperature.is_some() {
            return Err(cfg_err("calibrate_to", "give either initial_temperature or calibrate_to, not both".into()));
        }
        protocol = calibrate_initial_p2(&protocol, target).map_err(|e| cfg_err("calibrate_to", e.to_string()))?;
    }
    let run = RunOptions {
        kick_mode: match p.dcsl_kick {
            Some(RawKickMode::Numeric) => KickMode::Numeric,
            _ => KickMode::AnalyticQm,
        },
    };

    let noise = match &raw.noise {
        Some(n) => noise_model(n, &at)?,
        None => None,
    };

    let sampling = raw.simulate.sampling.map_or(0.01, |q| q.0);
    if !(sampling > 0.0) {
        return Err(cfg_err("sampling", "sampling interval must be positive".into()));
    }

    let lambda_axis = match &raw.scan.lambda {
        Some(a) => axis(a, "lambda", &at)?,
        None => logspace(1e-20, 1e-2, 60),
    };
    let rc_axis = match &raw.scan.r_c {
        Some(a) => axis(a, "r_c", &at)?,
        None => logspace(1e-9, 1e-3, 60),
    };
    let band = match &raw.scan.band {
        Some(b) => MeasurementBand::new(b.mean.0, b.sigma.0, b.level).map_err(|e| cfg_err("band", e.to_string()))?,
        None => MeasurementBand::standard(),
    };

    let sweep = match &raw.sweep {
        None => None,
        Some(s) => {
            let given = [s.dt2.is_some(), s.t_csl.is_some(), s.r_c.is_some()].iter().filter(|b| **b).count();
            if given != 1 {
                return Err(cfg_err("sweep", "sweep needs exactly one of dt2, t_csl, r_c".into()));
            }
            Some(if let Some(a) = &s.dt2 {
                SweepAxis::KickTime(axis(a, "dt2", &at)?)
            } else if let Some(a) = &s.t_csl {
                SweepAxis::Temperature(axis(a, "t_csl", &at)?)
            } else {
                SweepAxis::Rc(axis(s.r_c.as_ref().expect("counted"), "r_c", &at)?)
            })
        }
    };

    let kick_dt2 = match &raw.kick_error.dt2 {
        Some(a) => axis(a, "dt2", &at)?,
        None => (1..=70).map(|i| i as f64 * 1e-3).collect(),
    };
    let kick_t_csl = match &raw.kick_error.t_csl {
        Some(a) => axis(a, "t_csl", &at)?,
        None => logspace(1e-12, 1e2, 141),
    };

    let boost_limit = raw.boost.limit.map_or(1e-6, |q| q.0);
    let boost_t_total = raw.boost.t_total.map(|q| q.0);
    if !(boost_limit > 0.0) || boost_t_total.is_some_and(|t| !(t > 0.0)) {
        return Err(cfg_err("boost", "boost limit and duration must be positive".into()));
    }
    let boost_u = raw.boost.u.map(|q| q.0);
    if boost_u.is_some_and(|u| !(u >= 0.0)) {
        return Err(cfg_err("u", "boost speed must be non-negative".into()));
    }

    let precision = raw.output.precision.unwrap_or(17);
    if !(1..=17).contains(&precision) {
        return Err(cfg_err("precision", format!("precision must be 1..=17 significant digits, got {precision}")));
    }

    Ok(RunConfig {
        protocol,
        run,
        calibrated_to,
        noise,
        sampling,
        lambda_axis,
        rc_axis,
        band,
        sweep,
        kick_dt2,
        kick_t_csl,
        boost_t_total,
        boost_limit,
        boost_t_csl: raw.boost.t_csl.map(|v| v.iter().map(|q| q.0).collect()),
        boost_u,
        format: raw.output.format.unwrap_or_default(),
        path: raw.output.path,
        precision,
    })
}

// ---------------------------------------------------------------- tables

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Missing,
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl From<Option<f64>> for Value {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Value::Missing, Value::Num)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub name: String,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(name: &str, meta: &[(String, String)], columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            meta: meta.to_vec(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: vec![],
        }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

fn num(v: f64, precision: usize) -> String {
    if v.is_finite() {
        format!("{:.*e}", precision - 1, v)
    } else {
        format!("{v}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_csv(t: &Table, precision: usize) -> String {
    let mut out = String::new();
    for (k, v) in &t.meta {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let _ = writeln!(out, "{}", t.columns.join(","));
    for row in &t.rows {
        let cells: Vec<String> = row
            .iter()
            .map(|v| match v {
                Value::Num(x) => num(*x, precision),
                Value::Int(i) => i.to_string(),
                Value::Text(s) => csv_field(s),
                Value::Bool(b) => b.to_string(),
                Value::Missing => String::new(),
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

pub fn write_json(tables: &[Table], precision: usize) -> String {
    let mut out = String::from("{\n");
    for (ti, t) in tables.iter().enumerate() {
        let _ = writeln!(out, "  {}: {{", json_str(&t.name));
        let meta: Vec<String> = t.meta.iter().map(|(k, v)| format!("{}: {}", json_str(k), json_str(v))).collect();
        let _ = writeln!(out, "    \"meta\": {{{}}},", meta.join(", "));
        let _ = writeln!(out, "    \"rows\": [");
        for (ri, row) in t.rows.iter().enumerate() {
            let fields: Vec<String> = t
                .columns
                .iter()
                .zip(row)
                .map(|(c, v)| {
                    let val = match v {
                        Value::Num(x) if x.is_finite() => num(*x, precision),
                        Value::Num(_) | Value::Missing => "null".into(),
                        Value::Int(i) => i.to_string(),
                        Value::Text(s) => json_str(s),
                        Value::Bool(b) => b.to_string(),
                    };
                    format!("{}: {val}", json_str(c))
                })
                .collect();
            let comma = if ri + 1 < t.rows.len() { "," } else { "" };
            let _ = writeln!(out, "      {{{}}}{comma}", fields.join(", "));
        }
        let comma = if ti + 1 < tables.len() { "," } else { "" };
        let _ = writeln!(out, "    ]\n  }}{comma}");
    }
    out.push_str("}\n");
    out
}

/// `grid.csv` -> `grid.boundary.csv`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn io(p: &Path) -> impl Fn(std::io::Error) -> CliError {
    let path = p.display().to_string();
    move |source| CliError::Io { path: path.clone(), source }
}

fn emit(tables: &[Table], format: Format, path: Option<&Path>, precision: usize) -> CliResult<()> {
    match (format, path) {
        (Format::Json, Some(p)) => std::fs::write(p, write_json(tables, precision)).map_err(io(p)),
        (Format::Json, None) => print_stdout(&write_json(tables, precision)),
        (Format::Csv, Some(p)) => {
            for (i, t) in tables.iter().enumerate() {
                let target = if i == 0 { p.to_path_buf() } else { sibling(p, &t.name) };
                std::fs::write(&target, write_csv(t, precision)).map_err(io(&target))?;
            }
            Ok(())
        }
        (Format::Csv, None) => {
            let parts: Vec<String> = tables.iter().map(|t| write_csv(t, precision)).collect();
            print_stdout(&parts.join("\n"))
        }
    }
}

fn print_stdout(s: &str) -> CliResult<()> {
    let mut lock = std::io::stdout().lock();
    lock.write_all(s.as_bytes())
        .and_then(|_| lock.flush())
        .map_err(|source| CliError::Io { path: "stdout".into(), source })
}

// ---------------------------------------------------------------- subcommands

fn header(cfg: &RunConfig, command: &str) -> Vec<(String, String)> {
    let p = &cfg.protocol;
    let mut meta = vec![
        ("kickcool".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("command".into(), command.into()),
        ("units".into(), "SI (s, m, kg, J, K, 1/s)".into()),
        ("moments".into(), "x2, p2, xp_sym are sums over the three axes; xp_sym = <xp + px>".into()),
        ("sigma_x".into(), "per-axis spread sqrt(x2/3)".into()),
        ("temperature".into(), "2E/(3 k_B) from the kinetic energy E = p2/(2m)".into()),
        ("dt1".into(), format!("{:e}", p.dt1)),
        ("dt2".into(), format!("{:e}", p.dt2)),
        ("dt3".into(), format!("{:e}", p.dt3)),
        ("t3".into(), format!("{:e}", p.t3())),
        (
            "detection_clock".into(),
            match p.clock {
                DetectionClock::KickEnd => "dt3 counted from kick end",
                DetectionClock::Release => "detection time fixed after release",
            }
            .into(),
        ),
        ("omega".into(), format!("{:e}", p.omega)),
        ("mass".into(), format!("{:e}", p.species.mass)),
        ("nucleons".into(), p.species.nucleon_count.to_string()),
        ("x2_0".into(), format!("{:e}", p.initial.x2)),
        ("p2_0".into(), format!("{:e}", p.initial.p2)),
    ];
    if let Some(t) = cfg.calibrated_to {
        meta.push(("calibrated_to".into(), format!("{t:e}")));
    }
    if let Some(n) = &cfg.noise {
        meta.push(("noise".into(), noise_summary(n)));
    }
    meta.push((
        "dcsl_kick".into(),
        match cfg.run.kick_mode {
            KickMode::AnalyticQm => "quantum harmonic evolution",
            KickMode::Numeric => "RK4 on the full dissipative equations",
        }
        .into(),
    ));
    meta
}

fn noise_summary(n: &NoiseModel) -> String {
    match n {
        NoiseModel::QmOnly => "qm".into(),
        NoiseModel::Csl(c) => format!("csl lambda={:e} r_c={:e}", c.lambda, c.r_c),
        NoiseModel::Ccsl(c) => format!("ccsl lambda={:e} r_c={:e} tau={:e}", c.lambda, c.r_c, c.tau),
        NoiseModel::Dcsl(d) => format!(
            "dcsl lambda={:e} r_c={:e} t_csl={:e} boost=[{:e}, {:e}, {:e}]",
            d.lambda, d.r_c, d.t_csl, d.boost[0], d.boost[1], d.boost[2]
        ),
    }
}

fn require_noise(cfg: &RunConfig) -> CliResult<NoiseModel> {
    cfg.noise.ok_or_else(|| CliError::Config("noise model required".into()))
}

fn require_dcsl(cfg: &RunConfig, what: &str) -> CliResult<Dcsl> {
    match require_noise(cfg)? {
        NoiseModel::Dcsl(d) => Ok(d),
        other => Err(CliError::Config(format!("{what} needs a dcsl noise model, got {}", other.family()))),
    }
}

fn simulate(cfg: &RunConfig, oracle: bool) -> CliResult<Vec<Table>> {
    let noise = require_noise(cfg)?;
    let p = &cfg.protocol;
    let rec = run_protocol_with(p, &noise, cfg.sampling, &cfg.run)?;
    let rk4 = if oracle { Some(trajectory_oracle(p, &noise, &rec.times, &cfg.run)?) } else { None };
    let mut meta = header(cfg, "simulate");
    meta.push(("sampling".into(), format!("{:e}", cfg.sampling)));
    meta.push(("final_sigma_x".into(), format!("{:e}", rec.final_sigma_x)));
    let mut cols = vec!["t", "stage", "x2", "p2", "xp_sym", "sigma_x", "energy", "temperature", "x_mean", "p_mean"];
    if oracle {
        cols.extend(["x2_rk4", "p2_rk4", "xp_sym_rk4", "sigma_x_rk4"]);
    }
    let mut t = Table::new("trajectory", &meta, &cols);
    for (i, m) in rec.moments.iter().enumerate() {
        let o = Observables::of(m, p);
        let stage = format!("{:?}", rec.stages[i]).to_lowercase();
        let mut row: Vec<Value> = vec![
            rec.times[i].into(),
            stage.as_str().into(),
            m.x2.into(),
            m.p2.into(),
            m.xp_sym.into(),
            o.sigma_x.into(),
            o.energy.into(),
            o.temperature.into(),
            m.x_mean[0].into(),
            m.p_mean[0].into(),
        ];
        if let Some(r) = &rk4 {
            let q = &r[i];
            row.extend([q.x2.into(), q.p2.into(), q.xp_sym.into(), q.sigma_per_axis().into()]);
        }
        t.push(row);
    }
    Ok(vec![t])
}

fn sweep(cfg: &RunConfig, oracle: bool) -> CliResult<Vec<Table>> {
    let noise = require_noise(cfg)?;
    let p = &cfg.protocol;
    let axis = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("sweep block required".into()))?;
    let (name, values, rows, models): (&str, &[f64], Vec<SweepRow>, Vec<Option<(Protocol, NoiseModel)>>) = match axis {
        SweepAxis::KickTime(v) => (
            "dt2",
            v,
            sweep_kick_time_with(p, &noise, v, &cfg.run),
            v.iter().map(|&d| p.with_dt2(d).ok().map(|q| (q, noise))).collect(),
        ),
        SweepAxis::Temperature(v) => {
            let base = require_dcsl(cfg, "a temperature sweep")?;
            let models = v
                .iter()
                .map(|&t| Dcsl::boosted(base.lambda, base.r_c, t, base.boost).ok().map(|n| (*p, NoiseModel::Dcsl(n))))
                .collect();
            ("t_csl", v, sweep_noise_temperature(p, &base, v), models)
        }
        SweepAxis::Rc(v) => {
            let base = require_dcsl(cfg, "an r_c sweep")?;
            let models = v
                .iter()
                .map(|&r| Dcsl::boosted(base.lambda, r, base.t_csl, base.boost).ok().map(|n| (*p, NoiseModel::Dcsl(n))))
                .collect();
            ("r_c", v, sweep_rc(p, &base, v), models)
        }
    };
    debug_assert_eq!(values.len(), rows.len());
    let rk4: Option<Vec<Option<Observables>>> = oracle.then(|| {
        models
            .par_iter()
            .map(|m| {
                m.as_ref().and_then(|(q, n)| propagate_oracle(q, n, &cfg.run).ok().map(|g| Observables::of(&g, q)))
            })
            .collect()
    });
    let mut cols = vec![name, "sigma_x", "x2", "p2", "energy", "temperature", "error"];
    if oracle {
        cols.extend(["sigma_x_rk4", "energy_rk4"]);
    }
    let mut t = Table::new("sweep", &header(cfg, "sweep"), &cols);
    for (i, r) in rows.iter().enumerate() {
        let mut row: Vec<Value> = match &r.outcome {
            Ok(o) => vec![
                r.value.into(),
                o.sigma_x.into(),
                o.x2.into(),
                o.p2.into(),
                o.energy.into(),
                o.temperature.into(),
                Value::Missing,
            ],
            Err(e) => {
                let mut v = vec![r.value.into()];
                v.extend(std::iter::repeat(Value::Missing).take(5));
                v.push(e.as_str().into());
                v
            }
        };
        if let Some(k) = &rk4 {
            row.push(k[i].map(|o| o.sigma_x).into());
            row.push(k[i].map(|o| o.energy).into());
        }
        t.push(row);
    }
    Ok(vec![t])
}

fn grid_tables(grids: &[(Option<f64>, ExclusionGrid)], meta: &[(String, String)], value: &str) -> Vec<Table> {
    let with_t = grids.iter().any(|(t, _)| t.is_some());
    let mut cols = vec![];
    if with_t {
        cols.push("t_csl");
    }
    cols.extend(["lambda", "r_c", value, "verdict"]);
    let mut grid = Table::new("grid", meta, &cols);
    let mut bcols = vec![];
    if with_t {
        bcols.push("t_csl");
    }
    bcols.extend(["r_c", "lambda"]);
    let mut boundary = Table::new("boundary", meta, &bcols);
    for (t, g) in grids {
        for c in &g.cells {
            let mut row: Vec<Value> = t.map(Value::Num).into_iter().collect();
            let verdict = match c.verdict {
                Verdict::Excluded => "excluded",
                Verdict::Allowed => "allowed",
                Verdict::Failed => "failed",
            };
            row.extend([c.lambda.into(), c.r_c.into(), c.value.into(), verdict.into()]);
            grid.push(row);
        }
        for b in g.boundary() {
            let mut row: Vec<Value> = t.map(Value::Num).into_iter().collect();
            row.extend([b.r_c.into(), b.lambda.into()]);
            boundary.push(row);
        }
    }
    vec![grid, boundary]
}

fn scan(cfg: &RunConfig, oracle: bool) -> CliResult<Vec<Table>> {
    let family = require_noise(cfg)?;
    let p = &cfg.protocol;
    let grid = scan_exclusion(p, &family, &cfg.lambda_axis, &cfg.rc_axis, &cfg.band)?;
    let mut meta = header(cfg, "scan");
    meta.push(("band".into(), format!("[{:e}, {:e}] at level {}", cfg.band.lo, cfg.band.hi, cfg.band.level)));
    meta.push(("verdict".into(), "excluded iff sigma_x lies outside the band".into()));
    if matches!(family, NoiseModel::Csl(_)) {
        match analytic_csl_bound(p, &cfg.band) {
            Ok(b) => {
                meta.push(("analytic_k".into(), format!("{:e}", b.k)));
                meta.push(("analytic_limit_lambda_over_rc2".into(), format!("{:e}", b.limit)));
            }
            Err(e) => meta.push(("analytic_limit_lambda_over_rc2".into(), e.to_string())),
        }
    }
    let mut tables = grid_tables(&[(None, grid.clone())], &meta, "sigma_x");
    if oracle {
        let rk4: Vec<Value> = grid
            .cells
            .par_iter()
            .map(|c| {
                family
                    .with_lambda_rc(c.lambda, c.r_c)
                    .and_then(|n| propagate_oracle(p, &n, &cfg.run))
                    .map(|m| m.sigma_per_axis())
                    .ok()
                    .into()
            })
            .collect();
        tables[0].columns.push("sigma_x_rk4".into());
        for (row, v) in tables[0].rows.iter_mut().zip(rk4) {
            row.push(v);
        }
    }
    Ok(tables)
}

fn kick_error(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let noise = require_dcsl(cfg, "kick-error")?;
    let p = &cfg.protocol;
    let mut jobs: Vec<(&str, Protocol, Dcsl)> = vec![];
    for &d in &cfg.kick_dt2 {
        jobs.push(("dt2", p.with_dt2(d)?, noise));
    }
    for &t in &cfg.kick_t_csl {
        jobs.push(("t_csl", *p, Dcsl::boosted(noise.lambda, noise.r_c, t, noise.boost)?));
    }
    let reports: Vec<_> = jobs.par_iter().map(|(_, q, n)| protocol_kick_error(q, n)).collect();
    let cols = [
        "sweep",
        "dt2",
        "t_csl",
        "err_x2",
        "err_xp",
        "err_p2",
        "max_err",
        "norm_bound_ok",
        "eig1_re",
        "eig1_im",
        "eig2_re",
        "eig2_im",
        "eig3_re",
        "eig3_im",
    ];
    let mut meta = header(cfg, "kick-error");
    meta.push(("error".into(), "relative change of each moment during the kick from the dCSL terms".into()));
    let mut t = Table::new("kick_error", &meta, &cols);
    for ((sweep, q, n), r) in jobs.iter().zip(reports) {
        let r = r?;
        let mut row: Vec<Value> = vec![
            (*sweep).into(),
            q.dt2.into(),
            n.t_csl.into(),
            r.err_x2.into(),
            r.err_xp.into(),
            r.err_p2.into(),
            r.max_error().into(),
            r.norm_bound_ok.into(),
        ];
        for z in r.eigenvalues {
            row.push(z.re.into());
            row.push(z.im.into());
        }
        t.push(row);
    }
    Ok(vec![t])
}

fn boost_bound(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let noise = require_dcsl(cfg, "boost-bound")?;
    let p = &cfg.protocol;
    let t_total = cfg.boost_t_total.unwrap_or(p.t3());
    let temps = cfg.boost_t_csl.clone().unwrap_or_else(|| vec![noise.t_csl]);
    let mut meta = header(cfg, "boost-bound");
    meta.push(("t_total".into(), format!("{t_total:e}")));
    meta.push(("displacement_limit".into(), format!("{:e}", cfg.boost_limit)));
    meta.push(("displacement".into(), "u B t^2 / 2".into()));
    let mut t = Table::new("bound", &meta, &["t_csl", "lambda", "r_c", "big_b", "b_t", "u_max", "small_rate"]);
    for &tc in &temps {
        let n = Dcsl::boosted(noise.lambda, noise.r_c, tc, noise.boost)?;
        let b = crate::dcsl::dcsl_rates(&n, &p.species).big_b;
        let (u, bt, small) = match boost_velocity_bound(&n, &p.species, t_total, cfg.boost_limit) {
            Ok(v) => (Value::Num(v.u_max), v.b_t, v.small_rate()),
            Err(ModelError::Unbounded(_)) => (Value::Text("unbounded".into()), 0.0, true),
            Err(e) => return Err(e.into()),
        };
        t.push(vec![tc.into(), n.lambda.into(), n.r_c.into(), b.into(), bt.into(), u, small.into()]);
    }
    let mut tables = vec![t];
    if let Some(u) = cfg.boost_u {
        let mut q = *p;
        if let Some(tt) = cfg.boost_t_total {
            // boost_exclusion measures time to detection
            q.dt3 = (tt - q.dt1 - q.dt2).max(0.0);
        }
        let grids = boost_exclusion(&q, &temps, u, &cfg.lambda_axis, &cfg.rc_axis, cfg.boost_limit)?;
        let mut gmeta = meta.clone();
        gmeta.push(("u".into(), format!("{u:e}")));
        let tagged: Vec<_> = temps.iter().copied().map(Some).zip(grids).collect();
        tables.extend(grid_tables(&tagged, &gmeta, "displacement"));
    }
    Ok(tables)
}

/// Runs one subcommand on a loaded config and returns its tables.
pub fn execute(command: Command, cfg: &RunConfig, oracle: bool) -> CliResult<Vec<Table>> {
    match command {
        Command::Simulate => simulate(cfg, oracle),
        Command::Scan => scan(cfg, oracle),
        Command::KickError => kick_error(cfg),
        Command::BoostBound => boost_bound(cfg),
        Command::Sweep => sweep(cfg, oracle),
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let (text, origin) = match &cli.config {
        Some(path) => (
            std::fs::read_to_string(path)
                .map_err(|source| CliError::Io { path: path.display().to_string(), source })?,
            path.display().to_string(),
        ),
        None => (String::new(), "<defaults>".to_string()),
    };
    let cfg = load_config(&text, &origin)?;
    let format = cli.format.unwrap_or(cfg.format);
    let path = cli.out.clone().or_else(|| cfg.path.clone());
    let workers = match cli.workers {
        Some(0) => return Err(CliError::Config("--workers must be at least 1".into())),
        Some(n) => n,
        None => rayon::current_num_threads(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    let tables = pool.install(|| execute(cli.command, &cfg, cli.oracle))?;
    emit(&tables, format, path.as_deref(), cfg.precision)
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}
