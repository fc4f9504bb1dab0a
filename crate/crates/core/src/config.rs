//! Run configuration: grid specifications, the flat `key = value` config
//! format, and resolution of `auto` parameters to the analytic optima.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measfb::{self, MeasurementParams};
use crate::oscillator::Oscillator;
use crate::report::{format_f64, Value};
use crate::sideband::{self, SidebandParams};
use crate::trajectory::{InitialConditional, Scheme, TrajectoryConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Lin,
    Log,
}

/// `[lin:|log:]lo:hi:count`, log spacing when no prefix is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub spacing: Spacing,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn new(spacing: Spacing, lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Parse("grid bounds must be finite".into()));
        }
        if !(lo < hi) {
            return Err(Error::Parse(format!("grid needs lo < hi, got {lo}:{hi}")));
        }
        if count < 2 {
            return Err(Error::Parse(format!("grid needs count ≥ 2, got {count}")));
        }
        if count > 1_000_000 {
            return Err(Error::Parse(format!("grid count {count} is too large")));
        }
        if spacing == Spacing::Log && lo <= 0.0 {
            return Err(Error::Parse("log grid needs positive bounds".into()));
        }
        Ok(Self {
            spacing,
            lo,
            hi,
            count,
        })
    }

    pub fn lin(lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::new(Spacing::Lin, lo, hi, count)
    }

    pub fn log(lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::new(Spacing::Log, lo, hi, count)
    }

    /// Grid points, with both endpoints exact.
    pub fn values(&self) -> Vec<f64> {
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i == 0 {
                    return self.lo;
                }
                if i == self.count - 1 {
                    return self.hi;
                }
                let t = i as f64 / last;
                match self.spacing {
                    Spacing::Lin => self.lo + t * (self.hi - self.lo),
                    Spacing::Log => (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp(),
                }
            })
            .collect()
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (spacing, rest) = if let Some(r) = s.strip_prefix("lin:") {
            (Spacing::Lin, r)
        } else if let Some(r) = s.strip_prefix("log:") {
            (Spacing::Log, r)
        } else {
            (Spacing::Log, s)
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, count] = parts.as_slice() else {
            return Err(Error::Parse(format!(
                "grid `{s}` is not of the form [lin:|log:]lo:hi:count"
            )));
        };
        let lo = parse_f64("grid lo", lo)?;
        let hi = parse_f64("grid hi", hi)?;
        let count = count.trim().parse::<usize>().map_err(|_| {
            Error::Parse(format!(
                "grid count `{count}` is not a non-negative integer"
            ))
        })?;
        Self::new(spacing, lo, hi, count)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.spacing {
            Spacing::Lin => "lin",
            Spacing::Log => "log",
        };
        write!(
            f,
            "{prefix}:{}:{}:{}",
            format_f64(self.lo),
            format_f64(self.hi),
            self.count
        )
    }
}

fn parse_f64(what: &str, s: &str) -> Result<f64> {
    let v = s
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{what}: `{}` is not a number", s.trim())))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse(format!(
            "{what}: `{}` is not finite",
            s.trim()
        )))
    }
}

fn parse_usize(what: &str, s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| {
        Error::Parse(format!(
            "{what}: `{}` is not a non-negative integer",
            s.trim()
        ))
    })
}

/// A controller parameter that may be left to its analytic optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Auto,
    Value(f64),
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            Ok(Param::Auto)
        } else {
            parse_f64("parameter", s).map(Param::Value)
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Auto => f.write_str("auto"),
            Param::Value(v) => f.write_str(&format_f64(*v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Parse(format!(
                "format must be csv or json, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Sideband,
    Measurement,
}

impl FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sideband" => Ok(MethodChoice::Sideband),
            "measurement" => Ok(MethodChoice::Measurement),
            other => Err(Error::Parse(format!(
                "controller must be sideband or measurement, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodChoice::Sideband => "sideband",
            MethodChoice::Measurement => "measurement",
        })
    }
}

/// Parameter varied by `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Ktilde,
    Gain,
    Kappa,
    Q,
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ktilde" => Ok(SweepParameter::Ktilde),
            "gain" => Ok(SweepParameter::Gain),
            "kappa" => Ok(SweepParameter::Kappa),
            "q" => Ok(SweepParameter::Q),
            other => Err(Error::Parse(format!(
                "sweep parameter must be ktilde, gain, kappa or q, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::Ktilde => "ktilde",
            SweepParameter::Gain => "gain",
            SweepParameter::Kappa => "kappa",
            SweepParameter::Q => "q",
        })
    }
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    match s.trim() {
        "exponential-midpoint" => Ok(Scheme::ExponentialMidpoint),
        "euler-maruyama" => Ok(Scheme::EulerMaruyama),
        other => Err(Error::Parse(format!(
            "scheme must be exponential-midpoint or euler-maruyama, got `{other}`"
        ))),
    }
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::ExponentialMidpoint => "exponential-midpoint",
        Scheme::EulerMaruyama => "euler-maruyama",
    }
}

fn parse_initial(s: &str) -> Result<InitialConditional> {
    match s.trim() {
        "steady" => Ok(InitialConditional::Steady),
        "thermal" => Ok(InitialConditional::Thermal),
        other => Err(Error::Parse(format!(
            "initial_conditional must be steady or thermal, got `{other}`"
        ))),
    }
}

fn initial_name(s: InitialConditional) -> &'static str {
    match s {
        InitialConditional::Steady => "steady",
        InitialConditional::Thermal => "thermal",
    }
}

/// Every setting of a run. Unset fields fall back to documented defaults
/// when resolved; [`RunConfig::merge`] layers command-line flags over a file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub omega: Option<f64>,
    pub gamma: Option<f64>,
    pub q: Option<f64>,
    pub n_thermal: Option<f64>,
    pub controller: Option<MethodChoice>,
    pub kappa: Option<Param>,
    pub lambda: Option<Param>,
    pub ktilde: Option<Param>,
    pub eta: Option<f64>,
    pub gain: Option<f64>,
    pub delta: Option<f64>,
    pub sweep_parameter: Option<SweepParameter>,
    pub grid: Option<GridSpec>,
    pub q_grid: Option<GridSpec>,
    pub dt: Option<f64>,
    pub n_steps: Option<usize>,
    pub n_traj: Option<usize>,
    pub seed: Option<u64>,
    pub record_stride: Option<usize>,
    pub brownian_refinement: Option<usize>,
    pub scheme: Option<Scheme>,
    pub initial_conditional: Option<InitialConditional>,
    pub initial_mean_x: Option<f64>,
    pub initial_mean_p: Option<f64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Keys accepted in a config file, in canonical order.
pub const KEYS: &[&str] = &[
    "omega",
    "gamma",
    "q",
    "n_thermal",
    "controller",
    "kappa",
    "lambda",
    "ktilde",
    "eta",
    "gain",
    "delta",
    "sweep_parameter",
    "grid",
    "q_grid",
    "dt",
    "n_steps",
    "n_traj",
    "seed",
    "record_stride",
    "brownian_refinement",
    "scheme",
    "initial_conditional",
    "initial_mean_x",
    "initial_mean_p",
    "output",
    "format",
];

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// ignored, and a repeated or unknown key is an error.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {lineno}: expected `key = value`")))?;
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), lineno) {
                return Err(Error::Parse(format!(
                    "line {lineno}: `{key}` already set on line {prev}"
                )));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Parse(format!("line {lineno}: {}", strip_parse(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = |v: &str| parse_f64(key, v).map(Some);
        let u = |v: &str| parse_usize(key, v).map(Some);
        match key {
            "omega" => self.omega = f(value)?,
            "gamma" => self.gamma = f(value)?,
            "q" => self.q = f(value)?,
            "n_thermal" => self.n_thermal = f(value)?,
            "controller" => self.controller = Some(value.parse()?),
            "kappa" => self.kappa = Some(value.parse()?),
            "lambda" => self.lambda = Some(value.parse()?),
            "ktilde" => self.ktilde = Some(value.parse()?),
            "eta" => self.eta = f(value)?,
            "gain" => self.gain = f(value)?,
            "delta" => self.delta = f(value)?,
            "sweep_parameter" => self.sweep_parameter = Some(value.parse()?),
            "grid" => self.grid = Some(value.parse()?),
            "q_grid" => self.q_grid = Some(value.parse()?),
            "dt" => self.dt = f(value)?,
            "n_steps" => self.n_steps = u(value)?,
            "n_traj" => self.n_traj = u(value)?,
            "seed" => {
                self.seed = Some(value.trim().parse::<u64>().map_err(|_| {
                    Error::Parse(format!("seed: `{value}` is not a 64-bit unsigned integer"))
                })?)
            }
            "record_stride" => self.record_stride = u(value)?,
            "brownian_refinement" => self.brownian_refinement = u(value)?,
            "scheme" => self.scheme = Some(parse_scheme(value)?),
            "initial_conditional" => self.initial_conditional = Some(parse_initial(value)?),
            "initial_mean_x" => self.initial_mean_x = f(value)?,
            "initial_mean_p" => self.initial_mean_p = f(value)?,
            "output" => {
                if value.is_empty() {
                    return Err(Error::Parse("output: empty path".into()));
                }
                self.output = Some(PathBuf::from(value))
            }
            "format" => self.format = Some(value.parse()?),
            other => return Err(Error::Parse(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Textual value of every set field, keyed as in the config file.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut num = |k: &'static str, v: Option<f64>| {
            if let Some(v) = v {
                out.push((k, format_f64(v)));
            }
        };
        num("omega", self.omega);
        num("gamma", self.gamma);
        num("q", self.q);
        num("n_thermal", self.n_thermal);
        if let Some(m) = self.controller {
            out.push(("controller", m.to_string()));
        }
        for (k, p) in [
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("ktilde", self.ktilde),
        ] {
            if let Some(p) = p {
                out.push((k, p.to_string()));
            }
        }
        let mut num = |k: &'static str, v: Option<f64>| {
            if let Some(v) = v {
                out.push((k, format_f64(v)));
            }
        };
        num("eta", self.eta);
        num("gain", self.gain);
        num("delta", self.delta);
        if let Some(s) = self.sweep_parameter {
            out.push(("sweep_parameter", s.to_string()));
        }
        if let Some(g) = self.grid {
            out.push(("grid", g.to_string()));
        }
        if let Some(g) = self.q_grid {
            out.push(("q_grid", g.to_string()));
        }
        if let Some(v) = self.dt {
            out.push(("dt", format_f64(v)));
        }
        for (k, v) in [("n_steps", self.n_steps), ("n_traj", self.n_traj)] {
            if let Some(v) = v {
                out.push((k, v.to_string()));
            }
        }
        if let Some(v) = self.seed {
            out.push(("seed", v.to_string()));
        }
        for (k, v) in [
            ("record_stride", self.record_stride),
            ("brownian_refinement", self.brownian_refinement),
        ] {
            if let Some(v) = v {
                out.push((k, v.to_string()));
            }
        }
        if let Some(s) = self.scheme {
            out.push(("scheme", scheme_name(s).to_string()));
        }
        if let Some(s) = self.initial_conditional {
            out.push(("initial_conditional", initial_name(s).to_string()));
        }
        for (k, v) in [
            ("initial_mean_x", self.initial_mean_x),
            ("initial_mean_p", self.initial_mean_p),
        ] {
            if let Some(v) = v {
                out.push((k, format_f64(v)));
            }
        }
        if let Some(p) = &self.output {
            out.push(("output", p.display().to_string()));
        }
        if let Some(f) = self.format {
            out.push((
                "format",
                if f == Format::Csv { "csv" } else { "json" }.to_string(),
            ));
        }
        out
    }

    /// Renders the config in its file format; `parse_str` reads it back unchanged.
    pub fn to_config_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merge(&mut self, other: &RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            omega,
            gamma,
            q,
            n_thermal,
            controller,
            kappa,
            lambda,
            ktilde,
            eta,
            gain,
            delta,
            sweep_parameter,
            grid,
            q_grid,
            dt,
            n_steps,
            n_traj,
            seed,
            record_stride,
            brownian_refinement,
            scheme,
            initial_conditional,
            initial_mean_x,
            initial_mean_p,
            output,
            format
        );
    }

    /// `GCL_SEED` overrides the seed.
    pub fn apply_env<F: Fn(&str) -> Option<String>>(&mut self, lookup: F) -> Result<()> {
        if let Some(s) = lookup("GCL_SEED") {
            self.set("seed", &s)
                .map_err(|e| Error::Parse(format!("GCL_SEED: {}", strip_parse(e))))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_some() && self.q.is_some() {
            return Err(Error::Parse("give exactly one of gamma and q".into()));
        }
        Ok(())
    }

    pub fn oscillator(&self) -> Result<Oscillator> {
        self.validate()?;
        let omega = self.omega.unwrap_or(1.0);
        let n_t = self.n_thermal.unwrap_or(100.0);
        match (self.gamma, self.q) {
            (Some(g), None) => Oscillator::new(omega, g, n_t),
            (None, Some(q)) => Oscillator::from_q(omega, q, n_t),
            _ => Err(Error::invalid("gamma", "give exactly one of gamma and q")),
        }
    }

    /// `kappa = auto` gives κ_opt; `lambda = auto` gives λ_opt(κ). A `ktilde`
    /// value with unset `lambda` fixes `λ = √(8k̃κ)`.
    pub fn sideband_params(&self, osc: &Oscillator) -> Result<SidebandParams> {
        let kappa = match self.kappa.unwrap_or(Param::Auto) {
            Param::Auto => sideband::kappa_opt(osc),
            Param::Value(k) => k,
        };
        match (self.lambda, self.ktilde) {
            (Some(Param::Value(l)), Some(Param::Value(k))) => {
                SidebandParams::new(kappa, Some(l), Some(k))
            }
            (Some(Param::Value(l)), _) => SidebandParams::with_lambda(kappa, l),
            (None, Some(Param::Value(k))) => SidebandParams::with_ktilde(kappa, k),
            _ => SidebandParams::with_lambda(kappa, sideband::lambda_opt(osc, kappa)?),
        }
    }

    /// `gain` defaults to ω/10, `eta` to 1, `ktilde = auto` to k̃_opt(Γ).
    pub fn measurement_params(&self, osc: &Oscillator) -> Result<MeasurementParams> {
        let gain = self.gain.unwrap_or(osc.omega / 10.0);
        let ktilde = match self.ktilde.unwrap_or(Param::Auto) {
            Param::Auto => measfb::ktilde_opt(osc, gain)?,
            Param::Value(k) => k,
        };
        MeasurementParams::with_delta(
            ktilde,
            self.eta.unwrap_or(1.0),
            gain,
            self.delta.unwrap_or(0.0),
        )
    }

    pub fn trajectory_config(&self) -> TrajectoryConfig {
        let d = TrajectoryConfig::default();
        TrajectoryConfig {
            dt: self.dt.unwrap_or(d.dt),
            n_steps: self.n_steps.unwrap_or(d.n_steps),
            n_traj: self.n_traj.unwrap_or(d.n_traj),
            seed: self.seed.unwrap_or(d.seed),
            record_stride: self.record_stride.unwrap_or(d.record_stride),
            scheme: self.scheme.unwrap_or(d.scheme),
            brownian_refinement: self.brownian_refinement.unwrap_or(d.brownian_refinement),
            initial_mean: [
                self.initial_mean_x.unwrap_or(d.initial_mean[0]),
                self.initial_mean_p.unwrap_or(d.initial_mean[1]),
            ],
            initial_conditional: self.initial_conditional.unwrap_or(d.initial_conditional),
        }
    }

    /// Explicit config for a resolved parameter set, as echoed in reports.
    pub fn from_resolved(
        osc: &Oscillator,
        sb: Option<&SidebandParams>,
        meas: Option<&MeasurementParams>,
    ) -> Self {
        let mut cfg = RunConfig {
            omega: Some(osc.omega),
            gamma: Some(osc.gamma),
            n_thermal: Some(osc.n_thermal),
            ..Default::default()
        };
        if let Some(p) = sb {
            cfg.controller = Some(MethodChoice::Sideband);
            cfg.kappa = Some(Param::Value(p.kappa()));
            cfg.lambda = Some(Param::Value(p.lambda()));
        }
        if let Some(p) = meas {
            cfg.controller = Some(MethodChoice::Measurement);
            cfg.ktilde = Some(Param::Value(p.ktilde));
            cfg.eta = Some(p.eta);
            cfg.gain = Some(p.gain);
            cfg.delta = Some(p.delta);
        }
        cfg
    }

    /// Flat-record view of the set numeric and textual fields.
    pub fn flat_fields(&self) -> Vec<(String, Value)> {
        self.entries()
            .into_iter()
            .map(|(k, v)| {
                let value = match k {
                    "n_steps" | "n_traj" | "record_stride" | "brownian_refinement" => {
                        Value::Int(v.parse().unwrap_or_default())
                    }
                    _ => match v.parse::<f64>() {
                        Ok(x) if k != "seed" => Value::Num(x),
                        _ => Value::Str(v),
                    },
                };
                (k.to_string(), value)
            })
            .collect()
    }

    /// Recovers the config fields from a parsed flat JSON report; keys that
    /// are not config keys are ignored.
    pub fn from_report(fields: &BTreeMap<String, Value>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for key in KEYS {
            let Some(v) = fields.get(*key) else { continue };
            let text = match v {
                Value::Num(x) => format_f64(*x),
                Value::Int(i) => i.to_string(),
                Value::Str(s) => s.clone(),
                Value::Bool(b) => b.to_string(),
            };
            cfg.set(key, &text)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn strip_parse(e: Error) -> String {
    match e {
        Error::Parse(s) => s,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_forms() {
        let g: GridSpec = "1e6:1e10:5".parse().unwrap();
        assert_eq!(g.spacing, Spacing::Log);
        let v = g.values();
        assert_eq!(v.len(), 5);
        assert_eq!((v[0], v[4]), (1e6, 1e10));
        assert!((v[2] - 1e8).abs() < 1e-6);
        let l: GridSpec = "lin:0:1:3".parse().unwrap();
        assert_eq!(l.values(), vec![0.0, 0.5, 1.0]);
        for bad in [
            "",
            "1:2",
            "1:2:1",
            "log:0:1:3",
            "2:1:3",
            "a:1:3",
            "1:2:3:4",
            "lin:1:nan:3",
            "1:2:-3",
        ] {
            assert!(bad.parse::<GridSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn config_file_round_trip() {
        let text = "\
# desk scenario
omega = 1
q = 1e8   # quality factor
n_thermal = 100
controller = sideband
kappa = auto
lambda = 0.01
grid = lin:1:2:3
seed = 42
scheme = euler-maruyama
format = json
";
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.q, Some(1e8));
        assert_eq!(cfg.kappa, Some(Param::Auto));
        assert_eq!(cfg.lambda, Some(Param::Value(0.01)));
        assert_eq!(cfg.seed, Some(42));
        assert_eq!(RunConfig::parse_str(&cfg.to_config_string()).unwrap(), cfg);
    }

    #[test]
    fn config_errors() {
        for bad in [
            "omega",
            "omega = x",
            "bogus = 1",
            "omega = 1\nomega = 2",
            "gamma = 1e-6\nq = 1e6",
            "format = xml",
            "seed = -1",
            "grid = 1:2",
            "n_traj = 1.5",
        ] {
            assert!(
                matches!(RunConfig::parse_str(bad), Err(Error::Parse(_))),
                "{bad}"
            );
        }
        let e = RunConfig::parse_str("omega = 1\n\nkappa = fast").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn env_seed_overrides() {
        let mut cfg = RunConfig::parse_str("seed = 1").unwrap();
        cfg.apply_env(|k| (k == "GCL_SEED").then(|| "99".to_string()))
            .unwrap();
        assert_eq!(cfg.seed, Some(99));
        assert!(cfg.apply_env(|_| Some("x".into())).is_err());
    }

    #[test]
    fn merge_prefers_later_layer() {
        let mut base = RunConfig::parse_str("omega = 2\nn_thermal = 5").unwrap();
        let flags = RunConfig::parse_str("n_thermal = 7").unwrap();
        base.merge(&flags);
        assert_eq!((base.omega, base.n_thermal), (Some(2.0), Some(7.0)));
    }

    #[test]
    fn auto_resolution() {
        let cfg = RunConfig::parse_str("gamma = 1e-6\nkappa = auto\nlambda = auto").unwrap();
        let osc = cfg.oscillator().unwrap();
        let sb = cfg.sideband_params(&osc).unwrap();
        assert_eq!(sb, sideband::optimal_params(&osc).unwrap());
        let m = cfg.measurement_params(&osc).unwrap();
        assert_eq!(m.gain, 0.1);
        assert_eq!(m.ktilde, measfb::ktilde_opt(&osc, 0.1).unwrap());
        assert!(RunConfig::default().oscillator().is_err());
    }

    #[test]
    fn report_round_trip() {
        let osc = Oscillator::new(1.0, 1e-6, 100.0).unwrap();
        let sb = sideband::optimal_params(&osc).unwrap();
        let cfg = RunConfig::from_resolved(&osc, Some(&sb), None);
        let json = crate::report::flat_json(&cfg.flat_fields()).unwrap();
        let back = RunConfig::from_report(&crate::report::parse_flat_json(&json).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let o2 = back.oscillator().unwrap();
        assert_eq!(o2, osc);
        assert_eq!(back.sideband_params(&o2).unwrap(), sb);
    }

    proptest! {
        #[test]
        fn grid_display_round_trips(lo in 1e-6f64..1e3, span in 1.001f64..1e4, count in 2usize..200, lin in any::<bool>()) {
            let g = if lin { GridSpec::lin(lo, lo * span, count) } else { GridSpec::log(lo, lo * span, count) }.unwrap();
            let back: GridSpec = g.to_string().parse().unwrap();
            prop_assert_eq!(back, g);
            let v = g.values();
            prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn parser_never_panics(s in "\\PC{0,200}") {
            let _ = RunConfig::parse_str(&s);
            let _ = s.parse::<GridSpec>();
        }
    }
}
