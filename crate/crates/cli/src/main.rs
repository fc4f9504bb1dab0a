use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gcl_core::compare::{self, ScalingPolicy, Scenario};
use gcl_core::config::{Format, GridSpec, MethodChoice, Param, RunConfig, SweepParameter};
use gcl_core::measfb::{self, MeasurementParams};
use gcl_core::report::{csv_string, flat_json, to_json_string, Value};
use gcl_core::sideband;
use gcl_core::trajectory;
use gcl_core::validate;
use gcl_core::{Error, Oscillator};

#[derive(Parser, Debug)]
#[command(
    name = "gcl",
    version,
    about = "Sideband versus measurement-feedback oscillator cooling"
)]
struct Cli {
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact steady-state n̄ of one controller.
    Exact(Common),
    /// Formula and numeric optima of one controller.
    Optimize(Common),
    /// Head-to-head comparison rows over a parameter grid.
    Sweep(Common),
    /// Monte Carlo ensemble of conditional-mean trajectories.
    Simulate(Common),
    /// Scaling of both optima with Q.
    Compare(Common),
    /// Built-in oracle-equivalence and invariant suite.
    Validate(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    n_thermal: Option<String>,
    /// sideband or measurement.
    #[arg(long)]
    method: Option<String>,
    /// Number or `auto`.
    #[arg(long)]
    kappa: Option<String>,
    /// Number or `auto`.
    #[arg(long)]
    lambda: Option<String>,
    /// Number or `auto`.
    #[arg(long)]
    ktilde: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    /// Momentum feedback rate Γ.
    #[arg(long)]
    gain: Option<String>,
    /// Position feedback rate δ.
    #[arg(long)]
    delta: Option<String>,
    /// ktilde, gain, kappa or q.
    #[arg(long)]
    parameter: Option<String>,
    /// `[lin:|log:]lo:hi:count`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    q_grid: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    n_steps: Option<String>,
    #[arg(long)]
    n_traj: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    record_stride: Option<String>,
    #[arg(long)]
    brownian_refinement: Option<String>,
    /// exponential-midpoint or euler-maruyama.
    #[arg(long)]
    scheme: Option<String>,
    /// steady or thermal.
    #[arg(long)]
    initial_conditional: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    initial_mean_x: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    initial_mean_p: Option<String>,
    #[arg(long)]
    output: Option<String>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
}

impl Common {
    fn to_config(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        let pairs = [
            ("omega", &self.omega),
            ("gamma", &self.gamma),
            ("q", &self.q),
            ("n_thermal", &self.n_thermal),
            ("controller", &self.method),
            ("kappa", &self.kappa),
            ("lambda", &self.lambda),
            ("ktilde", &self.ktilde),
            ("eta", &self.eta),
            ("gain", &self.gain),
            ("delta", &self.delta),
            ("sweep_parameter", &self.parameter),
            ("grid", &self.grid),
            ("q_grid", &self.q_grid),
            ("dt", &self.dt),
            ("n_steps", &self.n_steps),
            ("n_traj", &self.n_traj),
            ("seed", &self.seed),
            ("record_stride", &self.record_stride),
            ("brownian_refinement", &self.brownian_refinement),
            ("scheme", &self.scheme),
            ("initial_conditional", &self.initial_conditional),
            ("initial_mean_x", &self.initial_mean_x),
            ("initial_mean_p", &self.initial_mean_p),
            ("output", &self.output),
            ("format", &self.format),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v).map_err(|e| match e {
                    Error::Parse(s) => Error::Parse(format!("--{}: {s}", key.replace('_', "-"))),
                    other => other,
                })?;
            }
        }
        Ok(cfg)
    }
}

/// Failure classes, mapped to exit codes 2 and 1.
enum Failure {
    Input(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_)
            | Error::InvalidParameter { .. }
            | Error::InsufficientGrid(_)
            | Error::StepTooLarge { .. } => Failure::Input(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse_str(&text)?
        }
        None => RunConfig::default(),
    };
    let common = match &cli.command {
        Command::Exact(c)
        | Command::Optimize(c)
        | Command::Sweep(c)
        | Command::Simulate(c)
        | Command::Compare(c)
        | Command::Validate(c) => c,
    };
    cfg.merge(&common.to_config()?);
    cfg.apply_env(|k| std::env::var(k).ok())?;
    cfg.validate()?;

    match cli.command {
        Command::Exact(_) => exact(&cfg).map(|_| true),
        Command::Optimize(_) => optimize(&cfg).map(|_| true),
        Command::Sweep(_) => sweep(&cfg).map(|_| true),
        Command::Simulate(_) => simulate(&cfg).map(|_| true),
        Command::Compare(_) => compare_cmd(&cfg).map(|_| true),
        Command::Validate(_) => validate_cmd(&cfg),
    }
}

type Record = Vec<(String, Value)>;

fn emit(cfg: &RunConfig, text: &str) -> Result<(), Failure> {
    match &cfg.output {
        Some(path) => write_file(path, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::Run(format!("stdout: {e}")))
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display())))
}

fn json_line(fields: &[(String, Value)]) -> Result<String, Failure> {
    Ok(flat_json(fields)? + "\n")
}

fn json_array(rows: &[Record]) -> Result<String, Failure> {
    let items: Result<Vec<String>, Error> = rows.iter().map(|r| flat_json(r)).collect();
    Ok(format!("[{}]\n", items?.join(",")))
}

fn table(cfg: &RunConfig, rows: &[Record], default: Format) -> Result<String, Failure> {
    match cfg.format.unwrap_or(default) {
        Format::Csv => Ok(csv_string(rows)?),
        Format::Json => json_array(rows),
    }
}

fn record(cfg: &RunConfig, fields: &[(String, Value)]) -> Result<String, Failure> {
    match cfg.format.unwrap_or(Format::Json) {
        Format::Json => json_line(fields),
        Format::Csv => Ok(csv_string(&[fields.to_vec()])?),
    }
}

fn prefixed(prefix: &str, fields: Record) -> Record {
    fields
        .into_iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect()
}

fn controller(cfg: &RunConfig) -> MethodChoice {
    cfg.controller.unwrap_or(MethodChoice::Sideband)
}

fn exact(cfg: &RunConfig) -> Result<(), Failure> {
    let osc = cfg.oscillator()?;
    let mut fields = match controller(cfg) {
        MethodChoice::Sideband => {
            let p = cfg.sideband_params(&osc)?;
            let r = sideband::nbar_exact(&osc, &p)?;
            let mut f = RunConfig::from_resolved(&osc, Some(&p), None).flat_fields();
            f.push(("ktilde".into(), Value::Num(p.ktilde())));
            f.extend(r.flat_fields(""));
            f
        }
        MethodChoice::Measurement => {
            let p = cfg.measurement_params(&osc)?;
            let r = measfb::nbar_total(&osc, &p)?;
            let mut f = RunConfig::from_resolved(&osc, None, Some(&p)).flat_fields();
            f.extend(r.exact.flat_fields(""));
            if let Some(s) = &r.second_order {
                f.extend(s.flat_fields("second_order_"));
            }
            if let Some(s) = &r.first_order {
                f.extend(s.flat_fields("first_order_"));
            }
            f
        }
    };
    fields.push(("q".into(), Value::Num(osc.q())));
    // `q` is derived here; the echoed config keeps `gamma`.
    let last = fields.pop().unwrap();
    fields.push(("quality_factor".into(), last.1));
    emit(cfg, &record(cfg, &fields)?)
}

fn optimize(cfg: &RunConfig) -> Result<(), Failure> {
    let osc = cfg.oscillator()?;
    let mut f: Record = vec![
        ("omega".into(), Value::Num(osc.omega)),
        ("gamma".into(), Value::Num(osc.gamma)),
        ("n_thermal".into(), Value::Num(osc.n_thermal)),
        ("controller".into(), Value::Str(controller(cfg).to_string())),
    ];
    match controller(cfg) {
        MethodChoice::Sideband => {
            let formula = sideband::nbar_min_sideband(&osc)?;
            let p = sideband::optimal_params(&osc)?;
            let at = sideband::nbar_exact(&osc, &p)?;
            let (best, nbar) = sideband::minimize_joint_numeric(&osc)?;
            f.extend(prefixed("formula_", formula.flat_fields("")));
            f.push(("kappa".into(), Value::Num(p.kappa())));
            f.push(("lambda".into(), Value::Num(p.lambda())));
            f.extend(prefixed("exact_at_formula_", at.flat_fields("")));
            f.push(("numeric_kappa".into(), Value::Num(best.kappa())));
            f.push(("numeric_lambda".into(), Value::Num(best.lambda())));
            f.push(("numeric_nbar".into(), Value::Num(nbar)));
        }
        MethodChoice::Measurement => {
            let p = cfg.measurement_params(&osc)?;
            let formula = measfb::nbar_min_meas(&osc, p.gain)?;
            let k = measfb::ktilde_opt(&osc, p.gain)?;
            let at = measfb::nbar_total(
                &osc,
                &MeasurementParams::with_delta(k, p.eta, p.gain, p.delta)?,
            )?;
            let numeric = measfb::minimize_ktilde_numeric(&osc, p.eta, p.gain)?;
            let gain_opt = measfb::minimize_gain_second_order(&osc, k, p.eta)?;
            f.push(("gain".into(), Value::Num(p.gain)));
            f.push(("eta".into(), Value::Num(p.eta)));
            f.extend(prefixed("formula_", formula.flat_fields("")));
            f.push(("ktilde".into(), Value::Num(k)));
            f.extend(prefixed("exact_at_formula_", at.exact.flat_fields("")));
            f.push(("numeric_ktilde".into(), Value::Num(numeric.x)));
            f.push(("numeric_nbar".into(), Value::Num(numeric.f)));
            f.push(("second_order_gain_opt".into(), Value::Num(gain_opt.x)));
        }
    }
    emit(cfg, &record(cfg, &f)?)
}

fn sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let osc = cfg.oscillator()?;
    let parameter = cfg.sweep_parameter.unwrap_or(SweepParameter::Ktilde);
    let gain = cfg.gain.unwrap_or(osc.omega / 10.0);
    let kappa = match cfg.kappa {
        Some(Param::Value(k)) => Some(k),
        _ => None,
    };
    let fixed_ktilde = |o: &Oscillator, g: f64| -> Result<f64, Error> {
        match cfg.ktilde {
            Some(Param::Value(k)) => Ok(k),
            _ => measfb::ktilde_opt(o, g),
        }
    };
    let eta = cfg.eta.unwrap_or(1.0);
    let base = Scenario {
        ktilde: 0.0,
        gain: Some(gain),
        kappa,
        eta,
    };
    let grid = |default: Result<GridSpec, Error>| -> Result<Vec<f64>, Error> {
        Ok(cfg.grid.map_or(default, Ok)?.values())
    };
    let rows = match parameter {
        SweepParameter::Ktilde => {
            let values = match cfg.grid {
                Some(g) => g.values(),
                None => compare::shared_ktilde_grid(&osc, gain, 12)?,
            };
            compare::sweep(&osc, &values, &base)?
        }
        SweepParameter::Gain => grid(GridSpec::log(osc.omega / 100.0, osc.omega, 12))?
            .into_iter()
            .map(|g| {
                compare::head_to_head(
                    &osc,
                    &Scenario {
                        ktilde: fixed_ktilde(&osc, g)?,
                        gain: Some(g),
                        ..base
                    },
                )
            })
            .collect::<Result<Vec<_>, _>>()?,
        SweepParameter::Kappa => {
            let k = fixed_ktilde(&osc, gain)?;
            let kh = sideband::kappa_hat(&osc);
            grid(GridSpec::log(kh / 10.0, kh * 10.0, 12))?
                .into_iter()
                .map(|kappa| {
                    compare::head_to_head(
                        &osc,
                        &Scenario {
                            ktilde: k,
                            kappa: Some(kappa),
                            ..base
                        },
                    )
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        SweepParameter::Q => grid(GridSpec::log(1e6, 1e10, 9))?
            .into_iter()
            .map(|q| {
                let o = Oscillator::from_q(osc.omega, q, osc.n_thermal)?;
                compare::head_to_head(
                    &o,
                    &Scenario {
                        ktilde: fixed_ktilde(&o, gain)?,
                        ..base
                    },
                )
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    let rows: Vec<Record> = rows.iter().map(|r| r.flat_fields()).collect();
    emit(cfg, &table(cfg, &rows, Format::Csv)?)
}

fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let osc = cfg.oscillator()?;
    let p = cfg.measurement_params(&osc)?;
    let tc = cfg.trajectory_config();
    let stats = trajectory::simulate_conditional_means(&osc, &p, &tc)?;
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => emit(cfg, &csv_string(&stats.csv_rows())?),
        Format::Json => {
            let steady = measfb::nbar_total(&osc, &p)?;
            let (m, se) = (stats.final_means(), stats.final_standard_errors());
            let mut f = RunConfig::from_resolved(&osc, None, Some(&p)).flat_fields();
            f.extend([
                ("n_traj".to_string(), Value::Int(tc.n_traj as i64)),
                ("n_steps".to_string(), Value::Int(tc.n_steps as i64)),
                ("dt".to_string(), Value::Num(tc.dt)),
                ("seed".to_string(), Value::Str(tc.seed.to_string())),
                ("vmx".to_string(), Value::Num(m.vmx)),
                ("vmp".to_string(), Value::Num(m.vmp)),
                ("cm".to_string(), Value::Num(m.cm)),
                ("se_vmx".to_string(), Value::Num(se.vmx)),
                ("se_vmp".to_string(), Value::Num(se.vmp)),
                ("se_cm".to_string(), Value::Num(se.cm)),
                ("steady_vmx".to_string(), Value::Num(steady.means.vmx)),
                ("steady_vmp".to_string(), Value::Num(steady.means.vmp)),
                ("steady_cm".to_string(), Value::Num(steady.means.cm)),
                ("nbar".to_string(), Value::Num(stats.final_total().nbar())),
                ("steady_nbar".to_string(), Value::Num(steady.exact.nbar)),
                ("converged".to_string(), Value::Bool(stats.converged)),
            ]);
            emit(cfg, &json_line(&f)?)
        }
    }
}

fn compare_cmd(cfg: &RunConfig) -> Result<(), Failure> {
    let omega = cfg.omega.unwrap_or(1.0);
    let n_t = cfg.n_thermal.unwrap_or(100.0);
    let gain_ratio = cfg.gain.map_or(0.1, |g| g / omega);
    let q_grid = match cfg.q_grid {
        Some(g) => g,
        None => GridSpec::log(1e6, 1e10, 5)?,
    };
    let qs = q_grid.values();
    let eta = cfg.eta.unwrap_or(1.0);
    let with = |p: ScalingPolicy| ScalingPolicy {
        gain_ratio,
        eta,
        ..p
    };
    let fits = [
        compare::scaling_fit(omega, n_t, &qs, &with(ScalingPolicy::sideband()))?,
        compare::scaling_fit(omega, n_t, &qs, &with(ScalingPolicy::measurement()))?,
        compare::scaling_fit(omega, n_t, &qs, &with(ScalingPolicy::sideband().formula()))?,
        compare::scaling_fit(
            omega,
            n_t,
            &qs,
            &with(ScalingPolicy::measurement().formula()),
        )?,
    ];
    let rows: Vec<Record> = qs
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let osc = Oscillator::from_q(omega, q, n_t)?;
            Ok(vec![
                ("q".to_string(), Value::Num(q)),
                ("n_thermal".to_string(), Value::Num(n_t)),
                ("nbar_sb_exact".to_string(), Value::Num(fits[0].nbar[i])),
                ("nbar_meas_exact".to_string(), Value::Num(fits[1].nbar[i])),
                ("nbar_sb_formula".to_string(), Value::Num(fits[2].nbar[i])),
                ("nbar_meas_formula".to_string(), Value::Num(fits[3].nbar[i])),
                (
                    "nbar_meas_infinite_gain".to_string(),
                    Value::Num(compare::nbar_meas_infinite_gain(&osc)),
                ),
                (
                    "nbar_time_modulated".to_string(),
                    Value::Num(compare::nbar_time_modulated(&osc)),
                ),
            ])
        })
        .collect::<Result<_, Error>>()?;
    let summary: Record = vec![
        ("omega".into(), Value::Num(omega)),
        ("n_thermal".into(), Value::Num(n_t)),
        ("gain_ratio".into(), Value::Num(gain_ratio)),
        ("eta".into(), Value::Num(eta)),
        ("q_grid".into(), Value::Str(q_grid.to_string())),
        ("slope_sb_exact".into(), Value::Num(fits[0].slope)),
        (
            "slope_sb_exact_stderr".into(),
            Value::Num(fits[0].slope_stderr),
        ),
        ("slope_meas_exact".into(), Value::Num(fits[1].slope)),
        (
            "slope_meas_exact_stderr".into(),
            Value::Num(fits[1].slope_stderr),
        ),
        ("slope_sb_formula".into(), Value::Num(fits[2].slope)),
        ("slope_meas_formula".into(), Value::Num(fits[3].slope)),
    ];
    let csv = csv_string(&rows)?;
    let json = json_line(&summary)?;
    match (&cfg.output, cfg.format) {
        (Some(path), _) => {
            write_file(path, &csv)?;
            write_file(&path.with_extension("json"), &json)
        }
        (None, Some(Format::Json)) => emit(cfg, &json),
        (None, _) => emit(cfg, &(csv + &json)),
    }
}

fn validate_cmd(cfg: &RunConfig) -> Result<bool, Failure> {
    let report = validate::run_builtin(cfg.n_traj.unwrap_or(2000));
    let text = match cfg.format {
        Some(Format::Json) => to_json_string(&report)? + "\n",
        Some(Format::Csv) => csv_string(&report.csv_rows())?,
        None => report
            .checks
            .iter()
            .map(|c| {
                format!(
                    "{} {}: {}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                )
            })
            .collect(),
    };
    emit(cfg, &text)?;
    Ok(report.all_passed())
}
