//! Built-in oracle-equivalence and invariant checks, run by `gcl validate`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compare::{self, ScalingPolicy};
use crate::config::GridSpec;
use crate::error::Result;
use crate::linsys;
use crate::measfb::{self, MeasurementParams};
use crate::oscillator::Oscillator;
use crate::report::{Method, Value};
use crate::sideband::{self, SidebandParams};
use crate::trajectory::{self, TrajectoryConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn csv_rows(&self) -> Vec<Vec<(String, Value)>> {
        self.checks
            .iter()
            .map(|c| {
                vec![
                    ("check".to_string(), Value::Str(c.name.clone())),
                    ("passed".to_string(), Value::Bool(c.passed)),
                    ("detail".to_string(), Value::Str(c.detail.clone())),
                ]
            })
            .collect()
    }

    fn push(&mut self, name: &str, outcome: Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn constant_c() -> Result<(bool, String)> {
    let c = sideband::c_coefficient();
    Ok(((c - 1.67).abs() < 0.01, format!("c = {c:.6}")))
}

/// Random stable sideband networks: spectral, Lyapunov and quadrature routes.
fn oracle_triangle(points: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let gamma = 10f64.powf(rng.random_range(-7.0..-3.0));
        let n_t = rng.random_range(0.0..200.0);
        let kappa = 10f64.powf(rng.random_range(-3.0..-1.0));
        let lambda = 10f64.powf(rng.random_range(-3.0..-1.0));
        let osc = Oscillator::new(1.0, gamma, n_t)?;
        let p = SidebandParams::with_lambda(kappa, lambda)?;
        let a = sideband::nbar_exact_with(&osc, &p, Method::ExactSpectral)?.nbar;
        let b = sideband::nbar_exact_with(&osc, &p, Method::ExactLyapunov)?.nbar;
        let c = sideband::nbar_exact_with(&osc, &p, Method::ExactQuadrature)?.nbar;
        worst = worst.max(rel(a, b)).max(rel(a, c)).max(rel(b, c));
    }
    Ok((
        worst < 1e-7,
        format!("{points} points, worst pairwise relative difference {worst:.2e}"),
    ))
}

fn sideband_perturbative() -> Result<(bool, String)> {
    let mut errs = Vec::new();
    for q in [1e7, 1e8, 1e9] {
        let osc = Oscillator::from_q(1.0, q, 100.0)?;
        let p = sideband::optimal_params(&osc)?;
        let exact = sideband::nbar_exact(&osc, &p)?.nbar;
        let approx = sideband::nbar_perturbative(&osc, &p)?.nbar;
        errs.push(rel(approx, exact));
    }
    let ok = errs.iter().all(|e| *e < 0.05) && errs.windows(2).all(|w| w[1] < w[0]);
    Ok((ok, format!("relative errors {errs:.3?}")))
}

fn sideband_optimum() -> Result<(bool, String)> {
    let osc = Oscillator::from_q(1.0, 1e8, 100.0)?;
    let at_formula = sideband::nbar_exact(&osc, &sideband::optimal_params(&osc)?)?.nbar;
    let formula = sideband::nbar_min_sideband(&osc)?.nbar;
    let (_, numeric) = sideband::minimize_joint_numeric(&osc)?;
    let ok = rel(at_formula, formula) < 0.15 && numeric > (1.0 - 0.15) * at_formula;
    Ok((
        ok,
        format!("exact at formula point {at_formula:.6e}, formula {formula:.6e}, numeric minimum {numeric:.6e}"),
    ))
}

fn measurement_zero_damping() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut purity = 0.0f64;
    for eta in [0.5, 1.0] {
        for r in [0.01, 0.5, 3f64.sqrt()] {
            let osc = Oscillator::new(1.0, 0.0, 0.0)?;
            let p = MeasurementParams::new(r / 8.0, eta, 0.1)?;
            let n = measfb::conditional_steady_numeric(&osc, &p)?;
            let a = measfb::conditional_steady_zero_damping(1.0, p.ktilde, eta)?;
            worst = worst
                .max(rel(n.vx, a.vx))
                .max(rel(n.vp, a.vp))
                .max(rel(n.c, a.c));
            if eta == 1.0 {
                purity = purity.max((n.determinant() - 1.0).abs());
            }
        }
    }
    Ok((
        worst < 1e-10 && purity < 1e-10,
        format!("worst relative deviation {worst:.2e}, purity deviation {purity:.2e}"),
    ))
}

fn measurement_gain_optimum() -> Result<(bool, String)> {
    let osc = Oscillator::from_q(1.0, 1e8, 100.0)?;
    let k = measfb::ktilde_opt(&osc, 0.1)?;
    let m = measfb::minimize_gain_second_order(&osc, k, 1.0)?;
    let err = rel(m.x, 2f64.sqrt() * osc.omega);
    Ok((
        err < 1e-6,
        format!("argmin Γ = {:.10}, relative error {err:.2e}", m.x),
    ))
}

fn closed_loop_oracle() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (gamma, n_t, k, eta, gain) in [
        (1e-6, 100.0, 1e-3, 1.0, 0.1),
        (1e-4, 20.0, 2e-3, 0.4, 0.2),
        (1e-8, 0.0, 1e-2, 0.7, 1.0),
    ] {
        let osc = Oscillator::new(1.0, gamma, n_t)?;
        let p = MeasurementParams::new(k, eta, gain)?;
        let r = measfb::nbar_total(&osc, &p)?;
        let sys = measfb::closed_loop_system(&osc, &p, &r.conditional)?;
        let s = linsys::steady_covariance_lyapunov(&sys)?;
        worst = worst
            .max(rel(s.get(0, 0), r.total.vx))
            .max(rel(s.get(1, 1), r.total.vp));
    }
    Ok((
        worst < 1e-8,
        format!("worst relative deviation {worst:.2e}"),
    ))
}

fn scaling(formula_only: bool) -> Result<(bool, String)> {
    let qs = GridSpec::log(1e6, 1e10, 5)?.values();
    let (sb, me) = if formula_only {
        (
            ScalingPolicy::sideband().formula(),
            ScalingPolicy::measurement().formula(),
        )
    } else {
        (ScalingPolicy::sideband(), ScalingPolicy::measurement())
    };
    let a = compare::scaling_fit(1.0, 100.0, &qs, &sb)?;
    let b = compare::scaling_fit(1.0, 100.0, &qs, &me)?;
    let tol = if formula_only { 1e-6 } else { 0.05 };
    let ok = (a.slope + 2.0 / 3.0).abs() < tol && (b.slope + 0.5).abs() < tol;
    Ok((
        ok,
        format!(
            "sideband {:.6} ± {:.1e}, measurement {:.6} ± {:.1e}",
            a.slope, a.slope_stderr, b.slope, b.slope_stderr
        ),
    ))
}

fn dominance() -> Result<(bool, String)> {
    let osc = Oscillator::from_q(1.0, 1e8, 100.0)?;
    let grid = compare::shared_ktilde_grid(&osc, 0.1, 8)?;
    let rows = compare::sweep(&osc, &grid, &compare::Scenario::new(0.0))?;
    let ok = rows.iter().all(|r| r.nbar_sb_exact <= r.nbar_meas_exact);
    let worst = rows
        .iter()
        .map(|r| r.nbar_sb_exact / r.nbar_meas_exact)
        .fold(0.0f64, f64::max);
    Ok((
        ok,
        format!(
            "{} grid points, largest sideband/measurement ratio {worst:.3}",
            rows.len()
        ),
    ))
}

fn trajectory_decomposition(n_traj: usize) -> Result<(bool, String)> {
    let osc = Oscillator::from_q(1.0, 1e8, 100.0)?;
    let p = MeasurementParams::new(measfb::ktilde_opt(&osc, 0.1)?, 1.0, 0.1)?;
    let cfg = TrajectoryConfig {
        n_traj,
        n_steps: 6000,
        seed: 20_240_601,
        ..Default::default()
    };
    let s = trajectory::simulate_conditional_means(&osc, &p, &cfg)?;
    let exact = measfb::nbar_total(&osc, &p)?;
    let (m, se) = (s.final_means(), s.final_standard_errors());
    let z = [
        (m.vmx - exact.means.vmx) / se.vmx,
        (m.vmp - exact.means.vmp) / se.vmp,
        (m.cm - exact.means.cm) / se.cm,
    ];
    let total = s.final_total();
    let zt = [
        (total.vx - exact.total.vx) / se.vmx,
        (total.vp - exact.total.vp) / se.vmp,
    ];
    let ok = z.iter().chain(&zt).all(|v| v.abs() < 3.0) && s.converged;
    Ok((
        ok,
        format!("n_traj {n_traj}, z-scores means {z:.2?}, totals {zt:.2?}"),
    ))
}

fn anchors() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_det = f64::INFINITY;
    for _ in 0..20 {
        let osc = Oscillator::new(
            1.0,
            10f64.powf(rng.random_range(-8.0..-3.0)),
            rng.random_range(0.0..200.0),
        )?;
        let sb = SidebandParams::with_lambda(
            10f64.powf(rng.random_range(-3.0..-1.0)),
            10f64.powf(rng.random_range(-3.0..-1.0)),
        )?;
        let cov = sideband::steady_covariance(&osc, &sb)?;
        let det = cov.get(0, 0) * cov.get(1, 1) - cov.get(0, 1).powi(2);
        worst_det = worst_det.min(det - 1.0);
        let mp = MeasurementParams::new(
            10f64.powf(rng.random_range(-5.0..-1.0)),
            rng.random_range(0.2..=1.0),
            0.1,
        )?;
        let t = measfb::nbar_total(&osc, &mp)?.total;
        worst_det = worst_det.min(t.determinant() - 1.0);
    }
    let osc = Oscillator::new(1.0, 1e-4, 37.0)?;
    let sb0 = sideband::nbar_exact(&osc, &SidebandParams::with_lambda(0.05, 0.0)?)?.nbar;
    let me0 = measfb::nbar_total(&osc, &MeasurementParams::new(0.0, 1.0, 0.0)?)?
        .exact
        .nbar;
    let thermal = rel(sb0, 37.0).max(rel(me0, 37.0));
    Ok((
        worst_det > -1e-9 && thermal < 1e-8,
        format!("min (det - 1) {worst_det:.3e}, thermal anchor deviation {thermal:.2e}"),
    ))
}

/// Runs every built-in check. `n_traj` sets the Monte Carlo ensemble size.
pub fn run_builtin(n_traj: usize) -> ValidationReport {
    let mut r = ValidationReport::default();
    r.push("constant_c", constant_c());
    r.push("oracle_triangle", oracle_triangle(50, 1));
    r.push("sideband_perturbative", sideband_perturbative());
    r.push("sideband_optimum", sideband_optimum());
    r.push("measurement_zero_damping", measurement_zero_damping());
    r.push("measurement_gain_optimum", measurement_gain_optimum());
    r.push("closed_loop_oracle", closed_loop_oracle());
    r.push("scaling_formula", scaling(true));
    r.push("scaling_exact", scaling(false));
    r.push("dominance", dominance());
    r.push("trajectory_decomposition", trajectory_decomposition(n_traj));
    r.push("heisenberg_thermal_anchors", anchors());
    r
}
