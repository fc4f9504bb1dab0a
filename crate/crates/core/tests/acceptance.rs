//! Acceptance criteria 1 through 9, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines come out in order and
//! uncaptured. The process exits nonzero when any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gcl_core::compare::{self, ScalingPolicy};
use gcl_core::linsys::LinearStochasticSystem;
use gcl_core::measfb::{self, MeasurementParams};
use gcl_core::sideband::{self, SidebandParams};
use gcl_core::trajectory::{self, TrajectoryConfig};
use gcl_core::{Method, Oscillator};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Vectorized Lyapunov solve `A S + S Aᵀ + D = 0` by dense LU.
fn kron_lyapunov(a: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let big = id.kronecker(a) + a.kronecker(&id);
    let rhs = -DVector::from_column_slice(d.as_slice());
    let v = big.lu().solve(&rhs).expect("nonsingular Lyapunov operator");
    DMatrix::from_column_slice(n, n, v.as_slice())
}

fn oscillator_block(sys: &LinearStochasticSystem) -> (f64, f64, f64) {
    let s = kron_lyapunov(sys.drift(), sys.noise_cov());
    (s[(0, 0)], s[(1, 1)], s[(0, 1)])
}

fn nbar_from(vx: f64, vp: f64) -> f64 {
    (vx + vp - 2.0) / 4.0
}

fn c_oracle() -> f64 {
    let d = (2f64.sqrt() * (5f64.sqrt() - 1.0)).powf(2.0 / 3.0);
    1.0 / d + (d / 2.0).sqrt() + d * d / 16.0
}

fn criterion_1() -> Outcome {
    let c = sideband::c_coefficient();
    let oracle = c_oracle();
    outcome(
        (c - 1.67).abs() < 0.01 && (c - oracle).abs() < 1e-14,
        format!("c = {c:.6}, test-side value {oracle:.6}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut triangle, mut kron, mut printed) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let osc = Oscillator::new(
            1.0,
            10f64.powf(rng.random_range(-7.0..-3.0)),
            rng.random_range(0.0..200.0),
        )
        .unwrap();
        let p = SidebandParams::with_lambda(
            10f64.powf(rng.random_range(-3.0..-1.0)),
            10f64.powf(rng.random_range(-3.0..-1.0)),
        )
        .unwrap();
        let a = sideband::nbar_exact_with(&osc, &p, Method::ExactSpectral)
            .unwrap()
            .nbar;
        let b = sideband::nbar_exact_with(&osc, &p, Method::ExactLyapunov)
            .unwrap()
            .nbar;
        let c = sideband::nbar_exact_with(&osc, &p, Method::ExactQuadrature)
            .unwrap()
            .nbar;
        triangle = triangle.max(rel(a, b)).max(rel(a, c)).max(rel(b, c));
        let (vx, vp, _) = oscillator_block(&sideband::build_sideband_system(&osc, &p));
        kron = kron.max(rel(nbar_from(vx, vp), b));
        printed = printed.max(
            sideband::closed_form_discrepancy(&osc, &p)
                .unwrap()
                .max_relative_error(),
        );
    }
    outcome(
        triangle < 1e-7 && kron < 1e-6,
        format!(
            "worst pairwise {triangle:.2e}, dense Kronecker solve {kron:.2e}, printed closed-form moments {printed:.2e}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut errs = Vec::new();
    for q in [1e7, 1e8, 1e9] {
        let osc = Oscillator::from_q(1.0, q, 100.0).unwrap();
        let p = sideband::optimal_params(&osc).unwrap();
        let exact = sideband::nbar_exact(&osc, &p).unwrap().nbar;
        let approx = sideband::nbar_perturbative(&osc, &p).unwrap().nbar;
        errs.push(rel(approx, exact));
    }
    let ok = errs.iter().all(|e| *e < 0.05) && errs.windows(2).all(|w| w[1] < w[0]);
    outcome(
        ok,
        format!("relative errors at Q = 1e7, 1e8, 1e9: {errs:.3?}"),
    )
}

fn criterion_4() -> Outcome {
    let osc = Oscillator::from_q(1.0, 1e8, 100.0).unwrap();
    let formula = c_oracle() * (100.0f64 / 1e8).powf(2.0 / 3.0);
    let at = sideband::nbar_exact(&osc, &sideband::optimal_params(&osc).unwrap())
        .unwrap()
        .nbar;
    let (best, numeric) = sideband::minimize_joint_numeric(&osc).unwrap();
    let (vx, vp, _) = oscillator_block(&sideband::build_sideband_system(&osc, &best));
    let ok =
        rel(at, formula) < 0.15 && numeric >= 0.85 * at && rel(nbar_from(vx, vp), numeric) < 1e-6;
    outcome(
        ok,
        format!(
            "formula {formula:.5e}, exact at formula point {at:.5e} ({:+.2}%), numeric minimum {numeric:.5e}",
            100.0 * (at / formula - 1.0)
        ),
    )
}

/// γ = 0 fixed point solved by hand: C from the quadratic, then Ṽx and Ṽp.
fn zero_damping_oracle(omega: f64, ktilde: f64, eta: f64) -> (f64, f64, f64) {
    let a = 8.0 * ktilde;
    let c = a / (omega + (omega * omega + eta * a * a).sqrt());
    let vx = (2.0 * omega * c / (eta * a)).sqrt();
    let vp = vx + eta * a * c * vx / omega;
    (vx, vp, c)
}

fn criterion_5() -> Outcome {
    let (mut worst, mut purity) = (0.0f64, 0.0f64);
    for eta in [0.5, 1.0] {
        for r in [0.01, 0.5, 3f64.sqrt()] {
            let osc = Oscillator::new(1.0, 0.0, 0.0).unwrap();
            let p = MeasurementParams::new(r / 8.0, eta, 0.1).unwrap();
            let n = measfb::conditional_steady_numeric(&osc, &p).unwrap();
            let (vx, vp, c) = zero_damping_oracle(1.0, p.ktilde, eta);
            let printed = measfb::conditional_steady_zero_damping(1.0, p.ktilde, eta).unwrap();
            worst = [
                rel(n.vx, vx),
                rel(n.vp, vp),
                rel(n.c, c),
                rel(printed.vx, vx),
                rel(printed.vp, vp),
                rel(printed.c, c),
            ]
            .into_iter()
            .fold(worst, f64::max);
            if eta == 1.0 {
                purity = purity.max((n.vx * n.vp - n.c * n.c - 1.0).abs());
            }
        }
    }
    outcome(
        worst < 1e-10 && purity < 1e-10,
        format!("worst relative deviation {worst:.2e}, purity deviation {purity:.2e}"),
    )
}

fn criterion_6a() -> Outcome {
    let osc = Oscillator::from_q(1.0, 1e8, 100.0).unwrap();
    let gain = 0.1;
    let k = measfb::ktilde_opt(&osc, gain).unwrap();
    let exact = measfb::nbar_total(&osc, &MeasurementParams::new(k, 1.0, gain).unwrap())
        .unwrap()
        .exact
        .nbar;
    let formula = (2f64.sqrt() + 0.5) * (osc.n_thermal * osc.gamma / gain).sqrt();
    let dev = exact / formula - 1.0;
    outcome(
        dev.abs() < 0.25,
        format!(
            "exact {exact:.5e} vs formula {formula:.5e}, deviation {:+.1}% (tolerance 25%)",
            100.0 * dev
        ),
    )
}

fn criterion_6b() -> Outcome {
    let osc = Oscillator::from_q(1.0, 1e8, 100.0).unwrap();
    let k = measfb::ktilde_opt(&osc, 0.1).unwrap();
    let m = measfb::minimize_gain_second_order(&osc, k, 1.0).unwrap();
    let err = rel(m.x, 2f64.sqrt());
    outcome(
        err < 1e-6,
        format!("argmin Γ = {:.9}, relative error {err:.2e}", m.x),
    )
}

/// Plain least-squares slope of log n̄ on log Q.
fn ols_slope(q: &[f64], nbar: &[f64]) -> f64 {
    let x: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = nbar.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_7() -> Outcome {
    let qs: Vec<f64> = (0..9).map(|i| 10f64.powf(6.0 + 0.5 * i as f64)).collect();
    let sb = compare::scaling_fit(1.0, 100.0, &qs, &ScalingPolicy::sideband()).unwrap();
    let me = compare::scaling_fit(1.0, 100.0, &qs, &ScalingPolicy::measurement()).unwrap();
    let (a, b) = (ols_slope(&sb.q, &sb.nbar), ols_slope(&me.q, &me.nbar));
    let ok = (a + 2.0 / 3.0).abs() < 0.05
        && (b + 0.5).abs() < 0.05
        && (a - sb.slope).abs() < 1e-10
        && (b - me.slope).abs() < 1e-10;
    outcome(
        ok,
        format!("sideband slope {a:.4}, measurement slope {b:.4}"),
    )
}

/// Mean-variance steady state from its 3×3 linear system.
fn mean_oracle(osc: &Oscillator, p: &MeasurementParams, vx: f64, c: f64) -> (f64, f64, f64) {
    let (g, w, gain) = (osc.gamma, osc.omega, p.gain);
    let s = 8.0 * p.eta * p.ktilde;
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[
            g,
            0.0,
            -2.0 * w,
            0.0,
            g + 2.0 * gain,
            2.0 * w,
            w,
            -w,
            g + gain,
        ],
    );
    let b = DVector::from_column_slice(&[s * vx * vx, s * c * c, s * c * vx]);
    let m = a.lu().solve(&b).unwrap();
    (m[0], m[1], m[2])
}

fn criterion_8() -> Outcome {
    let osc = Oscillator::from_q(1.0, 1e8, 100.0).unwrap();
    let p = MeasurementParams::new(measfb::ktilde_opt(&osc, 0.1).unwrap(), 1.0, 0.1).unwrap();
    let cfg = TrajectoryConfig {
        n_traj: 10_000,
        n_steps: 6000,
        seed: 8,
        ..Default::default()
    };
    let s = trajectory::simulate_conditional_means(&osc, &p, &cfg).unwrap();
    let steady = measfb::nbar_total(&osc, &p).unwrap();
    let cv = steady.conditional;
    let (vmx, vmp, cm) = mean_oracle(&osc, &p, cv.vx, cv.c);
    let (m, se) = (s.final_means(), s.final_standard_errors());
    let z = [
        (m.vmx - vmx) / se.vmx,
        (m.vmp - vmp) / se.vmp,
        (m.cm - cm) / se.cm,
    ];
    let sys = measfb::closed_loop_system(&osc, &p, &cv).unwrap();
    let (tx, tp, _) = oscillator_block(&sys);
    let decomposition = rel(cv.vx + vmx, tx).max(rel(cv.vp + vmp, tp));
    let total = s.final_total();
    let zt = [(total.vx - tx) / se.vmx, (total.vp - tp) / se.vmp];
    let ok = z.iter().chain(&zt).all(|v| v.abs() < 3.0) && decomposition < 1e-8 && s.converged;
    outcome(
        ok,
        format!(
            "n_traj 10000, z-scores (Vmx, Vmp, Cm) {z:.2?}, totals {zt:.2?}, conditional + means vs closed loop {decomposition:.1e}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::INFINITY;
    for _ in 0..40 {
        let osc = Oscillator::new(
            1.0,
            10f64.powf(rng.random_range(-9.0..-3.0)),
            rng.random_range(0.0..500.0),
        )
        .unwrap();
        let sb = SidebandParams::with_lambda(
            10f64.powf(rng.random_range(-3.5..-0.5)),
            10f64.powf(rng.random_range(-3.5..-0.5)),
        )
        .unwrap();
        let (vx, vp, c) = oscillator_block(&sideband::build_sideband_system(&osc, &sb));
        worst = worst.min(vx * vp - c * c - 1.0);
        let cov = sideband::steady_covariance(&osc, &sb).unwrap();
        worst = worst.min(cov.get(0, 0) * cov.get(1, 1) - cov.get(0, 1).powi(2) - 1.0);
        let mp = MeasurementParams::new(
            10f64.powf(rng.random_range(-6.0..-1.0)),
            rng.random_range(0.1..=1.0),
            10f64.powf(rng.random_range(-2.0..0.5)),
        )
        .unwrap();
        let r = measfb::nbar_total(&osc, &mp).unwrap();
        worst = worst.min(r.total.vx * r.total.vp - r.total.c * r.total.c - 1.0);
        worst = worst.min(r.conditional.determinant() - 1.0);
    }
    let osc = Oscillator::new(1.0, 1e-4, 37.0).unwrap();
    let sb0 = sideband::nbar_exact(&osc, &SidebandParams::with_lambda(0.05, 0.0).unwrap())
        .unwrap()
        .nbar;
    let me0 = measfb::nbar_total(&osc, &MeasurementParams::new(0.0, 1.0, 0.0).unwrap())
        .unwrap()
        .exact
        .nbar;
    let me_gain_only = measfb::nbar_total(&osc, &MeasurementParams::new(0.0, 1.0, 0.3).unwrap())
        .unwrap()
        .exact
        .nbar;
    let thermal = rel(sb0, 37.0)
        .max(rel(me0, 37.0))
        .max(rel(me_gain_only, 37.0));
    outcome(
        worst > -1e-9 && thermal < 1e-8,
        format!("min (det - 1) {worst:.3e}, uncoupled deviation from n_T {thermal:.1e}"),
    )
}

type Criterion = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, &str, Criterion); 10] = [
        ("1", "constant c", criterion_1),
        ("2", "sideband oracle triangle", criterion_2),
        ("3", "sideband perturbative fidelity", criterion_3),
        ("4", "sideband optimum", criterion_4),
        ("5", "measurement zero-damping fixed point", criterion_5),
        ("6a", "measurement optimum vs closed form", criterion_6a),
        ("6b", "measurement optimal gain", criterion_6b),
        ("7", "scaling exponents", criterion_7),
        ("8", "trajectory decomposition", criterion_8),
        ("9", "uncertainty bound and thermal anchors", criterion_9),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let o = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} criterion {id} ({name}): {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} of {} passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
