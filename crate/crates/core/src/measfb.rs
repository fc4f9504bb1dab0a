//! Continuous position measurement with linear feedback on the conditional
//! momentum, `f = -Γ⟨p̃⟩`.
//!
//! All variances are the dimensionless ones of the scaled quadratures
//! (ground state `Ṽx = Ṽp = 1`). The conditional variances obey
//!
//! ```text
//! dṼx/dt = 2ωC̃ - 8ηk̃Ṽx² - γ(Ṽx - Ṽᵀ)
//! dC̃/dt  = ωṼp - ωṼx - 8ηk̃C̃Ṽx - γC̃
//! dṼp/dt = -2ωC̃ - 8ηk̃C̃² + 8k̃ - γ(Ṽp - Ṽᵀ)
//! ```
//!
//! and the conditional means are driven through the innovation with gain
//! `√(8ηk̃)(Ṽx, C̃)`. A position gain δ only shifts the frequency to
//! `ω' = ω√(1 + δ²/ω²)`, which is used throughout.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::LinearStochasticSystem;
use crate::optimize::{golden_section_log, Minimum};
use crate::oscillator::Oscillator;
use crate::report::{CoolingReport, Method, RegimeViolation};

/// Regime thresholds.
pub const Q_WARN: f64 = 0.1;
pub const GAIN_RATIO_WARN: f64 = 0.2;
pub const EPSILON_WARN: f64 = 0.3;

/// `(√2 + 1/2)`, the coefficient of the optimal measurement-feedback n̄.
pub const NMIN_COEFFICIENT: f64 = std::f64::consts::SQRT_2 + 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementParams {
    /// Measurement rate k̃.
    pub ktilde: f64,
    /// Detection efficiency η.
    pub eta: f64,
    /// Momentum feedback rate Γ.
    pub gain: f64,
    /// Position feedback rate δ.
    pub delta: f64,
}

impl MeasurementParams {
    pub fn new(ktilde: f64, eta: f64, gain: f64) -> Result<Self> {
        Self::with_delta(ktilde, eta, gain, 0.0)
    }

    pub fn with_delta(ktilde: f64, eta: f64, gain: f64, delta: f64) -> Result<Self> {
        let p = Self {
            ktilde,
            eta,
            gain,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ktilde >= 0.0 && self.ktilde.is_finite()) {
            return Err(Error::invalid("ktilde", "must be non-negative and finite"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid("eta", "must lie in (0, 1]"));
        }
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::invalid("gain", "must be non-negative and finite"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", "must be non-negative and finite"));
        }
        Ok(())
    }

    /// `ω' = ω√(1 + δ²/ω²)`.
    pub fn effective_omega(&self, osc: &Oscillator) -> f64 {
        osc.omega.hypot(self.delta)
    }
}

/// Conditional (filter) variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalVariances {
    pub vx: f64,
    pub vp: f64,
    pub c: f64,
}

impl ConditionalVariances {
    pub fn thermal(osc: &Oscillator) -> Self {
        let vt = osc.thermal_variance();
        Self {
            vx: vt,
            vp: vt,
            c: 0.0,
        }
    }

    /// `ṼxṼp - C̃²`, which is at least 1 for a physical state.
    pub fn determinant(&self) -> f64 {
        self.vx * self.vp - self.c * self.c
    }

    fn as_array(&self) -> [f64; 3] {
        [self.vx, self.vp, self.c]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            vx: a[0],
            vp: a[1],
            c: a[2],
        }
    }
}

/// Ensemble variances of the conditional means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MeanVariances {
    pub vmx: f64,
    pub vmp: f64,
    pub cm: f64,
}

impl MeanVariances {
    pub fn determinant(&self) -> f64 {
        self.vmx * self.vmp - self.cm * self.cm
    }
}

/// Unconditional variances: conditional plus variance of the means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalVariances {
    pub vx: f64,
    pub vp: f64,
    pub c: f64,
}

impl TotalVariances {
    pub fn from_parts(cond: &ConditionalVariances, means: &MeanVariances) -> Self {
        Self {
            vx: cond.vx + means.vmx,
            vp: cond.vp + means.vmp,
            c: cond.c + means.cm,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.vx * self.vp - self.c * self.c
    }

    /// `n̄ = Ṽx/4 + Ṽp/4 - 1/2` (the unconditional means vanish).
    pub fn nbar(&self) -> f64 {
        self.vx / 4.0 + self.vp / 4.0 - 0.5
    }
}

/// A value returned together with any regime warnings that apply to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flagged<T> {
    pub value: T,
    pub warnings: Vec<RegimeViolation>,
}

/// `r = 8k̃/ω'`.
pub fn r_parameter(osc: &Oscillator, p: &MeasurementParams) -> f64 {
    8.0 * p.ktilde / p.effective_omega(osc)
}

/// Steady conditional variances at γ = 0:
/// `Ṽx⁰ = √2/√(η(ξ+1))`, `Ṽp⁰ = ξṼx⁰`, `C̃⁰ = √(ξ-1)/√(η(ξ+1))`, `ξ = √(1+ηr²)`.
pub fn conditional_steady_zero_damping(
    omega: f64,
    ktilde: f64,
    eta: f64,
) -> Result<ConditionalVariances> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid("eta", "must lie in (0, 1]"));
    }
    if !(omega > 0.0) || !(ktilde >= 0.0) {
        return Err(Error::invalid(
            "omega",
            "omega must be positive and ktilde non-negative",
        ));
    }
    let r = 8.0 * ktilde / omega;
    let xi = (1.0 + eta * r * r).sqrt();
    let denom = (eta * (xi + 1.0)).sqrt();
    let vx = 2f64.sqrt() / denom;
    // ξ - 1 = ηr²/(ξ + 1) avoids cancellation at small r.
    let xi_minus_one = eta * r * r / (xi + 1.0);
    Ok(ConditionalVariances {
        vx,
        vp: xi * vx,
        c: xi_minus_one.sqrt() / denom,
    })
}

/// Which printed first-order-in-q solution to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbativeForm {
    /// First order in q, exact in r.
    ExactInR,
    /// Expanded to second order in r, any η.
    #[default]
    GeneralEta,
    /// The η = 1 simplification.
    EfficientDetection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PerturbativeOptions {
    pub form: PerturbativeForm,
    /// Keep the explicit r² terms inside the q-correction brackets.
    pub keep_qr2: bool,
}

fn measurement_warnings(osc: &Oscillator, p: &MeasurementParams) -> Vec<RegimeViolation> {
    let mut w = Vec::new();
    if p.ktilde > 0.0 {
        w.extend(RegimeViolation::check(
            "gamma_over_ktilde",
            osc.gamma / p.ktilde,
            Q_WARN,
        ));
    }
    w
}

/// First-order-in-`q = γ/k̃` steady conditional variances.
pub fn conditional_steady_perturbative(
    osc: &Oscillator,
    p: &MeasurementParams,
    opts: PerturbativeOptions,
) -> Result<Flagged<ConditionalVariances>> {
    p.validate()?;
    let w = p.effective_omega(osc);
    let zero = conditional_steady_zero_damping(w, p.ktilde, p.eta)?;
    let g = osc.gamma;
    if g == 0.0 {
        return Ok(Flagged {
            value: zero,
            warnings: Vec::new(),
        });
    }
    if p.ktilde == 0.0 {
        return Err(Error::invalid(
            "ktilde",
            "the expansion in γ/k̃ needs ktilde > 0",
        ));
    }
    let (k, eta, n_t) = (p.ktilde, p.eta, osc.n_thermal);
    let vt = osc.thermal_variance();
    let r = 8.0 * k / w;
    let keep = if opts.keep_qr2 { 1.0 } else { 0.0 };
    let (vx0, vp0, c0) = (zero.vx, zero.vp, zero.c);
    let value = match opts.form {
        PerturbativeForm::ExactInR => {
            let s = 1.0 + eta * r * vx0;
            let vx =
                vx0 + g / (8.0 * eta * k) * ((1.0 + eta * r * vx0 / 2.0) / s) * (vt - vx0) / vx0;
            let c = c0 + g / (2.0 * w) * (vt - vx0) / s;
            let vp = vp0 + (1.0 + eta * r * c0) * (vx - vx0) + eta * r * vx0 * (c - c0);
            ConditionalVariances { vx, vp, c }
        }
        PerturbativeForm::GeneralEta => {
            let se = eta.sqrt();
            let r2 = keep * eta * r * r / 8.0;
            let vx =
                vx0 + g / (8.0 * eta * k) * (1.0 - se * r / 2.0) * (se * (1.0 + r2) * vt - 1.0);
            let c = c0 + g / (2.0 * w) * (1.0 - se * r) * (vt - (1.0 - r2) / se);
            let vp = vp0 + (vx - vx0) + se * r * (c - c0);
            ConditionalVariances { vx, vp, c }
        }
        PerturbativeForm::EfficientDetection => {
            if eta != 1.0 {
                return Err(Error::invalid(
                    "eta",
                    "the efficient-detection form needs eta = 1",
                ));
            }
            let a = 2.0 * k / w;
            let vx = vx0 + g / (4.0 * k) * (n_t * (1.0 - 4.0 * k / w) + keep * vt * a * a);
            let c = c0 + g / w * (n_t * (1.0 - 8.0 * k / w) + keep * a * a);
            let vp = vp0 + (vx - vx0) + r * (c - c0);
            ConditionalVariances { vx, vp, c }
        }
    };
    Ok(Flagged {
        value,
        warnings: measurement_warnings(osc, p),
    })
}

/// Right-hand side of the scaled Riccati equations, ordered `(Ṽx, Ṽp, C̃)`.
pub fn riccati_rhs(osc: &Oscillator, p: &MeasurementParams, v: &ConditionalVariances) -> [f64; 3] {
    riccati_terms(
        osc.gamma,
        osc.thermal_variance(),
        p.effective_omega(osc),
        p.ktilde,
        p.eta,
        v.as_array(),
    )
}

fn riccati_terms(g: f64, vt: f64, w: f64, k: f64, eta: f64, s: [f64; 3]) -> [f64; 3] {
    let [vx, vp, c] = s;
    let m = 8.0 * eta * k;
    [
        2.0 * w * c - m * vx * vx - g * (vx - vt),
        -2.0 * w * c - m * c * c + 8.0 * k - g * (vp - vt),
        w * vp - w * vx - m * c * vx - g * c,
    ]
}

fn riccati_jacobian(g: f64, w: f64, k: f64, eta: f64, s: [f64; 3]) -> Matrix3<f64> {
    let [vx, _, c] = s;
    let m = 8.0 * eta * k;
    Matrix3::new(
        -2.0 * m * vx - g,
        0.0,
        2.0 * w,
        0.0,
        -g,
        -2.0 * w - 2.0 * m * c,
        -w - m * c,
        w,
        -m * vx - g,
    )
}

fn max_abs(a: &[f64; 3]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Steady conditional variances by pseudo-transient continuation from the
/// thermal state: linearly implicit Euler steps `(I/Δt - J)δ = F` with the
/// step grown as the residual falls, finishing with Newton steps.
pub fn conditional_steady_numeric(
    osc: &Oscillator,
    p: &MeasurementParams,
) -> Result<ConditionalVariances> {
    p.validate()?;
    let (g, vt) = (osc.gamma, osc.thermal_variance());
    let (w, k, eta) = (p.effective_omega(osc), p.ktilde, p.eta);
    if k == 0.0 && g == 0.0 {
        return Err(Error::invalid(
            "ktilde",
            "needs ktilde > 0 or gamma > 0 for a steady state",
        ));
    }
    let rate = w.max(p.gain).max(8.0 * k).max(g * vt);
    let tolerance = |s: &[f64; 3]| {
        let size = s.iter().fold(vt, |m, x| m.max(x.abs()));
        1e-12 * size * w.max(8.0 * k).max(g)
    };
    let rhs = |s: [f64; 3]| riccati_terms(g, vt, w, k, eta, s);

    let dt_min = 0.01 / rate;
    let mut dt = dt_min;
    let mut s = ConditionalVariances::thermal(osc).as_array();
    let mut f = rhs(s);
    let mut norm = max_abs(&f);
    const MAX_STEPS: usize = 10_000_000;
    let mut steps = 0;
    while norm > tolerance(&s) {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::NonConvergence {
                what: "conditional Riccati steady state",
                detail: format!("residual {norm:e} after {MAX_STEPS} steps"),
            });
        }
        let j = riccati_jacobian(g, w, k, eta, s);
        let a = Matrix3::identity() / dt - j;
        let Some(delta) = a.lu().solve(&Vector3::from(f)) else {
            dt *= 0.5;
            continue;
        };
        let trial = [s[0] + delta[0], s[1] + delta[1], s[2] + delta[2]];
        let f_trial = rhs(trial);
        let n_trial = max_abs(&f_trial);
        let bad = !n_trial.is_finite() || trial[0] <= 0.0 || trial[1] <= 0.0;
        if bad || n_trial > 2.0 * norm {
            if dt > dt_min {
                dt = (dt * 0.25).max(dt_min);
                continue;
            }
            if bad {
                return Err(Error::NonConvergence {
                    what: "conditional Riccati steady state",
                    detail: "left the positive cone at the smallest step".into(),
                });
            }
        }
        // Switched evolution relaxation: Δt grows with the residual reduction.
        dt = (dt * (norm / n_trial.max(f64::MIN_POSITIVE)).min(10.0)).max(dt_min);
        s = trial;
        f = f_trial;
        norm = n_trial;
    }
    // Newton polishing down to roundoff.
    for _ in 0..3 {
        let j = riccati_jacobian(g, w, k, eta, s);
        let Some(delta) = (-j).lu().solve(&Vector3::from(f)) else {
            break;
        };
        let trial = [s[0] + delta[0], s[1] + delta[1], s[2] + delta[2]];
        let f_trial = rhs(trial);
        if max_abs(&f_trial) <= norm {
            s = trial;
            f = f_trial;
            norm = max_abs(&f);
        } else {
            break;
        }
    }
    Ok(ConditionalVariances::from_array(s))
}

fn means_matrix(osc: &Oscillator, p: &MeasurementParams) -> Matrix3<f64> {
    let (g, w, gain) = (osc.gamma, p.effective_omega(osc), p.gain);
    Matrix3::new(
        g,
        0.0,
        -2.0 * w,
        0.0,
        g + 2.0 * gain,
        2.0 * w,
        w,
        -w,
        g + gain,
    )
}

/// Exact steady variances of the conditional means: solves
/// `A v = 8ηk̃ (Ṽx², C̃², C̃Ṽx)` with `A = [[γ, 0, -2ω], [0, γ+2Γ, 2ω], [ω, -ω, γ+Γ]]`.
pub fn mean_variances_steady(
    osc: &Oscillator,
    p: &MeasurementParams,
    cv: &ConditionalVariances,
) -> Result<MeanVariances> {
    p.validate()?;
    let a = means_matrix(osc, p);
    let src = Vector3::new(cv.vx * cv.vx, cv.c * cv.c, cv.c * cv.vx) * (8.0 * p.eta * p.ktilde);
    let det = a.determinant();
    if !(det.abs() > 1e-14 * a.norm().powi(3)) {
        return Err(Error::SingularSolve(format!(
            "variance-of-means matrix is singular (det {det:e}); needs gamma > 0 or gain > 0"
        )));
    }
    let v = a
        .lu()
        .solve(&src)
        .ok_or_else(|| Error::SingularSolve("variance-of-means matrix".into()))?;
    Ok(MeanVariances {
        vmx: v[0],
        vmp: v[1],
        cm: v[2],
    })
}

/// First order in `k̃/Γ`, all orders in `Γ/ω`:
/// `V̄x = (4ηk̃/Γ)[(1+Γ²/ω²)Ṽx² + C̃² + 2(Γ/ω)C̃Ṽx]`, `V̄p = (4ηk̃/Γ)(Ṽx² + C̃²)`,
/// `C̄ = -(4ηk̃/ω)Ṽx²`.
pub fn mean_variances_large_gain(
    osc: &Oscillator,
    p: &MeasurementParams,
    cv: &ConditionalVariances,
) -> Result<Flagged<MeanVariances>> {
    p.validate()?;
    if p.gain <= 0.0 {
        return Err(Error::invalid(
            "gain",
            "the large-gain expansion needs gain > 0",
        ));
    }
    let w = p.effective_omega(osc);
    let (vx, c, gain) = (cv.vx, cv.c, p.gain);
    let pre = 4.0 * p.eta * p.ktilde / gain;
    let value = MeanVariances {
        vmx: pre * ((1.0 + (gain / w).powi(2)) * vx * vx + c * c + 2.0 * gain / w * c * vx),
        vmp: pre * (vx * vx + c * c),
        cm: -4.0 * p.eta * p.ktilde / w * vx * vx,
    };
    let warnings = RegimeViolation::check("ktilde_over_gain", p.ktilde / gain, GAIN_RATIO_WARN)
        .into_iter()
        .collect();
    Ok(Flagged { value, warnings })
}

/// Second-order formula
/// `n_T(γ/8k̃ - γ/2ω) + 4k̃²/ω² + (2k̃/Γ)(1 + Γ²/2ω²)(1 + n_Tγ/4k̃)`.
pub fn nbar_second_order(osc: &Oscillator, p: &MeasurementParams) -> f64 {
    let (g, n_t) = (osc.gamma, osc.n_thermal);
    let (w, k, gain) = (p.effective_omega(osc), p.ktilde, p.gain);
    n_t * (g / (8.0 * k) - g / (2.0 * w))
        + 4.0 * k * k / (w * w)
        + 2.0 * k / gain * (1.0 + gain * gain / (2.0 * w * w)) * (1.0 + n_t * g / (4.0 * k))
}

/// First-order formula `(n_T/8)(γ/k̃) + 2k̃/Γ`.
pub fn nbar_first_order(osc: &Oscillator, p: &MeasurementParams) -> f64 {
    osc.n_thermal / 8.0 * osc.gamma / p.ktilde + 2.0 * p.ktilde / p.gain
}

pub fn epsilons(osc: &Oscillator, p: &MeasurementParams) -> Vec<(&'static str, f64)> {
    let w = p.effective_omega(osc);
    let mut eps = vec![("eps6", p.ktilde / w)];
    if p.ktilde > 0.0 {
        eps.push(("eps5", osc.heating_rate() / p.ktilde));
        eps.push(("gamma_over_ktilde", osc.gamma / p.ktilde));
    }
    if p.gain > 0.0 {
        eps.push(("ktilde_over_gain", p.ktilde / p.gain));
        eps.push(("gain_over_omega", p.gain / w));
    }
    eps
}

fn formula_report(nbar: f64, osc: &Oscillator, p: &MeasurementParams) -> CoolingReport {
    let mut r = CoolingReport::new(nbar, Method::Perturbative);
    for (name, v) in epsilons(osc, p) {
        r.epsilons.insert(name.to_string(), v);
        let threshold = match name {
            "gamma_over_ktilde" => Q_WARN,
            "ktilde_over_gain" => GAIN_RATIO_WARN,
            "gain_over_omega" => f64::INFINITY,
            _ => EPSILON_WARN,
        };
        r.warnings
            .extend(RegimeViolation::check(name, v, threshold));
    }
    r
}

/// The exact pipeline together with both printed truncations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementReport {
    /// Numeric Riccati plus exact variance-of-means solve.
    pub exact: CoolingReport,
    /// Second-order formula, when `k̃ > 0` and `Γ > 0`.
    pub second_order: Option<CoolingReport>,
    /// First-order formula, when `k̃ > 0` and `Γ > 0`.
    pub first_order: Option<CoolingReport>,
    pub conditional: ConditionalVariances,
    pub means: MeanVariances,
    pub total: TotalVariances,
}

/// Steady n̄ of the closed loop.
pub fn nbar_total(osc: &Oscillator, p: &MeasurementParams) -> Result<MeasurementReport> {
    let conditional = if p.ktilde == 0.0 {
        ConditionalVariances::thermal(osc)
    } else {
        conditional_steady_numeric(osc, p)?
    };
    let means = if p.ktilde == 0.0 {
        MeanVariances::default()
    } else {
        mean_variances_steady(osc, p, &conditional)?
    };
    let total = TotalVariances::from_parts(&conditional, &means);
    let mut exact =
        CoolingReport::with_moments(total.vx, total.vp, total.nbar(), Method::ExactRiccati);
    for (name, v) in epsilons(osc, p) {
        exact.epsilons.insert(name.to_string(), v);
    }
    exact.extras.insert("xp".into(), total.c);
    let (second_order, first_order) = if p.ktilde > 0.0 && p.gain > 0.0 {
        let second = nbar_second_order(osc, p);
        let first = nbar_first_order(osc, p);
        exact.extras.insert("nbar_second_order".into(), second);
        exact.extras.insert("nbar_first_order".into(), first);
        (
            Some(formula_report(second, osc, p)),
            Some(formula_report(first, osc, p)),
        )
    } else {
        (None, None)
    };
    Ok(MeasurementReport {
        exact,
        second_order,
        first_order,
        conditional,
        means,
        total,
    })
}

/// `k̃_opt = (1/4)√(n_TγΓ)`.
pub fn ktilde_opt(osc: &Oscillator, gain: f64) -> Result<f64> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::invalid("gain", "must be positive"));
    }
    Ok(0.25 * (osc.heating_rate() * gain).sqrt())
}

/// `n̄ = (√2 + 1/2)√(n_Tγ/Γ)` with cooling factor `R = n_T/n̄`.
pub fn nbar_min_meas(osc: &Oscillator, gain: f64) -> Result<CoolingReport> {
    let k = ktilde_opt(osc, gain)?;
    let nbar = NMIN_COEFFICIENT * (osc.heating_rate() / gain).sqrt();
    let mut r = CoolingReport::new(nbar, Method::Formula);
    if nbar > 0.0 {
        r.cooling_factor = Some(osc.n_thermal / nbar);
    }
    r.extras.insert("coefficient".into(), NMIN_COEFFICIENT);
    r.extras.insert("ktilde_opt".into(), k);
    r.warnings.extend(RegimeViolation::check(
        "ktilde_over_gain",
        k / gain,
        GAIN_RATIO_WARN,
    ));
    r.warnings.extend(RegimeViolation::check(
        "gain_over_omega",
        gain / osc.omega,
        1.0,
    ));
    Ok(r)
}

fn exact_nbar_or_inf(osc: &Oscillator, p: &MeasurementParams) -> f64 {
    nbar_total(osc, p)
        .map(|r| r.exact.nbar)
        .unwrap_or(f64::INFINITY)
}

/// Golden-section minimum of the exact n̄ over `k̃ ∈ [k̃_opt/10, 10k̃_opt]`.
pub fn minimize_ktilde_numeric(osc: &Oscillator, eta: f64, gain: f64) -> Result<Minimum> {
    let k0 = ktilde_opt(osc, gain)?;
    MeasurementParams::new(k0, eta, gain)?;
    Ok(golden_section_log(
        |k| {
            exact_nbar_or_inf(
                osc,
                &MeasurementParams {
                    ktilde: k,
                    eta,
                    gain,
                    delta: 0.0,
                },
            )
        },
        k0 / 10.0,
        10.0 * k0,
        1e-6,
    ))
}

/// Golden-section minimum of the second-order formula over `Γ ∈ [ω/100, 100ω]`.
pub fn minimize_gain_second_order(osc: &Oscillator, ktilde: f64, eta: f64) -> Result<Minimum> {
    MeasurementParams::new(ktilde, eta, 1.0)?;
    if ktilde <= 0.0 {
        return Err(Error::invalid("ktilde", "must be positive"));
    }
    Ok(golden_section_log(
        |gain| {
            nbar_second_order(
                osc,
                &MeasurementParams {
                    ktilde,
                    eta,
                    gain,
                    delta: 0.0,
                },
            )
        },
        osc.omega / 100.0,
        100.0 * osc.omega,
        1e-10,
    ))
}

/// Unconditional closed loop of plant and filter, state `(x, p, m_x, m_p)`.
///
/// The record is `dy = h x dt + dW` with `h = √(8ηk̃)`; the filter gain is
/// `h(Ṽx, C̃)` from the steady Riccati solution. Its steady covariance gives
/// the total variances independently of the variance-of-means equations.
pub fn closed_loop_system(
    osc: &Oscillator,
    p: &MeasurementParams,
    cv: &ConditionalVariances,
) -> Result<LinearStochasticSystem> {
    p.validate()?;
    let (g, vt) = (osc.gamma, osc.thermal_variance());
    let (w, gain) = (p.effective_omega(osc), p.gain);
    let h = (8.0 * p.eta * p.ktilde).sqrt();
    let (lx, lp) = (h * cv.vx, h * cv.c);
    #[rustfmt::skip]
    let drift = DMatrix::from_row_slice(4, 4, &[
        -g / 2.0, w,        0.0,                0.0,
        -w,       -g / 2.0, 0.0,                -gain,
        lx * h,   0.0,      -g / 2.0 - lx * h,  w,
        lp * h,   0.0,      -w - lp * h,        -g / 2.0 - gain,
    ]);
    #[rustfmt::skip]
    let noise = DMatrix::from_row_slice(4, 4, &[
        g * vt, 0.0,                  0.0,     0.0,
        0.0,    g * vt + 8.0 * p.ktilde, 0.0,  0.0,
        0.0,    0.0,                  lx * lx, lx * lp,
        0.0,    0.0,                  lx * lp, lp * lp,
    ]);
    LinearStochasticSystem::new(drift, noise)
}
