//! Resolved-sideband (coherent feedback) cooling.
//!
//! The oscillator `(x, p)` couples at rate `λ = √(8k̃κ)` to an auxiliary mode
//! `(X, P)` damped at rate `κ`, in the frame where the auxiliary is resonant
//! with the oscillator. Half-rates `γ/2` and `κ/2` are written `half_gamma`
//! and `half_kappa`; the symbol Γ is reserved for the measurement feedback gain.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{self, CovarianceMatrix, LinearStochasticSystem};
use crate::optimize::{golden_section_log, Minimum};
use crate::oscillator::Oscillator;
use crate::quad::QuadOptions;
use crate::report::{CoolingReport, Method, RegimeViolation};

/// Threshold above which a small parameter invalidates the expansion.
pub const EPSILON_WARN: f64 = 0.3;

/// Auxiliary damping `κ` and coupling `λ`; `k̃ = λ²/8κ` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandParams {
    kappa: f64,
    lambda: f64,
}

impl SidebandParams {
    pub fn with_lambda(kappa: f64, lambda: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::invalid("kappa", "must be positive and finite"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be non-negative and finite"));
        }
        Ok(Self { kappa, lambda })
    }

    pub fn with_ktilde(kappa: f64, ktilde: f64) -> Result<Self> {
        if !(ktilde >= 0.0 && ktilde.is_finite()) {
            return Err(Error::invalid("ktilde", "must be non-negative and finite"));
        }
        Self::with_lambda(kappa, (8.0 * ktilde * kappa).sqrt())
    }

    /// Accepts `λ`, `k̃` or both; both must satisfy `λ² = 8k̃κ` to 1e-12.
    pub fn new(kappa: f64, lambda: Option<f64>, ktilde: Option<f64>) -> Result<Self> {
        match (lambda, ktilde) {
            (Some(l), None) => Self::with_lambda(kappa, l),
            (None, Some(k)) => Self::with_ktilde(kappa, k),
            (Some(l), Some(k)) => {
                let p = Self::with_lambda(kappa, l)?;
                let implied = 8.0 * k * kappa;
                if (l * l - implied).abs() > 1e-12 * implied.max(l * l) {
                    return Err(Error::invalid(
                        "lambda",
                        format!("λ² = {:e} is inconsistent with 8k̃κ = {implied:e}", l * l),
                    ));
                }
                Ok(p)
            }
            (None, None) => Err(Error::invalid(
                "lambda",
                "either lambda or ktilde is required",
            )),
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn ktilde(&self) -> f64 {
        self.lambda * self.lambda / (8.0 * self.kappa)
    }
}

/// Drift and noise of the coupled network, state `(x, p, X, P)`.
pub fn build_sideband_system(osc: &Oscillator, p: &SidebandParams) -> LinearStochasticSystem {
    let (w, g, k, l) = (osc.omega, osc.gamma, p.kappa, p.lambda);
    #[rustfmt::skip]
    let drift = DMatrix::from_row_slice(4, 4, &[
        -g / 2.0, w,   0.0,      0.0,
        -w,       -g / 2.0, -l,  0.0,
        0.0,      0.0, -k / 2.0, w,
        -l,       0.0, -w,       -k / 2.0,
    ]);
    let vt = osc.thermal_variance();
    let noise = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![g * vt, g * vt, k, k]));
    LinearStochasticSystem::new(drift, noise).expect("diagonal noise with non-negative entries")
}

/// Source of the excess covariance `Σ - I` (the vacuum part is removed).
fn excess_source(sys: &LinearStochasticSystem) -> DMatrix<f64> {
    let m = sys.drift();
    sys.noise_cov() + m + m.transpose()
}

fn require_stable(sys: &LinearStochasticSystem) -> Result<()> {
    if sys.is_stable() {
        Ok(())
    } else {
        Err(Error::UnstableSystem {
            max_real: sys.spectral_abscissa(),
        })
    }
}

pub fn epsilons(osc: &Oscillator, p: &SidebandParams) -> Vec<(&'static str, f64)> {
    let h = osc.heating_rate();
    vec![
        ("eps1", h / p.kappa),
        ("eps2", h / p.lambda),
        ("eps3", p.kappa / osc.omega),
        ("eps4", p.lambda / osc.omega),
    ]
}

fn attach_epsilons(report: &mut CoolingReport, eps: &[(&'static str, f64)], warn: bool) {
    for &(name, v) in eps {
        report.epsilons.insert(name.to_string(), v);
        if warn {
            report
                .warnings
                .extend(RegimeViolation::check(name, v, EPSILON_WARN));
        }
    }
}

/// Full steady covariance of `(x, p, X, P)` (Lyapunov route).
pub fn steady_covariance(osc: &Oscillator, p: &SidebandParams) -> Result<CovarianceMatrix> {
    let sys = build_sideband_system(osc, p);
    require_stable(&sys)?;
    let excess = linsys::solve_lyapunov(sys.drift(), &excess_source(&sys))?;
    Ok(CovarianceMatrix::from_symmetric(
        excess + DMatrix::identity(4, 4),
    ))
}

/// Excess second moments `(⟨x²⟩ - 1, ⟨p²⟩ - 1)` by the chosen exact route.
fn excess_moments(sys: &LinearStochasticSystem, method: Method) -> Result<(f64, f64)> {
    require_stable(sys)?;
    let src = excess_source(sys);
    let m = sys.drift();
    let by_weights = |w: [f64; 4]| -> Result<f64> {
        match method {
            Method::ExactSpectral => linsys::closed_form_weighted(m, &src, &w),
            Method::ExactQuadrature => {
                let opts = QuadOptions {
                    abs_tol: 1e-15,
                    rel_tol: 5e-10,
                    ..Default::default()
                };
                Ok(linsys::integrate_weighted_quadrature(m, &src, &w, &opts)?.value)
            }
            _ => unreachable!(),
        }
    };
    match method {
        Method::ExactLyapunov => {
            let d = linsys::solve_lyapunov(m, &src)?;
            Ok((d[(0, 0)], d[(1, 1)]))
        }
        Method::ExactSpectral | Method::ExactQuadrature => Ok((
            by_weights([1.0, 0.0, 0.0, 0.0])?,
            by_weights([0.0, 1.0, 0.0, 0.0])?,
        )),
        other => Err(Error::invalid(
            "method",
            format!("{} is not an exact sideband route", other.as_str()),
        )),
    }
}

/// Exact steady-state n̄ by rational spectral integration.
pub fn nbar_exact(osc: &Oscillator, p: &SidebandParams) -> Result<CoolingReport> {
    nbar_exact_with(osc, p, Method::ExactSpectral)
}

/// Exact steady-state n̄ by `ExactSpectral`, `ExactLyapunov` or `ExactQuadrature`.
pub fn nbar_exact_with(
    osc: &Oscillator,
    p: &SidebandParams,
    method: Method,
) -> Result<CoolingReport> {
    let sys = build_sideband_system(osc, p);
    let (dx, dp) = excess_moments(&sys, method)?;
    let mut r = CoolingReport::with_moments(1.0 + dx, 1.0 + dp, (dx + dp) / 4.0, method);
    attach_epsilons(&mut r, &epsilons(osc, p), false);
    Ok(r)
}

/// Second-order expansion of n̄ in the small parameters.
pub fn nbar_perturbative(osc: &Oscillator, p: &SidebandParams) -> Result<CoolingReport> {
    if p.lambda == 0.0 {
        return Err(Error::invalid("lambda", "the expansion needs lambda > 0"));
    }
    let (w, g, n_t) = (osc.omega, osc.gamma, osc.n_thermal);
    let (k, l) = (p.kappa, p.lambda);
    let gk = g / k;
    let s = (k / l).powi(2);
    let nbar = n_t * gk * (1.0 + s) - 0.5 * n_t * gk * gk * (1.0 + s + s * s)
        + (k / w).powi(2) / 16.0
        + (l / w).powi(2) / 8.0;
    let mut r = CoolingReport::new(nbar, Method::Perturbative);
    attach_epsilons(&mut r, &epsilons(osc, p), true);
    Ok(r)
}

/// `λ_opt = √(ω√(8γκn_T)(1 - γ/4κ))`.
pub fn lambda_opt(osc: &Oscillator, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::invalid("kappa", "must be positive"));
    }
    let g = osc.gamma;
    if g >= 4.0 * kappa {
        return Err(Error::InvalidRegime(format!(
            "lambda_opt needs gamma < 4 kappa (gamma = {g:e}, kappa = {kappa:e})"
        )));
    }
    Ok((osc.omega * (8.0 * g * kappa * osc.n_thermal).sqrt() * (1.0 - g / (4.0 * kappa))).sqrt())
}

/// `d = [√2(√5 - 1)]^{2/3}`.
pub fn d_coefficient() -> f64 {
    (2f64.sqrt() * (5f64.sqrt() - 1.0)).powf(2.0 / 3.0)
}

/// `c = 1/d + √(d/2) + d²/16`.
pub fn c_coefficient() -> f64 {
    let d = d_coefficient();
    1.0 / d + (d / 2.0).sqrt() + d * d / 16.0
}

/// `κ_opt = d(γn_Tω²)^{1/3}`.
pub fn kappa_opt(osc: &Oscillator) -> f64 {
    d_coefficient() * (osc.heating_rate() * osc.omega * osc.omega).cbrt()
}

/// The formula optimum `(κ_opt, λ_opt(κ_opt))`.
pub fn optimal_params(osc: &Oscillator) -> Result<SidebandParams> {
    osc.require_damped()?;
    if osc.n_thermal <= 0.0 {
        return Err(Error::invalid(
            "n_thermal",
            "the optimum needs n_thermal > 0",
        ));
    }
    let kappa = kappa_opt(osc);
    SidebandParams::with_lambda(kappa, lambda_opt(osc, kappa)?)
}

/// `n̄ = c(n_T/Q)^{2/3}` with cooling factor `R = n_T/n̄`.
pub fn nbar_min_sideband(osc: &Oscillator) -> Result<CoolingReport> {
    let ratio = osc.n_thermal / osc.q();
    let c = c_coefficient();
    let nbar = c * ratio.powf(2.0 / 3.0);
    let mut r = CoolingReport::new(nbar, Method::Formula);
    if nbar > 0.0 {
        r.cooling_factor = Some(osc.n_thermal / nbar);
    }
    r.extras.insert("c".into(), c);
    r.extras.insert("d".into(), d_coefficient());
    r.extras.insert("kappa_opt".into(), kappa_opt(osc));
    if let Ok(l) = lambda_opt(osc, kappa_opt(osc)) {
        r.extras.insert("lambda_opt".into(), l);
    }
    r.extras.insert(
        "printed_cooling_factor".into(),
        c * (osc.n_thermal * osc.q() * osc.q()).cbrt(),
    );
    r.warnings
        .extend(RegimeViolation::check("nT_over_Q", ratio, 1e-2));
    Ok(r)
}

/// The expansion with `λ² = 8k̃κ` substituted, as a function of `κ`.
pub fn nbar_perturbative_ktilde(osc: &Oscillator, ktilde: f64, kappa: f64) -> f64 {
    let (w, g, n_t) = (osc.omega, osc.gamma, osc.n_thermal);
    let gk = g / kappa;
    let s = kappa / (8.0 * ktilde);
    n_t * (gk * (1.0 + s) - 0.5 * gk * gk * (1.0 + s + s * s))
        + (kappa / w).powi(2) / 16.0
        + ktilde * kappa / (w * w)
}

/// `κ̂ = 2(n_Tγω²)^{1/3}`.
pub fn kappa_hat(osc: &Oscillator) -> f64 {
    2.0 * (osc.heating_rate() * osc.omega * osc.omega).cbrt()
}

/// `n̄ ≤ (n_T/8)(γ/k̃) + A(k̃/ω) + B` with `A = 2(n_T/Q)^{1/3}`, `B = (5/8)(n_T/Q)^{2/3}`.
///
/// `extras` carries `a`, `b`, `kappa_hat` and `nbar_at_kappa_hat`, the
/// κ-dependent expansion evaluated at κ̂.
pub fn nbar_bound_fixed_ktilde(osc: &Oscillator, ktilde: f64) -> Result<CoolingReport> {
    if !(ktilde > 0.0) {
        return Err(Error::invalid("ktilde", "must be positive"));
    }
    let ratio = osc.n_thermal / osc.q();
    let a = 2.0 * ratio.cbrt();
    let b = 0.625 * ratio.powf(2.0 / 3.0);
    let nbar = osc.n_thermal / 8.0 * osc.gamma / ktilde + a * ktilde / osc.omega + b;
    let kh = kappa_hat(osc);
    let mut r = CoolingReport::new(nbar, Method::Formula);
    r.extras.insert("a".into(), a);
    r.extras.insert("b".into(), b);
    r.extras.insert("kappa_hat".into(), kh);
    r.extras.insert(
        "nbar_at_kappa_hat".into(),
        nbar_perturbative_ktilde(osc, ktilde, kh),
    );
    let h = osc.heating_rate();
    let eps = [
        ("eps1", h / kh),
        ("eps3", kh / osc.omega),
        ("eps5", h / ktilde),
        ("eps6", ktilde / osc.omega),
    ];
    attach_epsilons(&mut r, &eps, true);
    Ok(r)
}

fn exact_or_inf(osc: &Oscillator, kappa: f64, lambda: f64) -> f64 {
    SidebandParams::with_lambda(kappa, lambda)
        .and_then(|p| nbar_exact(osc, &p))
        .map(|r| r.nbar)
        .unwrap_or(f64::INFINITY)
}

/// Golden-section minimum of exact n̄ over `λ ∈ [λ_opt/10, 10λ_opt]`.
pub fn minimize_lambda_numeric(osc: &Oscillator, kappa: f64) -> Result<Minimum> {
    let l0 = lambda_opt(osc, kappa)?;
    Ok(golden_section_log(
        |l| exact_or_inf(osc, kappa, l),
        l0 / 10.0,
        10.0 * l0,
        1e-6,
    ))
}

/// Joint numeric optimum over `(κ, λ)`, searching `κ ∈ [κ_opt/10, 10κ_opt]`.
pub fn minimize_joint_numeric(osc: &Oscillator) -> Result<(SidebandParams, f64)> {
    let k0 = optimal_params(osc)?.kappa;
    let outer = golden_section_log(
        |k| {
            minimize_lambda_numeric(osc, k)
                .map(|m| m.f)
                .unwrap_or(f64::INFINITY)
        },
        k0 / 10.0,
        10.0 * k0,
        1e-5,
    );
    let inner = minimize_lambda_numeric(osc, outer.x)?;
    Ok((SidebandParams::with_lambda(outer.x, inner.x)?, inner.f))
}

struct Symbols {
    omega: f64,
    lambda: f64,
    half_gamma: f64,
    half_kappa: f64,
}

impl Symbols {
    fn new(osc: &Oscillator, p: &SidebandParams) -> Self {
        Self {
            omega: osc.omega,
            lambda: p.lambda,
            half_gamma: osc.gamma / 2.0,
            half_kappa: p.kappa / 2.0,
        }
    }

    fn f(&self, alpha: f64, nu: f64) -> Complex64 {
        Complex64::new(alpha, -nu)
    }

    fn g(&self, alpha: f64, nu: f64) -> Complex64 {
        let i = Complex64::i();
        (i * self.omega + i * nu - alpha) * (i * self.omega - i * nu + alpha)
    }

    fn d(&self, nu: f64) -> Complex64 {
        let w2 = self.omega * self.omega;
        let fk = self.f(self.half_kappa, nu);
        let fg = self.f(self.half_gamma, nu);
        (fk * fk + w2) * (fg * fg + w2) - self.lambda * self.lambda * w2
    }
}

/// The symbolic inverse of `M + iνI` entry by entry, in terms of
/// `f(α) = α - iν`, `g(α) = (iω + iν - α)(iω - iν + α)` and
/// `D(ν) = [f(κ/2)² + ω²][f(γ/2)² + ω²] - λ²ω²`.
///
/// This is `(M + iνI)⁻¹`, the negative of [`linsys::transfer_matrix`].
pub fn symbolic_inverse(osc: &Oscillator, p: &SidebandParams, nu: f64) -> DMatrix<Complex64> {
    let s = Symbols::new(osc, p);
    let (w, l) = (s.omega, s.lambda);
    let fg = s.f(s.half_gamma, nu);
    let fk = s.f(s.half_kappa, nu);
    let gg = s.g(s.half_gamma, nu);
    let gk = s.g(s.half_kappa, nu);
    let c = |x: f64| Complex64::new(x, 0.0);
    #[rustfmt::skip]
    let entries = [
        fg * gk,                     gk * w,        fk * (w * l),      c(w * w * l),
        -gk * w - c(l * l * w),      fg * gk,       fg * fk * l,       fg * (w * l),
        fg * (w * l),                c(w * w * l),  fk * gg,           gg * w,
        fg * fk * l,                 fk * (w * l),  -gg * w - c(l * l * w), fk * gg,
    ];
    let d = s.d(nu);
    DMatrix::from_row_slice(4, 4, &entries).map(|z| z / d)
}

/// Oscillator position spectrum in closed form.
pub fn spectrum_x(osc: &Oscillator, p: &SidebandParams, nu: f64) -> f64 {
    let s = Symbols::new(osc, p);
    let w2 = s.omega * s.omega;
    let lw2 = (s.lambda * s.omega).powi(2);
    let vt = osc.thermal_variance();
    let num = 2.0
        * s.half_gamma
        * vt
        * s.g(s.half_kappa, nu).norm_sqr()
        * (s.f(s.half_gamma, nu).norm_sqr() + w2)
        + 2.0 * s.half_kappa * lw2 * (s.f(s.half_kappa, nu).norm_sqr() + w2);
    num / s.d(nu).norm_sqr()
}

/// Oscillator momentum spectrum in closed form.
pub fn spectrum_p(osc: &Oscillator, p: &SidebandParams, nu: f64) -> f64 {
    let s = Symbols::new(osc, p);
    let w2 = s.omega * s.omega;
    let l2w2 = (s.lambda * s.omega).powi(2);
    let vt = osc.thermal_variance();
    let gk = s.g(s.half_kappa, nu);
    let thermal = gk.norm_sqr() * (s.f(s.half_gamma, nu).norm_sqr() + w2)
        + 2.0 * l2w2 * gk.re
        + (s.lambda * s.lambda * s.omega).powi(2);
    let aux = l2w2 * s.f(s.half_gamma, nu).norm_sqr() * (s.f(s.half_kappa, nu).norm_sqr() + w2);
    2.0 * (s.half_gamma * vt * thermal + s.half_kappa * aux) / s.d(nu).norm_sqr()
}

/// Printed closed-form steady moments next to the exact ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedFormDiscrepancy {
    pub printed_x2: f64,
    pub printed_p2: f64,
    pub exact_x2: f64,
    pub exact_p2: f64,
}

impl ClosedFormDiscrepancy {
    pub fn max_relative_error(&self) -> f64 {
        let ex = ((self.printed_x2 - self.exact_x2) / self.exact_x2).abs();
        let ep = ((self.printed_p2 - self.exact_p2) / self.exact_p2).abs();
        ex.max(ep)
    }
}

/// `(⟨x²⟩, ⟨p²⟩)` from the printed coefficient formulas, evaluated verbatim.
pub fn printed_closed_form_moments(osc: &Oscillator, p: &SidebandParams) -> (f64, f64) {
    let s = Symbols::new(osc, p);
    let (w, l) = (s.omega, s.lambda);
    let (hg, hk) = (s.half_gamma, s.half_kappa);
    let (w2, l2) = (w * w, l * l);
    let a = hg * hg + w2;
    let b = hk * hk + w2;
    let c = hk * hk - w2;
    let r = hg + hk;
    let a1 = r * hg * (b * b + a * (b - 4.0 * w2) + l2 * w2)
        + 4.0 * hg * (2.0 * r * r + b) * (a * hk + b * hg);
    let a2 = r * hk * l2 * w2;
    let b1 = r * hg * a * b * b * (r * r + hg * hk + l2 * w2);
    let b2 = r * hg * b * l2 * w2 * (r * r + hg * hk + l2 * w2);
    let g1 = r
        * hg
        * (b * b + a * (2.0 * c - b) * (r + 2.0 * hk + a / r) * (a * hk + b * hg) + 3.0 * w2 * l2);
    let g2 = l2 * hk * (a * hk + b * hg + r * (a + c + w2));
    let j1 = r * hg * (r * r + hg * hk + w2) * (l2 * l2 * w2 + a * b * b - 2.0 * b * l2 * w2);
    let j2 = r * b * l2 * hg * hg * hk * (r * r + hg * hk + w2);
    let f = 2.0 * r * r * (hg * hk * (r * r + 4.0 * w2) - l2 * w2);
    let cc = a * b - l2 * w2;
    let vt = osc.thermal_variance();
    let x2 = (vt * a1 + a2) / f + (vt * b1 + b2) / (cc * f);
    let p2 = (vt * g1 + g2) / f + (vt * j1 + j2) / (cc * f);
    (x2, p2)
}

/// Compares the printed closed forms with the Lyapunov steady state.
pub fn closed_form_discrepancy(
    osc: &Oscillator,
    p: &SidebandParams,
) -> Result<ClosedFormDiscrepancy> {
    let exact = nbar_exact_with(osc, p, Method::ExactLyapunov)?;
    let (printed_x2, printed_p2) = printed_closed_form_moments(osc, p);
    Ok(ClosedFormDiscrepancy {
        printed_x2,
        printed_p2,
        exact_x2: exact.x2.unwrap_or(f64::NAN),
        exact_p2: exact.p2.unwrap_or(f64::NAN),
    })
}
