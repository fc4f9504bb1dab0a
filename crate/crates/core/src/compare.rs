//! Head-to-head comparison of the two controllers at a shared output
//! coupling rate k̃, plus the power-law fits of their optima against Q.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measfb::{self, MeasurementParams};
use crate::oscillator::Oscillator;
use crate::report::Value;
use crate::sideband::{self, SidebandParams};

/// Energy extraction rates `(8k̃, 8k̃κ/(8k̃ + κ))` of measurement feedback and
/// sideband cooling.
pub fn extraction_rates(ktilde: f64, kappa: f64) -> Result<(f64, f64)> {
    if !(ktilde > 0.0) {
        return Err(Error::invalid("ktilde", "must be positive"));
    }
    if !(kappa > 0.0) {
        return Err(Error::invalid("kappa", "must be positive"));
    }
    let r = 8.0 * ktilde;
    let sb = if kappa.is_infinite() {
        r
    } else {
        r * kappa / (r + kappa)
    };
    Ok((r, sb))
}

/// `n_T γ/8k̃ + (8k̃)²/16ω² + 2k̃/Γ`.
pub fn nbar_meas_dominant(osc: &Oscillator, ktilde: f64, gain: f64) -> f64 {
    let w = osc.omega;
    osc.heating_rate() / (8.0 * ktilde)
        + (8.0 * ktilde).powi(2) / (16.0 * w * w)
        + 2.0 * ktilde / gain
}

/// `n_T(γ/8k̃ + γ/κ) + (κ² + 2(8k̃)κ)/16ω²`.
pub fn nbar_sb_dominant(osc: &Oscillator, ktilde: f64, kappa: f64) -> f64 {
    let w = osc.omega;
    osc.heating_rate() * (1.0 / (8.0 * ktilde) + 1.0 / kappa)
        + (kappa * kappa + 16.0 * ktilde * kappa) / (16.0 * w * w)
}

/// Measurement feedback with unlimited feedback force, as printed:
/// `1.5(n_T/Q)^{2/3}`.
pub fn nbar_meas_infinite_gain(osc: &Oscillator) -> f64 {
    1.5 * (osc.n_thermal / osc.q()).powf(2.0 / 3.0)
}

/// Minimum over k̃ of the first two dominant measurement terms. It is
/// `0.75(n_T/Q)^{2/3}`, half the printed value.
pub fn nbar_meas_infinite_gain_minimum(osc: &Oscillator) -> f64 {
    0.75 * (osc.n_thermal / osc.q()).powf(2.0 / 3.0)
}

/// Time-modulated coherent coupling: `n̄ ~ n_T/Q`.
pub fn nbar_time_modulated(osc: &Oscillator) -> f64 {
    osc.n_thermal / osc.q()
}

/// Controller settings for one comparison point. `gain` defaults to ω/10 and
/// `kappa` to κ̂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scenario {
    pub ktilde: f64,
    pub gain: Option<f64>,
    pub kappa: Option<f64>,
    pub eta: f64,
}

impl Scenario {
    pub fn new(ktilde: f64) -> Self {
        Self {
            ktilde,
            gain: None,
            kappa: None,
            eta: 1.0,
        }
    }

    pub fn resolved_gain(&self, osc: &Oscillator) -> f64 {
        self.gain.unwrap_or(osc.omega / 10.0)
    }

    pub fn resolved_kappa(&self, osc: &Oscillator) -> f64 {
        self.kappa.unwrap_or_else(|| sideband::kappa_hat(osc))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub omega: f64,
    pub gamma: f64,
    pub q: f64,
    pub n_thermal: f64,
    pub ktilde: f64,
    pub gain: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub eta: f64,
    pub nbar_meas_exact: f64,
    pub nbar_meas_approx: f64,
    pub nbar_sb_exact: f64,
    pub nbar_sb_approx: f64,
    pub nbar_meas_infinite_gain: f64,
    pub nbar_time_modulated: f64,
    pub extraction_rate_meas: f64,
    pub extraction_rate_sb: f64,
    /// Largest small parameter behind each approximate column.
    pub max_eps_meas: f64,
    pub max_eps_sb: f64,
    pub regime_ok_meas: bool,
    pub regime_ok_sb: bool,
}

impl ComparisonRow {
    pub fn flat_fields(&self) -> Vec<(String, Value)> {
        let num = |k: &str, v: f64| (k.to_string(), Value::Num(v));
        vec![
            num("omega", self.omega),
            num("gamma", self.gamma),
            num("q", self.q),
            num("n_thermal", self.n_thermal),
            num("ktilde", self.ktilde),
            num("gain", self.gain),
            num("kappa", self.kappa),
            num("lambda", self.lambda),
            num("eta", self.eta),
            num("nbar_meas_exact", self.nbar_meas_exact),
            num("nbar_meas_approx", self.nbar_meas_approx),
            num("nbar_sb_exact", self.nbar_sb_exact),
            num("nbar_sb_approx", self.nbar_sb_approx),
            num("nbar_meas_infinite_gain", self.nbar_meas_infinite_gain),
            num("nbar_time_modulated", self.nbar_time_modulated),
            num("extraction_rate_meas", self.extraction_rate_meas),
            num("extraction_rate_sb", self.extraction_rate_sb),
            num("max_eps_meas", self.max_eps_meas),
            num("max_eps_sb", self.max_eps_sb),
            (
                "regime_ok_meas".to_string(),
                Value::Bool(self.regime_ok_meas),
            ),
            ("regime_ok_sb".to_string(), Value::Bool(self.regime_ok_sb)),
        ]
    }
}

fn max_of(eps: &[(&'static str, f64)]) -> f64 {
    eps.iter().fold(0.0f64, |m, (_, v)| m.max(*v))
}

pub fn head_to_head(osc: &Oscillator, s: &Scenario) -> Result<ComparisonRow> {
    let gain = s.resolved_gain(osc);
    let kappa = s.resolved_kappa(osc);
    let mp = MeasurementParams::new(s.ktilde, s.eta, gain)?;
    if s.ktilde <= 0.0 {
        return Err(Error::invalid("ktilde", "must be positive"));
    }
    let sp = SidebandParams::with_ktilde(kappa, s.ktilde)?;
    let meas = measfb::nbar_total(osc, &mp)?;
    let sb = sideband::nbar_exact(osc, &sp)?;
    let (rm, rs) = extraction_rates(s.ktilde, kappa)?;

    let h = osc.heating_rate();
    let eps_meas = [
        ("eps5", h / s.ktilde),
        ("eps6", s.ktilde / osc.omega),
        ("ktilde_over_gain", s.ktilde / gain),
    ];
    let mut eps_sb = sideband::epsilons(osc, &sp);
    eps_sb.push(("eps5", h / s.ktilde));
    eps_sb.push(("eps6", s.ktilde / osc.omega));
    let (max_eps_meas, max_eps_sb) = (max_of(&eps_meas), max_of(&eps_sb));

    Ok(ComparisonRow {
        omega: osc.omega,
        gamma: osc.gamma,
        q: osc.q(),
        n_thermal: osc.n_thermal,
        ktilde: s.ktilde,
        gain,
        kappa,
        lambda: sp.lambda(),
        eta: s.eta,
        nbar_meas_exact: meas.exact.nbar,
        nbar_meas_approx: nbar_meas_dominant(osc, s.ktilde, gain),
        nbar_sb_exact: sb.nbar,
        nbar_sb_approx: nbar_sb_dominant(osc, s.ktilde, kappa),
        nbar_meas_infinite_gain: nbar_meas_infinite_gain(osc),
        nbar_time_modulated: nbar_time_modulated(osc),
        extraction_rate_meas: rm,
        extraction_rate_sb: rs,
        max_eps_meas,
        max_eps_sb,
        regime_ok_meas: max_eps_meas <= measfb::EPSILON_WARN,
        regime_ok_sb: max_eps_sb <= sideband::EPSILON_WARN,
    })
}

/// `count` log-spaced k̃ values on `[k̃_opt/3, 30k̃_opt]`, with k̃_opt the
/// measurement optimum at feedback rate `gain`.
pub fn shared_ktilde_grid(osc: &Oscillator, gain: f64, count: usize) -> Result<Vec<f64>> {
    let k = measfb::ktilde_opt(osc, gain)?;
    crate::config::GridSpec::log(k / 3.0, 30.0 * k, count).map(|g| g.values())
}

/// Rows for every k̃ in `ktildes`, computed in parallel and returned in input order.
pub fn sweep(osc: &Oscillator, ktildes: &[f64], base: &Scenario) -> Result<Vec<ComparisonRow>> {
    ktildes
        .par_iter()
        .map(|&k| head_to_head(osc, &Scenario { ktilde: k, ..*base }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    /// Sideband cooling at `(κ_opt, λ_opt)`.
    Sideband,
    /// Measurement feedback at `k̃_opt` with `Γ = gain_ratio·ω`.
    Measurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPolicy {
    pub controller: Controller,
    /// Evaluate the optimum formula instead of the exact pipeline.
    pub formula_only: bool,
    pub gain_ratio: f64,
    pub eta: f64,
}

impl ScalingPolicy {
    pub fn sideband() -> Self {
        Self {
            controller: Controller::Sideband,
            formula_only: false,
            gain_ratio: 0.1,
            eta: 1.0,
        }
    }

    pub fn measurement() -> Self {
        Self {
            controller: Controller::Measurement,
            ..Self::sideband()
        }
    }

    pub fn formula(self) -> Self {
        Self {
            formula_only: true,
            ..self
        }
    }

    /// n̄ at the controller's optimum for this oscillator.
    pub fn optimum_nbar(&self, osc: &Oscillator) -> Result<f64> {
        match (self.controller, self.formula_only) {
            (Controller::Sideband, true) => Ok(sideband::nbar_min_sideband(osc)?.nbar),
            (Controller::Sideband, false) => {
                Ok(sideband::nbar_exact(osc, &sideband::optimal_params(osc)?)?.nbar)
            }
            (Controller::Measurement, formula) => {
                let gain = self.gain_ratio * osc.omega;
                if formula {
                    return Ok(measfb::nbar_min_meas(osc, gain)?.nbar);
                }
                let k = measfb::ktilde_opt(osc, gain)?;
                Ok(
                    measfb::nbar_total(osc, &MeasurementParams::new(k, self.eta, gain)?)?
                        .exact
                        .nbar,
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub controller: Controller,
    pub formula_only: bool,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub q: Vec<f64>,
    pub nbar: Vec<f64>,
}

/// Ordinary least squares `y = a + bx`: returns `(b, a, stderr(b))`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::InsufficientGrid(format!(
            "need at least 3 paired points, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientGrid("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    Ok((b, a, (rss / (nf - 2.0) / sxx).sqrt()))
}

/// Slope of `log n̄` against `log Q` at the optimum of one controller.
/// Needs at least 5 Q values spanning at least 3 decades.
pub fn scaling_fit(
    omega: f64,
    n_thermal: f64,
    qs: &[f64],
    policy: &ScalingPolicy,
) -> Result<ScalingFit> {
    if qs.len() < 5 {
        return Err(Error::InsufficientGrid(format!(
            "need at least 5 Q values, got {}",
            qs.len()
        )));
    }
    let (lo, hi) = qs.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &q| {
        (lo.min(q), hi.max(q))
    });
    if !(lo > 0.0) || (hi / lo).log10() < 3.0 - 1e-12 {
        return Err(Error::InsufficientGrid(format!(
            "Q grid must span 3 decades, got [{lo:e}, {hi:e}]"
        )));
    }
    let nbar: Vec<f64> = qs
        .par_iter()
        .map(|&q| policy.optimum_nbar(&Oscillator::from_q(omega, q, n_thermal)?))
        .collect::<Result<_>>()?;
    let x: Vec<f64> = qs.iter().map(|q| q.ln()).collect();
    let y: Vec<f64> = nbar.iter().map(|n| n.ln()).collect();
    let (slope, intercept, slope_stderr) = linear_fit(&x, &y)?;
    Ok(ScalingFit {
        controller: policy.controller,
        formula_only: policy.formula_only,
        slope,
        slope_stderr,
        intercept,
        q: qs.to_vec(),
        nbar,
    })
}
