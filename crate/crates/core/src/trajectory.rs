//! Monte Carlo ensembles of the conditional means under continuous position
//! measurement and momentum feedback.
//!
//! Each trajectory integrates
//!
//! ```text
//! d⟨x̃⟩ = (-γ/2 ⟨x̃⟩ + ω⟨p̃⟩) dt + h Ṽx dW
//! d⟨p̃⟩ = (-ω⟨x̃⟩ - (γ/2 + Γ)⟨p̃⟩) dt + h C̃ dW,      h = √(8ηk̃)
//! ```
//!
//! with the conditional variances advanced deterministically alongside. The
//! Wiener increment is never used directly: the step first emits the record
//! increment `dY = h⟨x̃⟩dt + dW` and the filter then consumes the innovation
//! `dY - h⟨x̃⟩dt`, so that [`replay_record`] reproduces a path bit for bit.

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measfb::{self, ConditionalVariances, MeanVariances, MeasurementParams, TotalVariances};
use crate::oscillator::Oscillator;
use crate::report::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact drift propagator, noise gain carried to the step midpoint.
    #[default]
    ExponentialMidpoint,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialConditional {
    /// Start the filter at its steady Riccati solution.
    #[default]
    Steady,
    /// Start from the thermal state `(Ṽᵀ, Ṽᵀ, 0)`.
    Thermal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub n_traj: usize,
    pub seed: u64,
    /// Statistics are kept every `record_stride` steps.
    pub record_stride: usize,
    pub scheme: Scheme,
    /// Each step's Wiener increment is the sum of this many finer ones, so a
    /// run at `dt` with refinement 2 shares its noise with a run at `dt/2`.
    pub brownian_refinement: usize,
    pub initial_mean: [f64; 2],
    pub initial_conditional: InitialConditional,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            n_steps: 4000,
            n_traj: 1000,
            seed: 0,
            record_stride: 10,
            scheme: Scheme::default(),
            brownian_refinement: 1,
            initial_mean: [0.0, 0.0],
            initial_conditional: InitialConditional::default(),
        }
    }
}

impl TrajectoryConfig {
    /// `0.02·2π / max(ω', Γ)`.
    pub fn max_dt(osc: &Oscillator, p: &MeasurementParams) -> f64 {
        0.02 * std::f64::consts::TAU / p.effective_omega(osc).max(p.gain)
    }

    pub fn validate(&self, osc: &Oscillator, p: &MeasurementParams) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let bound = Self::max_dt(osc, p);
        if self.dt > bound {
            return Err(Error::StepTooLarge { dt: self.dt, bound });
        }
        if self.n_traj == 0 {
            return Err(Error::invalid("n_traj", "must be at least 1"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps", "must be at least 1"));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride", "must be at least 1"));
        }
        if self.brownian_refinement == 0 {
            return Err(Error::invalid("brownian_refinement", "must be at least 1"));
        }
        if !self.initial_mean.iter().all(|m| m.is_finite()) {
            return Err(Error::invalid("initial_mean", "must be finite"));
        }
        Ok(())
    }

    /// Step indices at which statistics are kept: every stride, plus the last step.
    fn record_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = (0..=self.n_steps).step_by(self.record_stride).collect();
        if *steps.last().unwrap() != self.n_steps {
            steps.push(self.n_steps);
        }
        steps
    }
}

/// Deterministic part shared by every trajectory.
struct Plan {
    h: f64,
    drift: Matrix2<f64>,
    propagator: Matrix2<f64>,
    half_propagator: Matrix2<f64>,
    /// Noise gain `h(Ṽx, C̃)` at the start of each step.
    gains: Vec<Vector2<f64>>,
    conditional: Vec<ConditionalVariances>,
}

fn rk4_riccati(
    osc: &Oscillator,
    p: &MeasurementParams,
    v: ConditionalVariances,
    dt: f64,
) -> ConditionalVariances {
    let f = |s: &ConditionalVariances| {
        let [dvx, dvp, dc] = measfb::riccati_rhs(osc, p, s);
        [dvx, dvp, dc]
    };
    let add = |s: &ConditionalVariances, k: [f64; 3], a: f64| ConditionalVariances {
        vx: s.vx + a * k[0],
        vp: s.vp + a * k[1],
        c: s.c + a * k[2],
    };
    let k1 = f(&v);
    let k2 = f(&add(&v, k1, dt / 2.0));
    let k3 = f(&add(&v, k2, dt / 2.0));
    let k4 = f(&add(&v, k3, dt));
    let mut k = [0.0; 3];
    for i in 0..3 {
        k[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    add(&v, k, dt)
}

fn make_plan(osc: &Oscillator, p: &MeasurementParams, cfg: &TrajectoryConfig) -> Result<Plan> {
    p.validate()?;
    cfg.validate(osc, p)?;
    let (g, w) = (osc.gamma, p.effective_omega(osc));
    let drift = Matrix2::new(-g / 2.0, w, -w, -g / 2.0 - p.gain);
    let h = (8.0 * p.eta * p.ktilde).sqrt();
    let mut v = match cfg.initial_conditional {
        InitialConditional::Thermal => ConditionalVariances::thermal(osc),
        InitialConditional::Steady if p.ktilde == 0.0 => ConditionalVariances::thermal(osc),
        InitialConditional::Steady => measfb::conditional_steady_numeric(osc, p)?,
    };
    let mut gains = Vec::with_capacity(cfg.n_steps);
    let mut conditional = Vec::with_capacity(cfg.n_steps + 1);
    for _ in 0..cfg.n_steps {
        conditional.push(v);
        gains.push(Vector2::new(h * v.vx, h * v.c));
        v = rk4_riccati(osc, p, v, cfg.dt);
    }
    conditional.push(v);
    Ok(Plan {
        h,
        drift,
        propagator: (drift * cfg.dt).exp(),
        half_propagator: (drift * (cfg.dt / 2.0)).exp(),
        gains,
        conditional,
    })
}

impl Plan {
    fn step(&self, scheme: Scheme, dt: f64, m: Vector2<f64>, dy: f64, n: usize) -> Vector2<f64> {
        let innovation = dy - self.h * m[0] * dt;
        match scheme {
            Scheme::ExponentialMidpoint => {
                self.propagator * m + self.half_propagator * self.gains[n] * innovation
            }
            Scheme::EulerMaruyama => m + self.drift * m * dt + self.gains[n] * innovation,
        }
    }

    fn record_increment(&self, dt: f64, m: &Vector2<f64>, dw: f64) -> f64 {
        self.h * m[0] * dt + dw
    }
}

fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn wiener_increment(rng: &mut ChaCha8Rng, dt: f64, refinement: usize) -> f64 {
    let scale = (dt / refinement as f64).sqrt();
    (0..refinement)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .sum()
}

/// Mean path, state after each step recorded at `record_steps`, with the
/// record increment of the step that ended there (0 at t = 0).
fn run_path(plan: &Plan, cfg: &TrajectoryConfig, index: u64, steps: &[usize]) -> Vec<[f64; 3]> {
    let mut rng = trajectory_rng(cfg.seed, index);
    let mut m = Vector2::from(cfg.initial_mean);
    let mut out = Vec::with_capacity(steps.len());
    out.push([m[0], m[1], 0.0]);
    let mut next = 1;
    for n in 0..cfg.n_steps {
        let dw = wiener_increment(&mut rng, cfg.dt, cfg.brownian_refinement);
        let dy = plan.record_increment(cfg.dt, &m, dw);
        m = plan.step(cfg.scheme, cfg.dt, m, dy, n);
        if next < steps.len() && steps[next] == n + 1 {
            out.push([m[0], m[1], dy]);
            next += 1;
        }
    }
    out
}

/// Running sums for the moments of `(x, p)` about a fixed shift.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    x: f64,
    p: f64,
    xx: f64,
    pp: f64,
    xp: f64,
    xxx: f64,
    ppp: f64,
    xxp: f64,
    xpp: f64,
    xxxx: f64,
    pppp: f64,
    xxpp: f64,
    dy: f64,
}

impl Moments {
    fn push(&mut self, x: f64, p: f64, dy: f64) {
        self.n += 1.0;
        self.x += x;
        self.p += p;
        self.xx += x * x;
        self.pp += p * p;
        self.xp += x * p;
        self.xxx += x * x * x;
        self.ppp += p * p * p;
        self.xxp += x * x * p;
        self.xpp += x * p * p;
        self.xxxx += x * x * x * x;
        self.pppp += p * p * p * p;
        self.xxpp += x * x * p * p;
        self.dy += dy;
    }

    /// Central second moments with their standard errors.
    fn summarize(&self) -> (MeanVariances, MeanVariances, [f64; 2]) {
        let n = self.n;
        let (a, b) = (self.x / n, self.p / n);
        let (ex2, ep2, exp) = (self.xx / n, self.pp / n, self.xp / n);
        let vx = ex2 - a * a;
        let vp = ep2 - b * b;
        let c = exp - a * b;
        let m4x = self.xxxx / n - 4.0 * a * self.xxx / n + 6.0 * a * a * ex2 - 3.0 * a.powi(4);
        let m4p = self.pppp / n - 4.0 * b * self.ppp / n + 6.0 * b * b * ep2 - 3.0 * b.powi(4);
        let m22 = self.xxpp / n - 2.0 * b * self.xxp / n - 2.0 * a * self.xpp / n
            + b * b * ex2
            + a * a * ep2
            + 4.0 * a * b * exp
            - 3.0 * a * a * b * b;
        let se = |m4: f64, v: f64| ((m4 - v * v).max(0.0) / n).sqrt();
        (
            MeanVariances {
                vmx: vx.max(0.0),
                vmp: vp.max(0.0),
                cm: c,
            },
            MeanVariances {
                vmx: se(m4x, vx),
                vmp: se(m4p, vp),
                cm: se(m22, c),
            },
            [a, b],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    /// Ensemble variances of the conditional means at each time.
    pub means: Vec<MeanVariances>,
    pub standard_errors: Vec<MeanVariances>,
    /// Ensemble average of `(⟨x̃⟩, ⟨p̃⟩)`.
    pub ensemble_mean: Vec<[f64; 2]>,
    /// Ensemble average of the record increment of the step ending at each time.
    pub mean_record: Vec<f64>,
    /// Deterministic conditional variances at each time.
    pub conditional: Vec<ConditionalVariances>,
    pub n_traj: usize,
    /// Change of `Vmx + Vmp` over the last 10% of the run and its standard error.
    pub window_drift: f64,
    pub window_drift_se: f64,
    pub converged: bool,
}

impl EnsembleStats {
    pub fn final_means(&self) -> MeanVariances {
        *self.means.last().unwrap()
    }

    pub fn final_standard_errors(&self) -> MeanVariances {
        *self.standard_errors.last().unwrap()
    }

    pub fn final_conditional(&self) -> ConditionalVariances {
        *self.conditional.last().unwrap()
    }

    pub fn final_total(&self) -> TotalVariances {
        TotalVariances::from_parts(&self.final_conditional(), &self.final_means())
    }

    pub fn csv_rows(&self) -> Vec<Vec<(String, Value)>> {
        (0..self.times.len())
            .map(|i| {
                let (m, s, c) = (
                    &self.means[i],
                    &self.standard_errors[i],
                    &self.conditional[i],
                );
                let total = TotalVariances::from_parts(c, m);
                vec![
                    ("t".to_string(), Value::Num(self.times[i])),
                    ("vmx".to_string(), Value::Num(m.vmx)),
                    ("vmp".to_string(), Value::Num(m.vmp)),
                    ("cm".to_string(), Value::Num(m.cm)),
                    ("se_vmx".to_string(), Value::Num(s.vmx)),
                    ("se_vmp".to_string(), Value::Num(s.vmp)),
                    ("se_cm".to_string(), Value::Num(s.cm)),
                    ("vx".to_string(), Value::Num(c.vx)),
                    ("vp".to_string(), Value::Num(c.vp)),
                    ("c".to_string(), Value::Num(c.c)),
                    ("nbar".to_string(), Value::Num(total.nbar())),
                ]
            })
            .collect()
    }
}

const CHUNK: usize = 256;

/// Ensemble statistics of the conditional means. Trajectories run in
/// parallel and are reduced in index order, so the output does not depend
/// on the number of threads.
pub fn simulate_conditional_means(
    osc: &Oscillator,
    p: &MeasurementParams,
    cfg: &TrajectoryConfig,
) -> Result<EnsembleStats> {
    let plan = make_plan(osc, p, cfg)?;
    let steps = cfg.record_steps();
    let mut sums = vec![Moments::default(); steps.len()];

    // Shift by the noiseless path, which is the exact ensemble mean.
    let mut shift = Vec::with_capacity(steps.len());
    {
        let mut m = Vector2::from(cfg.initial_mean);
        let mut next = 0;
        for n in 0..=cfg.n_steps {
            if next < steps.len() && steps[next] == n {
                shift.push(m);
                next += 1;
            }
            if n < cfg.n_steps {
                m = match cfg.scheme {
                    Scheme::ExponentialMidpoint => plan.propagator * m,
                    Scheme::EulerMaruyama => m + plan.drift * m * cfg.dt,
                };
            }
        }
    }

    let window_start = steps
        .iter()
        .position(|&s| s as f64 >= 0.9 * cfg.n_steps as f64)
        .unwrap_or(0)
        .min(steps.len() - 1);
    let last = steps.len() - 1;
    let mut window_ends = Vec::with_capacity(cfg.n_traj);

    for chunk_start in (0..cfg.n_traj).step_by(CHUNK) {
        let chunk_end = (chunk_start + CHUNK).min(cfg.n_traj);
        let paths: Vec<Vec<[f64; 3]>> = (chunk_start..chunk_end)
            .into_par_iter()
            .map(|i| run_path(&plan, cfg, i as u64, &steps))
            .collect();
        for path in &paths {
            for (k, s) in path.iter().enumerate() {
                sums[k].push(s[0] - shift[k][0], s[1] - shift[k][1], s[2]);
            }
            window_ends.push((
                [path[window_start][0], path[window_start][1]],
                [path[last][0], path[last][1]],
            ));
        }
    }

    let mut means = Vec::with_capacity(steps.len());
    let mut standard_errors = Vec::with_capacity(steps.len());
    let mut ensemble_mean = Vec::with_capacity(steps.len());
    let mut mean_record = Vec::with_capacity(steps.len());
    for (k, m) in sums.iter().enumerate() {
        let (v, se, mu) = m.summarize();
        means.push(v);
        standard_errors.push(se);
        ensemble_mean.push([mu[0] + shift[k][0], mu[1] + shift[k][1]]);
        mean_record.push(m.dy / m.n);
    }

    // Per-trajectory change of the squared deviation across the window.
    let n = cfg.n_traj as f64;
    let (mu0, mu1) = (ensemble_mean[window_start], ensemble_mean[last]);
    let d: Vec<f64> = window_ends
        .iter()
        .map(|(a, b)| {
            let end = (b[0] - mu1[0]).powi(2) + (b[1] - mu1[1]).powi(2);
            let start = (a[0] - mu0[0]).powi(2) + (a[1] - mu0[1]).powi(2);
            end - start
        })
        .collect();
    let window_drift = d.iter().sum::<f64>() / n;
    let window_drift_se = if cfg.n_traj > 1 {
        (d.iter().map(|x| (x - window_drift).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let level = means[last].vmx + means[last].vmp;
    let converged = window_drift.abs() <= 4.0 * window_drift_se + 1e-12 * level;

    Ok(EnsembleStats {
        times: steps.iter().map(|&s| s as f64 * cfg.dt).collect(),
        means,
        standard_errors,
        ensemble_mean,
        mean_record,
        conditional: steps.iter().map(|&s| plan.conditional[s]).collect(),
        n_traj: cfg.n_traj,
        window_drift,
        window_drift_se,
        converged,
    })
}

/// One trajectory's measurement record and conditional-mean path, both at every step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementRecord {
    pub dt: f64,
    /// `dY_n = h⟨x̃⟩_n dt + dW_n`.
    pub increments: Vec<f64>,
    /// `(⟨x̃⟩, ⟨p̃⟩)` before the first step and after every step.
    pub path: Vec<[f64; 2]>,
}

impl MeasurementRecord {
    /// Innovations `dY_n - h⟨x̃⟩_n dt` recovered from the record.
    pub fn innovations(&self, p: &MeasurementParams) -> Vec<f64> {
        let h = (8.0 * p.eta * p.ktilde).sqrt();
        self.increments
            .iter()
            .zip(&self.path)
            .map(|(dy, m)| dy - h * m[0] * self.dt)
            .collect()
    }

    pub fn csv_rows(&self) -> Vec<Vec<(String, Value)>> {
        self.increments
            .iter()
            .enumerate()
            .map(|(n, dy)| {
                vec![
                    ("t".to_string(), Value::Num(n as f64 * self.dt)),
                    ("dy".to_string(), Value::Num(*dy)),
                    ("mx".to_string(), Value::Num(self.path[n][0])),
                    ("mp".to_string(), Value::Num(self.path[n][1])),
                ]
            })
            .collect()
    }
}

/// Runs trajectory `index` of the ensemble described by `cfg` and keeps its record.
pub fn generate_measurement_record(
    osc: &Oscillator,
    p: &MeasurementParams,
    cfg: &TrajectoryConfig,
    index: u64,
) -> Result<MeasurementRecord> {
    let plan = make_plan(osc, p, cfg)?;
    let mut rng = trajectory_rng(cfg.seed, index);
    let mut m = Vector2::from(cfg.initial_mean);
    let mut increments = Vec::with_capacity(cfg.n_steps);
    let mut path = Vec::with_capacity(cfg.n_steps + 1);
    path.push([m[0], m[1]]);
    for n in 0..cfg.n_steps {
        let dw = wiener_increment(&mut rng, cfg.dt, cfg.brownian_refinement);
        let dy = plan.record_increment(cfg.dt, &m, dw);
        m = plan.step(cfg.scheme, cfg.dt, m, dy, n);
        increments.push(dy);
        path.push([m[0], m[1]]);
    }
    Ok(MeasurementRecord {
        dt: cfg.dt,
        increments,
        path,
    })
}

/// Feeds a recorded measurement through the filter.
pub fn replay_record(
    osc: &Oscillator,
    p: &MeasurementParams,
    cfg: &TrajectoryConfig,
    increments: &[f64],
) -> Result<Vec<[f64; 2]>> {
    let cfg = TrajectoryConfig {
        n_steps: increments.len().max(1),
        ..*cfg
    };
    let plan = make_plan(osc, p, &cfg)?;
    let mut m = Vector2::from(cfg.initial_mean);
    let mut path = Vec::with_capacity(increments.len() + 1);
    path.push([m[0], m[1]]);
    for (n, &dy) in increments.iter().enumerate() {
        m = plan.step(cfg.scheme, cfg.dt, m, dy, n);
        path.push([m[0], m[1]]);
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoolingCurve {
    pub times: Vec<f64>,
    pub nbar: Vec<f64>,
    pub conditional: Vec<ConditionalVariances>,
    pub means: Vec<MeanVariances>,
    /// Steady n̄ from the direct solvers, where a steady state exists.
    pub steady_nbar: Option<f64>,
}

impl CoolingCurve {
    pub fn final_nbar(&self) -> f64 {
        *self.nbar.last().unwrap()
    }

    /// `|n̄(t_end) - n̄_steady| / n̄_steady`.
    pub fn final_relative_gap(&self) -> Option<f64> {
        self.steady_nbar
            .map(|s| (self.final_nbar() - s).abs() / s.abs().max(f64::MIN_POSITIVE))
    }

    pub fn csv_rows(&self) -> Vec<Vec<(String, Value)>> {
        (0..self.times.len())
            .map(|i| {
                vec![
                    ("t".to_string(), Value::Num(self.times[i])),
                    ("nbar".to_string(), Value::Num(self.nbar[i])),
                    ("vx".to_string(), Value::Num(self.conditional[i].vx)),
                    ("vp".to_string(), Value::Num(self.conditional[i].vp)),
                    ("c".to_string(), Value::Num(self.conditional[i].c)),
                    ("vmx".to_string(), Value::Num(self.means[i].vmx)),
                    ("vmp".to_string(), Value::Num(self.means[i].vmp)),
                    ("cm".to_string(), Value::Num(self.means[i].cm)),
                ]
            })
            .collect()
    }
}

fn means_rhs(
    osc: &Oscillator,
    p: &MeasurementParams,
    cv: &ConditionalVariances,
    m: &MeanVariances,
) -> [f64; 3] {
    let (g, w, gain) = (osc.gamma, p.effective_omega(osc), p.gain);
    let s = 8.0 * p.eta * p.ktilde;
    [
        -g * m.vmx + 2.0 * w * m.cm + s * cv.vx * cv.vx,
        -(g + 2.0 * gain) * m.vmp - 2.0 * w * m.cm + s * cv.c * cv.c,
        -w * m.vmx + w * m.vmp - (g + gain) * m.cm + s * cv.c * cv.vx,
    ]
}

/// n̄(t) from co-integrating the conditional variances and the variances of
/// the means with classical RK4, starting from `initial = (conditional, means)`.
pub fn transient_cooling_curve(
    osc: &Oscillator,
    p: &MeasurementParams,
    dt: f64,
    n_steps: usize,
    record_stride: usize,
    initial: (ConditionalVariances, MeanVariances),
) -> Result<CoolingCurve> {
    p.validate()?;
    if !(dt > 0.0 && dt.is_finite()) || record_stride == 0 {
        return Err(Error::invalid(
            "dt",
            "dt must be positive and record_stride at least 1",
        ));
    }
    let bound = TrajectoryConfig::max_dt(osc, p);
    if dt > bound {
        return Err(Error::StepTooLarge { dt, bound });
    }
    type State = [f64; 6];
    let split = |s: &State| {
        (
            ConditionalVariances {
                vx: s[0],
                vp: s[1],
                c: s[2],
            },
            MeanVariances {
                vmx: s[3],
                vmp: s[4],
                cm: s[5],
            },
        )
    };
    let f = |s: &State| -> State {
        let (cv, m) = split(s);
        let [a, b, c] = measfb::riccati_rhs(osc, p, &cv);
        let [d, e, g] = means_rhs(osc, p, &cv, &m);
        [a, b, c, d, e, g]
    };
    let axpy = |s: &State, k: &State, a: f64| -> State { std::array::from_fn(|i| s[i] + a * k[i]) };

    let (c0, m0) = initial;
    let mut s: State = [c0.vx, c0.vp, c0.c, m0.vmx, m0.vmp, m0.cm];
    let mut curve = CoolingCurve {
        times: Vec::new(),
        nbar: Vec::new(),
        conditional: Vec::new(),
        means: Vec::new(),
        steady_nbar: measfb::nbar_total(osc, p).ok().map(|r| r.exact.nbar),
    };
    let keep = |n: usize, s: &State, curve: &mut CoolingCurve| {
        let (cv, m) = split(s);
        curve.times.push(n as f64 * dt);
        curve.nbar.push(TotalVariances::from_parts(&cv, &m).nbar());
        curve.conditional.push(cv);
        curve.means.push(m);
    };
    keep(0, &s, &mut curve);
    for n in 1..=n_steps {
        let k1 = f(&s);
        let k2 = f(&axpy(&s, &k1, dt / 2.0));
        let k3 = f(&axpy(&s, &k2, dt / 2.0));
        let k4 = f(&axpy(&s, &k3, dt));
        s = std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        if !s.iter().all(|x| x.is_finite()) {
            return Err(Error::NonConvergence {
                what: "transient cooling curve",
                detail: format!("non-finite state at t = {}", n as f64 * dt),
            });
        }
        if n % record_stride == 0 || n == n_steps {
            keep(n, &s, &mut curve);
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> (Oscillator, MeasurementParams) {
        let osc = Oscillator::from_q(1.0, 1e8, 100.0).unwrap();
        let k = measfb::ktilde_opt(&osc, 0.1).unwrap();
        (osc, MeasurementParams::new(k, 1.0, 0.1).unwrap())
    }

    #[test]
    fn config_invariants() {
        let (osc, p) = desk();
        let bound = TrajectoryConfig::max_dt(&osc, &p);
        assert!((bound - 0.02 * std::f64::consts::TAU).abs() < 1e-15);
        let cfg = TrajectoryConfig {
            dt: 0.2,
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(&osc, &p),
            Err(Error::StepTooLarge { .. })
        ));
        let cfg = TrajectoryConfig {
            n_traj: 0,
            ..Default::default()
        };
        assert!(cfg.validate(&osc, &p).is_err());
        let cfg = TrajectoryConfig {
            n_steps: 25,
            record_stride: 10,
            ..Default::default()
        };
        assert_eq!(cfg.record_steps(), vec![0, 10, 20, 25]);
    }

    #[test]
    fn no_measurement_decays_deterministically() {
        let osc = Oscillator::new(1.0, 0.01, 10.0).unwrap();
        let p = MeasurementParams::new(0.0, 1.0, 0.0).unwrap();
        let cfg = TrajectoryConfig {
            n_traj: 8,
            n_steps: 2000,
            initial_mean: [1.0, 0.0],
            ..Default::default()
        };
        let s = simulate_conditional_means(&osc, &p, &cfg).unwrap();
        assert_eq!(s.final_means(), MeanVariances::default());
        let t = *s.times.last().unwrap();
        let [x, y] = *s.ensemble_mean.last().unwrap();
        assert!(((x * x + y * y).sqrt() - (-osc.gamma / 2.0 * t).exp()).abs() < 1e-12);
        assert!(s.converged);
    }

    #[test]
    fn undamped_diffusion_is_flagged() {
        let osc = Oscillator::new(1.0, 0.0, 0.0).unwrap();
        let p = MeasurementParams::new(1e-3, 1.0, 0.0).unwrap();
        let cfg = TrajectoryConfig {
            n_traj: 1000,
            n_steps: 4000,
            ..Default::default()
        };
        let s = simulate_conditional_means(&osc, &p, &cfg).unwrap();
        assert!(!s.converged, "{} ± {}", s.window_drift, s.window_drift_se);
        assert!(s.means.last().unwrap().vmx > s.means[s.means.len() / 2].vmx);
    }

    #[test]
    fn steady_ensemble_converges() {
        let (osc, p) = desk();
        let cfg = TrajectoryConfig {
            n_traj: 1000,
            n_steps: 6000,
            ..Default::default()
        };
        let s = simulate_conditional_means(&osc, &p, &cfg).unwrap();
        assert!(s.converged, "{} ± {}", s.window_drift, s.window_drift_se);
        let exact = measfb::mean_variances_steady(&osc, &p, &s.final_conditional()).unwrap();
        let (m, se) = (s.final_means(), s.final_standard_errors());
        assert!((m.vmx - exact.vmx).abs() < 4.0 * se.vmx);
        assert!((m.vmp - exact.vmp).abs() < 4.0 * se.vmp);
        assert!((m.cm - exact.cm).abs() < 4.0 * se.cm);
    }

    #[test]
    fn parallel_and_serial_runs_are_identical() {
        let (osc, p) = desk();
        let cfg = TrajectoryConfig {
            n_traj: 600,
            n_steps: 400,
            seed: 7,
            ..Default::default()
        };
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| simulate_conditional_means(&osc, &p, &cfg).unwrap());
        let parallel = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| simulate_conditional_means(&osc, &p, &cfg).unwrap());
        assert_eq!(serial, parallel);
        let other =
            simulate_conditional_means(&osc, &p, &TrajectoryConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(serial.final_means(), other.final_means());
    }

    #[test]
    fn record_replay_is_bit_exact() {
        let (osc, p) = desk();
        for scheme in [Scheme::ExponentialMidpoint, Scheme::EulerMaruyama] {
            let cfg = TrajectoryConfig {
                n_steps: 3000,
                scheme,
                seed: 3,
                ..Default::default()
            };
            let rec = generate_measurement_record(&osc, &p, &cfg, 5).unwrap();
            assert_eq!(rec, generate_measurement_record(&osc, &p, &cfg, 5).unwrap());
            let replay = replay_record(&osc, &p, &cfg, &rec.increments).unwrap();
            assert_eq!(replay, rec.path);
        }
    }

    #[test]
    fn innovations_are_white() {
        let (osc, p) = desk();
        let cfg = TrajectoryConfig {
            n_steps: 100_000,
            seed: 11,
            ..Default::default()
        };
        let rec = generate_measurement_record(&osc, &p, &cfg, 0).unwrap();
        let dw = rec.innovations(&p);
        let n = dw.len() as f64;
        let mean = dw.iter().sum::<f64>() / n;
        let var = dw.iter().map(|x| x * x).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 * (cfg.dt / n).sqrt());
        assert!((var - cfg.dt).abs() < 4.0 * cfg.dt * (2.0 / n).sqrt());
    }

    #[test]
    fn ensemble_record_tracks_mean_position() {
        let (osc, p) = desk();
        let cfg = TrajectoryConfig {
            n_traj: 2000,
            n_steps: 2000,
            initial_mean: [3.0, 0.0],
            ..Default::default()
        };
        let s = simulate_conditional_means(&osc, &p, &cfg).unwrap();
        let h = (8.0 * p.eta * p.ktilde).sqrt();
        let se = (cfg.dt / cfg.n_traj as f64).sqrt();
        // The record at sample k belongs to the step that started one step earlier.
        let rec = generate_measurement_record(&osc, &p, &TrajectoryConfig { n_traj: 1, ..cfg }, 0)
            .unwrap();
        assert_eq!(rec.increments.len(), cfg.n_steps);
        for k in 1..s.times.len() {
            let prev = (k * cfg.record_stride).min(cfg.n_steps) - 1;
            let mean_x = {
                let mut m = Vector2::from(cfg.initial_mean);
                let e = (Matrix2::new(-osc.gamma / 2.0, 1.0, -1.0, -osc.gamma / 2.0 - p.gain)
                    * cfg.dt)
                    .exp();
                for _ in 0..prev {
                    m = e * m;
                }
                m[0]
            };
            assert!((s.mean_record[k] - h * mean_x * cfg.dt).abs() < 5.0 * se);
        }
        assert!(s.mean_record.last().unwrap().abs() < 5.0 * se);
    }

    #[test]
    fn halving_dt_changes_less_than_one_standard_error() {
        let (osc, p) = desk();
        let coarse = TrajectoryConfig {
            n_traj: 2000,
            n_steps: 3000,
            brownian_refinement: 2,
            ..Default::default()
        };
        let fine = TrajectoryConfig {
            dt: coarse.dt / 2.0,
            n_steps: 2 * coarse.n_steps,
            record_stride: 2 * coarse.record_stride,
            brownian_refinement: 1,
            ..coarse
        };
        let a = simulate_conditional_means(&osc, &p, &coarse).unwrap();
        let b = simulate_conditional_means(&osc, &p, &fine).unwrap();
        let se = a.final_standard_errors();
        assert!((a.final_means().vmx - b.final_means().vmx).abs() < se.vmx);
        assert!((a.final_means().vmp - b.final_means().vmp).abs() < se.vmp);
    }

    #[test]
    fn euler_maruyama_is_biased_at_coarse_steps() {
        let (osc, p) = desk();
        let cfg = TrajectoryConfig {
            n_traj: 1000,
            n_steps: 6000,
            ..Default::default()
        };
        let exp = simulate_conditional_means(&osc, &p, &cfg).unwrap();
        let em = simulate_conditional_means(
            &osc,
            &p,
            &TrajectoryConfig {
                scheme: Scheme::EulerMaruyama,
                ..cfg
            },
        )
        .unwrap();
        assert!(em.final_means().vmx > 1.5 * exp.final_means().vmx);
    }

    #[test]
    fn transient_fixed_point_is_flat() {
        let (osc, p) = desk();
        let r = measfb::nbar_total(&osc, &p).unwrap();
        let c =
            transient_cooling_curve(&osc, &p, 0.05, 2000, 100, (r.conditional, r.means)).unwrap();
        for n in &c.nbar {
            assert!((n - r.exact.nbar).abs() < 1e-9 * r.exact.nbar);
        }
    }

    #[test]
    fn transient_from_thermal_settles() {
        let osc = Oscillator::new(1.0, 1e-4, 10.0).unwrap();
        let p = MeasurementParams::new(1e-2, 1.0, 0.1).unwrap();
        let thermal = (
            ConditionalVariances::thermal(&osc),
            MeanVariances::default(),
        );
        let c = transient_cooling_curve(&osc, &p, 0.05, 40_000, 1000, thermal).unwrap();
        assert!(
            c.final_relative_gap().unwrap() < 1e-6,
            "{:?}",
            c.final_relative_gap()
        );
        assert!(c.nbar[0] > 10.0 - 1e-12 && c.final_nbar() < 1.0);
    }

    #[test]
    fn transient_thermalizes_without_control() {
        let osc = Oscillator::new(1.0, 1e-2, 50.0).unwrap();
        let p = MeasurementParams::new(0.0, 1.0, 0.0).unwrap();
        let ground = (
            ConditionalVariances {
                vx: 1.0,
                vp: 1.0,
                c: 0.0,
            },
            MeanVariances::default(),
        );
        let c = transient_cooling_curve(&osc, &p, 0.05, 4000, 100, ground).unwrap();
        for (t, n) in c.times.iter().zip(&c.nbar) {
            let expect = 50.0 * (1.0 - (-osc.gamma * t).exp());
            assert!((n - expect).abs() < 1e-8 * 50.0, "t={t}: {n} vs {expect}");
        }
    }
}
