//! Linear stochastic systems `dx/dt = M x + ξ(t)` with white noise
//! `⟨ξ(t) ξ(t')ᵀ⟩ = G δ(t - t')`.
//!
//! Three independent routes to the steady-state covariance are provided:
//!
//! * [`steady_covariance_lyapunov`]: solves `M Σ + Σ Mᵀ + G = 0` directly.
//! * [`integrate_rational_closed_form`]: integrates a diagonal spectrum
//!   `y(ν) / (z(ν) z(-ν))` with the Hurwitz-determinant formula
//!   `Iₙ = (π/a₀)·Mₙ/Lₙ` (and a direct quartic formula for `n = 4`).
//! * [`integrate_spectrum_quadrature`]: adaptive quadrature of the spectrum
//!   under the compactifying substitution `ν = tan θ`.
//!
//! The spectrum convention is `S(ν) = A(ν) G A(-ν)ᵀ` with
//! `A(ν) = -(M + iνI)⁻¹`, so that `Σ = ∫ S(ν) dν / 2π`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Poly;
use crate::quad::{self, QuadOptions, QuadResult};

const C0: Complex64 = Complex64::new(0.0, 0.0);

fn cplx(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Drift matrix `M` plus symmetric positive semidefinite noise correlation `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStochasticSystem {
    drift: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SystemJson {
    dim: usize,
    drift: Vec<Vec<f64>>,
    noise_cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SpectrumJson {
    numer: Vec<f64>,
    denom: Vec<[f64; 2]>,
}

fn rows_to_matrix(name: &'static str, rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid(
            name,
            format!("expected a {dim}×{dim} matrix"),
        ));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid(name, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl LinearStochasticSystem {
    pub fn new(drift: DMatrix<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let n = drift.nrows();
        if n == 0 || !drift.is_square() {
            return Err(Error::invalid("drift", "must be a non-empty square matrix"));
        }
        if noise_cov.shape() != (n, n) {
            return Err(Error::invalid("noise_cov", format!("must be {n}×{n}")));
        }
        if drift.iter().chain(noise_cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("drift", "entries must be finite"));
        }
        let gnorm = noise_cov.norm();
        let asym = (&noise_cov - noise_cov.transpose()).norm();
        if asym > 1e-12 * gnorm {
            return Err(Error::invalid(
                "noise_cov",
                format!("must be symmetric (‖G - Gᵀ‖ = {asym:e})"),
            ));
        }
        let min_eig = noise_cov.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 * gnorm {
            return Err(Error::invalid(
                "noise_cov",
                format!("must be positive semidefinite (min eigenvalue {min_eig:e})"),
            ));
        }
        Ok(Self { drift, noise_cov })
    }

    pub fn from_rows(drift: &[Vec<f64>], noise_cov: &[Vec<f64>]) -> Result<Self> {
        let n = drift.len();
        Self::new(
            rows_to_matrix("drift", drift, n)?,
            rows_to_matrix("noise_cov", noise_cov, n)?,
        )
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    /// Largest real part among the drift eigenvalues.
    pub fn spectral_abscissa(&self) -> f64 {
        spectral_abscissa(&self.drift)
    }

    pub fn is_stable(&self) -> bool {
        is_hurwitz(&self.drift)
    }

    /// Multiplies every rate by `s`; the steady covariance is unchanged.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            drift: &self.drift * s,
            noise_cov: &self.noise_cov * s,
        }
    }

    /// `{"dim": n, "drift": [[..], ..], "noise_cov": [[..], ..]}` (row-major).
    pub fn to_json(&self) -> Result<String> {
        crate::report::to_json_string(&SystemJson {
            dim: self.dim(),
            drift: matrix_to_rows(&self.drift),
            noise_cov: matrix_to_rows(&self.noise_cov),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let js: SystemJson = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if js.dim == 0 || js.dim > 64 {
            return Err(Error::Parse(format!("unsupported dimension {}", js.dim)));
        }
        Self::new(
            rows_to_matrix("drift", &js.drift, js.dim)?,
            rows_to_matrix("noise_cov", &js.noise_cov, js.dim)?,
        )
    }
}

fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    let abscissa = spectral_abscissa(m);
    abscissa.is_finite() && abscissa < -1e-12 * m.norm()
}

/// True iff every eigenvalue of the drift has real part below `-1e-12·‖M‖`.
pub fn is_stable(sys: &LinearStochasticSystem) -> bool {
    sys.is_stable()
}

/// Steady-state second moments of a stable system.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    pub(crate) fn from_symmetric(m: DMatrix<f64>) -> Self {
        Self((&m + m.transpose()) * 0.5)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().min()
    }
}

/// Solves `M X + X Mᵀ + S = 0` for any symmetric source `S` (which may be
/// indefinite, e.g. an excess over a reference state). `M` must be Hurwitz.
pub fn solve_lyapunov(drift: &DMatrix<f64>, source: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = drift.nrows();
    if !is_hurwitz(drift) {
        return Err(Error::UnstableSystem {
            max_real: spectral_abscissa(drift),
        });
    }
    let eye = DMatrix::<f64>::identity(n, n);
    // Column-major vec: vec(M X) = (I ⊗ M) vec X, vec(X Mᵀ) = (M ⊗ I) vec X.
    let k = eye.kronecker(drift) + drift.kronecker(&eye);
    let rhs = -DVector::from_column_slice(source.as_slice());
    let lu = k.clone().lu();
    let mut v = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSolve("Kronecker-form Lyapunov operator".into()))?;
    // One step of iterative refinement.
    let r = &rhs - &k * &v;
    if let Some(dv) = lu.solve(&r) {
        v += dv;
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSolve("non-finite Lyapunov solution".into()));
    }
    let x = DMatrix::from_column_slice(n, n, v.as_slice());
    let x = (&x + x.transpose()) * 0.5;

    let residual = (drift * &x + &x * drift.transpose() + source).norm();
    let floor = 64.0 * f64::EPSILON * k.norm() * x.norm();
    if residual > (1e-10 * source.norm()).max(floor) {
        return Err(Error::SingularSolve(format!(
            "Lyapunov residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(x)
}

/// Σ solving `M Σ + Σ Mᵀ + G = 0`.
pub fn steady_covariance_lyapunov(sys: &LinearStochasticSystem) -> Result<CovarianceMatrix> {
    solve_lyapunov(&sys.drift, &sys.noise_cov).map(CovarianceMatrix)
}

fn shifted_drift(drift: &DMatrix<f64>, nu: f64) -> DMatrix<Complex64> {
    let n = drift.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(drift[(i, j)], if i == j { nu } else { 0.0 })
    })
}

/// `A(ν) = -(M + iνI)⁻¹`.
pub fn transfer_matrix(sys: &LinearStochasticSystem, nu: f64) -> Result<DMatrix<Complex64>> {
    let shifted = shifted_drift(&sys.drift, nu);
    let sv = shifted.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !(cond <= 1e14) {
        return Err(Error::SingularFrequency { nu, cond });
    }
    shifted
        .try_inverse()
        .map(|inv| -inv)
        .ok_or(Error::SingularFrequency {
            nu,
            cond: f64::INFINITY,
        })
}

/// `S(ν) = A(ν) G A(-ν)ᵀ`; for real `M`, `A(-ν) = conj(A(ν))`.
pub fn spectral_density(sys: &LinearStochasticSystem, nu: f64) -> Result<DMatrix<Complex64>> {
    let a = transfer_matrix(sys, nu)?;
    let g = sys.noise_cov.map(cplx);
    Ok(&a * g * a.adjoint())
}

/// `y(ν) / (z(ν) z(-ν))` with `y(ν) = Σ b_k ν^{2n-2-2k}` real and
/// `z(ν) = Σ a_k ν^{n-k}` obeying `z(-ν) = conj(z(ν))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalSpectrum {
    numer: Vec<f64>,
    denom: Vec<Complex64>,
}

impl RationalSpectrum {
    /// `numer = [b₀, …, b_{n-1}]`, `denom = [a₀, …, aₙ]`.
    pub fn new(numer: Vec<f64>, denom: Vec<Complex64>) -> Result<Self> {
        let n = denom.len().saturating_sub(1);
        if n == 0 {
            return Err(Error::invalid("denom", "needs at least two coefficients"));
        }
        if numer.len() != n {
            return Err(Error::invalid(
                "numer",
                format!(
                    "order {n} needs {n} numerator coefficients, got {}",
                    numer.len()
                ),
            ));
        }
        if numer.iter().any(|b| !b.is_finite())
            || denom.iter().any(|a| !a.re.is_finite() || !a.im.is_finite())
        {
            return Err(Error::invalid("denom", "coefficients must be finite"));
        }
        if denom[0].norm() == 0.0 {
            return Err(Error::invalid(
                "denom",
                "leading coefficient a₀ must be nonzero",
            ));
        }
        for (k, a) in denom.iter().enumerate() {
            let power = n - k;
            let stray = if power.is_multiple_of(2) { a.im } else { a.re };
            if stray.abs() > 1e-12 * a.norm() {
                return Err(Error::invalid(
                    "denom",
                    format!("a_{k} violates z(-ν) = conj(z(ν)) (coefficient of ν^{power} is {a})"),
                ));
            }
        }
        Ok(Self { numer, denom })
    }

    /// `{"numer": [b₀, ..], "denom": [[re, im], ..]}`.
    pub fn to_json(&self) -> Result<String> {
        crate::report::to_json_string(&SpectrumJson {
            numer: self.numer.clone(),
            denom: self.denom.iter().map(|a| [a.re, a.im]).collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let js: SpectrumJson =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if js.denom.len() > 33 {
            return Err(Error::Parse(format!(
                "unsupported order {}",
                js.denom.len() - 1
            )));
        }
        Self::new(
            js.numer,
            js.denom
                .iter()
                .map(|&[re, im]| Complex64::new(re, im))
                .collect(),
        )
    }

    pub fn order(&self) -> usize {
        self.numer.len()
    }

    pub fn numer(&self) -> &[f64] {
        &self.numer
    }

    pub fn denom(&self) -> &[Complex64] {
        &self.denom
    }

    /// Value of the integrand at real frequency `ν`.
    pub fn eval(&self, nu: f64) -> f64 {
        let n = self.order();
        let y: f64 = self
            .numer
            .iter()
            .enumerate()
            .map(|(k, b)| b * nu.powi((2 * n - 2 - 2 * k) as i32))
            .sum();
        let z: Complex64 = self
            .denom
            .iter()
            .enumerate()
            .map(|(k, a)| a * nu.powi((n - k) as i32))
            .sum();
        y / z.norm_sqr()
    }
}

/// Characteristic polynomial coefficients `c_k` of `det(sI - M) = Σ c_k s^{n-k}`
/// and the adjugate terms `B_k` with `adj(sI - M) = Σ B_k s^{n-1-k}`
/// (Faddeev–LeVerrier).
fn faddeev_leverrier(m: &DMatrix<f64>) -> (Vec<f64>, Vec<DMatrix<f64>>) {
    let n = m.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut cs = vec![1.0];
    let mut bs = vec![eye.clone()];
    for k in 1..=n {
        let mb = m * bs.last().unwrap();
        let ck = -mb.trace() / k as f64;
        cs.push(ck);
        if k < n {
            bs.push(mb + &eye * ck);
        }
    }
    (cs, bs)
}

fn neg_i_pow(m: usize) -> Complex64 {
    match m % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// Exact numerator/denominator polynomials of `Σ_i wᵢ S_ii(ν)` for drift `M`
/// and a symmetric (possibly indefinite) source `S`.
///
/// `z(ν) = det(M + iνI)` and `y(ν) = Σ_i wᵢ [adj(M+iνI) S adj(M+iνI)†]_ii`.
pub fn rational_spectrum_from_parts(
    drift: &DMatrix<f64>,
    source: &DMatrix<f64>,
    weights: &[f64],
) -> Result<RationalSpectrum> {
    let n = drift.nrows();
    if weights.len() != n {
        return Err(Error::invalid("weights", format!("need {n} weights")));
    }
    let (cs, bs) = faddeev_leverrier(drift);
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let denom: Vec<Complex64> = (0..=n).map(|k| neg_i_pow(n - k) * (sign * cs[k])).collect();

    // adj(M + iνI) = ±adj(sI - M) at s = -iν; the sign cancels in y.
    let adj_entry = |i: usize, j: usize| -> Poly {
        Poly(
            (0..n)
                .map(|m| neg_i_pow(m) * bs[n - 1 - m][(i, j)])
                .collect(),
        )
    };
    let mut y = Poly::zero();
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row: Vec<Poly> = (0..n).map(|j| adj_entry(i, j)).collect();
        for l in 0..n {
            let mut r = Poly::zero();
            for (j, q) in row.iter().enumerate() {
                let g = source[(j, l)];
                if g != 0.0 {
                    r.add_assign(&q.scale(cplx(g)));
                }
            }
            y.add_assign(&r.mul(&row[l].conj()).scale(cplx(w)));
        }
    }
    let numer = (0..n).map(|k| y.coeff(2 * n - 2 - 2 * k).re).collect();
    RationalSpectrum::new(numer, denom)
}

/// Rational form of `Σ_i wᵢ S_ii(ν)` for a system.
pub fn rational_spectrum(
    sys: &LinearStochasticSystem,
    weights: &[f64],
) -> Result<RationalSpectrum> {
    rational_spectrum_from_parts(&sys.drift, &sys.noise_cov, weights)
}

fn hurwitz_matrix(a: &[Complex64], first_row: Option<&[f64]>) -> DMatrix<Complex64> {
    let n = a.len() - 1;
    DMatrix::from_fn(n, n, |j, k| {
        if j == 0 {
            if let Some(b) = first_row {
                return cplx(b[k]);
            }
        }
        // Entry (j, k) of the 1-based Hurwitz matrix is a_{2k - j}.
        let idx = 2 * (k as isize + 1) - (j as isize + 1);
        if idx >= 0 && idx as usize <= n {
            a[idx as usize]
        } else {
            C0
        }
    })
}

fn hadamard_bound(m: &DMatrix<Complex64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .product()
}

/// Raw `(π/a₀)·Mₙ/Lₙ` from the Hurwitz determinants (any order `n`).
pub fn integrate_rational_hurwitz(spec: &RationalSpectrum) -> Result<Complex64> {
    let a = &spec.denom;
    let l_mat = hurwitz_matrix(a, None);
    let l = l_mat.clone().determinant();
    let bound = hadamard_bound(&l_mat);
    if !(l.norm() > 1e-14 * bound) {
        return Err(Error::DegenerateDenominator {
            magnitude: l.norm(),
        });
    }
    let m = hurwitz_matrix(a, Some(&spec.numer)).determinant();
    Ok(cplx(PI) / a[0] * m / l)
}

/// Raw quartic formula
/// `π·[(b₀/a₀)(a₂a₃ - a₁a₄) - b₁a₃ + b₂a₁ + (b₃/a₄)(a₀a₃ - a₁a₂)] / (a₀a₃² + a₁²a₄ - a₁a₂a₃)`.
pub fn integrate_rational_quartic(spec: &RationalSpectrum) -> Result<Complex64> {
    if spec.order() != 4 {
        return Err(Error::invalid("spec", "the quartic formula needs order 4"));
    }
    let a = &spec.denom;
    let b = &spec.numer;
    if a[4].norm() == 0.0 {
        return Err(Error::DegenerateDenominator { magnitude: 0.0 });
    }
    let den = a[0] * a[3] * a[3] + a[1] * a[1] * a[4] - a[1] * a[2] * a[3];
    let scale =
        (a[0] * a[3] * a[3]).norm() + (a[1] * a[1] * a[4]).norm() + (a[1] * a[2] * a[3]).norm();
    if !(den.norm() > 1e-14 * scale) {
        return Err(Error::DegenerateDenominator {
            magnitude: den.norm(),
        });
    }
    let num = (a[2] * a[3] - a[1] * a[4]) * (b[0] / a[0]) - a[3] * b[1]
        + a[1] * b[2]
        + (a[0] * a[3] - a[1] * a[2]) * (b[3] / a[4]);
    Ok(cplx(PI) * num / den)
}

fn raw_integral(spec: &RationalSpectrum) -> Result<Complex64> {
    if spec.order() == 4 {
        integrate_rational_quartic(spec)
    } else {
        integrate_rational_hurwitz(spec)
    }
}

/// `∫ y(ν)/(z(ν)z(-ν)) dν` for a nonnegative spectrum, returned as
/// `|π/a₀ · Mₙ/Lₙ|`. Order 4 uses the direct quartic formula.
pub fn integrate_rational_closed_form(spec: &RationalSpectrum) -> Result<f64> {
    if spec.numer.iter().all(|&b| b == 0.0) {
        return Ok(0.0);
    }
    raw_integral(spec).map(|z| z.norm())
}

/// Signed integral for numerators that need not be nonnegative.
///
/// The determinant ratio carries a convention-dependent phase; it is fixed by
/// evaluating the same formula on `y = 1`, whose integral is positive.
pub fn integrate_rational_signed(spec: &RationalSpectrum) -> Result<f64> {
    let n = spec.order();
    let mut unit = vec![0.0; n];
    unit[n - 1] = 1.0;
    let reference = raw_integral(&RationalSpectrum {
        numer: unit,
        denom: spec.denom.clone(),
    })?;
    let phase = reference / reference.norm();
    Ok((raw_integral(spec)? * phase.conj()).re)
}

type Dd = twofloat::TwoFloat;

fn dd(x: f64) -> Dd {
    Dd::from(x)
}

fn dd_to_f64(x: Dd) -> f64 {
    x.hi() + x.lo()
}

/// `a / b` with one correction step (twofloat's `TwoFloat / TwoFloat` keeps
/// only the high word of the quotient).
fn dd_div(a: Dd, b: Dd) -> Dd {
    let q1 = a / b.hi();
    let r = a - q1 * b;
    q1 + r / b.hi()
}

fn dd_matmul(a: &[Vec<Dd>], b: &[Vec<Dd>]) -> Vec<Vec<Dd>> {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).fold(dd(0.0), |acc, k| acc + a[i][k] * b[k][j]))
                .collect()
        })
        .collect()
}

fn dd_determinant(mut m: Vec<Vec<Dd>>) -> Dd {
    let n = m.len();
    let mut det = dd(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].hi().abs().total_cmp(&m[b][col].hi().abs()))
            .unwrap();
        if m[pivot][col].hi() == 0.0 {
            return dd(0.0);
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let factor = dd_div(m[row][col], m[col][col]);
            let (top, bottom) = m.split_at_mut(row);
            for (dst, &src) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *dst -= factor * src;
            }
        }
    }
    det
}

/// Real Hurwitz matrix of `Σ c_k s^{n-k}`, with an optional replacement first row.
fn dd_hurwitz(c: &[Dd], first_row: Option<&[Dd]>) -> Vec<Vec<Dd>> {
    let n = c.len() - 1;
    (0..n)
        .map(|j| {
            (0..n)
                .map(|k| match (j, first_row) {
                    (0, Some(b)) => b[k],
                    _ => {
                        let idx = 2 * k as isize + 1 - j as isize;
                        if idx >= 0 && idx as usize <= n {
                            c[idx as usize]
                        } else {
                            dd(0.0)
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// `Σ_i wᵢ ∫ S_ii(ν) dν / 2π` for drift `M` and a symmetric (possibly
/// indefinite) source, by the Hurwitz-determinant formula evaluated in
/// double-double arithmetic.
///
/// Same formula as [`integrate_rational_signed`] applied to
/// [`rational_spectrum_from_parts`], written over the real characteristic
/// polynomial `det(sI - M)`: the factors of `i` in `z(ν)` only scale rows and
/// columns of the determinants. The extra precision absorbs the cancellation
/// in `Lₙ` when every mode is weakly damped.
pub fn closed_form_weighted(
    drift: &DMatrix<f64>,
    source: &DMatrix<f64>,
    weights: &[f64],
) -> Result<f64> {
    let n = drift.nrows();
    if weights.len() != n {
        return Err(Error::invalid("weights", format!("need {n} weights")));
    }
    if !is_hurwitz(drift) {
        return Err(Error::UnstableSystem {
            max_real: spectral_abscissa(drift),
        });
    }
    let m: Vec<Vec<Dd>> = (0..n)
        .map(|i| (0..n).map(|j| dd(drift[(i, j)])).collect())
        .collect();
    let eye: Vec<Vec<Dd>> = (0..n)
        .map(|i| (0..n).map(|j| dd(if i == j { 1.0 } else { 0.0 })).collect())
        .collect();

    // Faddeev–LeVerrier: det(sI - M) = Σ c_k s^{n-k}, adj(sI - M) = Σ B_k s^{n-1-k}.
    let mut c = vec![dd(1.0)];
    let mut bs = vec![eye];
    for k in 1..=n {
        let mut mb = dd_matmul(&m, bs.last().unwrap());
        let trace = (0..n).fold(dd(0.0), |acc, i| acc + mb[i][i]);
        let ck = -trace / k as f64;
        c.push(ck);
        if k < n {
            for (i, row) in mb.iter_mut().enumerate() {
                row[i] += ck;
            }
            bs.push(mb);
        }
    }

    // The adjugate entry (i, j) is Σ_p β_p (-iν)^p with β_p = (B_{n-1-p})_ij, so
    // the even coefficients of y are real sums of ±β_p ρ_p'.
    let mut y = vec![dd(0.0); 2 * n - 1];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for l in 0..n {
            for p in 0..n {
                let rho = (0..n).fold(dd(0.0), |acc, j| acc + bs[n - 1 - p][i][j] * source[(j, l)]);
                for q in 0..n {
                    if (p + q) % 2 == 1 {
                        continue;
                    }
                    let half = (p + q) / 2;
                    let sign = if (p + half) % 2 == 0 { w } else { -w };
                    y[p + q] += rho * bs[n - 1 - q][i][l] * sign;
                }
            }
        }
    }
    let b: Vec<Dd> = (0..n)
        .map(|k| {
            let bk = y[2 * n - 2 - 2 * k];
            if k % 2 == 0 {
                bk
            } else {
                -bk
            }
        })
        .collect();

    let l_mat = dd_hurwitz(&c, None);
    let bound: f64 = l_mat
        .iter()
        .map(|r| r.iter().map(|x| x.hi() * x.hi()).sum::<f64>().sqrt())
        .product();
    let l = dd_determinant(l_mat);
    if !(l.hi().abs() > 1e-28 * bound) {
        return Err(Error::DegenerateDenominator {
            magnitude: l.hi().abs(),
        });
    }
    let mut unit = vec![dd(0.0); n];
    unit[n - 1] = dd(if (n - 1).is_multiple_of(2) { 1.0 } else { -1.0 });
    let reference = dd_div(dd_determinant(dd_hurwitz(&c, Some(&unit))), l);
    let ratio = dd_div(dd_determinant(dd_hurwitz(&c, Some(&b))), l);
    let signed = if reference.hi() > 0.0 { ratio } else { -ratio };
    Ok(dd_to_f64(signed) / 2.0)
}

/// Breakpoints in θ at the oscillation frequencies of the drift.
fn peak_breakpoints(drift: &DMatrix<f64>) -> Vec<f64> {
    let mut pts = vec![0.0];
    for z in drift.clone().complex_eigenvalues().iter() {
        if z.im.abs() > 0.0 {
            pts.push(z.im.abs().atan());
            pts.push(-z.im.abs().atan());
        }
    }
    pts
}

/// `∫ Σ_i wᵢ S_ii(ν) dν / 2π` for drift `M` and a symmetric source, by adaptive
/// Gauss–Kronrod quadrature in `θ = atan ν`.
pub fn integrate_weighted_quadrature(
    drift: &DMatrix<f64>,
    source: &DMatrix<f64>,
    weights: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult> {
    let n = drift.nrows();
    if !is_hurwitz(drift) {
        return Err(Error::UnstableSystem {
            max_real: spectral_abscissa(drift),
        });
    }
    let src = source.map(cplx);
    let mut failure = None;
    let integrand = |theta: f64| -> f64 {
        let nu = theta.tan();
        let jac = 1.0 + nu * nu;
        let Some(inv) = shifted_drift(drift, nu).try_inverse() else {
            failure = Some(nu);
            return f64::NAN;
        };
        // The sign of A cancels in A S A†.
        let s = &inv * &src * inv.adjoint();
        let val: f64 = (0..n).map(|i| weights[i] * s[(i, i)].re).sum();
        val * jac
    };
    let r = quad::integrate(
        integrand,
        -FRAC_PI_2,
        FRAC_PI_2,
        &peak_breakpoints(drift),
        opts,
    )?;
    if let Some(nu) = failure {
        return Err(Error::SingularFrequency {
            nu,
            cond: f64::INFINITY,
        });
    }
    Ok(QuadResult {
        value: r.value / (2.0 * PI),
        abs_err: r.abs_err / (2.0 * PI),
        ..r
    })
}

/// `∫ S_ii(ν) dν / 2π` by adaptive quadrature (independent of the Lyapunov
/// and closed-form routes).
pub fn integrate_spectrum_quadrature(sys: &LinearStochasticSystem, i: usize) -> Result<f64> {
    let n = sys.dim();
    if i >= n {
        return Err(Error::invalid(
            "i",
            format!("index {i} out of range for dim {n}"),
        ));
    }
    let mut weights = vec![0.0; n];
    weights[i] = 1.0;
    let opts = QuadOptions {
        abs_tol: 1e-300,
        rel_tol: 5e-10,
        ..Default::default()
    };
    integrate_weighted_quadrature(&sys.drift, &sys.noise_cov, &weights, &opts).map(|r| r.value)
}
