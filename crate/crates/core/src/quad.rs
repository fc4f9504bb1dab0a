//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.
//!
//! Panels are bisected in order of decreasing error estimate until the summed
//! estimate meets `max(abs_tol, rel_tol·|I|)`. A panel that would need more
//! than `max_depth` bisections aborts with [`Error::NonConvergence`].

#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_depth: 60,
            max_panels: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    depth: u32,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Integrates `f` over `[a, b]`, with optional interior breakpoints where the
/// integrand is known to be sharply peaked.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult> {
    let mut edges: Vec<f64> = std::iter::once(a)
        .chain(breakpoints.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in edges.windows(2) {
        let (value, err) = gk15(&mut f, w[0], w[1]);
        evaluations += 15;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value,
            err,
            depth: 0,
        });
    }

    loop {
        let (total, err): (f64, f64) = heap
            .iter()
            .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.err));
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::NonConvergence {
                what: "adaptive quadrature",
                detail: "integrand produced a non-finite value".into(),
            });
        }
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            return Ok(QuadResult {
                value: total,
                abs_err: err,
                evaluations,
            });
        }
        let worst = heap.pop().expect("at least one panel");
        if worst.depth >= opts.max_depth || heap.len() + 2 > opts.max_panels {
            return Err(Error::NonConvergence {
                what: "adaptive quadrature",
                detail: format!(
                    "panel [{:e}, {:e}] needs more than {} bisections (error {:e})",
                    worst.a, worst.b, opts.max_depth, err
                ),
            });
        }
        let mid = 0.5 * (worst.a + worst.b);
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let (value, e) = gk15(&mut f, lo, hi);
            evaluations += 15;
            heap.push(Panel {
                a: lo,
                b: hi,
                value,
                err: e,
                depth: worst.depth + 1,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(
            |x| x.powi(6) - 2.0 * x,
            0.0,
            2.0,
            &[],
            &QuadOptions::default(),
        )
        .unwrap();
        assert!((r.value - (128.0 / 7.0 - 4.0)).abs() < 1e-13);
    }

    #[test]
    fn sharp_lorentzian() {
        let w = 1e-4;
        let f = |x: f64| w / PI / ((x - 0.3).powi(2) + w * w);
        let r = integrate(f, -1.0, 1.0, &[0.3], &QuadOptions::default()).unwrap();
        let exact = ((0.7f64 / w).atan() + (1.3f64 / w).atan()) / PI;
        assert!((r.value - exact).abs() < 1e-10, "{} vs {}", r.value, exact);
    }

    #[test]
    fn nonintegrable_singularity_fails() {
        let opts = QuadOptions {
            max_depth: 20,
            ..Default::default()
        };
        let r = integrate(|x: f64| 1.0 / x.abs(), -1.0, 1.0, &[], &opts);
        assert!(matches!(r, Err(Error::NonConvergence { .. })));
    }
}
