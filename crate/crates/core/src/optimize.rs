//! Golden-section search for unimodal scalar functions.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub f: f64,
    pub iterations: usize,
}

/// Minimizes `f` on `[lo, hi]` until the bracket is narrower than `abs_tol`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, abs_tol: f64) -> Minimum {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while b - a > abs_tol && iterations < 300 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let (x, fx) = if fc < fd { (c, fc) } else { (d, fd) };
    Minimum {
        x,
        f: fx,
        iterations,
    }
}

/// Golden-section search over `ln x` for a positive scale parameter; the
/// returned `x` is located to roughly `rel_tol` relative precision.
pub fn golden_section_log<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    rel_tol: f64,
) -> Minimum {
    let m = golden_section(|u| f(u.exp()), lo.ln(), hi.ln(), rel_tol);
    Minimum { x: m.x.exp(), ..m }
}
