//! Dense polynomials with complex coefficients, stored in ascending powers.

use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly(pub Vec<Complex64>);

impl Poly {
    pub fn zero() -> Self {
        Poly(vec![Complex64::new(0.0, 0.0)])
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    /// Coefficient of `x^k` (zero beyond the stored degree).
    pub fn coeff(&self, k: usize) -> Complex64 {
        self.0.get(k).copied().unwrap_or_default()
    }

    pub fn eval(&self, x: Complex64) -> Complex64 {
        self.0
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
    }

    /// Polynomial whose coefficients are conjugated; equals `conj(p(x))` for real `x`.
    pub fn conj(&self) -> Self {
        Poly(self.0.iter().map(|c| c.conj()).collect())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Poly(self.0.iter().map(|&c| c * s).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![Complex64::new(0.0, 0.0); self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn add_assign(&mut self, other: &Poly) {
        if other.0.len() > self.0.len() {
            self.0.resize(other.0.len(), Complex64::new(0.0, 0.0));
        }
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn multiply_and_evaluate() {
        // (1 + i x)(2 - x) = 2 + (2i - 1) x - i x²
        let p = Poly(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let q = Poly(vec![c(2.0, 0.0), c(-1.0, 0.0)]);
        let pq = p.mul(&q);
        assert_eq!(pq.0, vec![c(2.0, 0.0), c(-1.0, 2.0), c(0.0, -1.0)]);
        let x = c(0.3, 0.0);
        assert!((pq.eval(x) - p.eval(x) * q.eval(x)).norm() < 1e-15);
        assert!((p.conj().eval(x) - p.eval(x).conj()).norm() < 1e-15);
    }
}
