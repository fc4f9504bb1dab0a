use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The mechanical oscillator to be cooled.
///
/// `gamma = 0` is accepted and means an undamped oscillator (`Q = ∞`);
/// routines that need a finite quality factor check it themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    /// Angular frequency ω.
    pub omega: f64,
    /// Energy damping rate γ.
    pub gamma: f64,
    /// Thermal occupation n_T of the ambient bath.
    pub n_thermal: f64,
}

impl Oscillator {
    pub fn new(omega: f64, gamma: f64, n_thermal: f64) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::invalid(
                "omega",
                format!("must be finite and > 0, got {omega}"),
            ));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::invalid(
                "gamma",
                format!("must be finite and ≥ 0, got {gamma}"),
            ));
        }
        if !(n_thermal.is_finite() && n_thermal >= 0.0) {
            return Err(Error::invalid(
                "n_thermal",
                format!("must be finite and ≥ 0, got {n_thermal}"),
            ));
        }
        Ok(Self {
            omega,
            gamma,
            n_thermal,
        })
    }

    pub fn from_q(omega: f64, q: f64, n_thermal: f64) -> Result<Self> {
        if !(q > 0.0) {
            return Err(Error::invalid("q", format!("must be > 0, got {q}")));
        }
        Self::new(omega, omega / q, n_thermal)
    }

    /// Quality factor ω/γ (infinite when undamped).
    pub fn q(&self) -> f64 {
        self.omega / self.gamma
    }

    /// Scaled thermal variance 2n_T + 1 of either quadrature.
    pub fn thermal_variance(&self) -> f64 {
        2.0 * self.n_thermal + 1.0
    }

    /// Heating rate γ·n_T from the bath.
    pub fn heating_rate(&self) -> f64 {
        self.gamma * self.n_thermal
    }

    pub(crate) fn require_damped(&self) -> Result<()> {
        if self.gamma > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid("gamma", "this quantity requires gamma > 0"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let o = Oscillator::from_q(2.0, 1e6, 100.0).unwrap();
        assert_eq!(o.gamma, 2e-6);
        assert_eq!(o.q(), 1e6);
        assert_eq!(o.thermal_variance(), 201.0);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Oscillator::new(0.0, 1.0, 1.0).is_err());
        assert!(Oscillator::new(1.0, -1e-9, 1.0).is_err());
        assert!(Oscillator::new(1.0, 1.0, f64::NAN).is_err());
        assert!(Oscillator::new(1.0, 0.0, 0.0).unwrap().q().is_infinite());
    }
}
