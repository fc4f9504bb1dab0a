#![no_main]

use gcl_core::linsys::{self, LinearStochasticSystem};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(sys) = LinearStochasticSystem::from_json(text) else {
        return;
    };
    if sys.dim() <= 8 && sys.is_stable() {
        let _ = linsys::steady_covariance_lyapunov(&sys);
        let _ = linsys::integrate_spectrum_quadrature(&sys, 0);
    }
    let back = LinearStochasticSystem::from_json(&sys.to_json().unwrap()).unwrap();
    assert_eq!(back, sys);
});
