#![no_main]

use gcl_core::linsys::{self, RationalSpectrum};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(spec) = RationalSpectrum::from_json(text) else {
        return;
    };
    let _ = spec.eval(0.0);
    let _ = spec.eval(1.5);
    let _ = linsys::integrate_rational_closed_form(&spec);
    let _ = linsys::integrate_rational_signed(&spec);
    let back = RationalSpectrum::from_json(&spec.to_json().unwrap()).unwrap();
    assert_eq!(back, spec);
});
