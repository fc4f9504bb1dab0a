#![no_main]

use gcl_core::config::RunConfig;
use gcl_core::report::{flat_json, parse_flat_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(fields) = parse_flat_json(text) else {
        return;
    };
    let flat: Vec<_> = fields.clone().into_iter().collect();
    if let Ok(printed) = flat_json(&flat) {
        assert_eq!(parse_flat_json(&printed).unwrap(), fields);
    }
    let _ = RunConfig::from_report(&fields);
});
