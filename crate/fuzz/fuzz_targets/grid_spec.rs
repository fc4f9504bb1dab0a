#![no_main]

use gcl_core::config::GridSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(grid) = text.parse::<GridSpec>() else {
        return;
    };
    assert_eq!(grid.to_string().parse::<GridSpec>().unwrap(), grid);
    if grid.count <= 10_000 {
        let values = grid.values();
        assert_eq!(values.len(), grid.count);
        assert!(values.iter().all(|v| v.is_finite()));
    }
});
