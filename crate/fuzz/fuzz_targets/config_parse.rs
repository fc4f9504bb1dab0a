#![no_main]

use gcl_core::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse_str(text) {
        // whatever parses must print back to an equal config
        let again = RunConfig::parse_str(&cfg.to_config_string()).expect("printed config reparses");
        assert_eq!(again, cfg);
    }
});
