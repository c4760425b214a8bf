#![no_main]

use libfuzzer_sys::fuzz_target;
use mrisde_cli::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = RunConfig::from_json(data) {
        let again = RunConfig::from_json(cfg.to_json().as_bytes()).expect("re-parse");
        assert_eq!(again, cfg);
    }
});
