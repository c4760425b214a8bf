#![no_main]

use libfuzzer_sys::fuzz_target;
use mrisde_cli::config::parse_shape;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok([h, w]) = parse_shape(s) {
            assert!(h > 0 && w > 0);
        }
    }
});
