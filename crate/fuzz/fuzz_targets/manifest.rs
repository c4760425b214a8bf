#![no_main]

use libfuzzer_sys::fuzz_target;
use mrisde_cli::format::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = Manifest::from_json(data) {
        // whatever parses must survive a round trip
        let again = Manifest::from_json(m.to_json().as_bytes()).expect("re-parse");
        assert_eq!(again, m);
    }
});
