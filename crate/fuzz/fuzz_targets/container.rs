#![no_main]

use libfuzzer_sys::fuzz_target;
use mrisde_cli::format::{decode_blob, decode_mask, decode_model, Manifest};

// A little-endian u16 manifest length, the manifest JSON, then the blob.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let len = u16::from_le_bytes([data[0], data[1]]) as usize;
    let Some(json) = data.get(2..2 + len) else {
        return;
    };
    let Ok(m) = Manifest::from_json(json) else {
        return;
    };
    if let Ok(blob) = decode_blob(&m, &data[2 + len..]) {
        let _ = decode_mask(&m, blob.clone());
        let _ = decode_model(&m, blob);
    }
});
