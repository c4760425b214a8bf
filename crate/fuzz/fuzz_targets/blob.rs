#![no_main]

use libfuzzer_sys::fuzz_target;
use mrisde_cli::format::{decode_blob, decode_complex, decode_stack, Dtype, Manifest};

// Byte 0 picks the dtype, bytes 1..3 a small shape; the rest is the blob.
fuzz_target!(|data: &[u8]| {
    if data.len() < 3 {
        return;
    }
    let dtype = [Dtype::C64, Dtype::F32, Dtype::U8][data[0] as usize % 3];
    let shape = vec![data[1] as usize % 17, data[2] as usize % 17];
    let m = Manifest::new(dtype, shape, "fuzz");
    if let Ok(blob) = decode_blob(&m, &data[3..]) {
        assert_eq!(blob.to_bytes().len(), data.len() - 3);
        let _ = decode_complex(&m, blob.clone());
        let _ = decode_stack(&m, blob);
    }
});
