//! The fuzz corpus seeds are real artifacts; they must keep decoding.

use std::fs;
use std::path::PathBuf;

use mrisde_cli::config::{parse_shape, RunConfig};
use mrisde_cli::format::{decode_blob, decode_mask, decode_model, Manifest};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn manifest_seeds_parse() {
    for (p, bytes) in seeds("manifest") {
        Manifest::from_json(&bytes).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn run_config_seeds_parse() {
    for (p, bytes) in seeds("run_config") {
        RunConfig::from_json(&bytes).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn shape_seeds_parse() {
    for (p, bytes) in seeds("shape") {
        parse_shape(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn container_seeds_decode() {
    let mut decoded = 0;
    for (p, bytes) in seeds("container") {
        let len = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
        let m = Manifest::from_json(&bytes[2..2 + len]).unwrap();
        let blob = decode_blob(&m, &bytes[2 + len..]).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        if decode_mask(&m, blob.clone()).is_ok() || decode_model(&m, blob).is_ok() {
            decoded += 1;
        }
    }
    assert_eq!(decoded, 2);
}

#[test]
fn blob_seeds_decode() {
    use mrisde_cli::format::Dtype;
    for (p, bytes) in seeds("blob") {
        let dtype = [Dtype::C64, Dtype::F32, Dtype::U8][bytes[0] as usize % 3];
        let m = Manifest::new(dtype, vec![bytes[1] as usize % 17, bytes[2] as usize % 17], "seed");
        decode_blob(&m, &bytes[3..]).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
