use std::path::PathBuf;

use hykoop::cli_io::{encode_field, read_snapshot, write_snapshot};
use hykoop::C64;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_field.bin")
}

fn expected(i: usize, j: usize, k: usize) -> C64 {
    let n = (i + 10 * j + 100 * k) as f64;
    C64::new(n + 0.125, -n / 3.0)
}

#[test]
fn golden_file_decodes_to_known_values() {
    let (psi, meta) = read_snapshot(&fixture()).unwrap();
    assert_eq!(meta.shape, [4, 6, 2]);
    assert_eq!(meta.hbar, 0.5);
    assert_eq!(meta.t, 0.25);
    for ((i, j, k), v) in psi.values().indexed_iter() {
        assert_eq!(*v, expected(i, j, k));
    }
}

#[test]
fn golden_file_re_encodes_byte_for_byte() {
    let (psi, meta) = read_snapshot(&fixture()).unwrap();
    let golden = std::fs::read(fixture()).unwrap();
    assert_eq!(encode_field(psi.values()), golden);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("copy.bin");
    let meta2 = write_snapshot(&out, &psi.field, meta.hbar, meta.t).unwrap();
    assert_eq!(meta2, meta);
    assert_eq!(std::fs::read(&out).unwrap(), golden);
}
