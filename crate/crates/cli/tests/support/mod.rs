//! Helpers for driving the `vsmeta` binary from tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn vsmeta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsmeta"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn vsmeta")
}

/// Run and require exit code 0; returns stdout.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = vsmeta(dir, args);
    assert!(
        out.status.success(),
        "vsmeta {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(dir: &Path, args: &[&str]) -> i32 {
    vsmeta(dir, args).status.code().unwrap_or(-1)
}

/// Three small datasets sharing one scoring mechanism: a.mlvs, b.mlvs, c.mlvs.
pub fn gen_three(dir: &Path, extra: &[&str]) -> PathBuf {
    for (name, seed) in [("a", "100"), ("b", "101"), ("c", "102")] {
        let out = format!("{name}.mlvs");
        let mut args = vec!["gen", "--name", name, "--seed", seed, "--out", &out];
        args.extend_from_slice(extra);
        ok(dir, &args);
    }
    dir.to_path_buf()
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

pub fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap()
}

pub const DATA: &str = "a.mlvs,b.mlvs,c.mlvs";

/// A fast training configuration shared by `train` and `sweep`.
pub const TINY: &[&str] = &[
    "--data",
    DATA,
    "--test-dataset",
    "c",
    "--lstm-hidden",
    "4",
    "--mlp-hidden",
    "4",
    "--max-iters",
    "20",
    "--eval-interval",
    "5",
    "--max-segments",
    "24",
];

pub const RATES: &[&str] = &["--alpha", "0.01", "--beta", "0.1"];
