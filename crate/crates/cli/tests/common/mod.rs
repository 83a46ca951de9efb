//! Shared helpers for the CLI integration and acceptance tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Writes a small ring dataset (train/valid/test TSVs) into `dir`.
/// Entities e0..e<n>, relations +1 and +3; a handful of facts are held
/// out per eval split.
pub fn write_toy_dataset(dir: &Path, n: u32) {
    let fact = |i: u32, k: u32, name: &str| format!("e{i}\t{name}\te{}\n", (i + k) % n);
    let mut train = String::new();
    let mut valid = String::new();
    let mut test = String::new();
    for i in 0..n {
        for (k, name) in [(1, "+1"), (3, "+3")] {
            let line = fact(i, k, name);
            match i % 10 {
                8 => valid.push_str(&line),
                9 => test.push_str(&line),
                _ => train.push_str(&line),
            }
        }
    }
    fs::write(dir.join("train.txt"), train).unwrap();
    fs::write(dir.join("valid.txt"), valid).unwrap();
    fs::write(dir.join("test.txt"), test).unwrap();
}

pub fn kge_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_kge"))
}

/// Runs the binary with the given args and returns the full output.
pub fn run_kge<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(kge_bin())
        .args(args)
        .output()
        .expect("failed to spawn kge")
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

#[allow(dead_code)] // not every test target uses every helper
pub fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}
