use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

pub fn dcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcl"))
        .args(args)
        .output()
        .expect("failed to launch dcl")
}

pub fn dcl_single_threaded(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcl"))
        .env("RAYON_NUM_THREADS", "1")
        .args(args)
        .output()
        .expect("failed to launch dcl")
}

pub fn summary(out: &Path) -> Value {
    let text = std::fs::read_to_string(out.join("summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}
