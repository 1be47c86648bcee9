#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn vflip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vflip"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

/// Run `sub` with `config` into `dir/out_name`; returns the output and the directory.
pub fn run_sub(dir: &Path, sub: &str, config: &Path, out_name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(out_name);
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    (vflip(&args), out)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&read(path)).unwrap()
}
