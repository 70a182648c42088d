#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demand_response.json")
}

pub fn rgne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgne"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// The artifact without its manifest link.
pub fn payload(path: &Path) -> serde_json::Value {
    let mut v = json(path);
    v.as_object_mut().unwrap().remove("manifest_hash").expect("artifact carries manifest_hash");
    v
}
