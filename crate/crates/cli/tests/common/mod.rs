#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use stmix_core::corpus::write_manifest;
use stmix_core::synth::{self, SynthConfig};
use stmix_core::Corpus;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn stmix(dir: &Path, args: &[&str]) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_stmix"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn stmix");
    Output {
        code: o.status.code().expect("exit code"),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
    }
}

/// Writes a synthetic corpus manifest with inline frames.
pub fn write_corpus(dir: &Path, name: &str, cfg: &SynthConfig) -> (PathBuf, Corpus) {
    let c = synth::corpus(cfg);
    let path = dir.join(name);
    write_manifest(&path, &c).unwrap();
    (path, c)
}

pub fn write_embeddings(dir: &Path, name: &str, cfg: &SynthConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, synth::embeddings(cfg, 8).to_text()).unwrap();
    path
}

/// A numeric block in the frame text format.
pub fn block(rows: &[&[f64]]) -> String {
    let mut s = format!("{} {}\n", rows.len(), rows[0].len());
    for r in rows {
        s.push_str(
            &r.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        s.push('\n');
    }
    s
}

/// Writes `files` and a fixture file naming them; returns the fixture path.
pub fn fixture(dir: &Path, name: &str, files: &[(&str, &str, String)]) -> PathBuf {
    let mut spec = String::new();
    for (key, file, body) in files {
        fs::write(dir.join(file), body).unwrap();
        spec.push_str(&format!("{key} = {file}\n"));
    }
    let path = dir.join(name);
    fs::write(&path, spec).unwrap();
    path
}

pub fn line_value<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
}
