#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lcner::decode::LogitsRecord;

pub fn lcner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcner")).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = lcner(args);
    assert!(out.status.success(), "lcner {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(args: &[&str]) -> i32 {
    lcner(args).status.code().expect("exited normally")
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Stand-in for an external encoder: deterministic per-character scores
/// with one column per vocabulary label, in vocabulary order.
pub fn stub_export(sentences: &[Vec<String>], k: usize) -> Vec<LogitsRecord> {
    sentences
        .iter()
        .map(|tokens| {
            let logits = tokens
                .iter()
                .enumerate()
                .map(|(t, tok)| {
                    let h = tok.chars().fold(t as u64 + 1, |acc, c| acc.wrapping_mul(31).wrapping_add(c as u64));
                    (0..k).map(|y| ((h.wrapping_mul(y as u64 + 7) % 1000) as f64) / 100.0 - 5.0).collect()
                })
                .collect();
            LogitsRecord { tokens: tokens.clone(), logits }
        })
        .collect()
}
