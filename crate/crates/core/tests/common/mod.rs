#![allow(dead_code)]

use std::path::PathBuf;

use serde::Deserialize;
use votecast::extractor::{extract, RawMention, Stage};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn workspace_fixtures() -> PathBuf {
    manifest_dir().join("../../fixtures")
}

#[derive(Debug, Deserialize)]
pub struct Expected {
    pub stage: Stage,
    pub well_formed: bool,
    pub mentions: Vec<RawMention>,
}

pub struct Golden {
    pub name: String,
    pub raw: String,
    pub expected: Expected,
}

pub fn golden_fixtures() -> Vec<Golden> {
    let dir = manifest_dir().join("tests/fixtures/extractor");
    let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)
        .expect("fixture dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let sidecar = p.with_extension("expected.json");
            let expected: Expected = serde_json::from_str(&std::fs::read_to_string(&sidecar).expect("sidecar"))
                .unwrap_or_else(|e| panic!("{}: {e}", sidecar.display()));
            Golden {
                name: p.file_stem().unwrap().to_string_lossy().into_owned(),
                raw: std::fs::read_to_string(&p).expect("fixture"),
                expected,
            }
        })
        .collect()
}

/// `None` when the fixture matches its sidecar, else a description of the difference.
pub fn check_golden(g: &Golden) -> Option<String> {
    let got = extract(&g.raw);
    if got.stage != g.expected.stage {
        return Some(format!("{}: stage {} != expected {}", g.name, got.stage, g.expected.stage));
    }
    if got.mentions != g.expected.mentions {
        return Some(format!("{}: mentions {:?} != expected {:?}", g.name, got.mentions, g.expected.mentions));
    }
    None
}

