#![allow(dead_code)]

pub mod align;
pub mod decoding;
pub mod filtering;
pub mod scoring;

use std::fs;
use std::path::{Path, PathBuf};

use monomt::fixtures::{CipherFixture, CipherSpec, FixtureFiles};
use monomt::pipeline::{Manifest, PipelineConfig};

/// Write `spec`'s fixture under `dir` and return a config wired to it, with
/// the workspace at `dir/ws`.
pub fn cipher_config(spec: &CipherSpec, dir: &Path) -> (CipherFixture, FixtureFiles, PipelineConfig) {
    let fixture = CipherFixture::generate(spec);
    let files = fixture.write(&dir.join("data")).unwrap();
    let mut c = PipelineConfig::new(
        ("src", &files.src_mono, &files.src_embeddings),
        ("tgt", &files.tgt_mono, &files.tgt_embeddings),
        1e-4,
    );
    c.dev_src = Some(files.dev_src.clone());
    c.dev_ref = Some(files.dev_ref.clone());
    c.test_src = Some(files.test_src.clone());
    c.test_ref = Some(files.test_ref.clone());
    c.workspace = Some(dir.join("ws"));
    c.inventory_cap = 1000;
    c.induction.k = 10;
    c.induction.word_candidates = 50;
    c.smt.lm_order = 3;
    c.beam = 20;
    c.tune = false;
    c.tune_config.beam = 10;
    (fixture, files, c)
}

/// A small fixture that runs the whole loop in a few seconds.
pub fn small_config(dir: &Path) -> PipelineConfig {
    let spec = CipherSpec {
        dev: 20,
        test: 20,
        dim: 24,
        ..CipherSpec::oracle(60, 600, 5)
    };
    let (_, _, mut c) = cipher_config(&spec, dir);
    c.sample_size = 60;
    c.usmt_iterations = 2;
    c.unmt_iterations = 2;
    c
}

pub fn manifest_text(workspace: &Path) -> String {
    fs::read_to_string(workspace.join("manifest.txt")).unwrap()
}

pub fn manifest(workspace: &Path) -> Manifest {
    Manifest::read(manifest_text(workspace).as_bytes()).unwrap()
}

pub fn workspace(c: &PipelineConfig) -> PathBuf {
    c.workspace.clone().unwrap()
}
