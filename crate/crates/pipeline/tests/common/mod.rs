#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use splatgen::config::{validate_config, GenerationConfig};
use splatgen::fixture::{write_fixture, FixtureOptions};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config_path: PathBuf,
    pub config: GenerationConfig,
}

impl Fixture {
    pub fn new(opts: &FixtureOptions) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config_path = write_fixture(dir.path(), opts).unwrap();
        let config = validate_config(&config_path).unwrap();
        Self { dir, config_path, config }
    }

    pub fn small() -> Self {
        Self::new(&FixtureOptions {
            image_size: 32,
            ..FixtureOptions::default()
        })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// A fresh output folder inside the fixture.
    pub fn out(&self, name: &str) -> PathBuf {
        self.path().join("out").join(name)
    }

    /// Writes `config` next to the fixture and returns its path.
    pub fn write_config(&self, name: &str, config: &GenerationConfig) -> PathBuf {
        let p = self.path().join(name);
        fs::write(&p, config.to_string()).unwrap();
        p
    }
}

pub fn no_augmentation(c: &mut GenerationConfig) {
    let a = &mut c.augment;
    a.object_pose.enabled = false;
    a.object_type.enabled = false;
    a.camera.enabled = false;
    a.embodiment.enabled = false;
    a.appearance.enabled = false;
    a.lighting.enabled = false;
}

/// SHA-256 of every file below `dir`, keyed by relative path.
pub fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(fs::read(&p).unwrap());
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    out
}
