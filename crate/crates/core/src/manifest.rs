//! Run manifests: enough provenance to replay any run.
//!
//! Every CLI run writes a manifest *beside* its primary output (for a
//! directory `out/`, the file is `out.manifest.json`), never inside it, so
//! output directories stay byte-comparable across reruns while the
//! manifest records config/input/output digests and wall time.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hash::{sha256_file, sha256_hex};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub input_digests: BTreeMap<String, String>,
    pub output_digests: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64) -> RunManifest {
        RunManifest {
            command: command.into(),
            config_digest: String::new(),
            input_digests: BTreeMap::new(),
            output_digests: BTreeMap::new(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: 0.0,
        }
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) {
        let json = serde_json::to_vec(config).expect("config serializes");
        self.config_digest = sha256_hex(&json);
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> io::Result<()> {
        self.input_digests.insert(name.to_string(), digest_path(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, name: &str, path: &Path) -> io::Result<()> {
        self.output_digests.insert(name.to_string(), digest_path(path)?);
        Ok(())
    }

    /// Writes `<target>.manifest.json` next to the output it describes.
    pub fn write_beside(&self, target: &Path) -> io::Result<PathBuf> {
        let path = manifest_path(target);
        let data = serde_json::to_vec_pretty(self).expect("manifest serializes");
        std::fs::write(&path, data)?;
        Ok(path)
    }
}

pub fn manifest_path(target: &Path) -> PathBuf {
    let name = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    target.with_file_name(format!("{name}.manifest.json"))
}

/// Content digest of a file, or of a directory tree (over sorted relative
/// paths and per-file digests, manifests excluded).
pub fn digest_path(path: &Path) -> io::Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        let mut lines = String::new();
        for rel in files {
            let file_digest = sha256_file(&path.join(&rel))?;
            lines.push_str(&format!("{rel}\x00{file_digest}\n"));
        }
        Ok(sha256_hex(lines.as_bytes()))
    } else {
        sha256_file(path)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("under root")
                .to_string_lossy()
                .into_owned();
            if rel.ends_with(".manifest.json") {
                continue;
            }
            out.push(rel);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_digest_is_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("a.txt"), b"alpha").unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), b"beta").unwrap();

        let d1 = digest_path(dir.path()).unwrap();
        let d2 = digest_path(dir.path()).unwrap();
        assert_eq!(d1, d2);

        std::fs::write(dir.path().join("sub/b.txt"), b"BETA").unwrap();
        assert_ne!(digest_path(dir.path()).unwrap(), d1);
    }

    #[test]
    fn manifest_files_do_not_affect_directory_digests() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data.bin"), b"payload").unwrap();
        let before = digest_path(dir.path()).unwrap();
        std::fs::write(dir.path().join("data.manifest.json"), b"{}").unwrap();
        assert_eq!(digest_path(dir.path()).unwrap(), before);
    }

    #[test]
    fn manifest_written_beside_not_inside() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        std::fs::create_dir(&out).unwrap();
        std::fs::write(out.join("x"), b"x").unwrap();

        let mut manifest = RunManifest::new("test", 7);
        manifest.add_output("out", &out).unwrap();
        let path = manifest.write_beside(&out).unwrap();
        assert_eq!(path, dir.path().join("out.manifest.json"));
        assert!(path.exists());
        // The output dir itself holds only its own files.
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), 1);
    }
}
