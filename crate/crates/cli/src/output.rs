//! Atomic output staging and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use occspot_core::pipeline::PipelineConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::{NamedTempFile, TempDir};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Every regular file below `root`, sorted by relative path.
pub fn digest_tree(root: &Path) -> CliResult<Vec<FileDigest>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("walk stays below root");
                let rel = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                if rel == MANIFEST_FILE {
                    continue;
                }
                let bytes = fs::read(&path)?;
                out.push(FileDigest {
                    path: rel,
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                });
            }
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// One digest for a file or a whole directory tree.
pub fn digest_input(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        let files = digest_tree(path)?;
        let mut h = Sha256::new();
        for f in files {
            h.update(f.path.as_bytes());
            h.update([0]);
            h.update(f.sha256.as_bytes());
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    } else {
        Ok(sha256_hex(&fs::read(path)?))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: &'static str,
    pub sha256: String,
}

/// Everything needed to re-run a command and check its outputs. Paths are
/// relative to the manifest so identical runs give identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub config: Option<PipelineConfig>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &'static str, parameters: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            parameters,
            seed: None,
            config_sha256: None,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_config(mut self, cfg: &PipelineConfig) -> Self {
        self.config_sha256 = Some(config_hash(cfg));
        self.seed = Some(cfg.seed);
        self.config = Some(cfg.clone());
        self
    }

    pub fn input(mut self, role: &'static str, path: &Path) -> CliResult<Self> {
        self.inputs.push(InputDigest {
            role,
            sha256: digest_input(path)?,
        });
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }
}

/// Hash of the canonical serialization, so formatting differences in the
/// source file do not change it.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Temp files and dirs start owner-only; outputs get the usual modes.
#[cfg(unix)]
fn publish_mode(path: &Path, dir: bool) -> CliResult<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(if dir { 0o755 } else { 0o644 }))?;
    Ok(())
}

#[cfg(not(unix))]
fn publish_mode(_: &Path, _: bool) -> CliResult<()> {
    Ok(())
}

fn refuse_existing(path: &Path) -> CliResult<()> {
    if path.exists() {
        return Err(CliError::data(format!(
            "{} already exists; refusing to overwrite",
            path.display()
        )));
    }
    Ok(())
}

/// A directory output assembled under a temporary name and renamed into
/// place on commit; dropped uncommitted, it disappears.
pub struct StagedDir {
    tmp: TempDir,
    target: PathBuf,
}

impl StagedDir {
    pub fn new(target: &Path) -> CliResult<Self> {
        refuse_existing(target)?;
        let parent = parent_of(target);
        fs::create_dir_all(&parent)?;
        let tmp = tempfile::Builder::new().prefix(".occspot-").tempdir_in(&parent)?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    /// Write the manifest over the staged tree, then move it into place.
    pub fn commit(self, mut manifest: Manifest) -> CliResult<PathBuf> {
        manifest.outputs = digest_tree(self.tmp.path())?;
        fs::write(self.tmp.path().join(MANIFEST_FILE), manifest.to_bytes())?;
        refuse_existing(&self.target)?;
        publish_mode(self.tmp.path(), true)?;
        let staged = self.tmp.keep();
        if let Err(e) = fs::rename(&staged, &self.target) {
            let _ = fs::remove_dir_all(&staged);
            return Err(e.into());
        }
        Ok(self.target)
    }
}

/// Single-file outputs written next to a `<name>.manifest.json`. Nothing is
/// visible until every file is complete.
pub struct StagedFiles {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl StagedFiles {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn add(&mut self, target: &Path, bytes: &[u8]) -> CliResult<()> {
        let parent = parent_of(target);
        fs::create_dir_all(&parent)?;
        let mut f = NamedTempFile::new_in(&parent)?;
        f.write_all(bytes)?;
        f.as_file().sync_all()?;
        publish_mode(f.path(), false)?;
        self.files.push((f, target.to_path_buf()));
        Ok(())
    }

    /// Record every staged file in `manifest`, stage the manifest beside
    /// `primary`, then persist all of them.
    pub fn commit(mut self, primary: &Path, mut manifest: Manifest) -> CliResult<PathBuf> {
        let base = parent_of(primary);
        for (f, target) in &self.files {
            let bytes = fs::read(f.path())?;
            let name = target.strip_prefix(&base).unwrap_or(target);
            manifest.outputs.push(FileDigest {
                path: name.to_string_lossy().into_owned(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        let manifest_path = manifest_path_for(primary);
        self.add(&manifest_path, &manifest.to_bytes())?;
        for (f, target) in self.files {
            f.persist(&target).map_err(|e| CliError::Data(e.to_string()))?;
        }
        Ok(manifest_path)
    }
}

pub fn manifest_path_for(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}
