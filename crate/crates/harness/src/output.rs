//! Run directories. Each holds `manifest.json`, which is written as
//! `incomplete` before any result file and flipped to `complete` only
//! after the command succeeds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::config_hash;
use crate::{Error, Result, OUTPUT_ROOT_VAR};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved configuration; loadable with `--config`.
    pub config: Value,
    pub config_hash: String,
    pub status: Status,
    pub error: Option<String>,
    /// Paths relative to the run directory.
    pub files: Vec<String>,
    /// Command-specific extras (sweep axis, pass/fail summaries, ...).
    pub extra: Value,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(Error::io(format!("reading {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Failed(format!("bad manifest {}: {e}", path.display())))
    }
}

/// `flag`, else `$LQL_OUTPUT_ROOT`, else `./lql-out`.
pub fn output_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("lql-out"),
    }
}

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    /// Creates `root/name`, or `root/name-2`, `-3`, ... when taken; never
    /// reuses an existing directory.
    pub fn create(root: &Path, name: &str, command: &str, argv: &[String], config: Value) -> Result<Self> {
        fs::create_dir_all(root).map_err(Error::io(format!("creating {}", root.display())))?;
        let mut path = root.join(name);
        let mut k = 2;
        loop {
            match fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    path = root.join(format!("{name}-{k}"));
                    k += 1;
                }
                Err(e) => return Err(Error::io(format!("creating {}", path.display()))(e)),
            }
        }
        Self::init(path, command, argv, config)
    }

    /// A fresh directory at exactly `path` (used for per-run subdirectories).
    pub fn create_at(path: PathBuf, command: &str, argv: &[String], config: Value) -> Result<Self> {
        fs::create_dir_all(&path).map_err(Error::io(format!("creating {}", path.display())))?;
        Self::init(path, command, argv, config)
    }

    fn init(path: PathBuf, command: &str, argv: &[String], config: Value) -> Result<Self> {
        let manifest = Manifest {
            tool: "lql".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            config_hash: config_hash(&config),
            config,
            status: Status::Incomplete,
            error: None,
            files: Vec::new(),
            extra: Value::Null,
        };
        let dir = Self { path, manifest };
        dir.write_manifest()?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Path for a result file, recorded in the manifest.
    pub fn file(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.path.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(Error::io(format!("creating {}", parent.display())))?;
        }
        if !self.manifest.files.iter().any(|f| f == rel) {
            self.manifest.files.push(rel.to_string());
        }
        Ok(p)
    }

    pub fn create_file(&mut self, rel: &str) -> Result<fs::File> {
        let p = self.file(rel)?;
        fs::File::create(&p).map_err(Error::io(format!("creating {}", p.display())))
    }

    pub fn set_extra(&mut self, extra: Value) {
        self.manifest.extra = extra;
    }

    /// Records success, or keeps `incomplete` with the error message.
    pub fn finish<T>(mut self, outcome: &Result<T>) -> Result<()> {
        match outcome {
            Ok(_) => self.manifest.status = Status::Complete,
            Err(e) => self.manifest.error = Some(e.to_string()),
        }
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<()> {
        let p = self.path.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        // Write-then-rename so a crash never leaves a truncated manifest.
        let tmp = self.path.join(".manifest.json.tmp");
        fs::write(&tmp, text).map_err(Error::io(format!("writing {}", tmp.display())))?;
        fs::rename(&tmp, &p).map_err(Error::io(format!("writing {}", p.display())))
    }
}
