//! On-disk workspace: named artifacts, one manifest per stage, and an
//! advisory lock for writers.
//!
//! A manifest records the command that produced a stage, a hash of the
//! configuration the stage depends on, and SHA-256 digests of every file
//! it read and wrote. A stage is fresh when its manifest matches the
//! current configuration, its outputs are untouched, its inputs still have
//! the recorded digests, and every upstream stage is fresh as well.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
const META_FILE: &str = "workspace.json";
const LOCK_FILE: &str = ".lock";
const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Edges,
    Graph,
    Walks,
    Train,
    Eval,
    Compare,
    Cohesion,
    Project,
    Grid,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Edges,
        Stage::Graph,
        Stage::Walks,
        Stage::Train,
        Stage::Eval,
        Stage::Compare,
        Stage::Cohesion,
        Stage::Project,
        Stage::Grid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Edges => "edges",
            Stage::Graph => "graph",
            Stage::Walks => "walks",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Compare => "compare",
            Stage::Cohesion => "cohesion",
            Stage::Project => "project",
            Stage::Grid => "grid",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Edges => &[],
            Stage::Graph => &[Stage::Edges],
            Stage::Walks => &[Stage::Graph],
            Stage::Train => &[Stage::Walks],
            Stage::Eval | Stage::Compare | Stage::Project => &[Stage::Train, Stage::Graph],
            Stage::Cohesion => &[Stage::Train, Stage::Graph, Stage::Edges],
            Stage::Grid => &[Stage::Graph],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub command: String,
    pub config_hash: String,
    /// Input file (workspace-relative name or absolute path) to digest.
    pub upstream: BTreeMap<String, String>,
    /// Output file (workspace-relative) to digest.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Fresh,
    Missing,
    Stale(String),
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Status::Fresh => f.write_str("fresh"),
            Status::Missing => f.write_str("missing"),
            Status::Stale(why) => write!(f, "stale ({why})"),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Opens `root`, creating it when absent. A directory written by an
    /// incompatible version is rejected.
    pub fn open(root: &Path) -> CliResult<Self> {
        let io_err = |e: std::io::Error| CliError::Input(format!("cannot use workspace {}: {e}", root.display()));
        fs::create_dir_all(root.join(MANIFEST_DIR)).map_err(io_err)?;
        let ws = Workspace {
            root: root.to_path_buf(),
        };
        let meta = root.join(META_FILE);
        match fs::read(&meta) {
            Ok(bytes) => {
                let m: Meta = serde_json::from_slice(&bytes)
                    .map_err(|e| CliError::Input(format!("corrupt {}: {e}", meta.display())))?;
                if m.format_version != FORMAT_VERSION {
                    return Err(CliError::Input(format!(
                        "workspace {} has format version {}, expected {FORMAT_VERSION}",
                        root.display(),
                        m.format_version
                    )));
                }
            }
            Err(e) if e.kind() == ErrorKind::NotFound => {
                let text = serde_json::to_vec_pretty(&Meta {
                    format_version: FORMAT_VERSION,
                })
                .expect("meta serializes");
                ws.write(META_FILE, &text)?;
            }
            Err(e) => return Err(io_err(e)),
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    /// Reads a workspace artifact; a missing file is an input error.
    pub fn read(&self, name: &str) -> CliResult<Vec<u8>> {
        let path = self.path(name);
        fs::read(&path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
    }

    /// Writes through a temporary file and a rename, so readers never see
    /// a partially written artifact.
    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::internal(dir.display(), e))?;
        }
        let tmp = path.with_file_name(format!(
            ".{}.tmp",
            path.file_name().and_then(|s| s.to_str()).unwrap_or("artifact")
        ));
        let result = (|| {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        })();
        result.map_err(|e| CliError::internal(format!("cannot write {}", path.display()), e))
    }

    fn manifest_name(stage: Stage) -> String {
        format!("{MANIFEST_DIR}/{}.json", stage.name())
    }

    pub fn manifest(&self, stage: Stage) -> CliResult<Option<Manifest>> {
        let name = Self::manifest_name(stage);
        match fs::read(self.path(&name)) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| CliError::Input(format!("corrupt manifest {name}: {e}"))),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(CliError::internal(name, e)),
        }
    }

    pub fn write_manifest(&self, m: &Manifest, stage: Stage) -> CliResult<()> {
        let text = serde_json::to_vec_pretty(m).expect("manifest serializes");
        self.write(&Self::manifest_name(stage), &text)
    }

    pub fn remove_manifest(&self, stage: Stage) -> CliResult<()> {
        match fs::remove_file(self.path(&Self::manifest_name(stage))) {
            Err(e) if e.kind() != ErrorKind::NotFound => Err(CliError::internal("cannot remove manifest", e)),
            _ => Ok(()),
        }
    }

    fn digest_of(&self, name: &str) -> Option<String> {
        let path = if Path::new(name).is_absolute() {
            PathBuf::from(name)
        } else {
            self.path(name)
        };
        fs::read(path).ok().map(|b| sha256_hex(&b))
    }

    /// Checks one stage's own manifest against `config_hash` and the files
    /// on disk, ignoring upstream stages.
    pub fn own_status(&self, stage: Stage, config_hash: &str) -> CliResult<Status> {
        let Some(m) = self.manifest(stage)? else {
            return Ok(Status::Missing);
        };
        if m.config_hash != config_hash {
            return Ok(Status::Stale("configuration changed".into()));
        }
        for (name, digest) in &m.outputs {
            if self.digest_of(name).as_deref() != Some(digest.as_str()) {
                return Ok(Status::Stale(format!("{name} modified or missing")));
            }
        }
        for (name, digest) in &m.upstream {
            if self.digest_of(name).as_deref() != Some(digest.as_str()) {
                return Ok(Status::Stale(format!("input {name} changed")));
            }
        }
        Ok(Status::Fresh)
    }

    /// Own status combined with the status of every upstream stage.
    /// `config_hash` gives the expected hash of any stage.
    pub fn status(&self, stage: Stage, config_hash: &dyn Fn(Stage) -> String) -> CliResult<Status> {
        let own = self.own_status(stage, &config_hash(stage))?;
        if own != Status::Fresh {
            return Ok(own);
        }
        for &up in stage.upstream() {
            // Cohesion only reads the edges stage when it was synthetic, and
            // a stage that never recorded an input from there is unaffected.
            if !self.reads_from(stage, up)? {
                continue;
            }
            match self.status(up, config_hash)? {
                Status::Fresh => {}
                other => return Ok(Status::Stale(format!("upstream {up} is {other}"))),
            }
        }
        Ok(Status::Fresh)
    }

    fn reads_from(&self, stage: Stage, up: Stage) -> CliResult<bool> {
        let (Some(m), Some(u)) = (self.manifest(stage)?, self.manifest(up)?) else {
            return Ok(true);
        };
        Ok(m.upstream.keys().any(|k| u.outputs.contains_key(k)))
    }

    /// Takes the writer lock. A lock left by a process that no longer runs
    /// is taken over.
    pub fn lock(&self) -> CliResult<WorkspaceLock> {
        let path = self.path(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(WorkspaceLock { path });
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let pid: Option<u32> = holder.trim().parse().ok();
                    if pid.is_some_and(process_alive) {
                        return Err(CliError::Input(format!(
                            "workspace {} is locked by running process {}",
                            self.root.display(),
                            pid.unwrap()
                        )));
                    }
                    log::warn!("removing stale workspace lock left by {:?}", holder.trim());
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(CliError::internal(format!("cannot create {}", path.display()), e)),
            }
        }
        Err(CliError::Input(format!("could not lock workspace {}", self.root.display())))
    }
}

/// Without a `/proc` filesystem every recorded holder is presumed alive.
fn process_alive(pid: u32) -> bool {
    if !Path::new("/proc/self").exists() {
        return true;
    }
    Path::new(&format!("/proc/{pid}")).exists()
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Collects the digests of everything a stage reads and writes, then
/// records them in the stage manifest.
pub struct StageIo<'a> {
    ws: &'a Workspace,
    upstream: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> StageIo<'a> {
    pub fn new(ws: &'a Workspace) -> Self {
        StageIo {
            ws,
            upstream: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn workspace(&self) -> &Workspace {
        self.ws
    }

    pub fn read(&mut self, name: &str) -> CliResult<Vec<u8>> {
        let bytes = self.ws.read(name)?;
        self.upstream.insert(name.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Reads a file outside the workspace.
    pub fn read_external(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        let key = fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
        self.upstream.insert(key.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        self.ws.write(name, bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Renders with `f` into memory, then writes.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::internal(name, e))?;
        self.write(name, &buf)
    }

    pub fn finish(self, stage: Stage, command: &str, config_hash: String) -> CliResult<()> {
        let m = Manifest {
            stage: stage.name().to_string(),
            command: command.to_string(),
            config_hash,
            upstream: self.upstream,
            outputs: self.outputs,
        };
        self.ws.write_manifest(&m, stage)
    }
}
