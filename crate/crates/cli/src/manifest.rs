use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub const OUTPUT_ROOT_ENV: &str = "HANMLM_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-execute a run: the argv, the working directory
/// and output root it ran in, plus what it read, what it wrote, and the
/// configuration after defaults, config file and flags were merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub cwd: String,
    pub output_root: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    pub status: String,
    pub stage: Option<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// A failure tagged with the pipeline stage it happened in.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub message: String,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for StageFailure {}

pub trait StageExt<T> {
    fn stage(self, name: &'static str) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, name: &'static str) -> Result<T> {
        self.map_err(|e| {
            let e: anyhow::Error = e.into();
            match e.downcast::<StageFailure>() {
                Ok(inner) => anyhow::Error::new(inner),
                Err(e) => anyhow::Error::new(StageFailure {
                    stage: name,
                    message: format!("{e:#}"),
                }),
            }
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest of a file, or of every file below a directory (relative names
/// and contents, in sorted order).
pub fn sha256_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
        h.update([0]);
        h.update(sha256_file(&f)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

/// Per-run bookkeeping: resolves output paths and accumulates the manifest.
pub struct RunContext {
    pub root: PathBuf,
    pub manifest: RunManifest,
    pub manifest_path: Option<PathBuf>,
    started: Instant,
}

impl RunContext {
    pub fn new(command: &str, argv: Vec<String>, root: PathBuf) -> Self {
        let cwd = std::env::current_dir().map(|p| p.display().to_string()).unwrap_or_default();
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                argv,
                cwd,
                output_root: root.display().to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: serde_json::Value::Null,
                seed: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix,
                wall_clock_seconds: 0.0,
                status: "running".into(),
                stage: None,
                error: None,
            },
            root,
            manifest_path: None,
            started: Instant::now(),
        }
    }

    /// `path` resolved against the output root.
    pub fn out_path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    /// Records an input file or directory with its digest; a missing input
    /// fails as `stage`.
    pub fn input(&mut self, path: &Path, stage: &'static str) -> Result<()> {
        let sha256 = sha256_path(path).stage(stage)?;
        self.manifest.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    /// Writes `contents` to `path` (creating parent directories) and records
    /// it as an output.
    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))
                .stage("writing outputs")?;
        }
        std::fs::write(path, contents)
            .with_context(|| format!("writing {}", path.display()))
            .stage("writing outputs")?;
        self.output(path);
        Ok(())
    }

    pub fn finish(&mut self, result: &Result<()>) -> Result<Option<PathBuf>> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        match result {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                match e.downcast_ref::<StageFailure>() {
                    Some(s) => {
                        self.manifest.stage = Some(s.stage.to_string());
                        self.manifest.error = Some(s.message.clone());
                    }
                    None => self.manifest.error = Some(format!("{e:#}")),
                }
            }
        }
        let Some(path) = self.manifest_path.clone() else {
            return Ok(None);
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(Some(path))
    }
}
