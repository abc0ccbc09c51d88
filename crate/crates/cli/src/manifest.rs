use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub field: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a serde_json::Value,
    inputs: &'a [InputRecord],
    outputs: &'a [PathBuf],
    parallel: bool,
    threads: usize,
    started_unix_seconds: u64,
    wall_time_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = reader.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Tracks one run: validated inputs, produced outputs and timing.
pub struct Run {
    command: &'static str,
    out_dir: PathBuf,
    inputs: Vec<InputRecord>,
    outputs: Vec<PathBuf>,
    threads: usize,
    started: Instant,
    started_unix: u64,
}

impl Run {
    pub fn new(command: &'static str, out_dir: PathBuf, threads: usize) -> Self {
        Run {
            command,
            out_dir,
            inputs: Vec::new(),
            outputs: Vec::new(),
            threads,
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Checks that an input file exists and records its hash. Call for
    /// every input before starting work.
    pub fn input(&mut self, field: &str, path: &Path) -> Result<()> {
        if !path.is_file() {
            bail!("input `{field}` does not exist or is not a file: {}", path.display());
        }
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputRecord {
            field: field.to_string(),
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn input_dir(&mut self, field: &str, path: &Path) -> Result<()> {
        if !path.is_dir() {
            bail!("input `{field}` does not exist or is not a directory: {}", path.display());
        }
        Ok(())
    }

    /// Creates the output directory.
    pub fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating output directory {}", self.out_dir.display()))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out_path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.output(path.clone());
        Ok(path)
    }

    pub fn finish<C: Serialize>(self, config: &C) -> Result<PathBuf> {
        let config = serde_json::to_value(config)?;
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: &config,
            inputs: &self.inputs,
            outputs: &self.outputs,
            parallel: dictlearn::par::is_parallel(),
            threads: self.threads,
            started_unix_seconds: self.started_unix,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
