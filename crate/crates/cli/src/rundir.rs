//! Run directories and manifests. Directories are append-only: rerunning
//! a name creates a numbered sibling rather than overwriting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::ExperimentConfig;

pub struct RunDir {
    pub path: PathBuf,
    manifest: Vec<(String, String)>,
    started: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunDir {
    /// Create `<workdir>/<name>`, or `<name>-2`, `<name>-3`, ... if taken.
    pub fn create(
        workdir: &Path,
        name: &str,
        config: &ExperimentConfig,
    ) -> std::io::Result<RunDir> {
        fs::create_dir_all(workdir)?;
        let mut path = workdir.join(name);
        let mut suffix = 1;
        while path.exists() {
            suffix += 1;
            path = workdir.join(format!("{name}-{suffix}"));
        }
        fs::create_dir_all(&path)?;
        fs::write(path.join("config.ini"), config.render())?;
        let mut run = RunDir {
            path,
            manifest: Vec::new(),
            started: unix_now(),
        };
        run.record("config_hash", format!("{:016x}", config.hash()));
        Ok(run)
    }

    pub fn record(&mut self, key: &str, value: impl Into<String>) {
        self.manifest.push((key.to_string(), value.into()));
    }

    pub fn record_data_hash(&mut self, label: &str, path: &Path) -> std::io::Result<()> {
        let bytes = fs::read(path)?;
        self.record(
            &format!("data_hash.{label}"),
            format!("{:016x}", lrmt::corpus::fnv1a64(&bytes)),
        );
        Ok(())
    }

    pub fn artifact(&mut self, label: &str, path: &Path) {
        self.record(&format!("artifact.{label}"), path.display().to_string());
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Write `run.manifest` with start/end times and everything recorded.
    pub fn finish(mut self) -> std::io::Result<PathBuf> {
        let finished = unix_now();
        let mut out = fs::File::create(self.path.join("run.manifest"))?;
        writeln!(out, "started_unix = {}", self.started)?;
        writeln!(out, "finished_unix = {finished}")?;
        for (key, value) in self.manifest.drain(..) {
            writeln!(out, "{key} = {value}")?;
        }
        Ok(self.path)
    }
}
