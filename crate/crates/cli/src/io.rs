//! File helpers shared by the subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{data_err, CliError};

/// Resolve a config path relative to the workdir.
pub fn resolve(workdir: &Path, path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_absolute() {
        p
    } else {
        workdir.join(p)
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| data_err(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Read a whitespace-tokenized file: one sentence per line.
pub fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    Ok(read_lines(path)?
        .into_iter()
        .map(|line| line.split_whitespace().map(str::to_string).collect())
        .collect())
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    let mut out = fs::File::create(path)
        .map_err(|e| data_err(format!("cannot write {}: {e}", path.display())))?;
    for line in lines {
        writeln!(out, "{line}").map_err(|e| data_err(e.to_string()))?;
    }
    Ok(())
}

pub fn write_token_lines(path: &Path, sentences: &[Vec<String>]) -> Result<(), CliError> {
    let lines: Vec<String> = sentences.iter().map(|s| s.join(" ")).collect();
    write_lines(path, &lines)
}

/// A model artifact that must already exist.
pub fn require_artifact(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "{what} not found at {}",
            path.display()
        )));
    }
    Ok(())
}
