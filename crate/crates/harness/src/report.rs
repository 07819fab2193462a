//! Writes a run report as JSON, per-section CSV files and the effective
//! scenario TOML, plus a manifest with SHA-256 digests of every file.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::runner::RunReport;
use crate::{HarnessError, ARTIFACT_VERSION};

#[derive(Debug, Serialize)]
struct Manifest {
    artifact_version: &'static str,
    scenario: String,
    seed: u64,
    files: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    file: String,
    sha256: String,
}

/// Writes all artifacts into `dir` (created if missing) and returns their paths.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| io_error(dir, source))?;
    let mut files = Vec::new();
    let json =
        serde_json::to_string_pretty(report).map_err(|e| HarnessError::Output(e.to_string()))?;
    files.push(write_file(dir, "report.json", json.as_bytes())?);
    files.push(write_file(
        dir,
        "scenario.toml",
        report.scenario.effective_toml()?.as_bytes(),
    )?);
    write_csv(dir, "fidelity.csv", &report.fidelity, &mut files)?;
    write_csv(dir, "budget.csv", &report.budget, &mut files)?;
    write_csv(dir, "bsm_breakdown.csv", &report.bsm_breakdown, &mut files)?;
    write_csv(dir, "correlations.csv", &report.correlations, &mut files)?;
    write_csv(dir, "rates.csv", &report.rates, &mut files)?;
    write_csv(dir, "bar_curves.csv", &report.bar_curves, &mut files)?;
    write_csv(dir, "memory_curves.csv", &report.memory_curves, &mut files)?;

    let mut entries = Vec::new();
    for path in &files {
        let bytes = std::fs::read(path).map_err(|source| io_error(path, source))?;
        entries.push(ManifestEntry {
            file: path
                .file_name()
                .expect("artifact has a file name")
                .to_string_lossy()
                .into_owned(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        artifact_version: ARTIFACT_VERSION,
        scenario: report.scenario.name.clone(),
        seed: report.scenario.seed,
        files: entries,
    };
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Output(e.to_string()))?;
    files.push(write_file(dir, "manifest.json", text.as_bytes())?);
    Ok(files)
}

/// Empty sections produce no file.
fn write_csv<T: Serialize>(
    dir: &Path,
    name: &str,
    rows: &[T],
    files: &mut Vec<PathBuf>,
) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Ok(());
    }
    let path = dir.join(name);
    write_table(&path, rows)?;
    files.push(path);
    Ok(())
}

/// Writes `rows` as CSV with a header row.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| HarnessError::Output(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| HarnessError::Output(e.to_string()))?;
    }
    writer.flush().map_err(|source| io_error(path, source))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| io_error(&path, source))?;
    Ok(path)
}

fn io_error(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}
