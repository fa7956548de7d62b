//! Executes one run into a directory: manifest first, metrics streamed
//! row by row, final guidance matrix for exploring runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use fedlex::orchestrator::{csv_header, run_experiment_with, Manifest, RunConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GUIDANCE_FILE: &str = "g_global.bin";
pub const GUIDANCE_SIDECAR: &str = "g_global.layout.json";

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub rounds_completed: usize,
    pub final_mean_acc: f64,
    pub final_pooled_acc: f64,
}

/// Runs `cfg` inside `dir`. The manifest is written before training
/// starts, so even a failed run leaves a reproducible record.
pub fn execute_run(cfg: &RunConfig, dir: &Path) -> Result<RunArtifacts> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create run directory {}", dir.display()))?;
    let manifest = Manifest::new(cfg.clone())?;
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_json()?)?;

    let metrics_path = dir.join(METRICS_FILE);
    let file = File::create(&metrics_path)
        .with_context(|| format!("cannot create {}", metrics_path.display()))?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "{}", csv_header()).map_err(fedlex::Error::from)?;

    let output = run_experiment_with(cfg, |row| {
        if !row.dropped.is_empty() {
            eprintln!("warning: round {} dropped diverged clients {:?}", row.round, row.dropped);
        }
        writeln!(writer, "{}", row.csv_row())?;
        Ok(())
    })?;
    writer.flush()?;

    if let Some(g) = &output.final_guidance {
        g.save(&dir.join(GUIDANCE_FILE), &dir.join(GUIDANCE_SIDECAR))?;
    }

    let last = output.metrics.last().expect("a run produces at least one round");
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        rounds_completed: last.round,
        final_mean_acc: last.mean_acc,
        final_pooled_acc: last.pooled_acc,
    })
}
