//! Campaign planning and execution: variants x sweep grid x seeds.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use toml::value::{Table, Value};

use fedlex::orchestrator::RunConfig;

use crate::config_file::{resolve_key, resolve_run, set_path, CampaignSpec};
use crate::runner::execute_run;
use crate::summary::{scan_runs, summarize, write_summary, RankRow, SummaryRow};

#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub variant: String,
    pub point: String,
    pub seed: u64,
    pub cfg: RunConfig,
    pub dir: PathBuf,
}

const VARIANT_KINDS: [&str; 5] = ["avg", "avgm", "sgd", "opt", "prox"];

/// Rewrites the base table for one variant: "avgm" is the plain
/// aggregator, "lex-avgm" the guided one.
fn apply_variant(table: &mut Table, variant: &str) -> Result<()> {
    let (guided, kind) = match variant.strip_prefix("lex-") {
        Some(kind) => (true, kind),
        None => (false, variant),
    };
    if !VARIANT_KINDS.contains(&kind) {
        bail!(
            "unknown variant `{variant}`: expected one of avg, avgm, sgd, opt, prox, optionally prefixed with lex-"
        );
    }
    table.insert("aggregator".to_string(), Value::String(kind.to_string()));
    if guided {
        table
            .entry("guidance".to_string())
            .or_insert_with(|| Value::Table(Table::new()));
    } else {
        table.remove("guidance");
    }
    Ok(())
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        // shortest round-trip form; Display would expand 1e300 to 300 digits
        Value::Float(f) => format!("{f:?}"),
        other => other.to_string(),
    }
}

/// Keeps point labels usable as single directory names.
fn sanitize_dir_name(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c == '/' || c == '\\' || c.is_control() { '_' } else { c })
        .collect();
    const MAX: usize = 96;
    if cleaned.len() <= MAX {
        return cleaned;
    }
    let cut = (0..=MAX).rev().find(|&i| cleaned.is_char_boundary(i)).unwrap_or(0);
    format!("{}-{}", &cleaned[..cut], crate::summary::short_hash(&cleaned))
}

/// Expands the campaign into concrete runs. Fails fast if any grid point
/// resolves to an invalid config or a duplicate directory.
pub fn plan(spec: &CampaignSpec) -> Result<Vec<PlannedRun>> {
    // cartesian product over sweep axes, axes in declared order
    let mut points: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, values) in &spec.sweep {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for point in &points {
            for value in values {
                let mut extended = point.clone();
                extended.push((key.clone(), value.clone()));
                next.push(extended);
            }
        }
        points = next;
    }

    let variants: Vec<Option<String>> = if spec.variants.is_empty() {
        vec![None]
    } else {
        spec.variants.iter().map(|v| Some(v.clone())).collect()
    };

    let mut runs = Vec::new();
    let mut seen_dirs = BTreeSet::new();
    for variant in &variants {
        for point in &points {
            for &seed in &spec.seeds {
                let mut table = spec.base.clone();
                for (key, value) in point {
                    set_path(&mut table, &resolve_key(key)?, value.clone())?;
                }
                // variant wins last: a plain variant stays unguided even when
                // the sweep touches guidance keys
                if let Some(name) = variant {
                    apply_variant(&mut table, name)?;
                }
                table.insert("seed".to_string(), Value::Integer(seed as i64));
                let cfg = resolve_run(table).with_context(|| {
                    format!("campaign point {point:?} seed {seed} variant {variant:?}")
                })?;
                let variant_name = cfg.variant_name();
                let point_name = if point.is_empty() {
                    "base".to_string()
                } else {
                    sanitize_dir_name(
                        &point
                            .iter()
                            .map(|(k, v)| format!("{k}={}", value_label(v)))
                            .collect::<Vec<_>>()
                            .join(","),
                    )
                };
                let dir = spec
                    .output
                    .join(&variant_name)
                    .join(&point_name)
                    .join(format!("seed{seed}"));
                if !seen_dirs.insert(dir.clone()) {
                    bail!("campaign grid produces duplicate run directory {}", dir.display());
                }
                runs.push(PlannedRun { variant: variant_name, point: point_name, seed, cfg, dir });
            }
        }
    }
    Ok(runs)
}

#[derive(Debug)]
pub struct CampaignOutcome {
    pub completed: usize,
    pub failures: Vec<(PathBuf, String)>,
    pub summary: Vec<SummaryRow>,
    pub ranks: Vec<RankRow>,
}

/// Runs the whole grid, then summarizes whatever finished. Individual run
/// failures are recorded in the run directory and reported, not fatal.
pub fn execute_campaign(spec: &CampaignSpec) -> Result<CampaignOutcome> {
    let runs = plan(spec)?;
    std::fs::create_dir_all(&spec.output)?;
    let total = runs.len();
    let mut completed = 0;
    let mut failures = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        eprintln!(
            "[{}/{}] {} {} seed {}",
            i + 1,
            total,
            run.variant,
            run.point,
            run.seed
        );
        match execute_run(&run.cfg, &run.dir) {
            Ok(art) => {
                completed += 1;
                eprintln!(
                    "    done: {} rounds, mean acc {:.2}",
                    art.rounds_completed, art.final_mean_acc
                );
            }
            Err(e) => {
                let reason = format!("{e:#}");
                let _ = std::fs::create_dir_all(&run.dir);
                let _ = std::fs::write(run.dir.join("error.txt"), format!("{reason}\n"));
                eprintln!("    FAILED: {reason}");
                failures.push((run.dir.clone(), reason));
            }
        }
    }
    let (records, incomplete) = scan_runs(std::slice::from_ref(&spec.output))?;
    for (dir, reason) in &incomplete {
        if !failures.iter().any(|(d, _)| d == dir) {
            failures.push((dir.clone(), reason.clone()));
        }
    }
    let (summary, ranks) = summarize(&records);
    write_summary(&spec.output, &summary, &ranks)?;
    Ok(CampaignOutcome { completed, failures, summary, ranks })
}
