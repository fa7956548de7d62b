//! Aggregates finished runs into summary and rank tables.
//!
//! Runs are grouped by variant plus config point (the resolved config
//! with the seed zeroed out). Mean ranks follow the usual Friedman
//! preprocessing: variants are ranked per config point (ties get average
//! ranks) and the ranks are averaged over points where every variant is
//! present.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use sha2::{Digest, Sha256};

use fedlex::aggregation::{AggHyper, AggregatorKind};
use fedlex::data::PartitionScheme;
use fedlex::orchestrator::{csv_header, mean_std, ExplorerSpec, Manifest, RunConfig};

use crate::runner::{MANIFEST_FILE, METRICS_FILE};

/// One completed run, reduced to what the tables need.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub variant: String,
    /// Config identity with the seed removed; groups seeds of one point.
    pub summary_key: String,
    /// Config identity with seed and variant-defining knobs removed;
    /// aligns points across variants for ranking.
    pub rank_key: String,
    pub label: String,
    pub seed: u64,
    pub final_mean_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub point: String,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub variant: String,
    pub mean_rank: f64,
    pub points: usize,
}

fn config_without_seed(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.seed = 0;
    c
}

fn config_rank_identity(cfg: &RunConfig) -> RunConfig {
    let mut c = config_without_seed(cfg);
    c.aggregator = AggregatorKind::Avg;
    c.hyper = AggHyper::defaults_for(AggregatorKind::Avg);
    c.guidance = None;
    c
}

pub(crate) fn short_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let hex = format!("{:x}", hasher.finalize());
    hex[..8].to_string()
}

/// Compact human-readable point label; disambiguated later if two
/// distinct points collide.
fn base_label(cfg: &RunConfig) -> String {
    let part = match &cfg.partition {
        PartitionScheme::Pathological { classes_per_client } => format!("path{classes_per_client}"),
        PartitionScheme::Dirichlet { alpha } => format!("dir{alpha}"),
    };
    let mut label = format!("C{}-K{}-{}", cfg.clients, cfg.clients_per_round, part);
    if let Some(g) = &cfg.guidance {
        let x = match g.explorers {
            ExplorerSpec::Count(n) => n.to_string(),
            // percent sign keeps fractions distinguishable from counts
            ExplorerSpec::Fraction(f) => format!("{}pct", f * 100.0),
        };
        label.push_str(&format!("-x{x}-e{}", g.explore_epochs));
    }
    label
}

/// Reads the final mean accuracy out of a metrics file, validating the
/// schema.
pub fn final_mean_acc(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty metrics file"))?;
    if header != csv_header() {
        return Err(anyhow!("unexpected metrics header `{header}`"));
    }
    let last = lines.last().ok_or_else(|| anyhow!("metrics file has no rows"))?;
    let fields: Vec<&str> = last.split(',').collect();
    if fields.len() != 7 {
        return Err(anyhow!("malformed metrics row `{last}`"));
    }
    fields[1].parse::<f64>().map_err(|e| anyhow!("bad mean_acc field: {e}"))
}

fn collect_manifests(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_manifests(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            found.push(path);
        }
    }
    Ok(())
}

/// Scans directories for run results. Returns the usable records plus the
/// run directories that had a manifest but no readable metrics.
pub fn scan_runs(dirs: &[PathBuf]) -> Result<(Vec<RunRecord>, Vec<(PathBuf, String)>)> {
    let mut manifests = Vec::new();
    for dir in dirs {
        collect_manifests(dir, &mut manifests)?;
    }
    let mut records = Vec::new();
    let mut incomplete = Vec::new();
    for manifest_path in manifests {
        let run_dir = manifest_path.parent().expect("manifest has a parent").to_path_buf();
        let outcome = (|| -> Result<RunRecord> {
            let manifest = Manifest::from_json(&std::fs::read_to_string(&manifest_path)?)?;
            let acc = final_mean_acc(&run_dir.join(METRICS_FILE))?;
            let cfg = &manifest.config;
            Ok(RunRecord {
                variant: cfg.variant_name(),
                summary_key: serde_json::to_string(&config_without_seed(cfg))?,
                rank_key: serde_json::to_string(&config_rank_identity(cfg))?,
                label: base_label(cfg),
                seed: cfg.seed,
                final_mean_acc: acc,
            })
        })();
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => incomplete.push((run_dir, format!("{e:#}"))),
        }
    }
    Ok((records, incomplete))
}

/// Average ranks of `values` where larger is better; ties share the mean
/// of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("rankable values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average 1-based rank
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Builds the summary and rank tables. Deterministic in the record set.
pub fn summarize(records: &[RunRecord]) -> (Vec<SummaryRow>, Vec<RankRow>) {
    // group runs by (variant, point)
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.variant.clone(), r.summary_key.clone())).or_default().push(r);
    }

    // labels collide when two distinct points share the human label; add a
    // content-hash suffix to those
    let mut label_points: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for ((variant, key), runs) in &groups {
        label_points
            .entry((variant.clone(), runs[0].label.clone()))
            .or_default()
            .insert(key.clone());
    }
    let point_label = |variant: &str, key: &str, label: &str| -> String {
        let set = &label_points[&(variant.to_string(), label.to_string())];
        if set.len() > 1 {
            format!("{label}-{}", short_hash(key))
        } else {
            label.to_string()
        }
    };

    let mut rows = Vec::new();
    for ((variant, key), runs) in &groups {
        let accs: Vec<f64> = runs.iter().map(|r| r.final_mean_acc).collect();
        let (mean_acc, std_acc) = mean_std(&accs);
        rows.push(SummaryRow {
            variant: variant.clone(),
            point: point_label(variant, key, &runs[0].label),
            mean_acc,
            std_acc,
            runs: runs.len(),
        });
    }
    rows.sort_by(|a, b| (&a.variant, &a.point).cmp(&(&b.variant, &b.point)));

    // rank blocks: one per rank_key where every variant shows up exactly
    // once; incomplete or ambiguous blocks are skipped
    let variants: BTreeSet<String> = records.iter().map(|r| r.variant.clone()).collect();
    let mut blocks: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for ((variant, _), runs) in &groups {
        let rank_key = runs[0].rank_key.clone();
        let accs: Vec<f64> = runs.iter().map(|r| r.final_mean_acc).collect();
        let (mean_acc, _) = mean_std(&accs);
        blocks.entry(rank_key).or_default().entry(variant.clone()).or_default().push(mean_acc);
    }
    let mut rank_sum: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for by_variant in blocks.values() {
        let complete = by_variant.len() == variants.len()
            && by_variant.values().all(|points| points.len() == 1);
        if !complete {
            continue;
        }
        let names: Vec<&String> = by_variant.keys().collect();
        let values: Vec<f64> = by_variant.values().map(|points| points[0]).collect();
        for (name, rank) in names.iter().zip(average_ranks(&values)) {
            let entry = rank_sum.entry((*name).clone()).or_insert((0.0, 0));
            entry.0 += rank;
            entry.1 += 1;
        }
    }
    let ranks = rank_sum
        .into_iter()
        .map(|(variant, (sum, points))| RankRow {
            variant,
            mean_rank: sum / points as f64,
            points,
        })
        .collect();
    (rows, ranks)
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const RANKS_FILE: &str = "ranks.csv";

/// Writes both tables into `out_dir`.
pub fn write_summary(out_dir: &Path, rows: &[SummaryRow], ranks: &[RankRow]) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut summary = String::from("variant,point,mean_acc,std_acc,runs\n");
    for r in rows {
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant, r.point, r.mean_acc, r.std_acc, r.runs
        ));
    }
    std::fs::write(out_dir.join(SUMMARY_FILE), summary)?;

    let mut table = String::from("variant,mean_rank,points\n");
    for r in ranks {
        table.push_str(&format!("{},{},{}\n", r.variant, r.mean_rank, r.points));
    }
    std::fs::write(out_dir.join(RANKS_FILE), table)?;
    Ok(())
}
