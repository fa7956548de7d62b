//! Config file loading: TOML documents with defaults, key overrides, and
//! campaign extraction.
//!
//! A run file is a shallow TOML document; every unset key takes the
//! documented default. A campaign file is a run file plus any of `seeds`,
//! `variants`, `sweep`, and `output`. A `.json` path is read as a run
//! manifest instead.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use toml::value::{Table, Value};

use fedlex::aggregation::{AggHyper, AggregatorKind};
use fedlex::data::PartitionScheme;
use fedlex::nn::Activation;
use fedlex::orchestrator::{
    DatasetConfig, ExplorerSpec, GuidanceConfig, Manifest, ModelConfig, RunConfig,
};

/// Defaults applied to unset keys.
mod defaults {
    pub const SEED: u64 = 0;
    pub const ROUNDS: usize = 500;
    pub const BATCH_SIZE: usize = 50;
    pub const LOCAL_EPOCHS: usize = 1;
    pub const CLIENTS: usize = 20;
    pub const CLIENTS_PER_ROUND: usize = 5;
    pub const ETA: f64 = 0.0003;
    pub const WEIGHT_DECAY: f64 = 0.0001;
    pub const EXPLORE_EPOCHS: usize = 150;
    pub const CLASSES: usize = 10;
    pub const INPUT_DIM: usize = 32;
    pub const PER_CLASS: usize = 200;
    pub const SEPARATION: f64 = 3.0;
    pub const CLASSES_PER_CLIENT: usize = 2;
    pub const DIRICHLET_ALPHA: f64 = 0.3;
    pub const HIDDEN: &[usize] = &[64];
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    seed: Option<u64>,
    rounds: Option<usize>,
    batch_size: Option<usize>,
    local_epochs: Option<usize>,
    clients: Option<usize>,
    clients_per_round: Option<usize>,
    eta: Option<f64>,
    weight_decay: Option<f64>,
    aggregator: Option<AggregatorKind>,
    early_stop: Option<bool>,
    hyper: Option<HyperFile>,
    guidance: Option<GuidanceFile>,
    dataset: Option<DatasetFile>,
    partition: Option<PartitionFile>,
    model: Option<ModelFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperFile {
    server_lr: Option<f64>,
    beta_momentum: Option<f64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_eps: Option<f64>,
    prox_mu: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GuidanceFile {
    explorers: Option<ExplorerSpec>,
    explore_epochs: Option<usize>,
    floor: Option<f64>,
    per_layer_norm: Option<bool>,
    delta_mode: Option<bool>,
    force_ones: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    kind: Option<String>,
    classes: Option<usize>,
    input_dim: Option<usize>,
    per_class: Option<usize>,
    separation: Option<f64>,
    images: Option<String>,
    labels: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionFile {
    scheme: Option<String>,
    classes_per_client: Option<usize>,
    alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    hidden: Option<Vec<usize>>,
    activation: Option<Activation>,
}

fn resolve_dataset(file: Option<DatasetFile>) -> Result<DatasetConfig> {
    let file = file.unwrap_or(DatasetFile {
        kind: None,
        classes: None,
        input_dim: None,
        per_class: None,
        separation: None,
        images: None,
        labels: None,
    });
    let kind = file.kind.as_deref().unwrap_or("synthetic");
    match kind {
        "synthetic" => {
            if file.images.is_some() || file.labels.is_some() {
                bail!("invalid config `dataset.images`: only meaningful for kind = \"idx\"");
            }
            Ok(DatasetConfig::Synthetic {
                classes: file.classes.unwrap_or(defaults::CLASSES),
                input_dim: file.input_dim.unwrap_or(defaults::INPUT_DIM),
                per_class: file.per_class.unwrap_or(defaults::PER_CLASS),
                separation: file.separation.unwrap_or(defaults::SEPARATION),
            })
        }
        "idx" => {
            if file.classes.is_some()
                || file.input_dim.is_some()
                || file.per_class.is_some()
                || file.separation.is_some()
            {
                bail!("invalid config `dataset.classes`: only meaningful for kind = \"synthetic\"");
            }
            let images = file
                .images
                .ok_or_else(|| anyhow!("invalid config `dataset.images`: required for kind = \"idx\""))?;
            let labels = file
                .labels
                .ok_or_else(|| anyhow!("invalid config `dataset.labels`: required for kind = \"idx\""))?;
            Ok(DatasetConfig::Idx { images, labels })
        }
        other => bail!("invalid config `dataset.kind`: expected \"synthetic\" or \"idx\", got \"{other}\""),
    }
}

fn resolve_partition(file: Option<PartitionFile>) -> Result<PartitionScheme> {
    let file = file.unwrap_or(PartitionFile { scheme: None, classes_per_client: None, alpha: None });
    let scheme = file.scheme.as_deref().unwrap_or("pathological");
    match scheme {
        "pathological" => {
            if file.alpha.is_some() {
                bail!("invalid config `partition.alpha`: only meaningful for scheme = \"dirichlet\"");
            }
            Ok(PartitionScheme::Pathological {
                classes_per_client: file.classes_per_client.unwrap_or(defaults::CLASSES_PER_CLIENT),
            })
        }
        "dirichlet" => {
            if file.classes_per_client.is_some() {
                bail!(
                    "invalid config `partition.classes_per_client`: only meaningful for scheme = \"pathological\""
                );
            }
            Ok(PartitionScheme::Dirichlet { alpha: file.alpha.unwrap_or(defaults::DIRICHLET_ALPHA) })
        }
        other => {
            bail!("invalid config `partition.scheme`: expected \"pathological\" or \"dirichlet\", got \"{other}\"")
        }
    }
}

/// Turns a run table into a fully resolved, validated config.
pub fn resolve_run(table: Table) -> Result<RunConfig> {
    let file: RunFile = Value::Table(table).try_into().context("invalid config")?;
    let aggregator = file.aggregator.unwrap_or(AggregatorKind::Avg);
    let eta = file.eta.unwrap_or(defaults::ETA);

    let mut hyper = AggHyper::defaults_for(aggregator);
    // without an explicit server_lr, direct gradient averaging descends at
    // the client learning rate
    if aggregator == AggregatorKind::Sgd {
        hyper.server_lr = eta;
    }
    if let Some(h) = file.hyper {
        if let Some(v) = h.server_lr {
            hyper.server_lr = v;
        }
        if let Some(v) = h.beta_momentum {
            hyper.beta_momentum = v;
        }
        if let Some(v) = h.adam_beta1 {
            hyper.adam_beta1 = v;
        }
        if let Some(v) = h.adam_beta2 {
            hyper.adam_beta2 = v;
        }
        if let Some(v) = h.adam_eps {
            hyper.adam_eps = v;
        }
        if let Some(v) = h.prox_mu {
            hyper.prox_mu = v;
        }
    }

    let guidance = file.guidance.map(|g| GuidanceConfig {
        explorers: g.explorers.unwrap_or(ExplorerSpec::Fraction(1.0)),
        explore_epochs: g.explore_epochs.unwrap_or(defaults::EXPLORE_EPOCHS),
        floor: g.floor.unwrap_or(0.0),
        per_layer_norm: g.per_layer_norm.unwrap_or(false),
        delta_mode: g.delta_mode.unwrap_or(false),
        force_ones: g.force_ones.unwrap_or(false),
    });

    let model = match file.model {
        Some(m) => ModelConfig {
            hidden: m.hidden.unwrap_or_else(|| defaults::HIDDEN.to_vec()),
            activation: m.activation.unwrap_or(Activation::Relu),
        },
        None => ModelConfig { hidden: defaults::HIDDEN.to_vec(), activation: Activation::Relu },
    };

    let cfg = RunConfig {
        seed: file.seed.unwrap_or(defaults::SEED),
        rounds: file.rounds.unwrap_or(defaults::ROUNDS),
        batch_size: file.batch_size.unwrap_or(defaults::BATCH_SIZE),
        local_epochs: file.local_epochs.unwrap_or(defaults::LOCAL_EPOCHS),
        clients: file.clients.unwrap_or(defaults::CLIENTS),
        clients_per_round: file.clients_per_round.unwrap_or(defaults::CLIENTS_PER_ROUND),
        eta,
        weight_decay: file.weight_decay.unwrap_or(defaults::WEIGHT_DECAY),
        aggregator,
        hyper,
        guidance,
        dataset: resolve_dataset(file.dataset)?,
        partition: resolve_partition(file.partition)?,
        model,
        early_stop: file.early_stop.unwrap_or(false),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Sections reachable with a dotted key.
const SECTIONS: [&str; 5] = ["hyper", "guidance", "dataset", "partition", "model"];

const ROOT_KEYS: [&str; 10] = [
    "seed",
    "rounds",
    "batch_size",
    "local_epochs",
    "clients",
    "clients_per_round",
    "eta",
    "weight_decay",
    "aggregator",
    "early_stop",
];

/// Section for bare key names that live in a sub-table.
const SECTION_OF: [(&str, &str); 24] = [
    ("server_lr", "hyper"),
    ("beta_momentum", "hyper"),
    ("adam_beta1", "hyper"),
    ("adam_beta2", "hyper"),
    ("adam_eps", "hyper"),
    ("prox_mu", "hyper"),
    ("explorers", "guidance"),
    ("explore_epochs", "guidance"),
    ("floor", "guidance"),
    ("per_layer_norm", "guidance"),
    ("delta_mode", "guidance"),
    ("force_ones", "guidance"),
    ("kind", "dataset"),
    ("classes", "dataset"),
    ("input_dim", "dataset"),
    ("per_class", "dataset"),
    ("separation", "dataset"),
    ("images", "dataset"),
    ("labels", "dataset"),
    ("scheme", "partition"),
    ("classes_per_client", "partition"),
    ("alpha", "partition"),
    ("hidden", "model"),
    ("activation", "model"),
];

/// Resolves a (possibly dotted, possibly bare) key to its table path.
pub fn resolve_key(key: &str) -> Result<Vec<String>> {
    if let Some((section, rest)) = key.split_once('.') {
        if !SECTIONS.contains(&section) {
            bail!("unknown config key `{key}`: no section named `{section}`");
        }
        if rest.is_empty() || rest.contains('.') {
            bail!("unknown config key `{key}`: expected `section.key`");
        }
        return Ok(vec![section.to_string(), rest.to_string()]);
    }
    if ROOT_KEYS.contains(&key) {
        return Ok(vec![key.to_string()]);
    }
    if let Some((_, section)) = SECTION_OF.iter().find(|(k, _)| *k == key) {
        return Ok(vec![section.to_string(), key.to_string()]);
    }
    // bare names that are ambiguous or unknown must be qualified
    bail!("unknown config key `{key}`: use a dotted path like `partition.alpha` for section keys");
}

/// Writes `value` at `path`, creating intermediate tables.
pub fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    match path {
        [leaf] => {
            table.insert(leaf.clone(), value);
            Ok(())
        }
        [section, leaf] => {
            let entry = table
                .entry(section.clone())
                .or_insert_with(|| Value::Table(Table::new()));
            let sub = entry
                .as_table_mut()
                .ok_or_else(|| anyhow!("config key `{section}` is not a table"))?;
            sub.insert(leaf.clone(), value);
            Ok(())
        }
        _ => bail!("config key paths must have one or two segments"),
    }
}

/// Parses the value side of a KEY=VAL override: TOML syntax first, bare
/// string as a fallback.
pub fn parse_override_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed document has the key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `--set KEY=VAL` pairs onto the raw table.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<()> {
    for pair in overrides {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{pair}` is not of the form KEY=VALUE"))?;
        let path = resolve_key(key.trim())?;
        set_path(table, &path, parse_override_value(raw.trim()))?;
    }
    Ok(())
}

/// A campaign: a base run table expanded over variants, sweep axes, and
/// seeds.
#[derive(Debug, Clone)]
pub struct CampaignSpec {
    pub base: Table,
    pub seeds: Vec<u64>,
    /// Aggregator variants like "avgm" or "lex-prox"; empty means "as
    /// configured in the base table".
    pub variants: Vec<String>,
    /// Sweep axes in table order: key path and the values to grid over.
    pub sweep: Vec<(String, Vec<Value>)>,
    pub output: PathBuf,
}

#[derive(Debug, Clone)]
pub enum ParsedConfig {
    Single(RunConfig),
    Campaign(CampaignSpec),
}

const CAMPAIGN_KEYS: [&str; 4] = ["seeds", "variants", "sweep", "output"];

fn is_campaign(table: &Table) -> bool {
    CAMPAIGN_KEYS.iter().any(|k| table.contains_key(*k))
}

fn extract_campaign(mut table: Table, default_output: PathBuf) -> Result<CampaignSpec> {
    let seeds: Vec<u64> = match table.remove("seeds") {
        Some(v) => v.try_into().context("invalid config `seeds`")?,
        None => Vec::new(),
    };
    let variants: Vec<String> = match table.remove("variants") {
        Some(v) => v.try_into().context("invalid config `variants`")?,
        None => Vec::new(),
    };
    let mut sweep = Vec::new();
    if let Some(v) = table.remove("sweep") {
        let sweep_table = match v {
            Value::Table(t) => t,
            _ => bail!("invalid config `sweep`: expected a table of value lists"),
        };
        for (key, values) in sweep_table {
            resolve_key(&key)?;
            let list = match values {
                Value::Array(a) if !a.is_empty() => a,
                _ => bail!("invalid config `sweep.{key}`: expected a non-empty list"),
            };
            sweep.push((key, list));
        }
    }
    let output = match table.remove("output") {
        Some(v) => {
            let s: String = v.try_into().context("invalid config `output`")?;
            PathBuf::from(s)
        }
        None => default_output,
    };
    let seeds = if seeds.is_empty() {
        let base_seed = table.get("seed").and_then(Value::as_integer).unwrap_or(0);
        vec![base_seed as u64]
    } else {
        seeds
    };
    Ok(CampaignSpec { base: table, seeds, variants, sweep, output })
}

/// Loads a config file: `.json` is a run manifest, anything else is TOML.
/// Overrides are applied to the raw table before typed parsing.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ParsedConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        if !overrides.is_empty() {
            bail!("overrides are not allowed when re-running a manifest; edit a TOML config instead");
        }
        let manifest = Manifest::from_json(&text)
            .with_context(|| format!("invalid manifest {}", path.display()))?;
        return Ok(ParsedConfig::Single(manifest.config));
    }
    let mut table: Table = text
        .parse()
        .with_context(|| format!("invalid TOML in {}", path.display()))?;
    apply_overrides(&mut table, overrides)?;
    if is_campaign(&table) {
        let default_output = path.with_extension("out");
        let spec = extract_campaign(table, default_output)?;
        Ok(ParsedConfig::Campaign(spec))
    } else {
        Ok(ParsedConfig::Single(resolve_run(table)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_resolve_to_their_sections() {
        assert_eq!(resolve_key("eta").unwrap(), vec!["eta".to_string()]);
        assert_eq!(
            resolve_key("alpha").unwrap(),
            vec!["partition".to_string(), "alpha".to_string()]
        );
        assert_eq!(
            resolve_key("guidance.explorers").unwrap(),
            vec!["guidance".to_string(), "explorers".to_string()]
        );
        assert!(resolve_key("bogus").is_err());
        assert!(resolve_key("nosuch.key").is_err());
        assert!(resolve_key("guidance.a.b").is_err());
    }

    #[test]
    fn override_values_parse_as_toml_with_string_fallback() {
        assert_eq!(parse_override_value("0.5"), Value::Float(0.5));
        assert_eq!(parse_override_value("20"), Value::Integer(20));
        assert_eq!(parse_override_value("true"), Value::Boolean(true));
        assert_eq!(parse_override_value("[8, 4]"), Value::Array(vec![Value::Integer(8), Value::Integer(4)]));
        assert_eq!(parse_override_value("avgm"), Value::String("avgm".to_string()));
        assert_eq!(parse_override_value("\"avgm\""), Value::String("avgm".to_string()));
    }

    #[test]
    fn overrides_land_in_nested_tables() {
        let mut table = Table::new();
        apply_overrides(
            &mut table,
            &["eta=0.001".to_string(), "partition.alpha=0.3".to_string(), "scheme=dirichlet".to_string()],
        )
        .unwrap();
        assert_eq!(table["eta"], Value::Float(0.001));
        assert_eq!(table["partition"]["alpha"], Value::Float(0.3));
        assert_eq!(table["partition"]["scheme"], Value::String("dirichlet".to_string()));
        assert!(apply_overrides(&mut table, &["noequals".to_string()]).is_err());
    }
}
