//! Command-line harness: config files, run execution, campaigns, and
//! summaries. The simulation itself lives in the `fedlex` crate.

pub mod campaign;
pub mod config_file;
pub mod runner;
pub mod summary;

pub use campaign::{execute_campaign, plan, CampaignOutcome, PlannedRun};
pub use config_file::{parse_config, resolve_run, CampaignSpec, ParsedConfig};
pub use runner::{execute_run, RunArtifacts};
pub use summary::{average_ranks, scan_runs, summarize, write_summary, RankRow, SummaryRow};
