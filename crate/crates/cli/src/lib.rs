pub mod error;
pub mod output;
pub mod scenario;
pub mod sweep;

pub use error::CliError;
pub use output::{emit_results, read_json, write_records, write_summary, write_traces, Format};
pub use scenario::{parse_scenario, parse_scenario_str, ScenarioConfig, Scheme};
pub use sweep::{run_sweep, summarize, Record, RunStatus, SummaryRow, SweepResult};
