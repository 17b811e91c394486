//! Command-line front end for formation-network analysis: scenario files
//! in, verdicts and artifacts out.
//!
//! The binary is a thin wrapper over [`run`]; everything else lives here so
//! integration tests can drive complete pipelines in-process.

pub mod args;
pub mod pipeline;
pub mod plot;
pub mod scenario;

pub use args::{At, Cli, Command, SimFlags};
pub use pipeline::{run, PipelineError, EXIT_ERROR, EXIT_FAIL, EXIT_PASS};
pub use scenario::{
    parse_merge_spec, parse_scenario, serialize_scenario, write_scenario, MergeSpec, Scenario,
    ScenarioError,
};
