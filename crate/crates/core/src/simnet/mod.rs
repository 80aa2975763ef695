//! Deterministic simulation harness.

mod engine;
pub mod monitor;
pub mod record;
pub mod scenario;
pub mod traces;

pub use engine::{run_scenario, run_scenario_with, NodeReport, RunOutput};
pub use monitor::{Monitor, VerdictRecord};
pub use record::{DropReason, Event, Record, Violation};
pub use scenario::*;
pub use traces::{FixedTraces, SynthTraces, TraceConfig};
