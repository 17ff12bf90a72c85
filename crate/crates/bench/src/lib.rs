//! Sequential UDP echo RTT benchmark through two DEPs.
//!
//! [`endpoint`] holds the active and passive entities, [`metrics`] the
//! statistics and message-class shares, [`report`] the CSV/JSON artifacts
//! and [`topology`] the five-node loopback testbed.

pub mod endpoint;
pub mod metrics;
pub mod report;
pub mod topology;

pub use endpoint::{run_benchmark, BenchRun, Passive};
pub use metrics::{compute_metrics, message_classes, MetricsReport, RttSample, Threshold};
pub use report::{emit_report, format_tables, read_reports};
pub use topology::{run_topology, BenchTopology, TopologyConfig};
