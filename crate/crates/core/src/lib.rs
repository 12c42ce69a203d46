//! Deterministic discrete-event simulator for LLM-dedicated downlink slicing.
//!
//! A run models bursty LLM request traffic from a set of UEs, streams the
//! generated responses through a PRB-granular downlink MAC, and optionally lets
//! a RAN intelligent controller re-partition the downlink between slices every
//! control epoch. The metrics module turns a run into the three headline
//! numbers (mean response latency, PRB utilization, downlink stability) and
//! compares a baseline run against a treatment run.
//!
//! ```text
//!  workload ──▶ engine (event loop) ──▶ mac ──▶ metrics
//!                  │      ▲              ▲
//!                  ▼      │              │
//!               slicectl  └──── ric ─────┘
//! ```

pub mod cli;
pub mod engine;
pub mod mac;
pub mod metrics;
pub mod radio;
pub mod ric;
pub mod scenario;
pub mod slicectl;
pub mod workload;

pub use engine::{run, EventKind, RunOptions, RunOutput, RunTrace, SimError, SimTime};
pub use mac::{ModeKind, SchedulerMode};
pub use metrics::{compare, summarize, ComparisonReport, DeliveryRecord, RunSummary};
pub use scenario::{parse_scenario, ConfigError, Scenario};
