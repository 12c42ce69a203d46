use std::path::PathBuf;

use proptest::prelude::*;
use serde_json::Value;

use llmslice::engine::{EventQueue, SimTime};
use llmslice::scenario::load_scenario;
use llmslice::{parse_scenario, run, ConfigError, ModeKind, RunOptions};

fn small() -> llmslice::Scenario {
    load_scenario(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/small.json")).unwrap()
}

fn small_json() -> Value {
    let text = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/small.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("permissions");
    v
}

proptest! {
    #[test]
    fn queue_pops_in_time_then_insertion_order(times in prop::collection::vec(0u64..50, 1..200)) {
        let mut q = EventQueue::new();
        for (i, &t) in times.iter().enumerate() {
            q.schedule(SimTime::from_us(t), i).unwrap();
        }
        let mut expected: Vec<(u64, usize)> = times.iter().copied().zip(0..).collect();
        expected.sort();
        let mut got = Vec::new();
        while let Some(ev) = q.pop_next() {
            prop_assert_eq!(q.now(), ev.time);
            got.push((ev.time.as_us(), ev.payload));
        }
        prop_assert_eq!(got, expected);
    }
}

#[test]
fn queue_refuses_past_events() {
    let mut q = EventQueue::new();
    q.schedule(SimTime::from_us(10), ()).unwrap();
    q.pop_next();
    assert!(q.schedule(SimTime::from_us(9), ()).is_err());
    assert!(q.schedule(SimTime::from_us(10), ()).is_ok());
}

#[test]
fn seeds_change_the_run_and_modes_share_the_workload() {
    let s = small();
    let a = run(&s, 1, &RunOptions::default()).unwrap();
    let b = run(&s, 2, &RunOptions::default()).unwrap();
    assert_ne!(a.trace.digest, b.trace.digest);

    let dynamic = run(&s.with_mode(ModeKind::Dynamic).unwrap(), 1, &RunOptions::default()).unwrap();
    let sizes = |o: &llmslice::RunOutput| o.deliveries.iter().map(|d| (d.request_id, d.total_bytes)).collect::<Vec<_>>();
    assert_eq!(sizes(&a), sizes(&dynamic));
    assert_eq!(a.offered.requests, dynamic.offered.requests);
    assert!(!dynamic.decisions.is_empty());
    assert!(a.decisions.is_empty());
}

#[test]
fn utilization_matches_the_allocation_log() {
    let out = run(&small(), 3, &RunOptions::default()).unwrap();
    let sum = out.summary(false).unwrap();
    let log = &out.allocation_log;
    let expected = log.used_prbs as f64 / log.capacity_prbs(out.horizon) as f64;
    assert!((sum.utilization - expected).abs() < 1e-12);
    assert!(log.used_prbs <= log.granted_prbs);
    assert!(sum.completed + sum.aborted + sum.in_flight == sum.started);
}

#[test]
fn scenario_cross_references_are_checked() {
    let mut v = small_json();
    v["arrivals"][0]["service_id"] = "nosuch".into();
    assert!(matches!(parse_scenario(&v.to_string()), Err(ConfigError::CrossRef { .. })));

    let mut v = small_json();
    v["arrivals"][0]["ue_id"] = "ue9".into();
    assert!(matches!(parse_scenario(&v.to_string()), Err(ConfigError::CrossRef { .. })));

    let mut v = small_json();
    v["slices"][0]["min_share"] = 0.6.into();
    v["slices"][1]["min_share"] = 0.6.into();
    assert!(parse_scenario(&v.to_string()).is_err());

    let mut v = small_json();
    v["extra"] = 1.into();
    assert!(matches!(parse_scenario(&v.to_string()), Err(ConfigError::UnknownKey(k)) if k == "extra"));

    let mut v = small_json();
    v.as_object_mut().unwrap().remove("ues");
    assert!(matches!(parse_scenario(&v.to_string()), Err(ConfigError::MissingKey(k)) if k == "ues"));

    assert!(matches!(parse_scenario("{\n  \"name\": }"), Err(ConfigError::Parse { line: 2, .. })));
}

#[test]
fn zero_horizon_run_is_empty() {
    let mut v = small_json();
    v["horizon_ms"] = 0.into();
    let s = parse_scenario(&v.to_string()).unwrap();
    let out = run(&s, 1, &RunOptions::default()).unwrap();
    assert!(out.deliveries.is_empty());
    assert!(out.summary(false).is_err());
    let sum = out.summary(true).unwrap();
    assert_eq!(sum.mean_completion_latency_ms, None);
    assert_eq!(sum.stability, 1.0);
}
