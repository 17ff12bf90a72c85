use std::sync::atomic::Ordering;
use std::time::Duration;

use rtsabac_bench::endpoint::probe_frame;
use rtsabac_bench::topology::{echo_policies, BenchTopology};
use rtsabac_bench::{compute_metrics, message_classes, run_topology, TopologyConfig};
use rtsabac_core::wire::Scheme;
use rtsabac_services::local::{DEP_A, DEP_B};

#[test]
fn default_config_starts_five_healthy_services() {
    let t = run_topology(&TopologyConfig::default(), std::path::Path::new(".")).unwrap();
    let h = t.topo.healthy();
    assert_eq!(h.len(), 5);
    assert!(h.values().all(|ok| *ok));
    t.shutdown();
}

#[test]
fn empty_policy_set_times_out_every_probe() {
    let t = BenchTopology::start(Scheme::HmacSha512, "127.0.0.1:0", "127.0.0.1:0", |_| {}).unwrap();
    let run = t.run(20, Duration::from_millis(50));
    assert!(run.samples.is_empty());
    assert_eq!(run.timeouts.len(), 20);
    let m = t.shutdown();
    assert_eq!(m.passive.echoed.load(Ordering::Relaxed), 0);
    assert_eq!(m.services[DEP_B].get("delivered"), 0);
}

#[test]
fn echo_policies_complete_every_probe_sequentially() {
    let t = BenchTopology::start(Scheme::Ed25519, "127.0.0.1:0", "127.0.0.1:0", |_| {}).unwrap();
    t.install(&echo_policies(60_000)).unwrap();
    let run = t.run(100, Duration::from_millis(1000));
    assert!(run.timeouts.is_empty(), "{:?}", run.timeouts);
    assert_eq!(run.samples.iter().map(|s| s.index).collect::<Vec<_>>(), (0..100).collect::<Vec<_>>());
    let report = compute_metrics("Ed25519", &run.samples, 0, run.elapsed_s, &message_classes()).unwrap();
    assert!(report.min > 0.0);
    let m = t.shutdown();
    assert_eq!(m.passive.max_in_flight.load(Ordering::Relaxed), 1);
    assert_eq!(m.passive.echoed.load(Ordering::Relaxed), 100);
    assert_eq!(m.services[DEP_A].get("delivered"), 100);
    assert_eq!(m.services[DEP_B].get("delivered"), 100);
    assert_eq!(probe_frame(0, 0).len(), 60);
}
