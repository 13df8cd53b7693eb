mod common;

use std::time::Duration;

use caans::dataplane::DropReason;
use caans::node::Workload;
use caans::simnet::{FaultAction, FaultEvent, Jitter, RoleId, Simulation, Until};
use caans::wire::MsgType;
use common::{exactly_once, failover, run, standard};

#[test]
fn loss_free_run_delivers_everything() {
    let sim = run(standard(200, 1));
    let c = sim.client(0).unwrap();
    assert_eq!((c.completed(), c.failed()), (200, 0));
    for l in 0..2 {
        let learner = sim.learner(l).unwrap();
        // the idle tail probe may add one trailing no-op
        let noops = learner.replica().noops();
        assert!(noops <= 1);
        assert_eq!(learner.deliveries().len() as u64, 200 + noops);
        assert_eq!(learner.replica().applied().len(), 200);
    }
    assert!(sim.agreement_violations().is_empty());
}

#[test]
fn same_seed_same_trace() {
    let mk = || {
        let mut cfg = standard(100, 42);
        cfg.links.default.drop_prob = 0.1;
        cfg.links.default.dup_prob = 0.05;
        cfg.links.default.jitter = Jitter::Uniform { max_us: 40 };
        cfg.record_trace = true;
        let mut out = Vec::new();
        run(cfg).into_trace().write_events(&mut out).unwrap();
        out
    };
    let a = mk();
    assert!(!a.is_empty());
    assert_eq!(a, mk());
}

#[test]
fn trace_times_are_non_decreasing_and_messages_conserved() {
    let mut cfg = standard(150, 7);
    cfg.links.default.drop_prob = 0.2;
    cfg.links.default.dup_prob = 0.1;
    cfg.links.default.jitter = Jitter::Exponential { mean_us: 30 };
    cfg.record_trace = true;
    cfg.faults.push(FaultEvent::new(2_000, FaultAction::KillRole, RoleId::acceptor(1)));
    let trace = run(cfg).into_trace();
    assert!(trace.events.windows(2).all(|w| w[0].t_us <= w[1].t_us));
    assert!(trace.conservation.holds(), "{:?}", trace.conservation);
    assert_eq!(trace.conservation.in_flight, 0);
}

#[test]
fn conservation_holds_mid_run() {
    let mut cfg = standard(150, 3);
    cfg.links.default.dup_prob = 0.3;
    cfg.links.default.drop_prob = 0.1;
    let mut sim = Simulation::build(cfg).unwrap();
    sim.run(Until::Time(Duration::from_micros(900)));
    let c = sim.trace().conservation;
    assert!(c.in_flight > 0);
    assert!(c.holds(), "{c:?}");
}

#[test]
fn killed_acceptor_receives_nothing() {
    let mut cfg = standard(50, 2);
    cfg.workload.concurrency = 4;
    let mut sim = Simulation::build(cfg).unwrap();
    sim.inject(FaultEvent::new(1_000, FaultAction::KillRole, RoleId::acceptor(2))).unwrap();
    sim.run(Until::Time(Duration::from_micros(1_000)));
    let before = sim.received(RoleId::acceptor(2), MsgType::Phase2a);
    sim.run(Until::Quiescence);
    assert_eq!(sim.received(RoleId::acceptor(2), MsgType::Phase2a), before);
    assert_eq!(sim.client(0).unwrap().completed(), 50);
}

#[test]
fn acceptor_failure_keeps_delivering_with_two_votes() {
    let mut cfg = standard(100, 5);
    cfg.timing.tail_probe = false;
    cfg.faults.push(FaultEvent::new(5_000, FaultAction::KillRole, RoleId::acceptor(0)));
    let mut sim = Simulation::build(cfg).unwrap();
    sim.run(Until::Time(Duration::from_micros(5_000)));
    let delivered_before = sim.learner(0).unwrap().deliveries().len() as u64;
    let votes_before = sim.received(RoleId::learner(0), MsgType::Phase2b);
    assert_eq!(votes_before, 3 * delivered_before);
    sim.run(Until::Quiescence);
    let l = sim.learner(0).unwrap();
    let delivered = l.deliveries().len() as u64;
    let votes = sim.received(RoleId::learner(0), MsgType::Phase2b);
    assert_eq!(l.replica().applied().len(), 100);
    assert_eq!(sim.client(0).unwrap().completed(), 100);
    assert!(delivered > delivered_before);
    assert_eq!(votes - votes_before, 2 * (delivered - delivered_before));
}

#[test]
fn revived_acceptor_rejoins_with_empty_slots() {
    let mut cfg = standard(60, 8);
    cfg.faults.push(FaultEvent::new(2_000, FaultAction::KillRole, RoleId::acceptor(1)));
    cfg.faults.push(FaultEvent::new(6_000, FaultAction::ReviveRole, RoleId::acceptor(1)));
    let mut sim = Simulation::build(cfg).unwrap();
    sim.run(Until::Time(Duration::from_micros(6_000)));
    let a = sim.acceptor(1).unwrap().state();
    assert!(a.slot(0).is_some_and(|s| !s.has_vote));
    let rx = sim.received(RoleId::acceptor(1), MsgType::Phase2a);
    sim.run(Until::Quiescence);
    assert!(sim.received(RoleId::acceptor(1), MsgType::Phase2a) > rx);
    assert_eq!(sim.client(0).unwrap().completed(), 60);
    assert!(sim.agreement_violations().is_empty());
}

#[test]
fn trimmed_instances_cannot_be_recovered() {
    let mut cfg = standard(20, 4);
    cfg.timing.tail_probe = false;
    let mut sim = Simulation::build(cfg).unwrap();
    sim.run(Until::Quiescence);
    let t = sim.now().as_micros() as u64 + 1;
    for a in 0..3 {
        sim.inject(FaultEvent::new(t, FaultAction::Trim { inst: 1000 }, RoleId::acceptor(a))).unwrap();
    }
    sim.run(Until::Quiescence);
    sim.recover_at(1, 500).unwrap();
    sim.run(Until::Quiescence);
    let failures = sim.learner(1).unwrap().recover_failures();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].0, 500);
    assert_eq!(failures[0].1, caans::client::RecoverError::Timeout);
}

#[test]
fn recover_of_fresh_instance_chooses_noop() {
    let mut cfg = standard(10, 4);
    cfg.timing.tail_probe = false;
    let mut sim = Simulation::build(cfg).unwrap();
    sim.run(Until::Quiescence);
    sim.recover_at(0, 10).unwrap();
    sim.run(Until::Quiescence);
    let l = sim.learner(0).unwrap();
    assert_eq!(l.recovered(), 1);
    assert_eq!(l.deliveries().last().unwrap().inst, 10);
    assert_eq!(l.replica().noops(), 1);
    // the other learner hears the same votes
    assert_eq!(sim.learner(1).unwrap().deliveries().len(), 11);
}

#[test]
fn failover_with_overestimated_start_fills_gap_with_noops() {
    let sim = failover(200, 11);
    exactly_once(&sim, 300).unwrap();
    // 200 skipped instances, each closed by a recovered no-op
    for l in 0..2 {
        assert_eq!(sim.learner(l).unwrap().replica().noops(), 200);
    }
    assert!(sim.learner(0).unwrap().recovered() + sim.learner(1).unwrap().recovered() >= 200);
}

#[test]
fn failover_with_underestimated_start_stalls_then_resumes() {
    let sim = failover(-10, 12);
    exactly_once(&sim, 300).unwrap();
    // requests sequenced into already-decided instances are refused until
    // the backup's counter passes them, so clients wait out retransmissions
    let c = sim.client(0).unwrap();
    let worst = c.latencies().iter().max().unwrap();
    assert!(*worst > sim.config().timing.retransmit_timeout());
    assert_eq!(sim.learner(0).unwrap().replica().noops(), 0);
    assert!(sim.coordinator(1).unwrap().is_active());
    // re-issued low instances were refused by acceptors holding votes
    let refused: u64 =
        (0..3).map(|a| sim.acceptor(a).unwrap().state().metrics().dropped(DropReason::AlreadyVoted)).sum();
    assert!(refused > 0);
}

#[test]
fn kv_mixed_workload_keeps_replicas_identical_under_loss() {
    for seed in 0..5 {
        let mut cfg = standard(150, seed);
        cfg.app = caans::apps::AppKind::Kv;
        cfg.workload.workload = Workload::KvMixed { value_size: 16, keys: 8 };
        cfg.workload.concurrency = 3;
        cfg.links.default.drop_prob = 0.1;
        cfg.links.default.dup_prob = 0.05;
        let sim = run(cfg);
        let a = sim.learner(0).unwrap().replica();
        let b = sim.learner(1).unwrap().replica();
        assert_eq!(a.kv().unwrap().applied_count(), 150, "seed {seed}");
        assert_eq!(a.digest(), b.digest(), "seed {seed}");
    }
}

mod chaos {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn learners_never_disagree(
            seed in any::<u64>(),
            drop_prob in 0.0..0.3f64,
            dup_prob in 0.0..0.2f64,
            jitter in 0..200u64,
            kill in proptest::option::of((0..3u16, 0..20_000u64)),
            concurrency in 1..6usize,
        ) {
            let mut cfg = standard(120, seed);
            cfg.workload.concurrency = concurrency;
            cfg.links.default.drop_prob = drop_prob;
            cfg.links.default.dup_prob = dup_prob;
            cfg.links.default.jitter = Jitter::Exponential { mean_us: jitter };
            if let Some((a, at)) = kill {
                cfg.faults.push(FaultEvent::new(at, FaultAction::KillRole, RoleId::acceptor(a)));
            }
            cfg.record_trace = true;
            let mut sim = Simulation::build(cfg).unwrap();
            sim.run(Until::Quiescence);
            prop_assert!(sim.agreement_violations().is_empty());
            prop_assert_eq!(sim.value_mismatches(), 0);
            let trace = sim.into_trace();
            prop_assert!(trace.conservation.holds());
            prop_assert_eq!(trace.conservation.in_flight, 0);
        }
    }
}
