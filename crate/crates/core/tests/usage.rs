use std::sync::Arc;
use std::thread;

use pricing_core::expr::Value;
use pricing_core::model::{parse_pricing, petclinic, serialize_pricing, Subscription};
use pricing_core::router::{StatusReason, ToggleRouter};
use pricing_core::usage::{FileStore, FileStoreOptions, MemoryStore, UsageStore, UsageTracker, LOG_FILE};
use proptest::prelude::*;
use serde_json::Value as Json;

fn platinum() -> Subscription {
    Subscription::new("owner", "PLATINUM")
}

#[test]
fn concurrent_consumers_on_a_file_store_never_overshoot() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(FileStore::open(dir.path(), FileStoreOptions { snapshot_every: 50, ..Default::default() }).unwrap());
    let tracker = Arc::new(UsageTracker::new(store.clone()));
    let pricing = Arc::new(petclinic());
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (tracker, pricing) = (tracker.clone(), pricing.clone());
            thread::spawn(move || {
                (0..10)
                    .filter(|_| {
                        tracker
                            .try_consume(&pricing, &platinum(), "pets per owner", 1.0, None)
                            .unwrap()
                            .granted
                    })
                    .count()
            })
        })
        .collect();
    let granted: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert_eq!(granted, 7);
    drop(tracker);
    drop(store);
    let reopened = FileStore::open(dir.path(), FileStoreOptions::default()).unwrap();
    assert_eq!(reopened.counters("owner").unwrap()[0].used, 7.0);
}

#[test]
fn log_replay_conserves_consumed_minus_released() {
    let dir = tempfile::tempdir().unwrap();
    let opts = FileStoreOptions { snapshot_every: 0, ..Default::default() };
    let tracker = UsageTracker::new(FileStore::open(dir.path(), opts).unwrap());
    let pricing = petclinic();
    let sub = platinum().with_add_ons(["ADOPTION_CENTRE"]);
    let mut expected = 0.0;
    for i in 0..200u32 {
        let amount = f64::from(i % 3 + 1);
        if i % 4 == 3 {
            expected = f64::max(expected - amount, 0.0);
            tracker.release_usage(&pricing, &sub, "pets per owner", amount, None).unwrap();
        } else if tracker.try_consume(&pricing, &sub, "pets per owner", amount, None).unwrap().granted {
            expected += amount;
        }
    }
    // independent replay: last SetCounter record in the log wins
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let events: Vec<Json> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let replayed = events
        .iter()
        .rfind(|e| e["op"] == "setCounter")
        .map(|e| e["record"]["used"].as_f64().unwrap())
        .unwrap();
    assert_eq!(replayed, expected);
    assert_eq!(tracker.store().counters("owner").unwrap()[0].used, expected);
    assert!(expected <= 9.0);
}

#[test]
fn lowered_limit_denies_without_rewriting_counters() {
    let store = Arc::new(MemoryStore::new());
    let tracker = UsageTracker::new(store.clone());
    let router = ToggleRouter::new(petclinic()).unwrap();
    for _ in 0..6 {
        let p = &router.current_snapshot().pricing;
        assert!(tracker.try_consume(p, &platinum(), "pets per owner", 1.0, None).unwrap().granted);
    }
    let doc = serialize_pricing(&petclinic())
        .replace("version: 1", "version: 2")
        .replace("pets per owner: 7", "pets per owner: 4");
    router.swap_pricing(parse_pricing(&doc).unwrap()).unwrap();

    let snap = router.current_snapshot();
    let r = tracker.try_consume(&snap.pricing, &platinum(), "pets per owner", 1.0, None).unwrap();
    assert_eq!((r.granted, r.used, r.max), (false, 6.0, 4.0));
    let status = &snap.evaluate_with(&platinum(), &tracker).unwrap().statuses["pets per owner"];
    assert!(!status.enabled);
    assert_eq!(status.reason, StatusReason::LimitExhausted);
    assert_eq!(status.value, Value::Number(4.0));
    assert_eq!(store.counters("owner").unwrap()[0].used, 6.0);
}

#[test]
fn deleting_a_subscription_drops_its_counters() {
    let tracker = UsageTracker::new(MemoryStore::new());
    tracker.store().put_subscription(&platinum()).unwrap();
    tracker.try_consume(&petclinic(), &platinum(), "pets per owner", 1.0, None).unwrap();
    assert!(tracker.store().delete_subscription("owner").unwrap());
    assert!(tracker.store().counters("owner").unwrap().is_empty());
    assert!(!tracker.store().delete_subscription("owner").unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn counters_stay_within_bounds(ops in proptest::collection::vec((any::<bool>(), 1u8..4), 0..60)) {
        let tracker = UsageTracker::new(MemoryStore::new());
        let pricing = petclinic();
        let sub = Subscription::new("s", "GOLD");
        for (consume, amount) in ops {
            let used = if consume {
                tracker.try_consume(&pricing, &sub, "pets per owner", f64::from(amount), None).unwrap().used
            } else {
                tracker.release_usage(&pricing, &sub, "pets per owner", f64::from(amount), None).unwrap()
            };
            prop_assert!((0.0..=4.0).contains(&used));
        }
    }
}
