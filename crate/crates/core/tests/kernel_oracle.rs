use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use vpbridge::kernel::{Kernel, KernelError};
use vpbridge::property::{PropertyError, PropertyValue};
use vpbridge::time::SimTime;

type Log = Arc<Mutex<Vec<usize>>>;

/// Schedules event `i` at `due[i]` (all from t = 0), each appending its
/// index to the log.
fn scheduled(dues: &[u64]) -> (Kernel, Log) {
    let log: Log = Arc::default();
    let mut k = Kernel::new();
    for (i, &due) in dues.iter().enumerate() {
        let log = log.clone();
        k.schedule_fn(SimTime::from_ticks(due), move |_| log.lock().unwrap().push(i)).unwrap();
    }
    (k, log)
}

/// Brute-force oracle: indices sorted by (due, insertion index).
fn sort_oracle(dues: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dues.len()).collect();
    idx.sort_by_key(|&i| (dues[i], i));
    idx
}

/// A parent event that, when it fires, schedules a child `delay` later.
#[derive(Debug, Clone)]
struct Spawning {
    due: u64,
    child_delay: Option<u64>,
}

type TimedLog = Arc<Mutex<Vec<(u64, String)>>>;

fn spawning_kernel(events: &[Spawning]) -> (Kernel, TimedLog) {
    let log: TimedLog = Arc::default();
    let mut k = Kernel::new();
    k.register_property("sim.last", PropertyValue::UInt32(0)).unwrap();
    k.enable_trace();
    for (i, ev) in events.iter().enumerate() {
        let log = log.clone();
        let child_delay = ev.child_delay;
        k.schedule_fn(SimTime::from_ticks(ev.due), move |k| {
            log.lock().unwrap().push((k.now().ticks(), format!("p{i}")));
            k.set_property("sim.last", PropertyValue::UInt32(i as u32)).unwrap();
            if let Some(d) = child_delay {
                let log = log.clone();
                k.schedule_fn(SimTime::from_ticks(d), move |k| {
                    log.lock().unwrap().push((k.now().ticks(), format!("c{i}")));
                })
                .unwrap();
            }
        })
        .unwrap();
    }
    (k, log)
}

fn spawning_events() -> impl Strategy<Value = Vec<Spawning>> {
    prop::collection::vec(
        (0u64..40, prop::option::of(0u64..20)).prop_map(|(due, child_delay)| Spawning { due, child_delay }),
        0..=50,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn execution_order_matches_sort_oracle(dues in prop::collection::vec(0u64..20, 0..=50)) {
        let (mut k, log) = scheduled(&dues);
        k.run_until(SimTime::from_ticks(20)).unwrap();
        prop_assert_eq!(&*log.lock().unwrap(), &sort_oracle(&dues));
        prop_assert_eq!(k.pending(), 0);
        prop_assert_eq!(k.now(), SimTime::from_ticks(20));
    }

    #[test]
    fn split_run_equals_single_run(
        events in spawning_events(),
        a in 0u64..70,
        b in 0u64..70,
    ) {
        let (t1, t2) = (a.min(b), a.max(b));
        let (mut whole, whole_log) = spawning_kernel(&events);
        whole.run_until(SimTime::from_ticks(t2)).unwrap();
        let (mut split, split_log) = spawning_kernel(&events);
        split.run_until(SimTime::from_ticks(t1)).unwrap();
        prop_assert_eq!(split.now(), SimTime::from_ticks(t1));
        split.run_until(SimTime::from_ticks(t2)).unwrap();

        prop_assert_eq!(&*split_log.lock().unwrap(), &*whole_log.lock().unwrap());
        prop_assert_eq!(split.trace(), whole.trace());
        prop_assert_eq!(split.get_property("sim.last").unwrap(), whole.get_property("sim.last").unwrap());
        prop_assert_eq!(split.now(), whole.now());
        prop_assert_eq!(split.pending(), whole.pending());
    }

    #[test]
    fn identical_call_sequences_are_deterministic(events in spawning_events(), t in 0u64..70) {
        let (mut a, log_a) = spawning_kernel(&events);
        let (mut b, log_b) = spawning_kernel(&events);
        a.run_until(SimTime::from_ticks(t)).unwrap();
        b.run_until(SimTime::from_ticks(t)).unwrap();
        prop_assert_eq!(a.trace(), b.trace());
        prop_assert_eq!(&*log_a.lock().unwrap(), &*log_b.lock().unwrap());
        prop_assert_eq!(a.get_property("sim.last").unwrap(), b.get_property("sim.last").unwrap());
    }

    #[test]
    fn executed_events_run_in_nondecreasing_time(events in spawning_events()) {
        let (mut k, log) = spawning_kernel(&events);
        k.run_until(SimTime::from_ticks(100)).unwrap();
        let log = log.lock().unwrap();
        prop_assert!(log.windows(2).all(|w| w[0].0 <= w[1].0));
        let children = events.iter().filter(|e| e.child_delay.is_some()).count();
        prop_assert_eq!(log.len(), events.len() + children);
    }

    #[test]
    fn now_never_decreases(targets in prop::collection::vec(0u64..1000, 1..30)) {
        let mut k = Kernel::new();
        let mut last = SimTime::ZERO;
        for t in targets {
            let t = SimTime::from_ticks(t);
            match k.run_until(t) {
                Ok(()) => prop_assert_eq!(k.now(), t),
                Err(KernelError::TargetInPast { .. }) => prop_assert!(t < last),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
            prop_assert!(k.now() >= last);
            last = k.now();
        }
    }

    /// get(k) equals the last successful set(k), or the initial value.
    #[test]
    fn registry_reads_last_write(ops in prop::collection::vec((0usize..3, any::<u32>(), any::<bool>()), 0..60)) {
        let keys = ["a.x", "a.y", "b.z"];
        let mut k = Kernel::new();
        let mut model = [0u32; 3];
        for key in keys {
            k.register_property(key, PropertyValue::UInt32(0)).unwrap();
        }
        for (i, v, well_typed) in ops {
            let value = if well_typed { PropertyValue::UInt32(v) } else { PropertyValue::Float64(v as f64) };
            match k.set_property(keys[i], value) {
                Ok(()) => model[i] = v,
                Err(e) => prop_assert!(!well_typed, "{e}"),
            }
            for (j, key) in keys.iter().enumerate() {
                prop_assert_eq!(k.get_property(key).unwrap(), &PropertyValue::UInt32(model[j]));
            }
        }
    }
}

#[test]
fn equal_due_events_fire_in_insertion_order() {
    let (mut k, log) = scheduled(&[1_000_000_000, 1_000_000_000]);
    k.run_until(SimTime::from_secs(1)).unwrap();
    assert_eq!(*log.lock().unwrap(), [0, 1]);
}

#[test]
fn zero_delay_event_fires_on_any_run() {
    let (mut k, log) = scheduled(&[0]);
    k.run_until(SimTime::ZERO).unwrap();
    assert_eq!(*log.lock().unwrap(), [0]);
}

#[test]
fn overflowing_schedule_is_rejected() {
    let mut k = Kernel::new();
    k.run_until(SimTime::MAX).unwrap();
    assert!(matches!(k.schedule_fn(SimTime::from_ticks(1), |_| {}), Err(KernelError::Overflow { .. })));
}

#[test]
fn run_until_stops_between_events() {
    let (mut k, log) = scheduled(&[1_000_000_000, 3_000_000_000]);
    k.run_until(SimTime::from_secs(2)).unwrap();
    assert_eq!(*log.lock().unwrap(), [0]);
    assert_eq!(k.now(), SimTime::from_secs(2));
    assert_eq!(k.pending(), 1);
}

#[test]
fn child_scheduled_inside_the_window_also_runs() {
    let (mut k, log) = spawning_kernel(&[Spawning { due: 1_000_000_000, child_delay: Some(500_000_000) }]);
    k.run_until(SimTime::from_secs(2)).unwrap();
    assert_eq!(*log.lock().unwrap(), [(1_000_000_000, "p0".to_owned()), (1_500_000_000, "c0".to_owned())]);
}

#[test]
fn empty_queue_only_advances_the_clock() {
    let mut k = Kernel::new();
    assert_eq!(k.now(), SimTime::ZERO);
    k.run_until(SimTime::from_secs(5)).unwrap();
    assert_eq!(k.now(), SimTime::from_secs(5));
    assert_eq!(k.executed(), 0);
}

#[test]
fn registry_examples() {
    let mut k = Kernel::new();
    k.register_property("system.max31855.temp", PropertyValue::Float32(10.0)).unwrap();
    k.register_property("system.gpio.data", PropertyValue::UInt32(0)).unwrap();
    assert_eq!(k.get_property("system.max31855.temp").unwrap(), &PropertyValue::Float32(10.0));
    assert!(matches!(
        k.register_property("system.max31855.temp", PropertyValue::Float32(1.0)),
        Err(KernelError::Property(PropertyError::DuplicateKey(_)))
    ));
    k.set_property("system.max31855.temp", PropertyValue::Float32(55.0)).unwrap();
    assert_eq!(k.get_property("system.max31855.temp").unwrap(), &PropertyValue::Float32(55.0));
    assert!(matches!(
        k.set_property("system.gpio.data", PropertyValue::Float64(1.0)),
        Err(KernelError::Property(PropertyError::TypeMismatch { .. }))
    ));
    assert!(matches!(k.get_property("system.nonexistent"), Err(KernelError::Property(PropertyError::UnknownKey(_)))));
}
