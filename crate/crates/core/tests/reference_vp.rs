mod common;

use std::process::{Command as Process, Stdio};
use std::thread;
use std::time::Duration;

use common::{InProcessVp, VP_EXE, free_port, spawn_vp_process};
use proptest::prelude::*;
use vpbridge::client::{self, ConnectOptions};
use vpbridge::kernel::Kernel;
use vpbridge::property::{PropertyKey, PropertyValue, ValueType};
use vpbridge::reference_vp::{self, CLEAR_COUNT, GPIO_DATA, POLL_COUNT, SET_COUNT, T_LO, T_UP, TEMP, max31855};
use vpbridge::time::SimTime;
use vpbridge::vsp::{Command, Response};

const PERIOD: u64 = 500_000_000;

/// Independent model of one poll: the sample is the temperature floored to
/// a quarter degree and saturated at the sensor range.
fn oracle_poll(pin: bool, temp: f32, t_lo: f32, t_up: f32) -> bool {
    let q = ((temp as f64).clamp(-270.0, 1800.0) * 4.0).floor() / 4.0;
    if !pin && q > t_up as f64 {
        true
    } else if pin && q < t_lo as f64 {
        false
    } else {
        pin
    }
}

fn u32_of(k: &Kernel, key: &str) -> u32 {
    k.get_property(key).unwrap().as_u32().unwrap()
}

fn set_temp(k: &mut Kernel, t: f32) {
    k.set_property(TEMP, PropertyValue::Float32(t)).unwrap();
}

fn thresholds() -> impl Strategy<Value = (f32, f32)> {
    (-50i32..150, 1i32..80).prop_map(|(lo, gap)| (lo as f32 / 2.0, (lo + gap) as f32 / 2.0))
}

fn temps(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec((-400i32..800).prop_map(|x| x as f32 / 4.0 + 0.1), 1..n)
}

fn kernel_with(t_lo: f32, t_up: f32) -> Kernel {
    reference_vp::build_kernel(&[format!("{T_LO}={t_lo}"), format!("{T_UP}={t_up}")]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// The pin moves only at poll instants, and only in the direction the
    /// sampled temperature demands.
    #[test]
    fn pin_changes_only_at_polls_and_outside_the_band((t_lo, t_up) in thresholds(), seq in temps(40)) {
        let mut k = kernel_with(t_lo, t_up);
        let mut pin = false;
        for (i, &t) in seq.iter().enumerate() {
            set_temp(&mut k, t);
            let poll = i as u64 * PERIOD;
            // halfway between the previous poll and this one nothing moves
            if i > 0 {
                k.run_until(SimTime::from_ticks(poll - PERIOD / 2)).unwrap();
                prop_assert_eq!(u32_of(&k, GPIO_DATA), pin as u32);
                k.run_until(SimTime::from_ticks(poll - 1)).unwrap();
                prop_assert_eq!(u32_of(&k, GPIO_DATA), pin as u32);
            }
            k.run_until(SimTime::from_ticks(poll)).unwrap();
            let now = u32_of(&k, GPIO_DATA) == 1;
            if now && !pin {
                prop_assert!(t > t_up);
            }
            if !now && pin {
                prop_assert!(t < t_lo);
            }
            pin = oracle_poll(pin, t, t_lo, t_up);
            prop_assert_eq!(now, pin);
        }
    }

    /// A temperature held inside the band never moves the pin, whatever
    /// state it starts in.
    #[test]
    fn no_chatter_inside_the_band((t_lo, t_up) in thresholds(), start_high in any::<bool>(), polls in 1u64..30, frac in 0.0f32..=1.0) {
        let mut k = kernel_with(t_lo, t_up);
        set_temp(&mut k, if start_high { t_up + 5.0 } else { t_lo - 5.0 });
        k.run_until(SimTime::ZERO).unwrap();
        let pin = u32_of(&k, GPIO_DATA);
        prop_assert_eq!(pin, start_high as u32);
        let inside = ((t_lo + (t_up - t_lo) * frac) * 4.0).round() / 4.0;
        prop_assume!(inside >= t_lo && inside <= t_up);
        set_temp(&mut k, inside);
        k.run_until(SimTime::from_ticks(polls * PERIOD)).unwrap();
        prop_assert_eq!(u32_of(&k, GPIO_DATA), pin);
        prop_assert_eq!(u32_of(&k, POLL_COUNT) as u64, polls + 1);
    }

    /// Counters never decrease, and every transition is counted by a poll.
    #[test]
    fn counters_are_monotone_and_bounded_by_polls(seq in temps(60)) {
        let mut k = reference_vp::build_kernel::<&str>(&[]).unwrap();
        let mut last = (0, 0, 0);
        for (i, &t) in seq.iter().enumerate() {
            set_temp(&mut k, t);
            k.run_until(SimTime::from_ticks(i as u64 * PERIOD)).unwrap();
            let now = (u32_of(&k, SET_COUNT), u32_of(&k, CLEAR_COUNT), u32_of(&k, POLL_COUNT));
            prop_assert!(now.0 >= last.0 && now.1 >= last.1 && now.2 >= last.2);
            prop_assert!(now.0 + now.1 <= now.2);
            prop_assert!(now.0 == now.1 || now.0 == now.1 + 1);
            prop_assert_eq!(now.2 as usize, i + 1);
            last = now;
        }
    }

    /// The frame holds the temperature floored to a quarter degree.
    #[test]
    fn frame_round_trips_at_quarter_degrees(t in -270.0f32..=1800.0) {
        let decoded = max31855::decode(max31855::read_frame(t)) as f64;
        let expected = ((t as f64) * 4.0).floor() / 4.0;
        prop_assert_eq!(decoded, expected);
        prop_assert_eq!(max31855::read_frame(t) & ((1 << 18) - 1), 0);
    }
}

#[test]
fn max31855_examples() {
    assert_eq!(max31855::read_frame(0.0), 0);
    assert_eq!(max31855::read_frame(10.0), 40 << 18);
    assert_eq!(max31855::read_frame(10.1), max31855::read_frame(10.0));
    assert_eq!(max31855::read_frame(-0.25), 0x3FFF << 18);
    assert_eq!(max31855::decode(0x3FFF << 18), -0.25);
    assert_eq!(max31855::read_frame(2000.0), max31855::read_frame(1800.0));
    assert_eq!(max31855::read_frame(-300.0), max31855::read_frame(-270.0));
    assert_eq!(max31855::decode(max31855::read_frame(1800.0)), 1800.0);
    assert_eq!(max31855::read_frame(f32::NAN), 0);
}

#[test]
fn poll_sequence_example() {
    let mut k = reference_vp::build_kernel::<&str>(&[]).unwrap();
    let mut pins = Vec::new();
    for (i, t) in [10.0, 45.0, 55.0, 45.0, 35.0].into_iter().enumerate() {
        set_temp(&mut k, t);
        k.run_until(SimTime::from_ticks(i as u64 * PERIOD)).unwrap();
        pins.push(u32_of(&k, GPIO_DATA));
    }
    assert_eq!(pins, [0, 0, 1, 1, 0]);
    assert_eq!((u32_of(&k, SET_COUNT), u32_of(&k, CLEAR_COUNT), u32_of(&k, POLL_COUNT)), (1, 1, 5));
}

#[test]
fn exactly_the_upper_threshold_does_not_set() {
    let mut k = reference_vp::build_kernel::<&str>(&[]).unwrap();
    set_temp(&mut k, 50.0);
    k.run_until(SimTime::from_secs(5)).unwrap();
    assert_eq!(u32_of(&k, GPIO_DATA), 0);
    set_temp(&mut k, 60.0);
    k.run_until(SimTime::from_secs(6)).unwrap();
    assert_eq!(u32_of(&k, GPIO_DATA), 1);
    set_temp(&mut k, 40.0);
    k.run_until(SimTime::from_secs(10)).unwrap();
    assert_eq!(u32_of(&k, GPIO_DATA), 1, "exactly t_lo keeps the pin set");
}

#[test]
fn inconsistent_thresholds_are_rejected() {
    for bad in [[format!("{T_LO}=50"), format!("{T_UP}=50")], [format!("{T_LO}=60"), format!("{T_UP}=50")]] {
        assert!(reference_vp::build_kernel(&bad).is_err());
    }
    assert!(reference_vp::build_kernel(&["system.app.period_ns=0"]).is_err());
    assert!(reference_vp::build_kernel(&["system.nope=1"]).is_err());
    assert!(reference_vp::build_kernel(&["no-equals-sign"]).is_err());
}

/// Driving the platform over the wire gives the same pin sequence as the
/// independent model.
#[test]
fn remote_control_matches_the_oracle() {
    let seq: Vec<f32> = (0..80).map(|i| 45.0 + 20.0 * ((i as f32) * 0.37).sin()).collect();
    let vp = InProcessVp::start(&[]);
    let mut s = client::connect("127.0.0.1", vp.port(), &ConnectOptions::default()).unwrap();
    let key = |k: &str| PropertyKey::new(k).unwrap();
    // the poll at 0 runs in the first step, so each step's poll sees the
    // value set just before it
    let mut pin = oracle_poll(false, reference_vp::DEFAULT_TEMP, 40.0, 50.0);
    s.call(&Command::Step(SimTime::from_ticks(1))).unwrap();
    for (i, t) in seq.iter().enumerate() {
        s.call(&Command::Set(key(TEMP), format!("{t}"))).unwrap();
        let after = s.call(&Command::Step(SimTime::from_ticks(PERIOD))).unwrap();
        assert_eq!(after, Response::OkTime(SimTime::from_ticks((i as u64 + 1) * PERIOD + 1)));
        pin = oracle_poll(pin, *t, 40.0, 50.0);
        assert_eq!(
            s.call(&Command::Get(key(GPIO_DATA))).unwrap(),
            Response::OkValue(ValueType::UInt32, (pin as u32).to_string()),
            "after poll {}",
            i + 1
        );
    }
    assert_eq!(
        s.call(&Command::Get(key(POLL_COUNT))).unwrap(),
        Response::OkValue(ValueType::UInt32, (seq.len() + 1).to_string())
    );
    s.quit();
    vp.join();
}

#[test]
fn vp_rejects_bad_flags_with_status_2() {
    assert_eq!(reference_vp::vp_main(["vp", "--port", "70000"]), 2);
    assert_eq!(reference_vp::vp_main(["vp", "--port", "0"]), 2);
    assert_eq!(reference_vp::vp_main(["vp"]), 2);
    let port = free_port().to_string();
    assert_eq!(reference_vp::vp_main(["vp", "--port", &port, "--config", "system.app.t_lo=hot"]), 2);
    let status = Process::new(VP_EXE).args(["--port", "70000"]).stderr(Stdio::null()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn vp_config_is_applied_before_the_first_step_and_time_waits() {
    let port = free_port();
    let mut child = spawn_vp_process(port, &["--config", "system.app.t_lo=20.0"]);
    let mut s = client::connect("127.0.0.1", port, &ConnectOptions::default()).unwrap();
    let key = |k: &str| PropertyKey::new(k).unwrap();
    match s.call(&Command::Get(key(T_LO))).unwrap() {
        Response::OkValue(ValueType::Float32, v) => assert_eq!(v.parse::<f32>().unwrap(), 20.0),
        other => panic!("{other:?}"),
    }
    thread::sleep(Duration::from_millis(300));
    assert_eq!(s.call(&Command::GetTime).unwrap(), Response::OkTime(SimTime::ZERO));
    assert_eq!(s.call(&Command::Get(key(POLL_COUNT))).unwrap(), Response::OkValue(ValueType::UInt32, "0".into()));
    // the lowered threshold is what the application uses
    s.call(&Command::Set(key(TEMP), "60".into())).unwrap();
    s.call(&Command::Step(SimTime::from_ticks(1))).unwrap();
    s.call(&Command::Set(key(TEMP), "30".into())).unwrap();
    s.call(&Command::Step(SimTime::from_ticks(PERIOD))).unwrap();
    assert_eq!(s.call(&Command::Get(key(GPIO_DATA))).unwrap(), Response::OkValue(ValueType::UInt32, "1".into()));
    s.quit();
    assert!(child.wait().unwrap().success());
}

#[test]
fn vp_writes_its_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.txt");
    let port = free_port();
    let mut child = spawn_vp_process(port, &["--transcript", path.to_str().unwrap()]);
    let mut s = client::connect("127.0.0.1", port, &ConnectOptions::default()).unwrap();
    s.call(&Command::Step(SimTime::from_secs(1))).unwrap();
    s.quit();
    assert!(child.wait().unwrap().success());
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.contains("step,1000000000"), "{text}");
    assert!(text.contains("quit"), "{text}");
}
