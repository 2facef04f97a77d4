#![allow(dead_code)]

pub mod proxy;

use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use vpbridge::adapter::AdapterOptions;
use vpbridge::client::ConnectOptions;
use vpbridge::model_description::ModelDescription;
use vpbridge::packager::{self, PackInput};
use vpbridge::reference_vp;
use vpbridge::server::{Server, SessionReport};

pub const EXAMPLE_MD: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<fmiModelDescription fmiVersion="3.0" modelName="myVP">
  <CoSimulation modelIdentifier="myVP" needsExecutionTool="true"
      canHandleVariableCommunicationStepSize="true"/>
  <DefaultExperiment startTime="3" stopTime="5" stepSize="0.01"/>
  <ModelVariables>
    <Float64 name="time" valueReference="0" causality="independent" variability="continuous"/>
    <Float32 name="system.max31855.temp" valueReference="1" causality="input"
        variability="continuous" start="10.0"/>
    <UInt32 name="system.gpio.data" valueReference="2" causality="output" variability="discrete"/>
  </ModelVariables>
  <ModelStructure>
    <InitialUnknown valueReference="1"/>
    <Output valueReference="2"/>
  </ModelStructure>
  <Annotations>
    <Annotation type="VCML">
      <VP host="localhost" port="8888" executable="resources/vp"/>
    </Annotation>
  </Annotations>
</fmiModelDescription>
"#;

pub const VP_EXE: &str = env!("CARGO_BIN_EXE_vp");
pub const COSIM_EXE: &str = env!("CARGO_BIN_EXE_cosim");
pub const FMU_PACK_EXE: &str = env!("CARGO_BIN_EXE_fmu-pack");

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// The FMU library built for this test run. `cargo test` leaves it in
/// `deps/` beside the test binary; the copy one level up may be stale.
pub fn fmu_library() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let name = format!("{}vpbridge.{}", std::env::consts::DLL_PREFIX, std::env::consts::DLL_EXTENSION);
    let deps = exe.parent().unwrap();
    [deps.join(&name), deps.parent().unwrap().join(&name)]
        .into_iter()
        .find(|p| p.is_file())
        .unwrap_or_else(|| panic!("FMU library {name} not built"))
}

pub fn fast_options() -> AdapterOptions {
    AdapterOptions {
        connect: ConnectOptions {
            attempts: 50,
            interval: Duration::from_millis(100),
            response_timeout: Some(Duration::from_secs(30)),
        },
        terminate_grace: Duration::from_secs(5),
        ..AdapterOptions::default()
    }
}

/// A reference platform served from a thread of this process.
pub struct InProcessVp {
    pub addr: SocketAddr,
    handle: JoinHandle<SessionReport>,
}

impl InProcessVp {
    pub fn start(overrides: &[&str]) -> InProcessVp {
        Self::start_with_idle(overrides, Duration::from_secs(30))
    }

    pub fn start_with_idle(overrides: &[&str], idle: Duration) -> InProcessVp {
        let mut kernel = reference_vp::build_kernel(overrides).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let mut server = Server::from_listener(listener).unwrap().with_idle_timeout(idle);
        let addr = server.local_addr();
        let handle = thread::spawn(move || server.serve(&mut kernel).unwrap());
        InProcessVp { addr, handle }
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn join(self) -> SessionReport {
        self.handle.join().unwrap()
    }
}

/// A `vp` process listening on `port`.
pub fn spawn_vp_process(port: u16, extra: &[&str]) -> Child {
    Command::new(VP_EXE).args(["--port", &port.to_string()]).args(extra).stdin(Stdio::null()).spawn().unwrap()
}

pub fn write_md(dir: &Path, md: &ModelDescription) -> PathBuf {
    let path = dir.join("modelDescription.xml");
    std::fs::write(&path, md.serialize()).unwrap();
    path
}

/// Lays out an unpacked FMU (model description plus `resources/vp`).
pub fn fmu_dir(dir: &Path, md: &ModelDescription) -> PathBuf {
    if let Some(exe) = &md.vcml.executable {
        let target = dir.join(exe);
        std::fs::create_dir_all(target.parent().unwrap()).unwrap();
        std::fs::copy(VP_EXE, &target).unwrap();
    }
    write_md(dir, md)
}

/// The case-study model bound to `port`, spawning `resources/vp`.
pub fn spawn_md(port: u16) -> ModelDescription {
    reference_vp::model_description("127.0.0.1", port, Some("resources/vp"), None)
}

/// The case-study model for attaching to a running platform.
pub fn attach_md(port: u16) -> ModelDescription {
    reference_vp::model_description("127.0.0.1", port, None, None)
}

/// Packs `md` with the host library and, if named, the `vp` binary.
pub fn pack_fmu(dir: &Path, md: &ModelDescription, name: &str) -> PathBuf {
    let src = dir.join(format!("{name}.md.xml"));
    std::fs::write(&src, md.serialize()).unwrap();
    let out = dir.join(format!("{name}.fmu"));
    let input = PackInput {
        model_description: src,
        libraries: vec![(packager::host_platform(), fmu_library())],
        vp_binary: md.vcml.executable.as_ref().map(|_| PathBuf::from(VP_EXE)),
        resources: vec![],
    };
    packager::pack(&input, &out).unwrap();
    out
}

// ---------------------------------------------------------------------------
// Hysteresis oracle, written against the observable contract only: polls at
// k*p, 0.25 degree floor quantization, strict thresholds, pin on bit 0.

pub struct RampScenario {
    pub start: f64,
    pub step: f64,
    pub stop: f64,
    /// (time, temperature text) rows, on the step grid.
    pub rows: Vec<(f64, String)>,
}

/// 10 -> 70 -> 10 degrees over 20 s, one row every 0.1 s.
pub fn hysteresis_ramp() -> RampScenario {
    let rows = (0..=200)
        .map(|i| {
            let t = i as f64 / 10.0;
            let temp = if t <= 10.0 { 10.0 + 6.0 * t } else { 70.0 - 6.0 * (t - 10.0) };
            (t, format!("{temp:.1}"))
        })
        .collect();
    RampScenario { start: 0.0, step: 0.01, stop: 20.0, rows }
}

pub fn constant_10(stop: f64) -> RampScenario {
    RampScenario { start: 0.0, step: 0.01, stop, rows: vec![(0.0, "10.0".into())] }
}

fn ns(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

fn quantize(temp: f32) -> f64 {
    let t = (temp as f64).clamp(-270.0, 1800.0);
    (t / 0.25).floor() * 0.25
}

/// Expected pin at every record time `start + k*step`, k = 1..N, given that
/// inputs due at a communication point are applied before the step leaving
/// it, and a poll at `tau` runs inside the step that reaches `tau`.
pub fn oracle_pins(s: &RampScenario, period_s: f64, t_lo: f64, t_up: f64, initial: f32) -> Vec<(i64, u32)> {
    let start = ns(s.start);
    let step = ns(s.step);
    let stop = ns(s.stop);
    let period = ns(period_s);
    let rows: Vec<(i64, f32)> = s.rows.iter().map(|(t, v)| (ns(*t), v.parse().unwrap())).collect();
    let seen_by_poll = |tau: i64| -> f32 {
        if start > 0 && tau <= start {
            return initial;
        }
        // the latest grid point strictly before tau, or tau itself at zero
        let cutoff = if tau == start { start } else { tau - 1 };
        rows.iter().rfind(|(t, _)| *t <= cutoff).map(|(_, v)| *v).unwrap_or(initial)
    };
    let mut pin = false;
    let mut next_poll = 0i64;
    let mut out = Vec::new();
    let mut t = start;
    while t + step <= stop {
        t += step;
        while next_poll <= t {
            let q = quantize(seen_by_poll(next_poll));
            if !pin && q > t_up {
                pin = true;
            } else if pin && q < t_lo {
                pin = false;
            }
            next_poll += period;
        }
        out.push((t, pin as u32));
    }
    out
}

pub fn render_scenario(s: &RampScenario, expectations: &[(i64, u32)]) -> String {
    let mut out = String::from("# generated\n");
    out.push_str(&format!("step,{}\nstop,{}\nstart,{}\n", s.step, s.stop, s.start));
    for (t, v) in &s.rows {
        out.push_str(&format!("at,{t},system.max31855.temp={v}\n"));
    }
    for (t, pin) in expectations {
        out.push_str(&format!("expect,{},system.gpio.data,=,{pin}\n", *t as f64 / 1e9));
    }
    out
}

/// Time of every pin change in `(time, pin)` records.
pub fn transitions(records: &[(i64, u32)]) -> Vec<(i64, u32)> {
    let mut last = 0;
    let mut out = Vec::new();
    for &(t, pin) in records {
        if pin != last {
            out.push((t, pin));
            last = pin;
        }
    }
    out
}

/// A seeded mix of legal commands against the reference platform,
/// including some that the platform answers with an error.
pub fn random_commands(seed: u64, n: usize) -> Vec<vpbridge::vsp::Command> {
    use rand::{Rng, SeedableRng};
    use vpbridge::property::PropertyKey;
    use vpbridge::time::SimTime;
    use vpbridge::vsp::Command;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let key = |s: &str| PropertyKey::new(s).unwrap();
    (0..n)
        .map(|_| match rng.random_range(0..10) {
            0 | 1 => Command::Step(SimTime::from_ticks(rng.random_range(1..2_000_000_000))),
            2 | 3 => Command::Set(key(reference_vp::TEMP), format!("{:.2}", rng.random_range(-20.0f32..90.0))),
            4 => Command::Get(key(reference_vp::GPIO_DATA)),
            5 => Command::Get(key(reference_vp::TEMP)),
            6 => Command::Get(key(reference_vp::POLL_COUNT)),
            7 => Command::GetTime,
            8 => Command::List,
            _ => Command::Get(key("system.bogus.x")),
        })
        .collect()
}
