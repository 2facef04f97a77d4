//! Case-study platform: a MAX31855 thermocouple converter, a GPIO
//! controller and a Schmitt-trigger application polling the sensor.
//!
//! The application runs as a self-rescheduling kernel process. It reads its
//! thresholds and period from properties on every poll, so they can be
//! changed over the wire between steps.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;

use crate::kernel::{Kernel, KernelError};
use crate::model_description::{
    Causality, CoSimulation, DefaultExperiment, ModelDescription, ModelStructure, ModelVariable, VarType, Variability,
    VcmlAnnotation,
};
use crate::property::{PropertyError, PropertyValue};
use crate::server::{Server, ServerConfig, ServerError, SessionEnd, TranscriptEntry};
use crate::time::SimTime;

pub const TEMP: &str = "system.max31855.temp";
pub const GPIO_DATA: &str = "system.gpio.data";
pub const T_LO: &str = "system.app.t_lo";
pub const T_UP: &str = "system.app.t_up";
pub const PERIOD_NS: &str = "system.app.period_ns";
pub const SET_COUNT: &str = "system.app.set_count";
pub const CLEAR_COUNT: &str = "system.app.clear_count";
pub const POLL_COUNT: &str = "system.app.poll_count";

pub const DEFAULT_TEMP: f32 = 10.0;
pub const DEFAULT_T_LO: f32 = 40.0;
pub const DEFAULT_T_UP: f32 = 50.0;
pub const DEFAULT_PERIOD_NS: u32 = 500_000_000;

/// GPIO bit driven by the application.
pub const TRIGGER_PIN: u32 = 0;

pub mod max31855 {
    //! Temperature word layout: a 14-bit two's-complement count of 0.25 °C
    //! in bits 31..18; all other bits zero.

    pub const RESOLUTION: f64 = 0.25;
    pub const MIN_TEMP: f32 = -270.0;
    pub const MAX_TEMP: f32 = 1800.0;
    pub const FIELD_SHIFT: u32 = 18;
    pub const FIELD_MASK: u32 = 0x3FFF;

    /// Encodes `temp`, saturating at the range bounds. NaN encodes as 0 °C.
    pub fn read_frame(temp: f32) -> u32 {
        if temp.is_nan() {
            return 0;
        }
        let t = temp.clamp(MIN_TEMP, MAX_TEMP) as f64;
        let counts = (t / RESOLUTION).floor() as i32;
        ((counts as u32) & FIELD_MASK) << FIELD_SHIFT
    }

    /// Temperature held in a frame word.
    pub fn decode(word: u32) -> f32 {
        let counts = (word as i32) >> FIELD_SHIFT;
        (counts as f64 * RESOLUTION) as f32
    }
}

/// Outcome of one poll.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    None,
    Set,
    Clear,
}

/// The trigger decision for one sample. Both comparisons are strict.
pub fn schmitt_decide(pin: bool, temp: f32, t_lo: f32, t_up: f32) -> Transition {
    if !pin && temp > t_up {
        Transition::Set
    } else if pin && temp < t_lo {
        Transition::Clear
    } else {
        Transition::None
    }
}

/// Thresholds and poll period of the application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchmittAppConfig {
    pub t_lo: f32,
    pub t_up: f32,
    pub period: SimTime,
}

impl Default for SchmittAppConfig {
    fn default() -> Self {
        SchmittAppConfig {
            t_lo: DEFAULT_T_LO,
            t_up: DEFAULT_T_UP,
            period: SimTime::from_nanos(DEFAULT_PERIOD_NS as u64),
        }
    }
}

impl SchmittAppConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_lo.is_finite() && self.t_up.is_finite()) {
            return Err("thresholds must be finite".into());
        }
        if self.t_lo >= self.t_up {
            return Err(format!("t_lo ({}) must be below t_up ({})", self.t_lo, self.t_up));
        }
        if self.period == SimTime::ZERO {
            return Err("poll period must be positive".into());
        }
        Ok(())
    }

    fn from_kernel(kernel: &Kernel) -> Result<Self, KernelError> {
        let f = |key| -> Result<f32, KernelError> { Ok(kernel.get_property(key)?.as_f32().unwrap_or(f32::NAN)) };
        let period = kernel.get_property(PERIOD_NS)?.as_u32().unwrap_or(0);
        Ok(SchmittAppConfig { t_lo: f(T_LO)?, t_up: f(T_UP)?, period: SimTime::from_nanos(period as u64) })
    }
}

/// Registers all platform properties with their defaults.
pub fn register_properties(kernel: &mut Kernel) -> Result<(), KernelError> {
    kernel.register_property(TEMP, PropertyValue::Float32(DEFAULT_TEMP))?;
    kernel.register_property(GPIO_DATA, PropertyValue::UInt32(0))?;
    kernel.register_property(T_LO, PropertyValue::Float32(DEFAULT_T_LO))?;
    kernel.register_property(T_UP, PropertyValue::Float32(DEFAULT_T_UP))?;
    kernel.register_property(PERIOD_NS, PropertyValue::UInt32(DEFAULT_PERIOD_NS))?;
    kernel.register_property(SET_COUNT, PropertyValue::UInt32(0))?;
    kernel.register_property(CLEAR_COUNT, PropertyValue::UInt32(0))?;
    kernel.register_property(POLL_COUNT, PropertyValue::UInt32(0))?;
    Ok(())
}

fn bump(kernel: &mut Kernel, key: &str) {
    let n = kernel.get_property(key).ok().and_then(PropertyValue::as_u32).unwrap_or(0);
    let _ = kernel.set_property(key, PropertyValue::UInt32(n.saturating_add(1)));
}

/// One poll of the application: sample, decide, drive the pin, count.
pub fn schmitt_poll(kernel: &mut Kernel) {
    let temp = kernel.get_property(TEMP).ok().and_then(PropertyValue::as_f32).unwrap_or(f32::NAN);
    let sample = max31855::decode(max31855::read_frame(temp));
    let t_lo = kernel.get_property(T_LO).ok().and_then(PropertyValue::as_f32).unwrap_or(DEFAULT_T_LO);
    let t_up = kernel.get_property(T_UP).ok().and_then(PropertyValue::as_f32).unwrap_or(DEFAULT_T_UP);
    let data = kernel.get_property(GPIO_DATA).ok().and_then(PropertyValue::as_u32).unwrap_or(0);
    let mask = 1u32 << TRIGGER_PIN;
    let pin = data & mask != 0;
    match schmitt_decide(pin, sample, t_lo, t_up) {
        Transition::Set => {
            let _ = kernel.set_property(GPIO_DATA, PropertyValue::UInt32(data | mask));
            bump(kernel, SET_COUNT);
        }
        Transition::Clear => {
            let _ = kernel.set_property(GPIO_DATA, PropertyValue::UInt32(data & !mask));
            bump(kernel, CLEAR_COUNT);
        }
        Transition::None => {}
    }
    bump(kernel, POLL_COUNT);
    log::trace!("poll at {}: T={sample} pin={}", kernel.now(), !pin);
}

/// Schedules `schmitt_poll` now and every period after. A period of zero
/// set at run time keeps the last valid one.
pub fn start_application(kernel: &mut Kernel, period: SimTime) -> Result<(), KernelError> {
    fn tick(kernel: &mut Kernel, last_period: SimTime) {
        schmitt_poll(kernel);
        let period = match kernel.get_property(PERIOD_NS).ok().and_then(PropertyValue::as_u32) {
            Some(ns) if ns > 0 => SimTime::from_nanos(ns as u64),
            _ => last_period,
        };
        // past the end of time there is nothing left to poll
        let _ = kernel.schedule_fn(period, move |k| tick(k, period));
    }
    kernel.schedule_fn(SimTime::ZERO, move |k| tick(k, period))?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum VpError {
    #[error("bad flag: {0}")]
    BadFlag(String),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Builds the platform kernel and applies `key=value` overrides.
pub fn build_kernel<S: AsRef<str>>(overrides: &[S]) -> Result<Kernel, VpError> {
    let mut kernel = Kernel::new();
    register_properties(&mut kernel).map_err(|e| VpError::BadFlag(e.to_string()))?;
    for item in overrides {
        let item = item.as_ref();
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| VpError::BadFlag(format!("--config expects key=value, got {item:?}")))?;
        kernel
            .properties_mut()
            .set_encoded(key, value)
            .map_err(|e: PropertyError| VpError::BadFlag(format!("--config {item}: {e}")))?;
    }
    let config = SchmittAppConfig::from_kernel(&kernel).map_err(|e| VpError::BadFlag(e.to_string()))?;
    config.validate().map_err(VpError::BadFlag)?;
    start_application(&mut kernel, config.period).map_err(|e| VpError::BadFlag(e.to_string()))?;
    Ok(kernel)
}

#[derive(Debug, Parser)]
#[command(name = "vp", about = "Reference virtual platform served over the VSP protocol")]
pub struct VpArgs {
    /// TCP port to listen on (1-65535).
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub port: u16,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Property override `key=value`, applied after registration.
    #[arg(long = "config", value_name = "KEY=VALUE")]
    pub config: Vec<String>,
    /// Write the session transcript to this file on exit.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Seconds without a command before the session is dropped.
    #[arg(long, default_value_t = 30)]
    pub idle_timeout: u64,
}

/// Runs the platform until its single session ends.
pub fn run(args: &VpArgs) -> Result<Vec<TranscriptEntry>, VpError> {
    let mut kernel = build_kernel(&args.config)?;
    let mut server = Server::bind(&ServerConfig::new(args.host.clone(), args.port))?
        .with_idle_timeout(Duration::from_secs(args.idle_timeout.max(1)));
    log::info!("listening on {}", server.local_addr());
    let report = server.serve(&mut kernel)?;
    if let Some(path) = &args.transcript {
        fs::File::create(path)?.write_all(TranscriptEntry::to_lines(&report.transcript).as_bytes())?;
    }
    if let SessionEnd::ProtocolError(e) = &report.end {
        log::warn!("session ended with protocol error: {e}");
    }
    kernel.finalize();
    Ok(report.transcript)
}

/// Command-line entry point. Returns the process exit status: 0 after a
/// session, 2 for bad flags, 1 for runtime failures.
pub fn vp_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match VpArgs::try_parse_from(argv) {
        Ok(args) => args,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&args) {
        Ok(_) => 0,
        Err(VpError::BadFlag(msg)) => {
            eprintln!("vp: {msg}");
            2
        }
        Err(e) => {
            eprintln!("vp: {e}");
            1
        }
    }
}

fn var(
    name: &str,
    vr: u32,
    var_type: VarType,
    causality: Causality,
    variability: Variability,
    start: Option<PropertyValue>,
) -> ModelVariable {
    ModelVariable { name: name.into(), value_reference: vr, var_type, causality, variability, start }
}

/// Model description of this platform: the temperature input, the GPIO
/// register and the application's branch counters as outputs.
pub fn model_description(host: &str, port: u16, executable: Option<&str>, args: Option<&str>) -> ModelDescription {
    use Causality::*;
    use Variability::*;
    ModelDescription {
        model_name: "myVP".into(),
        instantiation_token: None,
        co_simulation: CoSimulation {
            model_identifier: "myVP".into(),
            needs_execution_tool: true,
            can_handle_variable_communication_step_size: true,
        },
        default_experiment: Some(DefaultExperiment {
            start_time: Some(3.0),
            stop_time: Some(5.0),
            step_size: Some(0.01),
        }),
        variables: vec![
            var("time", 0, VarType::Float64, Independent, Continuous, None),
            var(TEMP, 1, VarType::Float32, Input, Continuous, Some(PropertyValue::Float32(DEFAULT_TEMP))),
            var(GPIO_DATA, 2, VarType::UInt32, Output, Discrete, None),
            var(SET_COUNT, 3, VarType::UInt32, Output, Discrete, None),
            var(CLEAR_COUNT, 4, VarType::UInt32, Output, Discrete, None),
            var(POLL_COUNT, 5, VarType::UInt32, Output, Discrete, None),
        ],
        structure: ModelStructure { outputs: vec![2, 3, 4, 5], initial_unknowns: vec![1] },
        vcml: VcmlAnnotation {
            host: host.into(),
            port,
            executable: executable.map(str::to_owned),
            args: args.map(str::to_owned),
        },
    }
}
