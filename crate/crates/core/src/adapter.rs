//! Co-simulation adapter: the FMI 3.0 lifecycle mapped onto a VSP session.
//!
//! Value references are translated to property names through the model
//! description only. Time crosses the wire as integer nanoseconds; the
//! communication point is kept in ticks so repeated steps cannot drift.

use std::collections::BTreeMap;
use std::env;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command as Process, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use crate::client::{self, ClientError, ConnectOptions, Session};
use crate::model_description::{Causality, ModelDescription, ModelDescriptionError, VarType, VrInfo};
use crate::property::{PropertyValue, ValueType};
use crate::server::TranscriptEntry;
use crate::time::{SimTime, TimeConversionError};
use crate::vsp::{Command, ErrorCode, Response};

/// `host[:port]` of an already running platform; disables spawning.
pub const ENV_REMOTE: &str = "VPBRIDGE_REMOTE";
/// Port override for both spawn and attach.
pub const ENV_PORT: &str = "VPBRIDGE_PORT";

pub const DEFAULT_TERMINATE_GRACE: Duration = Duration::from_secs(5);

/// Flag appended to the platform arguments to select its port.
pub const PORT_FLAG: &str = "--port";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdapterState {
    Instantiated,
    InitializationMode,
    StepMode,
    Terminated,
    Error,
}

impl fmt::Display for AdapterState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("{op} is not allowed in state {state}")]
    IllegalState { op: &'static str, state: AdapterState },
    #[error(transparent)]
    ModelDescription(#[from] ModelDescriptionError),
    #[error("cannot read model description {path}: {message}")]
    ModelDescriptionIo { path: PathBuf, message: String },
    #[error("failed to spawn the platform: {0}")]
    SpawnFailure(String),
    #[error("could not connect: {0}")]
    ConnectTimeout(String),
    #[error("connection refused: {0}")]
    Refused(String),
    #[error("platform has no property {0}")]
    MissingProperty(String),
    #[error("platform property {name} is {remote}, the model description declares {declared}")]
    PropertyTypeMismatch { name: String, declared: VarType, remote: ValueType },
    #[error("unknown value reference {0}")]
    UnknownVr(u32),
    #[error("value reference {vr} has causality {causality}, which does not allow {op}")]
    WrongCausality { vr: u32, causality: Causality, op: &'static str },
    #[error("value reference {vr} is {declared}, not {requested}")]
    TypeMismatch { vr: u32, declared: VarType, requested: ValueType },
    #[error("{vrs} value references but {values} values")]
    ArgumentMismatch { vrs: usize, values: usize },
    #[error("platform error {code}: {message}")]
    RemoteError { code: ErrorCode, message: String },
    #[error("session lost: {0}")]
    SessionLost(String),
    #[error("current communication point {got} s does not match {expected} s")]
    BadCommunicationPoint { expected: f64, got: f64 },
    #[error("bad step size {step} s: {reason}")]
    BadStepSize { step: f64, reason: String },
    #[error("bad start time {start} s: {reason}")]
    BadStartTime { start: f64, reason: String },
    #[error("platform time {remote} does not match the communication point {local}")]
    Desynchronized { local: SimTime, remote: SimTime },
}

impl AdapterError {
    pub fn is_state_machine_error(&self) -> bool {
        matches!(self, AdapterError::IllegalState { .. })
    }
}

fn from_client(e: ClientError) -> AdapterError {
    match e {
        ClientError::ConnectTimeout { .. } => AdapterError::ConnectTimeout(e.to_string()),
        ClientError::Refused { .. } => AdapterError::Refused(e.to_string()),
        ClientError::SessionLost(m) | ClientError::Protocol(m) => AdapterError::SessionLost(m),
    }
}

/// Where the platform runs and how the adapter reaches it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterOptions {
    /// Attach to this host instead of the annotated one; disables spawning.
    pub host: Option<String>,
    /// Use this port instead of the annotated one.
    pub port: Option<u16>,
    pub connect: ConnectOptions,
    pub terminate_grace: Duration,
}

impl Default for AdapterOptions {
    fn default() -> Self {
        AdapterOptions {
            host: None,
            port: None,
            connect: ConnectOptions::default(),
            terminate_grace: DEFAULT_TERMINATE_GRACE,
        }
    }
}

impl AdapterOptions {
    /// Defaults overridden by `VPBRIDGE_REMOTE` and `VPBRIDGE_PORT`.
    pub fn from_env() -> Result<Self, String> {
        let mut opts = AdapterOptions::default();
        if let Ok(remote) = env::var(ENV_REMOTE)
            && !remote.trim().is_empty()
        {
            let remote = remote.trim();
            match remote.rsplit_once(':') {
                Some((host, port)) if !host.contains(':') || host.starts_with('[') => {
                    opts.host = Some(host.trim_matches(['[', ']']).to_owned());
                    opts.port = Some(parse_port(port).map_err(|e| format!("{ENV_REMOTE}: {e}"))?);
                }
                _ => opts.host = Some(remote.to_owned()),
            }
        }
        if let Ok(port) = env::var(ENV_PORT)
            && !port.trim().is_empty()
        {
            opts.port = Some(parse_port(port.trim()).map_err(|e| format!("{ENV_PORT}: {e}"))?);
        }
        Ok(opts)
    }
}

fn parse_port(text: &str) -> Result<u16, String> {
    match text.parse::<u16>() {
        Ok(p) if p > 0 => Ok(p),
        _ => Err(format!("invalid port {text:?}")),
    }
}

/// How to launch the platform process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpawnSpec {
    pub executable: PathBuf,
    pub args: Vec<String>,
}

impl SpawnSpec {
    pub fn new(root: &Path, executable: &str, args: Vec<String>, port: u16) -> Result<SpawnSpec, AdapterError> {
        let executable = root.join(executable);
        if !executable.is_file() {
            return Err(AdapterError::SpawnFailure(format!("{} is not a file", executable.display())));
        }
        let mut args = args;
        args.push(PORT_FLAG.into());
        args.push(port.to_string());
        Ok(SpawnSpec { executable, args })
    }

    pub fn spawn(&self) -> Result<Child, AdapterError> {
        Process::new(&self.executable)
            .args(&self.args)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AdapterError::SpawnFailure(format!("{}: {e}", self.executable.display())))
    }
}

#[derive(Debug)]
pub struct AdapterInstance {
    md: ModelDescription,
    vrmap: BTreeMap<u32, VrInfo>,
    state: AdapterState,
    session: Option<Session>,
    child: Option<Child>,
    root: Option<PathBuf>,
    comm: SimTime,
    options: AdapterOptions,
    transcript: Vec<TranscriptEntry>,
}

impl AdapterInstance {
    /// Reads `path`, taking its directory as the FMU root.
    pub fn instantiate_from_file(path: &Path, options: AdapterOptions) -> Result<AdapterInstance, AdapterError> {
        let bytes = std::fs::read(path)
            .map_err(|e| AdapterError::ModelDescriptionIo { path: path.to_owned(), message: e.to_string() })?;
        let md = ModelDescription::parse(&bytes)?;
        let root = path.parent().map(Path::to_owned).unwrap_or_default();
        Self::instantiate(md, Some(&root), options)
    }

    /// Spawns the platform when the description names an executable and no
    /// host override is given, then connects and checks every declared
    /// variable against the platform's property list.
    pub fn instantiate(
        md: ModelDescription,
        root: Option<&Path>,
        options: AdapterOptions,
    ) -> Result<AdapterInstance, AdapterError> {
        md.validate()?;
        let port = options.port.unwrap_or(md.vcml.port);
        let mut child = None;
        let host = match (&options.host, &md.vcml.executable) {
            (Some(host), _) => host.clone(),
            (None, Some(exe)) => {
                let root = root.ok_or_else(|| {
                    AdapterError::SpawnFailure("no resource location to find the executable in".into())
                })?;
                let spec = SpawnSpec::new(root, exe, md.vcml.arg_list(), port)?;
                log::info!("spawning {} {:?}", spec.executable.display(), spec.args);
                child = Some(spec.spawn()?);
                md.vcml.host.clone()
            }
            (None, None) => md.vcml.host.clone(),
        };
        let mut instance = AdapterInstance {
            vrmap: md.vr_map(),
            md,
            state: AdapterState::Instantiated,
            session: None,
            child,
            root: root.map(Path::to_owned),
            comm: SimTime::ZERO,
            options,
            transcript: Vec::new(),
        };
        // on failure, dropping the instance reaps the child
        instance.session = Some(instance.connect(&host, port)?);
        instance.cross_check()?;
        Ok(instance)
    }

    fn connect(&mut self, host: &str, port: u16) -> Result<Session, AdapterError> {
        let opts = &self.options.connect;
        let single = ConnectOptions { attempts: 1, ..opts.clone() };
        let attempts = opts.attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            if let Some(child) = self.child.as_mut()
                && let Ok(Some(status)) = child.try_wait()
            {
                return Err(AdapterError::SpawnFailure(format!("platform exited early with {status}")));
            }
            match client::connect(host, port, &single) {
                Ok(session) => return Ok(session),
                Err(e @ ClientError::ConnectTimeout { .. }) => last = Some(e),
                Err(e) => return Err(from_client(e)),
            }
            if attempt < attempts {
                thread::sleep(opts.interval);
            }
        }
        Err(AdapterError::ConnectTimeout(format!(
            "{host}:{port} unreachable after {attempts} attempts{}",
            last.map(|e| format!(" ({e})")).unwrap_or_default()
        )))
    }

    fn cross_check(&mut self) -> Result<(), AdapterError> {
        let remote = match self.call(&Command::List)? {
            Response::OkList(entries) => entries,
            other => return Err(self.unexpected(other)),
        };
        let remote: BTreeMap<&str, ValueType> = remote.iter().map(|(k, t)| (k.as_str(), *t)).collect();
        for var in self.md.variables.iter().filter(|v| !v.is_time()) {
            match remote.get(var.name.as_str()) {
                None => return Err(AdapterError::MissingProperty(var.name.clone())),
                Some(&ty) if ty != var.var_type.value_type() => {
                    return Err(AdapterError::PropertyTypeMismatch {
                        name: var.name.clone(),
                        declared: var.var_type,
                        remote: ty,
                    });
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn state(&self) -> AdapterState {
        self.state
    }

    pub fn model_description(&self) -> &ModelDescription {
        &self.md
    }

    pub fn resource_root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Current communication point in ticks.
    pub fn communication_point(&self) -> SimTime {
        self.comm
    }

    pub fn child_id(&self) -> Option<u32> {
        self.child.as_ref().map(Child::id)
    }

    /// Commands and responses exchanged so far, kept after terminate.
    pub fn transcript(&self) -> &[TranscriptEntry] {
        match &self.session {
            Some(s) => s.transcript(),
            None => &self.transcript,
        }
    }

    fn require(&self, op: &'static str, allowed: &[AdapterState]) -> Result<(), AdapterError> {
        if allowed.contains(&self.state) { Ok(()) } else { Err(AdapterError::IllegalState { op, state: self.state }) }
    }

    fn call(&mut self, cmd: &Command) -> Result<Response, AdapterError> {
        let session = self.session.as_mut().ok_or_else(|| AdapterError::SessionLost("no session".into()))?;
        match session.call(cmd) {
            Ok(resp) => Ok(resp),
            Err(e) => {
                self.state = AdapterState::Error;
                Err(from_client(e))
            }
        }
    }

    fn unexpected(&mut self, resp: Response) -> AdapterError {
        match resp {
            Response::Err(code, message) => AdapterError::RemoteError { code, message },
            other => {
                self.state = AdapterState::Error;
                AdapterError::SessionLost(format!("unexpected response {other:?}"))
            }
        }
    }

    /// Issues a relative step and checks the platform lands on `target`.
    fn step_to(&mut self, delta: SimTime, target: SimTime) -> Result<(), AdapterError> {
        match self.call(&Command::Step(delta))? {
            Response::OkTime(remote) if remote == target => Ok(()),
            Response::OkTime(remote) => {
                self.state = AdapterState::Error;
                Err(AdapterError::Desynchronized { local: target, remote })
            }
            other => {
                let err = self.unexpected(other);
                self.state = AdapterState::Error;
                Err(err)
            }
        }
    }

    /// Applies input start values, then skips to the start time.
    pub fn enter_initialization_mode(&mut self, start_time: Option<f64>) -> Result<(), AdapterError> {
        self.require("enter_initialization_mode", &[AdapterState::Instantiated])?;
        let start = start_time.or(self.md.default_experiment.as_ref().and_then(|e| e.start_time)).unwrap_or(0.0);
        let start_ticks =
            SimTime::from_secs_f64(start).map_err(|e| AdapterError::BadStartTime { start, reason: e.to_string() })?;
        let starts: Vec<(String, PropertyValue)> =
            self.md.inputs().filter_map(|v| v.start.clone().map(|s| (v.name.clone(), s))).collect();
        for (name, value) in starts {
            let key = name.parse().map_err(|_| AdapterError::MissingProperty(name.clone()))?;
            match self.call(&Command::Set(key, value.encode()))? {
                Response::Ok => {}
                other => {
                    let err = self.unexpected(other);
                    self.state = AdapterState::Error;
                    return Err(err);
                }
            }
        }
        if start_ticks > SimTime::ZERO {
            self.step_to(start_ticks, start_ticks)?;
        }
        self.comm = start_ticks;
        self.state = AdapterState::InitializationMode;
        Ok(())
    }

    pub fn exit_initialization_mode(&mut self) -> Result<(), AdapterError> {
        self.require("exit_initialization_mode", &[AdapterState::InitializationMode])?;
        self.state = AdapterState::StepMode;
        Ok(())
    }

    fn lookup(&self, vr: u32) -> Result<&VrInfo, AdapterError> {
        self.vrmap.get(&vr).ok_or(AdapterError::UnknownVr(vr))
    }

    /// Reads outputs from the platform; the time variable is served from
    /// the communication point.
    pub fn get_values(&mut self, vrs: &[u32]) -> Result<Vec<PropertyValue>, AdapterError> {
        self.get_checked(vrs, None)
    }

    fn get_checked(&mut self, vrs: &[u32], want: Option<ValueType>) -> Result<Vec<PropertyValue>, AdapterError> {
        self.require("get", &[AdapterState::InitializationMode, AdapterState::StepMode])?;
        let mut plan = Vec::with_capacity(vrs.len());
        for &vr in vrs {
            let info = self.lookup(vr)?;
            if info.causality == Causality::Input {
                return Err(AdapterError::WrongCausality { vr, causality: info.causality, op: "get" });
            }
            if let Some(want) = want
                && info.var_type.value_type() != want
            {
                return Err(AdapterError::TypeMismatch { vr, declared: info.var_type, requested: want });
            }
            plan.push((vr, info.clone()));
        }
        let mut out = Vec::with_capacity(plan.len());
        for (vr, info) in plan {
            if info.causality == Causality::Independent {
                out.push(PropertyValue::Float64(self.comm.as_secs_f64()));
                continue;
            }
            let key = info.name.parse().map_err(|_| AdapterError::MissingProperty(info.name.clone()))?;
            let declared = info.var_type.value_type();
            match self.call(&Command::Get(key))? {
                Response::OkValue(ty, text) if ty == declared => {
                    let value = PropertyValue::decode(ty, &text).map_err(|e| {
                        self.state = AdapterState::Error;
                        AdapterError::SessionLost(format!("undecodable value for {}: {e}", info.name))
                    })?;
                    out.push(value);
                }
                Response::OkValue(ty, _) => {
                    return Err(AdapterError::TypeMismatch { vr, declared: info.var_type, requested: ty });
                }
                other => return Err(self.unexpected(other)),
            }
        }
        Ok(out)
    }

    /// Writes inputs through to the platform.
    pub fn set_values(&mut self, vrs: &[u32], values: &[PropertyValue]) -> Result<(), AdapterError> {
        self.require("set", &[AdapterState::InitializationMode, AdapterState::StepMode])?;
        if vrs.len() != values.len() {
            return Err(AdapterError::ArgumentMismatch { vrs: vrs.len(), values: values.len() });
        }
        let mut plan = Vec::with_capacity(vrs.len());
        for (&vr, value) in vrs.iter().zip(values) {
            let info = self.lookup(vr)?;
            if info.causality != Causality::Input {
                return Err(AdapterError::WrongCausality { vr, causality: info.causality, op: "set" });
            }
            if info.var_type.value_type() != value.value_type() {
                return Err(AdapterError::TypeMismatch { vr, declared: info.var_type, requested: value.value_type() });
            }
            let key = info.name.parse().map_err(|_| AdapterError::MissingProperty(info.name.clone()))?;
            plan.push((key, value.encode()));
        }
        for (key, text) in plan {
            match self.call(&Command::Set(key, text))? {
                Response::Ok => {}
                other => return Err(self.unexpected(other)),
            }
        }
        Ok(())
    }

    pub fn get_float64(&mut self, vrs: &[u32]) -> Result<Vec<f64>, AdapterError> {
        let values = self.get_checked(vrs, Some(ValueType::Float64))?;
        Ok(values.iter().filter_map(PropertyValue::as_f64).collect())
    }

    pub fn get_float32(&mut self, vrs: &[u32]) -> Result<Vec<f32>, AdapterError> {
        let values = self.get_checked(vrs, Some(ValueType::Float32))?;
        Ok(values.iter().filter_map(PropertyValue::as_f32).collect())
    }

    pub fn get_uint32(&mut self, vrs: &[u32]) -> Result<Vec<u32>, AdapterError> {
        let values = self.get_checked(vrs, Some(ValueType::UInt32))?;
        Ok(values.iter().filter_map(PropertyValue::as_u32).collect())
    }

    pub fn set_float64(&mut self, vrs: &[u32], values: &[f64]) -> Result<(), AdapterError> {
        let values: Vec<_> = values.iter().copied().map(PropertyValue::Float64).collect();
        self.set_values(vrs, &values)
    }

    pub fn set_float32(&mut self, vrs: &[u32], values: &[f32]) -> Result<(), AdapterError> {
        let values: Vec<_> = values.iter().copied().map(PropertyValue::Float32).collect();
        self.set_values(vrs, &values)
    }

    pub fn set_uint32(&mut self, vrs: &[u32], values: &[u32]) -> Result<(), AdapterError> {
        let values: Vec<_> = values.iter().copied().map(PropertyValue::UInt32).collect();
        self.set_values(vrs, &values)
    }

    /// Advances the platform by `step` seconds from `current`.
    pub fn do_step(&mut self, current: f64, step: f64) -> Result<(), AdapterError> {
        self.require("do_step", &[AdapterState::StepMode])?;
        let delta = match SimTime::from_secs_f64(step) {
            Ok(d) if d > SimTime::ZERO => d,
            Ok(_) => {
                return Err(AdapterError::BadStepSize { step, reason: "step size must be positive".into() });
            }
            Err(e) => {
                let reason = match e {
                    TimeConversionError::OutOfDomain(_) => "step size must be positive and finite".into(),
                    other => other.to_string(),
                };
                return Err(AdapterError::BadStepSize { step, reason });
            }
        };
        let expected = self.comm.ticks() as f64;
        if !current.is_finite() || (current * 1e9 - expected).abs() > 1.0 {
            return Err(AdapterError::BadCommunicationPoint { expected: self.comm.as_secs_f64(), got: current });
        }
        let target = self
            .comm
            .checked_add(delta)
            .ok_or_else(|| AdapterError::BadStepSize { step, reason: "simulation time would overflow".into() })?;
        self.step_to(delta, target)?;
        self.comm = target;
        Ok(())
    }

    /// Platform time as reported by the remote side.
    pub fn remote_time(&mut self) -> Result<SimTime, AdapterError> {
        self.require(
            "remote_time",
            &[AdapterState::Instantiated, AdapterState::InitializationMode, AdapterState::StepMode],
        )?;
        match self.call(&Command::GetTime)? {
            Response::OkTime(t) => Ok(t),
            other => Err(self.unexpected(other)),
        }
    }

    /// Ends the session and reaps a spawned platform, killing it if it does
    /// not exit within the grace period. Repeated calls are no-ops.
    pub fn terminate(&mut self) {
        if let Some(mut session) = self.session.take() {
            session.quit();
            self.transcript = session.transcript().to_vec();
        }
        if let Some(mut child) = self.child.take() {
            reap(&mut child, self.options.terminate_grace);
        }
        self.state = AdapterState::Terminated;
    }

    /// Releases everything; equivalent to dropping the instance.
    pub fn free(self) {}
}

impl Drop for AdapterInstance {
    fn drop(&mut self) {
        if self.session.is_some() || self.child.is_some() {
            self.terminate();
        }
    }
}

/// Waits for `child` up to `grace`, then kills it. Always reaps.
pub fn reap(child: &mut Child, grace: Duration) {
    let deadline = Instant::now() + grace;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                log::debug!("platform exited with {status}");
                return;
            }
            Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
            _ => break,
        }
    }
    log::warn!("platform did not exit within {grace:?}; killing it");
    let _ = child.kill();
    let _ = child.wait();
}
