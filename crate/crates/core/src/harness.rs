//! Scenario-driven import tool.
//!
//! A scenario is comma-separated text, one directive per line, `#` starts a
//! comment:
//!
//! ```text
//! step,0.01
//! stop,20
//! start,0
//! at,0.1,system.max31855.temp=11.5
//! expect,7.0,system.gpio.data,=,1
//! expect,7.0,system.gpio.data,!=,0
//! ```
//!
//! At every communication point the due input rows are set, then the step
//! is taken, then all outputs are read and recorded. Expectations at the
//! start time are checked against the outputs read during initialization.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adapter::{AdapterError, AdapterInstance, AdapterOptions};
use crate::model_description::{Causality, ModelDescription, VarType};
use crate::packager::{self, InspectError};
use crate::property::PropertyValue;
use crate::reference_vp::{CLEAR_COUNT, POLL_COUNT, SET_COUNT};
use crate::server::TranscriptEntry;
use crate::time::SimTime;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("scenario line {line}: {message}")]
    Scenario { line: u64, message: String },
    #[error("scenario does not match the model: {0}")]
    ScenarioMismatch(String),
    #[error("adapter failure: {0}")]
    Adapter(#[from] AdapterError),
    #[error("FMU library: {0}")]
    Fmi(String),
    #[error(transparent)]
    Package(#[from] InspectError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io { path: path.to_owned(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Equal,
    NotEqual,
}

impl Comparison {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Equal => "=",
            Comparison::NotEqual => "!=",
        }
    }

    fn holds(self, actual: &PropertyValue, expected: &PropertyValue) -> bool {
        (actual == expected) == (self == Comparison::Equal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputRow {
    pub time: SimTime,
    pub assignments: Vec<(String, String)>,
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub time: SimTime,
    pub name: String,
    pub comparison: Comparison,
    pub value: String,
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub step: SimTime,
    pub stop: SimTime,
    pub start: SimTime,
    pub inputs: Vec<InputRow>,
    pub expectations: Vec<Expectation>,
}

fn parse_time(text: &str, line: u64, what: &str) -> Result<SimTime, HarnessError> {
    let secs: f64 = text
        .parse()
        .map_err(|_| HarnessError::Scenario { line, message: format!("{what} {text:?} is not a number") })?;
    SimTime::from_secs_f64(secs).map_err(|e| HarnessError::Scenario { line, message: format!("{what}: {e}") })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, HarnessError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let (mut step, mut stop, mut start) = (None, None, None);
        let mut inputs = Vec::new();
        let mut expectations = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| HarnessError::Scenario {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |message: String| HarnessError::Scenario { line, message };
            let fields: Vec<&str> = record.iter().collect();
            match fields.as_slice() {
                [] | [""] => {}
                ["step", v] => step = Some(parse_time(v, line, "step")?),
                ["stop", v] => stop = Some(parse_time(v, line, "stop")?),
                ["start", v] => start = Some(parse_time(v, line, "start")?),
                ["at", time, assignments @ ..] if !assignments.is_empty() => {
                    let time = parse_time(time, line, "time")?;
                    let assignments = assignments
                        .iter()
                        .map(|a| {
                            a.split_once('=')
                                .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                                .ok_or_else(|| bad(format!("expected name=value, got {a:?}")))
                        })
                        .collect::<Result<_, _>>()?;
                    inputs.push(InputRow { time, assignments, line });
                }
                ["expect", time, name, op, value] => {
                    let comparison = match *op {
                        "=" | "==" => Comparison::Equal,
                        "!=" | "≠" => Comparison::NotEqual,
                        other => return Err(bad(format!("unknown comparison {other:?}"))),
                    };
                    expectations.push(Expectation {
                        time: parse_time(time, line, "time")?,
                        name: (*name).to_owned(),
                        comparison,
                        value: (*value).to_owned(),
                        line,
                    });
                }
                [kind, ..] => return Err(bad(format!("malformed {kind:?} directive"))),
            }
        }
        let missing = |what: &str| HarnessError::Scenario { line: 0, message: format!("missing {what} directive") };
        let scenario = Scenario {
            step: step.ok_or_else(|| missing("step"))?,
            stop: stop.ok_or_else(|| missing("stop"))?,
            start: start.unwrap_or(SimTime::ZERO),
            inputs,
            expectations,
        };
        scenario.check()?;
        Ok(scenario)
    }

    fn check(&self) -> Result<(), HarnessError> {
        let at = |line: u64, message: String| HarnessError::Scenario { line, message };
        if self.step == SimTime::ZERO {
            return Err(at(0, "step must be positive".into()));
        }
        if self.start > self.stop {
            return Err(at(0, "start lies after stop".into()));
        }
        let on_grid =
            |t: SimTime| t >= self.start && (t.ticks() - self.start.ticks()).is_multiple_of(self.step.ticks());
        let mut last = SimTime::ZERO;
        for row in &self.inputs {
            if row.time < last {
                return Err(at(row.line, "input rows must be in time order".into()));
            }
            if !on_grid(row.time) {
                return Err(at(row.line, format!("time {} is not on the step grid", row.time.to_decimal_secs())));
            }
            last = row.time;
        }
        let end = self.end();
        for e in &self.expectations {
            if !on_grid(e.time) || e.time > end {
                return Err(at(
                    e.line,
                    format!(
                        "time {} is not a communication point in [{}, {}]",
                        e.time.to_decimal_secs(),
                        self.start.to_decimal_secs(),
                        end.to_decimal_secs()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Number of steps taken.
    pub fn steps(&self) -> u64 {
        (self.stop.ticks() - self.start.ticks()) / self.step.ticks()
    }

    /// Last communication point.
    pub fn end(&self) -> SimTime {
        SimTime::from_ticks(self.start.ticks() + self.steps() * self.step.ticks())
    }

    /// Text form accepted by [`Scenario::parse`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("step,{}\n", self.step.to_decimal_secs()));
        out.push_str(&format!("stop,{}\n", self.stop.to_decimal_secs()));
        out.push_str(&format!("start,{}\n", self.start.to_decimal_secs()));
        for row in &self.inputs {
            out.push_str(&format!("at,{}", row.time.to_decimal_secs()));
            for (k, v) in &row.assignments {
                out.push_str(&format!(",{k}={v}"));
            }
            out.push('\n');
        }
        for e in &self.expectations {
            out.push_str(&format!(
                "expect,{},{},{},{}\n",
                e.time.to_decimal_secs(),
                e.name,
                e.comparison.symbol(),
                e.value
            ));
        }
        out
    }
}

/// What a co-simulation driver needs from an FMU.
pub trait CoSimTarget {
    fn enter_initialization_mode(&mut self, start: f64) -> Result<(), HarnessError>;
    fn exit_initialization_mode(&mut self) -> Result<(), HarnessError>;
    fn set(&mut self, vr: u32, value: &PropertyValue) -> Result<(), HarnessError>;
    fn get(&mut self, vr: u32, ty: VarType) -> Result<PropertyValue, HarnessError>;
    fn do_step(&mut self, current: f64, step: f64) -> Result<(), HarnessError>;
    fn terminate(&mut self);
}

impl CoSimTarget for AdapterInstance {
    fn enter_initialization_mode(&mut self, start: f64) -> Result<(), HarnessError> {
        Ok(AdapterInstance::enter_initialization_mode(self, Some(start))?)
    }

    fn exit_initialization_mode(&mut self) -> Result<(), HarnessError> {
        Ok(AdapterInstance::exit_initialization_mode(self)?)
    }

    fn set(&mut self, vr: u32, value: &PropertyValue) -> Result<(), HarnessError> {
        Ok(self.set_values(&[vr], std::slice::from_ref(value))?)
    }

    fn get(&mut self, vr: u32, _ty: VarType) -> Result<PropertyValue, HarnessError> {
        let mut v = self.get_values(&[vr])?;
        v.pop().ok_or_else(|| HarnessError::ScenarioMismatch(format!("no value for vr {vr}")))
    }

    fn do_step(&mut self, current: f64, step: f64) -> Result<(), HarnessError> {
        Ok(AdapterInstance::do_step(self, current, step)?)
    }

    fn terminate(&mut self) {
        AdapterInstance::terminate(self);
    }
}

/// One row of the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub outputs: Vec<PropertyValue>,
    pub inputs: Vec<PropertyValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationFailure {
    pub line: u64,
    pub time: SimTime,
    pub name: String,
    pub comparison: Comparison,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for ExpectationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: at t={} expected {} {} {}, got {}",
            self.line,
            self.time.to_decimal_secs(),
            self.name,
            self.comparison.symbol(),
            self.expected,
            self.actual
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

/// Branch coverage of the trigger application, from its counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageReport {
    pub set_count: u32,
    pub clear_count: u32,
    pub poll_count: u32,
}

impl CoverageReport {
    /// Transition branches taken at least once, out of two.
    pub fn branches_covered(&self) -> u32 {
        u32::from(self.set_count > 0) + u32::from(self.clear_count > 0)
    }

    pub fn percent(&self) -> f64 {
        self.branches_covered() as f64 * 50.0
    }

    pub fn no_polls(&self) -> bool {
        self.poll_count == 0
    }
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.no_polls() {
            return write!(f, "branch coverage: no polls observed");
        }
        write!(
            f,
            "branch coverage: {}/2 ({:.1} %), set={} clear={} polls={}",
            self.branches_covered(),
            self.percent(),
            self.set_count,
            self.clear_count,
            self.poll_count
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_names: Vec<String>,
    pub input_names: Vec<String>,
    pub records: Vec<TraceRecord>,
    pub failures: Vec<ExpectationFailure>,
    /// Outputs after the last step, or after initialization if none.
    pub last_outputs: BTreeMap<String, PropertyValue>,
}

impl RunOutcome {
    pub fn verdict(&self) -> Verdict {
        if self.failures.is_empty() { Verdict::Pass } else { Verdict::Fail }
    }

    /// `None` when the model does not expose the application counters.
    pub fn coverage(&self) -> Option<CoverageReport> {
        let get = |name: &str| self.last_outputs.get(name).and_then(PropertyValue::as_u32);
        Some(CoverageReport {
            set_count: get(SET_COUNT)?,
            clear_count: get(CLEAR_COUNT)?,
            poll_count: get(POLL_COUNT)?,
        })
    }

    /// Comma-separated trace: header row, then one line per record.
    pub fn trace_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let header = std::iter::once("time")
            .chain(self.output_names.iter().map(String::as_str))
            .chain(self.input_names.iter().map(String::as_str));
        // writing to a Vec cannot fail
        let _ = w.write_record(header);
        for r in &self.records {
            let row = std::iter::once(r.time.to_decimal_secs())
                .chain(r.outputs.iter().map(PropertyValue::encode))
                .chain(r.inputs.iter().map(PropertyValue::encode));
            let _ = w.write_record(row);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }
}

struct Bound {
    inputs: Vec<(SimTime, Vec<(u32, PropertyValue)>)>,
    expectations: Vec<(u32, PropertyValue, Expectation)>,
}

fn bind(md: &ModelDescription, scenario: &Scenario) -> Result<Bound, HarnessError> {
    let lookup = |name: &str, causality: Causality, line: u64| {
        let var = md
            .variable_by_name(name)
            .ok_or_else(|| HarnessError::ScenarioMismatch(format!("line {line}: unknown variable {name}")))?;
        if var.causality != causality {
            return Err(HarnessError::ScenarioMismatch(format!(
                "line {line}: {name} is {}, not {causality}",
                var.causality
            )));
        }
        Ok(var)
    };
    let decode = |ty: VarType, text: &str, line: u64| {
        PropertyValue::decode(ty.value_type(), text)
            .map_err(|_| HarnessError::ScenarioMismatch(format!("line {line}: {text:?} is not a valid {ty}")))
    };
    let mut inputs = Vec::new();
    for row in &scenario.inputs {
        let mut set = Vec::new();
        for (name, text) in &row.assignments {
            let var = lookup(name, Causality::Input, row.line)?;
            set.push((var.value_reference, decode(var.var_type, text, row.line)?));
        }
        inputs.push((row.time, set));
    }
    let mut expectations = Vec::new();
    for e in &scenario.expectations {
        let var = lookup(&e.name, Causality::Output, e.line)?;
        expectations.push((var.value_reference, decode(var.var_type, &e.value, e.line)?, e.clone()));
    }
    Ok(Bound { inputs, expectations })
}

/// Drives `target` through `scenario`. Terminates the target on success
/// and on failure.
pub fn run_scenario(
    target: &mut dyn CoSimTarget,
    md: &ModelDescription,
    scenario: &Scenario,
) -> Result<RunOutcome, HarnessError> {
    let bound = bind(md, scenario)?;
    let result = drive(target, md, scenario, &bound);
    target.terminate();
    result
}

fn drive(
    target: &mut dyn CoSimTarget,
    md: &ModelDescription,
    scenario: &Scenario,
    bound: &Bound,
) -> Result<RunOutcome, HarnessError> {
    let outputs: Vec<_> = md.outputs().collect();
    let inputs: Vec<_> = md.inputs().collect();
    let mut applied: BTreeMap<u32, PropertyValue> =
        inputs.iter().filter_map(|v| v.start.clone().map(|s| (v.value_reference, s))).collect();
    let mut next_row = 0;
    let mut apply_due = |target: &mut dyn CoSimTarget,
                         applied: &mut BTreeMap<u32, PropertyValue>,
                         now: SimTime|
     -> Result<(), HarnessError> {
        while let Some((time, set)) = bound.inputs.get(next_row) {
            if *time > now {
                break;
            }
            for (vr, value) in set {
                target.set(*vr, value)?;
                applied.insert(*vr, value.clone());
            }
            next_row += 1;
        }
        Ok(())
    };
    let read_outputs = |target: &mut dyn CoSimTarget| -> Result<Vec<PropertyValue>, HarnessError> {
        outputs.iter().map(|v| target.get(v.value_reference, v.var_type)).collect()
    };
    let mut failures = Vec::new();
    let mut check = |now: SimTime, values: &[PropertyValue]| {
        for (vr, expected, e) in bound.expectations.iter().filter(|(_, _, e)| e.time == now) {
            let idx = outputs.iter().position(|v| v.value_reference == *vr);
            let Some(actual) = idx.map(|i| &values[i]) else { continue };
            if !e.comparison.holds(actual, expected) {
                failures.push(ExpectationFailure {
                    line: e.line,
                    time: now,
                    name: e.name.clone(),
                    comparison: e.comparison,
                    expected: e.value.clone(),
                    actual: actual.encode(),
                });
            }
        }
    };

    target.enter_initialization_mode(scenario.start.as_secs_f64())?;
    apply_due(target, &mut applied, scenario.start)?;
    let mut values = read_outputs(target)?;
    check(scenario.start, &values);
    target.exit_initialization_mode()?;

    let mut records = Vec::with_capacity(scenario.steps() as usize);
    let mut comm = scenario.start;
    for _ in 0..scenario.steps() {
        apply_due(target, &mut applied, comm)?;
        target.do_step(comm.as_secs_f64(), scenario.step.as_secs_f64())?;
        comm = SimTime::from_ticks(comm.ticks() + scenario.step.ticks());
        values = read_outputs(target)?;
        check(comm, &values);
        records.push(TraceRecord {
            time: comm,
            outputs: values.clone(),
            inputs: inputs
                .iter()
                .map(|v| applied.get(&v.value_reference).cloned().unwrap_or(PropertyValue::Float64(f64::NAN)))
                .collect(),
        });
    }
    failures.sort_by_key(|f| (f.time, f.line));
    Ok(RunOutcome {
        output_names: outputs.iter().map(|v| v.name.clone()).collect(),
        input_names: inputs.iter().map(|v| v.name.clone()).collect(),
        records,
        failures,
        last_outputs: outputs.iter().map(|v| v.name.clone()).zip(values).collect(),
    })
}

/// Where the model comes from.
#[derive(Debug, Clone)]
pub enum ModelSource {
    Fmu(PathBuf),
    ModelDescription(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelSource,
    pub scenario: PathBuf,
    pub trace: PathBuf,
    pub options: AdapterOptions,
    /// Load the packed FMU library and drive its exported functions.
    pub via_fmi: bool,
}

#[derive(Debug)]
pub struct RunReport {
    pub outcome: RunOutcome,
    /// Adapter command transcript; empty when driving through the library.
    pub transcript: Vec<TranscriptEntry>,
}

impl RunReport {
    pub fn summary(&self) -> String {
        let o = &self.outcome;
        let mut s = format!(
            "{}: {} records, {} expectation failures\n",
            match o.verdict() {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
            },
            o.records.len(),
            o.failures.len()
        );
        for f in &o.failures {
            s.push_str(&format!("  {f}\n"));
        }
        if let Some(c) = o.coverage() {
            s.push_str(&format!("{c}\n"));
        }
        s
    }
}

/// Runs a scenario file against a packed FMU or a bare model description
/// and writes the trace.
pub fn run(config: &RunConfig) -> Result<RunReport, HarnessError> {
    let text = fs::read_to_string(&config.scenario).map_err(io_error(&config.scenario))?;
    let scenario = Scenario::parse(&text)?;
    let _unpacked;
    let md_path = match &config.model {
        ModelSource::ModelDescription(p) => p.clone(),
        ModelSource::Fmu(fmu) => {
            let dir = tempfile::tempdir().map_err(io_error(fmu))?;
            packager::unpack(fmu, dir.path())?;
            let md = dir.path().join(packager::MODEL_DESCRIPTION);
            _unpacked = dir;
            md
        }
    };
    let (outcome, transcript) = if config.via_fmi {
        let root = md_path.parent().unwrap_or(Path::new(".")).to_owned();
        let md_bytes = fs::read(&md_path).map_err(io_error(&md_path))?;
        let md = ModelDescription::parse(&md_bytes).map_err(AdapterError::from)?;
        let mut target = crate::fmi_target::FmiTarget::load(&root, &md)?;
        (run_scenario(&mut target, &md, &scenario)?, Vec::new())
    } else {
        let mut inst = AdapterInstance::instantiate_from_file(&md_path, config.options.clone())?;
        let md = inst.model_description().clone();
        let outcome = run_scenario(&mut inst, &md, &scenario)?;
        (outcome, inst.transcript().to_vec())
    };
    fs::write(&config.trace, outcome.trace_csv()).map_err(io_error(&config.trace))?;
    Ok(RunReport { outcome, transcript })
}
