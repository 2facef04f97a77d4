//! The `modelDescription.xml` subset understood by the adapter.
//!
//! Supported: the root element, `CoSimulation`, `DefaultExperiment`,
//! `Float64`/`Float32`/`UInt32` variables with input, output or independent
//! causality, `Output`/`InitialUnknown` structure entries, and the `VCML`
//! annotation carrying `host`, `port`, `executable` and `args`. Any other
//! element or attribute is skipped and reported as a warning.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use quick_xml::XmlVersion;
use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::reader::Reader;

use crate::property::{PropertyKey, PropertyValue, ValueType};

pub const FMI_VERSION: &str = "3.0";
pub const TIME_VARIABLE: &str = "time";
pub const VCML_ANNOTATION: &str = "VCML";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelDescriptionError {
    #[error("XML syntax error at line {line}: {message}")]
    XmlSyntax { line: usize, message: String },
    #[error("schema violation in <{element}>{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    SchemaViolation { line: Option<usize>, element: String, message: String },
}

fn violation(line: Option<usize>, element: &str, message: impl Into<String>) -> ModelDescriptionError {
    ModelDescriptionError::SchemaViolation { line, element: element.to_owned(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarType {
    Float64,
    Float32,
    UInt32,
}

impl VarType {
    pub fn element(self) -> &'static str {
        match self {
            VarType::Float64 => "Float64",
            VarType::Float32 => "Float32",
            VarType::UInt32 => "UInt32",
        }
    }

    pub fn value_type(self) -> ValueType {
        match self {
            VarType::Float64 => ValueType::Float64,
            VarType::Float32 => ValueType::Float32,
            VarType::UInt32 => ValueType::UInt32,
        }
    }

    fn from_element(name: &str) -> Option<VarType> {
        match name {
            "Float64" => Some(VarType::Float64),
            "Float32" => Some(VarType::Float32),
            "UInt32" => Some(VarType::UInt32),
            _ => None,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, VarType::Float64 | VarType::Float32)
    }
}

impl fmt::Display for VarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.element())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Causality {
    Input,
    Output,
    Independent,
}

impl Causality {
    pub fn as_str(self) -> &'static str {
        match self {
            Causality::Input => "input",
            Causality::Output => "output",
            Causality::Independent => "independent",
        }
    }
}

impl FromStr for Causality {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "input" => Ok(Causality::Input),
            "output" => Ok(Causality::Output),
            "independent" => Ok(Causality::Independent),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Causality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variability {
    Continuous,
    Discrete,
}

impl Variability {
    pub fn as_str(self) -> &'static str {
        match self {
            Variability::Continuous => "continuous",
            Variability::Discrete => "discrete",
        }
    }
}

impl FromStr for Variability {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "continuous" => Ok(Variability::Continuous),
            "discrete" => Ok(Variability::Discrete),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelVariable {
    pub name: String,
    pub value_reference: u32,
    pub var_type: VarType,
    pub causality: Causality,
    pub variability: Variability,
    pub start: Option<PropertyValue>,
}

impl ModelVariable {
    pub fn is_time(&self) -> bool {
        self.causality == Causality::Independent
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoSimulation {
    pub model_identifier: String,
    pub needs_execution_tool: bool,
    pub can_handle_variable_communication_step_size: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DefaultExperiment {
    pub start_time: Option<f64>,
    pub stop_time: Option<f64>,
    pub step_size: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelStructure {
    pub outputs: Vec<u32>,
    pub initial_unknowns: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VcmlAnnotation {
    pub host: String,
    pub port: u16,
    /// Path of the VP binary relative to the FMU root.
    pub executable: Option<String>,
    pub args: Option<String>,
}

impl VcmlAnnotation {
    /// `args` split on whitespace.
    pub fn arg_list(&self) -> Vec<String> {
        self.args.as_deref().map(|a| a.split_whitespace().map(str::to_owned).collect()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescription {
    pub model_name: String,
    pub instantiation_token: Option<String>,
    pub co_simulation: CoSimulation,
    pub default_experiment: Option<DefaultExperiment>,
    pub variables: Vec<ModelVariable>,
    pub structure: ModelStructure,
    pub vcml: VcmlAnnotation,
}

/// What a value reference stands for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VrInfo {
    pub name: String,
    pub var_type: VarType,
    pub causality: Causality,
}

/// Non-fatal finding while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl ModelDescription {
    pub fn variable(&self, vr: u32) -> Option<&ModelVariable> {
        self.variables.iter().find(|v| v.value_reference == vr)
    }

    pub fn variable_by_name(&self, name: &str) -> Option<&ModelVariable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &ModelVariable> {
        self.variables.iter().filter(|v| v.causality == Causality::Input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &ModelVariable> {
        self.variables.iter().filter(|v| v.causality == Causality::Output)
    }

    /// Value reference to name, type and causality, for every variable.
    pub fn vr_map(&self) -> BTreeMap<u32, VrInfo> {
        self.variables
            .iter()
            .map(|v| (v.value_reference, VrInfo { name: v.name.clone(), var_type: v.var_type, causality: v.causality }))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelDescriptionError> {
        validate(self, &Lines::default())
    }

    pub fn parse(xml: &[u8]) -> Result<ModelDescription, ModelDescriptionError> {
        let (md, warnings) = parse_with_warnings(xml)?;
        for w in &warnings {
            log::warn!("modelDescription: {w}");
        }
        Ok(md)
    }

    pub fn serialize(&self) -> String {
        serialize(self)
    }
}

/// Source lines of parsed items, for error context.
#[derive(Debug, Default)]
struct Lines {
    root: Option<usize>,
    experiment: Option<usize>,
    variables: Vec<usize>,
    outputs: Vec<usize>,
    initial_unknowns: Vec<usize>,
    vcml: Option<usize>,
}

fn validate(md: &ModelDescription, lines: &Lines) -> Result<(), ModelDescriptionError> {
    let var_line = |i: usize| lines.variables.get(i).copied();
    if md.model_name.is_empty() {
        return Err(violation(lines.root, "fmiModelDescription", "modelName is empty"));
    }
    if md.co_simulation.model_identifier.is_empty()
        || !md.co_simulation.model_identifier.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
    {
        return Err(violation(
            lines.root,
            "CoSimulation",
            format!("modelIdentifier {:?} is not a valid identifier", md.co_simulation.model_identifier),
        ));
    }
    if let Some(exp) = &md.default_experiment {
        for (name, v) in [("startTime", exp.start_time), ("stopTime", exp.stop_time), ("stepSize", exp.step_size)] {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(violation(lines.experiment, "DefaultExperiment", format!("{name} is not finite")));
            }
        }
        if exp.step_size.is_some_and(|h| h <= 0.0) {
            return Err(violation(lines.experiment, "DefaultExperiment", "stepSize must be positive"));
        }
        if let (Some(start), Some(stop)) = (exp.start_time, exp.stop_time)
            && start > stop
        {
            return Err(violation(lines.experiment, "DefaultExperiment", "startTime must not exceed stopTime"));
        }
    }

    let mut seen_vr = HashSet::new();
    let mut seen_name = HashSet::new();
    let mut independent = 0;
    for (i, v) in md.variables.iter().enumerate() {
        let el = v.var_type.element();
        let line = var_line(i);
        if !seen_vr.insert(v.value_reference) {
            return Err(violation(line, el, format!("duplicate valueReference {}", v.value_reference)));
        }
        if !seen_name.insert(v.name.as_str()) {
            return Err(violation(line, el, format!("duplicate variable name {:?}", v.name)));
        }
        match v.causality {
            Causality::Independent => {
                independent += 1;
                if independent > 1 {
                    return Err(violation(line, el, "more than one independent variable"));
                }
                if v.name != TIME_VARIABLE {
                    return Err(violation(line, el, "the independent variable must be named \"time\""));
                }
                if v.var_type != VarType::Float64 {
                    return Err(violation(line, el, "the independent variable must be Float64"));
                }
                if v.variability != Variability::Continuous {
                    return Err(violation(line, el, "the independent variable must be continuous"));
                }
            }
            Causality::Input | Causality::Output => {
                if v.name == TIME_VARIABLE {
                    return Err(violation(line, el, "\"time\" is reserved for the independent variable"));
                }
                if !PropertyKey::is_valid(&v.name) {
                    return Err(violation(line, el, format!("{:?} is not a hierarchical property name", v.name)));
                }
            }
        }
        if v.variability == Variability::Continuous && !v.var_type.is_float() {
            return Err(violation(line, el, "only float variables can be continuous"));
        }
        match (&v.start, v.causality) {
            (None, Causality::Input) => {
                return Err(violation(line, el, format!("input {:?} has no start value", v.name)));
            }
            (Some(_), Causality::Output | Causality::Independent) => {
                return Err(violation(line, el, format!("start value on non-input {:?}", v.name)));
            }
            (Some(start), Causality::Input) if start.value_type() != v.var_type.value_type() => {
                return Err(violation(line, el, format!("start value of {:?} has the wrong type", v.name)));
            }
            _ => {}
        }
    }

    let check_refs = |vrs: &[u32], element: &str, line_of: &[usize], must_be_output: bool| {
        for (i, vr) in vrs.iter().enumerate() {
            let line = line_of.get(i).copied();
            let Some(var) = md.variable(*vr) else {
                return Err(violation(line, element, format!("valueReference {vr} is not declared")));
            };
            if must_be_output && var.causality != Causality::Output {
                return Err(violation(line, element, format!("{:?} is not an output", var.name)));
            }
        }
        Ok(())
    };
    check_refs(&md.structure.outputs, "Output", &lines.outputs, true)?;
    check_refs(&md.structure.initial_unknowns, "InitialUnknown", &lines.initial_unknowns, false)?;

    let vcml = &md.vcml;
    if vcml.host.is_empty() {
        return Err(violation(lines.vcml, "VP", "host is empty"));
    }
    if vcml.port == 0 {
        return Err(violation(lines.vcml, "VP", "port must be in 1..=65535"));
    }
    if let Some(exe) = &vcml.executable
        && !is_safe_relative_path(exe)
    {
        return Err(violation(lines.vcml, "VP", format!("executable {exe:?} must be a relative path without '..'")));
    }
    Ok(())
}

/// Relative, '/'-separated, no empty, `.` or `..` segments.
pub fn is_safe_relative_path(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.contains('\\')
        && !path.contains(':')
        && path.split('/').all(|seg| !seg.is_empty() && seg != "." && seg != "..")
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser<'a> {
    src: &'a [u8],
    warnings: Vec<Warning>,
}

impl Parser<'_> {
    fn line_at(&self, pos: u64) -> usize {
        let mut end = (pos as usize).min(self.src.len());
        // an event starts after the whitespace that precedes it
        while end < self.src.len() && self.src[end].is_ascii_whitespace() {
            end += 1;
        }
        1 + self.src[..end].iter().filter(|&&b| b == b'\n').count()
    }

    fn warn(&mut self, line: usize, message: String) {
        self.warnings.push(Warning { line, message });
    }
}

struct Element {
    name: String,
    attrs: BTreeMap<String, String>,
    line: usize,
}

impl Element {
    fn read(start: &BytesStart<'_>, line: usize) -> Result<Element, ModelDescriptionError> {
        let syntax = |message: String| ModelDescriptionError::XmlSyntax { line, message };
        let name = start.name().as_ref().to_owned();
        let mut attrs = BTreeMap::new();
        for attr in start.attributes() {
            let attr = attr.map_err(|e| syntax(e.to_string()))?;
            let key = attr.key.as_ref().to_owned();
            let value = attr.normalized_value(XmlVersion::Implicit1_0).map_err(|e| syntax(e.to_string()))?.into_owned();
            if attrs.insert(key.clone(), value).is_some() {
                return Err(syntax(format!("duplicate attribute {key}")));
            }
        }
        Ok(Element { name, attrs, line })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.attrs.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String, ModelDescriptionError> {
        self.take(key).ok_or_else(|| violation(Some(self.line), &self.name, format!("missing attribute {key}")))
    }

    fn parse_attr<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ModelDescriptionError> {
        match self.take(key) {
            None => Ok(None),
            Some(text) => text
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| violation(Some(self.line), &self.name, format!("invalid value {text:?} for {key}"))),
        }
    }

    fn bool_attr(&mut self, key: &str) -> Result<Option<bool>, ModelDescriptionError> {
        match self.take(key).as_deref().map(str::trim) {
            None => Ok(None),
            Some("true" | "1") => Ok(Some(true)),
            Some("false" | "0") => Ok(Some(false)),
            Some(other) => Err(violation(Some(self.line), &self.name, format!("invalid boolean {other:?} for {key}"))),
        }
    }

    /// Reports attributes nobody consumed.
    fn finish(self, parser: &mut Parser<'_>) {
        for key in self.attrs.keys() {
            parser.warn(self.line, format!("ignoring attribute {key} on <{}>", self.name));
        }
    }
}

#[derive(Default)]
struct Draft {
    root_seen: bool,
    model_name: Option<String>,
    instantiation_token: Option<String>,
    co_simulation: Option<CoSimulation>,
    default_experiment: Option<DefaultExperiment>,
    variables: Vec<ModelVariable>,
    structure: ModelStructure,
    vcml: Option<VcmlAnnotation>,
    lines: Lines,
}

/// Parses and validates, returning the warnings for ignored content.
pub fn parse_with_warnings(xml: &[u8]) -> Result<(ModelDescription, Vec<Warning>), ModelDescriptionError> {
    let mut parser = Parser { src: xml, warnings: Vec::new() };
    let mut reader = Reader::from_reader(xml);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<String> = Vec::new();
    // depth at which an ignored subtree started
    let mut skip_depth: Option<usize> = None;
    let mut in_vcml_annotation = false;
    let mut draft = Draft::default();

    loop {
        let pos = reader.buffer_position();
        let event = reader.read_event().map_err(|e| ModelDescriptionError::XmlSyntax {
            line: parser.line_at(reader.error_position()),
            message: e.to_string(),
        })?;
        let line = parser.line_at(pos);
        match event {
            Event::Start(ref start) | Event::Empty(ref start) => {
                let is_empty = matches!(event, Event::Empty(_));
                let el = Element::read(start, line)?;
                let name = el.name.clone();
                if skip_depth.is_none() {
                    let keep = handle_element(&mut parser, &mut draft, &stack, el, &mut in_vcml_annotation)?;
                    if !keep && !is_empty {
                        skip_depth = Some(stack.len());
                    }
                }
                if !is_empty {
                    stack.push(name);
                } else if stack.last().map(String::as_str) == Some("Annotations") && name == "Annotation" {
                    in_vcml_annotation = false;
                }
            }
            Event::End(_) => {
                let name = stack.pop().unwrap_or_default();
                if skip_depth == Some(stack.len()) {
                    skip_depth = None;
                }
                if name == "Annotation" {
                    in_vcml_annotation = false;
                }
            }
            Event::Text(ref t) => {
                if skip_depth.is_none() && !t.as_ref().trim().is_empty() {
                    parser.warn(line, "ignoring text content".into());
                }
            }
            Event::Eof => {
                if let Some(open) = stack.last() {
                    return Err(ModelDescriptionError::XmlSyntax {
                        line: parser.line_at(pos),
                        message: format!("unexpected end of input inside <{open}>"),
                    });
                }
                break;
            }
            _ => {}
        }
    }

    if !draft.root_seen {
        return Err(violation(None, "fmiModelDescription", "root element missing"));
    }
    let model_name = draft
        .model_name
        .ok_or_else(|| violation(draft.lines.root, "fmiModelDescription", "missing attribute modelName"))?;
    let co_simulation =
        draft.co_simulation.ok_or_else(|| violation(draft.lines.root, "CoSimulation", "element missing"))?;
    let vcml = draft.vcml.ok_or_else(|| violation(draft.lines.root, "Annotation", "VCML annotation missing"))?;
    let md = ModelDescription {
        model_name,
        instantiation_token: draft.instantiation_token,
        co_simulation,
        default_experiment: draft.default_experiment,
        variables: draft.variables,
        structure: draft.structure,
        vcml,
    };
    validate(&md, &draft.lines)?;
    Ok((md, parser.warnings))
}

/// Consumes one element. Returns `false` when its subtree should be skipped.
fn handle_element(
    parser: &mut Parser<'_>,
    draft: &mut Draft,
    stack: &[String],
    mut el: Element,
    in_vcml_annotation: &mut bool,
) -> Result<bool, ModelDescriptionError> {
    let parent = stack.last().map(String::as_str);
    let line = el.line;
    let element_name = el.name.clone();
    match (parent, element_name.as_str()) {
        (None, "fmiModelDescription") => {
            draft.root_seen = true;
            draft.lines.root = Some(line);
            let version = el.require("fmiVersion")?;
            if version != FMI_VERSION {
                return Err(violation(
                    Some(line),
                    "fmiModelDescription",
                    format!("unsupported fmiVersion {version:?}"),
                ));
            }
            draft.model_name = Some(el.require("modelName")?);
            draft.instantiation_token = el.take("instantiationToken");
            el.finish(parser);
            Ok(true)
        }
        (None, other) => Err(violation(Some(line), other, "unexpected root element")),
        (Some("fmiModelDescription"), "CoSimulation") => {
            if draft.co_simulation.is_some() {
                return Err(violation(Some(line), "CoSimulation", "duplicate element"));
            }
            let model_identifier = el.require("modelIdentifier")?;
            let needs_execution_tool = el.bool_attr("needsExecutionTool")?.unwrap_or(false);
            let can_handle_variable_communication_step_size =
                el.bool_attr("canHandleVariableCommunicationStepSize")?.unwrap_or(false);
            draft.co_simulation = Some(CoSimulation {
                model_identifier,
                needs_execution_tool,
                can_handle_variable_communication_step_size,
            });
            el.finish(parser);
            Ok(false)
        }
        (Some("fmiModelDescription"), "DefaultExperiment") => {
            draft.lines.experiment = Some(line);
            draft.default_experiment = Some(DefaultExperiment {
                start_time: el.parse_attr("startTime")?,
                stop_time: el.parse_attr("stopTime")?,
                step_size: el.parse_attr("stepSize")?,
            });
            el.finish(parser);
            Ok(false)
        }
        (Some("fmiModelDescription"), "ModelVariables" | "ModelStructure" | "Annotations") => {
            el.finish(parser);
            Ok(true)
        }
        (Some("ModelVariables"), name) => {
            let Some(var_type) = VarType::from_element(name) else {
                parser.warn(line, format!("ignoring unsupported variable type <{name}>"));
                return Ok(false);
            };
            let var_name = el.require("name")?;
            let value_reference: u32 = el
                .parse_attr("valueReference")?
                .ok_or_else(|| violation(Some(line), name, "missing attribute valueReference"))?;
            let causality_text = el.take("causality").unwrap_or_else(|| "local".into());
            let Ok(causality) = causality_text.parse::<Causality>() else {
                parser.warn(
                    line,
                    format!("ignoring variable {var_name:?} with unsupported causality {causality_text:?}"),
                );
                return Ok(false);
            };
            let variability = match el.take("variability") {
                None if var_type.is_float() => Variability::Continuous,
                None => Variability::Discrete,
                Some(text) => match text.parse::<Variability>() {
                    Ok(v) => v,
                    Err(()) => {
                        parser.warn(
                            line,
                            format!("ignoring variable {var_name:?} with unsupported variability {text:?}"),
                        );
                        return Ok(false);
                    }
                },
            };
            let start = match el.take("start") {
                None => None,
                Some(text) => Some(PropertyValue::decode(var_type.value_type(), text.trim()).map_err(|_| {
                    violation(Some(line), name, format!("start value {text:?} is not a valid {var_type}"))
                })?),
            };
            draft.variables.push(ModelVariable {
                name: var_name,
                value_reference,
                var_type,
                causality,
                variability,
                start,
            });
            draft.lines.variables.push(line);
            el.finish(parser);
            Ok(false)
        }
        (Some("ModelStructure"), kind @ ("Output" | "InitialUnknown")) => {
            let kind = kind.to_owned();
            let vr: u32 = el
                .parse_attr("valueReference")?
                .ok_or_else(|| violation(Some(line), &kind, "missing attribute valueReference"))?;
            if kind == "Output" {
                draft.structure.outputs.push(vr);
                draft.lines.outputs.push(line);
            } else {
                draft.structure.initial_unknowns.push(vr);
                draft.lines.initial_unknowns.push(line);
            }
            el.finish(parser);
            Ok(false)
        }
        (Some("Annotations"), "Annotation") => {
            let ty = el.require("type")?;
            if ty != VCML_ANNOTATION {
                parser.warn(line, format!("ignoring annotation of type {ty:?}"));
                return Ok(false);
            }
            if draft.vcml.is_some() {
                return Err(violation(Some(line), "Annotation", "duplicate VCML annotation"));
            }
            *in_vcml_annotation = true;
            el.finish(parser);
            Ok(true)
        }
        (Some("Annotation"), "VP") if *in_vcml_annotation => {
            if draft.vcml.is_some() {
                return Err(violation(Some(line), "VP", "duplicate VP element"));
            }
            draft.lines.vcml = Some(line);
            let host = el.require("host")?;
            let port: u32 =
                el.parse_attr("port")?.ok_or_else(|| violation(Some(line), "VP", "missing attribute port"))?;
            let port = u16::try_from(port)
                .ok()
                .filter(|p| *p != 0)
                .ok_or_else(|| violation(Some(line), "VP", "port must be in 1..=65535"))?;
            let executable = el.take("executable");
            let args = el.take("args");
            draft.vcml = Some(VcmlAnnotation { host, port, executable, args });
            el.finish(parser);
            Ok(false)
        }
        (_, name) => {
            parser.warn(line, format!("ignoring element <{name}>"));
            Ok(false)
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization

fn fmt_seconds(v: f64) -> String {
    // Display is the shortest round-trip form without forcing ".0": "3", "0.01"
    format!("{v}")
}

fn serialize(md: &ModelDescription) -> String {
    use std::fmt::Write;

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = write!(
        out,
        "<fmiModelDescription fmiVersion=\"{FMI_VERSION}\" modelName=\"{}\"",
        escape(md.model_name.as_str())
    );
    if let Some(token) = &md.instantiation_token {
        let _ = write!(out, " instantiationToken=\"{}\"", escape(token.as_str()));
    }
    out.push_str(">\n");

    let cs = &md.co_simulation;
    let _ = writeln!(
        out,
        "  <CoSimulation modelIdentifier=\"{}\" needsExecutionTool=\"{}\" canHandleVariableCommunicationStepSize=\"{}\"/>",
        escape(cs.model_identifier.as_str()),
        cs.needs_execution_tool,
        cs.can_handle_variable_communication_step_size
    );

    if let Some(exp) = &md.default_experiment {
        out.push_str("  <DefaultExperiment");
        for (name, v) in [("startTime", exp.start_time), ("stopTime", exp.stop_time), ("stepSize", exp.step_size)] {
            if let Some(v) = v {
                let _ = write!(out, " {name}=\"{}\"", fmt_seconds(v));
            }
        }
        out.push_str("/>\n");
    }

    out.push_str("  <ModelVariables>\n");
    for v in &md.variables {
        let _ = write!(
            out,
            "    <{} name=\"{}\" valueReference=\"{}\" causality=\"{}\" variability=\"{}\"",
            v.var_type.element(),
            escape(v.name.as_str()),
            v.value_reference,
            v.causality.as_str(),
            v.variability.as_str()
        );
        if let Some(start) = &v.start {
            let _ = write!(out, " start=\"{}\"", escape(start.encode()));
        }
        out.push_str("/>\n");
    }
    out.push_str("  </ModelVariables>\n");

    out.push_str("  <ModelStructure>\n");
    for vr in &md.structure.outputs {
        let _ = writeln!(out, "    <Output valueReference=\"{vr}\"/>");
    }
    for vr in &md.structure.initial_unknowns {
        let _ = writeln!(out, "    <InitialUnknown valueReference=\"{vr}\"/>");
    }
    out.push_str("  </ModelStructure>\n");

    let vcml = &md.vcml;
    out.push_str("  <Annotations>\n");
    let _ = writeln!(out, "    <Annotation type=\"{VCML_ANNOTATION}\">");
    let _ = write!(out, "      <VP host=\"{}\" port=\"{}\"", escape(vcml.host.as_str()), vcml.port);
    if let Some(exe) = &vcml.executable {
        let _ = write!(out, " executable=\"{}\"", escape(exe.as_str()));
    }
    if let Some(args) = &vcml.args {
        let _ = write!(out, " args=\"{}\"", escape(args.as_str()));
    }
    out.push_str("/>\n");
    out.push_str("    </Annotation>\n");
    out.push_str("  </Annotations>\n");
    out.push_str("</fmiModelDescription>\n");
    out
}
