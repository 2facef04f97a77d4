//! Command and response payloads carried inside RSP frames.
//!
//! ```text
//! list                      -> OK,<path>:<type>[;<path>:<type>...]
//! time                      -> OK,<ticks>
//! get,<path>                -> OK,<type>,<value>
//! set,<path>,<value>        -> OK
//! step,<ticks>              -> OK,<ticks>       (new absolute time)
//! quit                      -> OK
//! any failure               -> E,<code>,<message>
//! ```
//!
//! Ticks are decimal nanoseconds without sign or leading zeros. Values use
//! the canonical text encoding of [`PropertyValue`](crate::property::PropertyValue)
//! and may contain commas; they always occupy the rest of the payload.

use std::fmt;
use std::str::FromStr;

use crate::property::{PropertyKey, ValueType};
use crate::rsp::is_payload_byte;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad command: {0}")]
pub struct BadCommand(pub String);

fn bad(msg: impl Into<String>) -> BadCommand {
    BadCommand(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    List,
    GetTime,
    Get(PropertyKey),
    Set(PropertyKey, String),
    Step(SimTime),
    Quit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    UnknownKey = 1,
    TypeMismatch = 2,
    BadCommand = 3,
    Overflow = 4,
}

impl ErrorCode {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<ErrorCode> {
        Some(match code {
            1 => ErrorCode::UnknownKey,
            2 => ErrorCode::TypeMismatch,
            3 => ErrorCode::BadCommand,
            4 => ErrorCode::Overflow,
            _ => return None,
        })
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorCode::UnknownKey => "unknown key",
            ErrorCode::TypeMismatch => "type mismatch",
            ErrorCode::BadCommand => "bad command",
            ErrorCode::Overflow => "overflow",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ok,
    OkTime(SimTime),
    OkValue(ValueType, String),
    OkList(Vec<(PropertyKey, ValueType)>),
    Err(ErrorCode, String),
}

impl Response {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Response {
        Response::Err(code, message.into())
    }
}

/// Parses a tick count: ASCII digits, no sign, no leading zeros.
fn parse_ticks(s: &str) -> Option<SimTime> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok().map(SimTime::from_ticks)
}

fn is_text(s: &str) -> bool {
    s.bytes().all(is_payload_byte)
}

fn parse_key(s: &str) -> Result<PropertyKey, BadCommand> {
    PropertyKey::new(s).map_err(|_| bad(format!("invalid property path {s:?}")))
}

pub fn parse_command(payload: &str) -> Result<Command, BadCommand> {
    if !is_text(payload) {
        return Err(bad("payload contains illegal bytes"));
    }
    let (verb, rest) = match payload.split_once(',') {
        Some((verb, rest)) => (verb, Some(rest)),
        None => (payload, None),
    };
    match (verb, rest) {
        ("list", None) => Ok(Command::List),
        ("time", None) => Ok(Command::GetTime),
        ("quit", None) => Ok(Command::Quit),
        ("get", Some(path)) => Ok(Command::Get(parse_key(path)?)),
        ("set", Some(rest)) => {
            let (path, value) = rest.split_once(',').ok_or_else(|| bad("set needs a path and a value"))?;
            Ok(Command::Set(parse_key(path)?, value.to_owned()))
        }
        ("step", Some(ticks)) => {
            parse_ticks(ticks).map(Command::Step).ok_or_else(|| bad(format!("invalid tick count {ticks:?}")))
        }
        ("list" | "time" | "quit" | "get" | "set" | "step", _) => Err(bad(format!("wrong arity for {verb}"))),
        _ => Err(bad(format!("unknown verb {verb:?}"))),
    }
}

pub fn render_command(cmd: &Command) -> String {
    match cmd {
        Command::List => "list".to_owned(),
        Command::GetTime => "time".to_owned(),
        Command::Get(key) => format!("get,{key}"),
        Command::Set(key, value) => format!("set,{key},{value}"),
        Command::Step(d) => format!("step,{}", d.ticks()),
        Command::Quit => "quit".to_owned(),
    }
}

pub fn parse_response(payload: &str) -> Result<Response, BadCommand> {
    if !is_text(payload) {
        return Err(bad("payload contains illegal bytes"));
    }
    if payload == "OK" {
        return Ok(Response::Ok);
    }
    if let Some(rest) = payload.strip_prefix("OK,") {
        if let Some(t) = parse_ticks(rest) {
            return Ok(Response::OkTime(t));
        }
        if let Some((ty, value)) = rest.split_once(',') {
            let ty = ValueType::from_str(ty).map_err(|_| bad(format!("unknown type {ty:?}")))?;
            return Ok(Response::OkValue(ty, value.to_owned()));
        }
        if rest.is_empty() {
            return Ok(Response::OkList(Vec::new()));
        }
        let entries = rest
            .split(';')
            .map(|entry| {
                let (path, ty) = entry.rsplit_once(':').ok_or_else(|| bad(format!("bad list entry {entry:?}")))?;
                let ty = ValueType::from_str(ty).map_err(|_| bad(format!("unknown type {ty:?}")))?;
                Ok((parse_key(path)?, ty))
            })
            .collect::<Result<Vec<_>, BadCommand>>()?;
        return Ok(Response::OkList(entries));
    }
    if let Some(rest) = payload.strip_prefix("E,") {
        let (code, message) = rest.split_once(',').ok_or_else(|| bad("error response needs a code and a message"))?;
        let code = code
            .parse::<u8>()
            .ok()
            .filter(|_| !code.starts_with('+'))
            .and_then(ErrorCode::from_code)
            .ok_or_else(|| bad(format!("unknown error code {code:?}")))?;
        return Ok(Response::Err(code, message.to_owned()));
    }
    Err(bad(format!("unknown response {payload:?}")))
}

pub fn render_response(resp: &Response) -> String {
    match resp {
        Response::Ok => "OK".to_owned(),
        Response::OkTime(t) => format!("OK,{}", t.ticks()),
        Response::OkValue(ty, value) => format!("OK,{ty},{value}"),
        Response::OkList(entries) => {
            let body: Vec<String> = entries.iter().map(|(k, t)| format!("{k}:{t}")).collect();
            format!("OK,{}", body.join(";"))
        }
        Response::Err(code, message) => format!("E,{},{message}", code.code()),
    }
}

/// Whether `resp` is a legal reply to `cmd`.
pub fn response_fits(cmd: &Command, resp: &Response) -> bool {
    match (cmd, resp) {
        (Command::Quit, Response::Ok) => true,
        (Command::Quit, _) => false,
        (Command::GetTime, Response::OkTime(_)) => true,
        (Command::GetTime, _) => false,
        (_, Response::Err(..)) => true,
        (Command::Step(_), Response::Ok | Response::OkTime(_)) => true,
        (Command::Get(_), Response::OkValue(..)) => true,
        (Command::Set(..), Response::Ok) => true,
        (Command::List, Response::OkList(_)) => true,
        _ => false,
    }
}
