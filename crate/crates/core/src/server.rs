//! Single-session TCP server that exposes a [`Kernel`] over the VSP
//! command set.
//!
//! The simulation does not run on its own: virtual time only advances while
//! a `step` command is being executed. The server accepts exactly one
//! client, stops listening, and returns when that client quits,
//! disconnects, stays idle past the read timeout, or exhausts the
//! retransmit budget.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::time::Duration;

use crate::kernel::Kernel;
use crate::property::{PropertyError, PropertyValue};
use crate::rsp::{Link, LinkError, LinkStats, Received, is_payload_byte};
use crate::vsp::{self, Command, ErrorCode, Response};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
}

impl ServerConfig {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        ServerConfig { host: host.into(), port }
    }

    pub fn loopback(port: u16) -> Self {
        Self::new("127.0.0.1", port)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("port must be in 1..=65535")]
    InvalidPort,
    #[error("address {0} is already in use")]
    PortInUse(String),
    #[error("cannot bind {addr}: {source}")]
    BindDenied { addr: String, source: io::Error },
    #[error("server already served its session")]
    AlreadyServed,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitingClient,
    Serving,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEnd {
    Quit,
    Disconnected,
    IdleTimeout,
    ProtocolError(String),
}

/// One command payload and the response payload sent back for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub command: String,
    pub response: String,
}

impl TranscriptEntry {
    /// `> command` / `< response` lines.
    pub fn to_lines(entries: &[TranscriptEntry]) -> String {
        let mut out = String::new();
        for e in entries {
            out.push_str("> ");
            out.push_str(&e.command);
            out.push_str("\n< ");
            out.push_str(&e.response);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SessionReport {
    pub peer: SocketAddr,
    pub end: SessionEnd,
    pub transcript: Vec<TranscriptEntry>,
    pub link: LinkStats,
}

#[derive(Debug)]
pub struct Server {
    listener: Option<TcpListener>,
    local_addr: SocketAddr,
    state: SessionState,
    idle_timeout: Duration,
}

impl Server {
    pub fn bind(config: &ServerConfig) -> Result<Server, ServerError> {
        if config.port == 0 {
            return Err(ServerError::InvalidPort);
        }
        let addr = format!("{}:{}", config.host, config.port);
        let listener = TcpListener::bind(&addr).map_err(|e| match e.kind() {
            io::ErrorKind::AddrInUse => ServerError::PortInUse(addr.clone()),
            _ => ServerError::BindDenied { addr: addr.clone(), source: e },
        })?;
        Ok(Self::from_listener(listener)?)
    }

    /// Wraps an already bound listener, e.g. one bound to port 0.
    pub fn from_listener(listener: TcpListener) -> io::Result<Server> {
        let local_addr = listener.local_addr()?;
        Ok(Server {
            listener: Some(listener),
            local_addr,
            state: SessionState::AwaitingClient,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        })
    }

    pub fn with_idle_timeout(mut self, timeout: Duration) -> Self {
        self.idle_timeout = timeout;
        self
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Blocks until a client connects, then serves it to completion.
    pub fn serve(&mut self, kernel: &mut Kernel) -> Result<SessionReport, ServerError> {
        let listener = self.listener.take().ok_or(ServerError::AlreadyServed)?;
        let (stream, peer) = listener.accept()?;
        // stop listening: later clients are refused, never interleaved
        drop(listener);
        self.state = SessionState::Serving;
        log::info!("client {peer} connected");
        let result = self.serve_stream(kernel, stream, peer);
        self.state = SessionState::Closed;
        result
    }

    fn serve_stream(
        &self,
        kernel: &mut Kernel,
        stream: TcpStream,
        peer: SocketAddr,
    ) -> Result<SessionReport, ServerError> {
        stream.set_read_timeout(Some(self.idle_timeout))?;
        stream.set_nodelay(true)?;
        let mut link = Link::new(stream);
        let mut transcript = Vec::new();
        let end = loop {
            let (command_text, response) = match link.recv() {
                Ok(Received::Payload(bytes)) => {
                    let text = String::from_utf8_lossy(&bytes).into_owned();
                    let response = match vsp::parse_command(&text) {
                        Ok(cmd) => execute(kernel, &cmd),
                        Err(e) => Response::error(ErrorCode::BadCommand, e.0),
                    };
                    (text, response)
                }
                Ok(Received::Oversized) => {
                    ("<oversized>".to_owned(), Response::error(ErrorCode::BadCommand, "frame too large"))
                }
                Err(LinkError::Closed) => break SessionEnd::Disconnected,
                Err(LinkError::Timeout) => break SessionEnd::IdleTimeout,
                Err(e) => break SessionEnd::ProtocolError(e.to_string()),
            };
            let quit = command_text == "quit" && response == Response::Ok;
            let response_text = vsp::render_response(&response);
            log::debug!("> {command_text} < {response_text}");
            transcript.push(TranscriptEntry { command: command_text, response: response_text.clone() });
            match link.send(response_text.as_bytes()) {
                Ok(()) => {}
                Err(LinkError::Closed) => break SessionEnd::Disconnected,
                Err(LinkError::Timeout) => break SessionEnd::IdleTimeout,
                Err(e) => break SessionEnd::ProtocolError(e.to_string()),
            }
            if quit {
                break SessionEnd::Quit;
            }
        };
        log::info!("session with {peer} ended: {end:?}");
        Ok(SessionReport { peer, end, transcript, link: link.stats() })
    }
}

/// Binds `config` and serves one session.
pub fn serve(kernel: &mut Kernel, config: &ServerConfig) -> Result<SessionReport, ServerError> {
    Server::bind(config)?.serve(kernel)
}

fn sanitize(message: String) -> String {
    message.bytes().map(|b| if is_payload_byte(b) { b as char } else { '?' }).collect()
}

/// Applies one command to the kernel. Failures become `Err` responses.
pub fn execute(kernel: &mut Kernel, cmd: &Command) -> Response {
    match cmd {
        Command::List => {
            Response::OkList(kernel.properties().iter().map(|(k, v)| (k.clone(), v.value_type())).collect())
        }
        Command::GetTime => Response::OkTime(kernel.now()),
        Command::Get(key) => match kernel.properties().get(key.as_str()) {
            Ok(v) => Response::OkValue(v.value_type(), v.encode()),
            Err(e) => property_error(e),
        },
        Command::Set(key, text) => {
            let registry = kernel.properties_mut();
            let result = registry.value_type(key.as_str()).and_then(|ty| {
                let value = PropertyValue::decode(ty, text)?;
                registry.set(key.as_str(), value)
            });
            match result {
                Ok(()) => Response::Ok,
                Err(e) => property_error(e),
            }
        }
        Command::Step(delta) => {
            let Some(target) = kernel.now().checked_add(*delta) else {
                return Response::error(ErrorCode::Overflow, "overflow");
            };
            match kernel.run_until(target) {
                Ok(()) => Response::OkTime(kernel.now()),
                Err(e) => Response::error(ErrorCode::Overflow, sanitize(e.to_string())),
            }
        }
        Command::Quit => Response::Ok,
    }
}

fn property_error(e: PropertyError) -> Response {
    let code = match e {
        PropertyError::UnknownKey(_) | PropertyError::InvalidKey(_) => ErrorCode::UnknownKey,
        PropertyError::TypeMismatch { .. } | PropertyError::Decode { .. } | PropertyError::UnknownType(_) => {
            ErrorCode::TypeMismatch
        }
        PropertyError::DuplicateKey(_) => ErrorCode::BadCommand,
    };
    let message = match &e {
        PropertyError::UnknownKey(k) => format!("unknown key {k}"),
        other => other.to_string(),
    };
    Response::error(code, sanitize(message))
}

/// Re-executes recorded command payloads against `kernel` and returns the
/// resulting transcript.
pub fn replay<'a>(kernel: &mut Kernel, commands: impl IntoIterator<Item = &'a str>) -> Vec<TranscriptEntry> {
    commands
        .into_iter()
        .map(|text| {
            let response = match vsp::parse_command(text) {
                Ok(cmd) => execute(kernel, &cmd),
                Err(e) => Response::error(ErrorCode::BadCommand, e.0),
            };
            TranscriptEntry { command: text.to_owned(), response: vsp::render_response(&response) }
        })
        .collect()
}
