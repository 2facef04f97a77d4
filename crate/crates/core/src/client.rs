//! Client side of the VSP protocol.

use std::io;
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use crate::rsp::{Link, LinkError, LinkStats, Received};
use crate::server::TranscriptEntry;
use crate::vsp::{self, Command, Response};

/// Time allowed for the reply to `quit`.
pub const QUIT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectOptions {
    /// Number of connection attempts before giving up.
    pub attempts: u32,
    /// Pause between consecutive attempts; also the per-attempt timeout.
    pub interval: Duration,
    /// Maximum wait for a response; `None` waits forever.
    pub response_timeout: Option<Duration>,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        ConnectOptions {
            attempts: 10,
            interval: Duration::from_millis(500),
            response_timeout: Some(Duration::from_secs(60)),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("could not connect to {addr} after {attempts} attempts: {last}")]
    ConnectTimeout { addr: String, attempts: u32, last: String },
    #[error("connection to {addr} refused: {reason}")]
    Refused { addr: String, reason: String },
    #[error("session lost: {0}")]
    SessionLost(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug)]
pub struct Session {
    link: Option<Link<TcpStream>>,
    peer: SocketAddr,
    transcript: Vec<TranscriptEntry>,
    last_stats: LinkStats,
}

/// Opens a session, retrying at a fixed interval while the server is not
/// reachable yet.
pub fn connect(host: &str, port: u16, opts: &ConnectOptions) -> Result<Session, ClientError> {
    let addr_text = format!("{host}:{port}");
    let addrs: Vec<SocketAddr> = (host, port)
        .to_socket_addrs()
        .map_err(|e| ClientError::Refused { addr: addr_text.clone(), reason: e.to_string() })?
        .collect();
    if addrs.is_empty() {
        return Err(ClientError::Refused { addr: addr_text, reason: "host resolved to no addresses".into() });
    }
    let attempts = opts.attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        for addr in &addrs {
            match TcpStream::connect_timeout(addr, opts.interval.max(Duration::from_millis(1))) {
                Ok(stream) => {
                    log::debug!("connected to {addr} on attempt {attempt}");
                    return Session::from_stream(stream, opts);
                }
                Err(e) => last = e.to_string(),
            }
        }
        if attempt < attempts {
            thread::sleep(opts.interval);
        }
    }
    Err(ClientError::ConnectTimeout { addr: addr_text, attempts, last })
}

impl Session {
    pub fn from_stream(stream: TcpStream, opts: &ConnectOptions) -> Result<Session, ClientError> {
        let lost = |e: io::Error| ClientError::SessionLost(e.to_string());
        let peer = stream.peer_addr().map_err(lost)?;
        stream.set_nodelay(true).map_err(lost)?;
        stream.set_read_timeout(opts.response_timeout).map_err(lost)?;
        Ok(Session { link: Some(Link::new(stream)), peer, transcript: Vec::new(), last_stats: LinkStats::default() })
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    pub fn is_open(&self) -> bool {
        self.link.is_some()
    }

    /// Every command/response pair exchanged so far, in order.
    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn link_stats(&self) -> LinkStats {
        self.link.as_ref().map_or(self.last_stats, Link::stats)
    }

    fn close(&mut self) {
        if let Some(link) = self.link.take() {
            self.last_stats = link.stats();
            let _ = link.get_ref().shutdown(Shutdown::Both);
        }
    }

    /// Sends one command and waits for its response.
    ///
    /// A frame is retransmitted only when the server NAKs it. A missing
    /// response is never retried, so each command executes at most once.
    pub fn call(&mut self, cmd: &Command) -> Result<Response, ClientError> {
        let link = self.link.as_mut().ok_or_else(|| ClientError::SessionLost("session closed".into()))?;
        let text = vsp::render_command(cmd);
        let result = exchange(link, &text).and_then(|payload| {
            let resp = vsp::parse_response(&payload)
                .map_err(|e| ClientError::Protocol(format!("unparseable response {payload:?}: {e}")))?;
            if !vsp::response_fits(cmd, &resp) {
                return Err(ClientError::Protocol(format!("response {payload:?} does not answer {text:?}")));
            }
            Ok((payload, resp))
        });
        match result {
            Ok((payload, resp)) => {
                self.transcript.push(TranscriptEntry { command: text, response: payload });
                Ok(resp)
            }
            Err(e) => {
                self.close();
                Err(e)
            }
        }
    }

    /// Sends `quit`, waits briefly for the acknowledgement and closes the
    /// socket. Silent if the server is already gone; a no-op when closed.
    pub fn quit(&mut self) {
        let Some(link) = self.link.as_mut() else {
            return;
        };
        let _ = link.get_ref().set_read_timeout(Some(QUIT_TIMEOUT));
        let text = vsp::render_command(&Command::Quit);
        if let Ok(payload) = exchange(link, &text) {
            self.transcript.push(TranscriptEntry { command: text, response: payload });
        }
        self.close();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.close();
    }
}

fn exchange(link: &mut Link<TcpStream>, text: &str) -> Result<String, ClientError> {
    link.send(text.as_bytes()).map_err(link_error)?;
    match link.recv().map_err(link_error)? {
        Received::Payload(bytes) => Ok(String::from_utf8_lossy(&bytes).into_owned()),
        Received::Oversized => Err(ClientError::Protocol("oversized response".into())),
    }
}

fn link_error(e: LinkError) -> ClientError {
    match e {
        LinkError::RetransmitExhausted(_) | LinkError::Frame(_) => ClientError::Protocol(e.to_string()),
        LinkError::Closed | LinkError::Timeout | LinkError::Io(_) => ClientError::SessionLost(e.to_string()),
    }
}
