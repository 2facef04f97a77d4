//! RSP-style packet framing.
//!
//! A frame is `$` + payload + `#` + two lowercase hex digits, where the
//! digits are the byte sum of the payload modulo 256. Payload bytes are
//! printable ASCII (0x20..=0x7e) other than `$` and `#`; there is no escape
//! or run-length encoding. A receiver answers each frame with `+` (ACK) or,
//! when the checksum does not match, `-` (NAK). The sender retransmits on
//! NAK and gives up after [`MAX_NAKS`] of them.

use std::collections::VecDeque;
use std::io::{self, Read, Write};

pub const FRAME_START: u8 = b'$';
pub const FRAME_END: u8 = b'#';
pub const ACK: u8 = b'+';
pub const NAK: u8 = b'-';

/// A sender gives up on a frame when this many NAKs have been received for it.
pub const MAX_NAKS: u32 = 3;

/// Default upper bound on the payload length accepted by [`FrameDecoder`].
pub const DEFAULT_MAX_PAYLOAD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("illegal payload byte 0x{byte:02x} at offset {offset}")]
    IllegalByte { byte: u8, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("incomplete frame")]
    Incomplete,
    #[error("bad checksum: computed {computed:02x}, received {received:?}")]
    BadChecksum { computed: u8, received: [u8; 2], consumed: usize },
    #[error("malformed frame: {reason}")]
    Malformed { consumed: usize, reason: &'static str },
}

/// Whether `b` may appear inside a frame payload.
pub fn is_payload_byte(b: u8) -> bool {
    (0x20..=0x7e).contains(&b) && b != FRAME_START && b != FRAME_END
}

fn check_payload(payload: &[u8]) -> Result<(), FrameError> {
    match payload.iter().position(|&b| !is_payload_byte(b)) {
        Some(offset) => Err(FrameError::IllegalByte { byte: payload[offset], offset }),
        None => Ok(()),
    }
}

fn sum(payload: &[u8]) -> u8 {
    payload.iter().fold(0u8, |acc, &b| acc.wrapping_add(b))
}

pub fn checksum(payload: &[u8]) -> Result<u8, FrameError> {
    check_payload(payload)?;
    Ok(sum(payload))
}

const HEX: &[u8; 16] = b"0123456789abcdef";

pub fn encode_frame(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    let csum = checksum(payload)?;
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.push(FRAME_START);
    out.extend_from_slice(payload);
    out.push(FRAME_END);
    out.push(HEX[(csum >> 4) as usize]);
    out.push(HEX[(csum & 0xf) as usize]);
    Ok(out)
}

fn hex_value(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        _ => None,
    }
}

/// Decodes the frame at the start of `buf`, returning its payload and the
/// number of bytes it occupied.
///
/// A checksum field that is not two lowercase hex digits counts as a
/// checksum failure, so corrupting either digit can never yield an accepted
/// frame.
pub fn decode_frame(buf: &[u8]) -> Result<(Vec<u8>, usize), DecodeError> {
    let Some(&first) = buf.first() else {
        return Err(DecodeError::Incomplete);
    };
    if first != FRAME_START {
        let consumed = buf.iter().position(|&b| b == FRAME_START).unwrap_or(buf.len());
        return Err(DecodeError::Malformed { consumed, reason: "missing '$'" });
    }
    for (i, &b) in buf.iter().enumerate().skip(1) {
        if b == FRAME_END {
            if buf.len() < i + 3 {
                return Err(DecodeError::Incomplete);
            }
            let payload = &buf[1..i];
            let computed = sum(payload);
            let received = [buf[i + 1], buf[i + 2]];
            let value = hex_value(received[0]).zip(hex_value(received[1]));
            return match value {
                Some((hi, lo)) if (hi << 4 | lo) == computed => Ok((payload.to_vec(), i + 3)),
                _ => Err(DecodeError::BadChecksum { computed, received, consumed: i + 3 }),
            };
        }
        if !is_payload_byte(b) {
            // A stray '$' starts a new frame; keep it.
            let consumed = if b == FRAME_START { i } else { i + 1 };
            return Err(DecodeError::Malformed { consumed, reason: "illegal byte in payload" });
        }
    }
    Err(DecodeError::Incomplete)
}

/// Something read off the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Incoming {
    Ack,
    Nak,
    Frame(Vec<u8>),
    /// A frame whose checksum or content was damaged. Answer with NAK.
    Corrupt,
    /// A frame longer than the decoder's payload limit. Its bytes have been
    /// discarded.
    Oversized,
}

/// Incremental decoder over an arbitrarily chunked byte stream.
#[derive(Debug, Clone)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    max_payload: usize,
    discarding: bool,
}

impl Default for FrameDecoder {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_PAYLOAD)
    }
}

impl FrameDecoder {
    pub fn new(max_payload: usize) -> Self {
        FrameDecoder { buf: Vec::new(), max_payload, discarding: false }
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Returns the next complete item, or `None` when more bytes are needed.
    pub fn next_item(&mut self) -> Option<Incoming> {
        loop {
            if self.discarding {
                return self.skip_oversized();
            }
            let &first = self.buf.first()?;
            match first {
                ACK => {
                    self.buf.drain(..1);
                    return Some(Incoming::Ack);
                }
                NAK => {
                    self.buf.drain(..1);
                    return Some(Incoming::Nak);
                }
                FRAME_START => {}
                _ => {
                    // line noise between frames
                    let skip =
                        self.buf.iter().position(|&b| matches!(b, FRAME_START | ACK | NAK)).unwrap_or(self.buf.len());
                    self.buf.drain(..skip);
                    continue;
                }
            }
            match decode_frame(&self.buf) {
                Ok((payload, consumed)) => {
                    self.buf.drain(..consumed);
                    if payload.len() > self.max_payload {
                        return Some(Incoming::Oversized);
                    }
                    return Some(Incoming::Frame(payload));
                }
                Err(DecodeError::Incomplete) => {
                    if self.buf.len() > self.max_payload + 1 {
                        self.discarding = true;
                        continue;
                    }
                    return None;
                }
                Err(DecodeError::BadChecksum { consumed, .. }) => {
                    self.buf.drain(..consumed);
                    return Some(Incoming::Corrupt);
                }
                Err(DecodeError::Malformed { consumed, .. }) => {
                    // The frame was cut short by a control byte. Drop the
                    // rest of it up to the checksum, or up to a new '$'.
                    self.buf.drain(..consumed);
                    self.drop_damaged_tail();
                    return Some(Incoming::Corrupt);
                }
            }
        }
    }

    fn drop_damaged_tail(&mut self) {
        for (i, &b) in self.buf.iter().enumerate() {
            if b == FRAME_START {
                self.buf.drain(..i);
                return;
            }
            if b == FRAME_END {
                let end = (i + 3).min(self.buf.len());
                self.buf.drain(..end);
                return;
            }
        }
        self.buf.clear();
    }

    fn skip_oversized(&mut self) -> Option<Incoming> {
        match self.buf.iter().position(|&b| b == FRAME_END) {
            Some(i) if self.buf.len() >= i + 3 => {
                self.buf.drain(..i + 3);
                self.discarding = false;
                Some(Incoming::Oversized)
            }
            Some(i) => {
                self.buf.drain(..i);
                None
            }
            None => {
                self.buf.clear();
                None
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("peer closed the connection")]
    Closed,
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("frame rejected {0} times, giving up")]
    RetransmitExhausted(u32),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Counters kept by a [`Link`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub frames_sent: u64,
    pub retransmissions: u64,
    pub naks_received: u64,
    pub naks_sent: u64,
    pub frames_received: u64,
}

/// A payload pulled off a [`Link`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Received {
    Payload(Vec<u8>),
    Oversized,
}

/// Reliable framed messaging over a byte stream.
#[derive(Debug)]
pub struct Link<S> {
    stream: S,
    decoder: FrameDecoder,
    inbox: VecDeque<Incoming>,
    stats: LinkStats,
}

impl<S: Read + Write> Link<S> {
    pub fn new(stream: S) -> Self {
        Self::with_max_payload(stream, DEFAULT_MAX_PAYLOAD)
    }

    pub fn with_max_payload(stream: S, max_payload: usize) -> Self {
        Link { stream, decoder: FrameDecoder::new(max_payload), inbox: VecDeque::new(), stats: LinkStats::default() }
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }

    pub fn get_mut(&mut self) -> &mut S {
        &mut self.stream
    }

    pub fn into_inner(self) -> S {
        self.stream
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    fn fill(&mut self) -> Result<(), LinkError> {
        let mut chunk = [0u8; 4096];
        let n = loop {
            match self.stream.read(&mut chunk) {
                Ok(n) => break n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Err(LinkError::Timeout);
                }
                Err(e) if is_disconnect(&e) => return Err(LinkError::Closed),
                Err(e) => return Err(e.into()),
            }
        };
        if n == 0 {
            return Err(LinkError::Closed);
        }
        self.decoder.feed(&chunk[..n]);
        Ok(())
    }

    fn next_incoming(&mut self) -> Result<Incoming, LinkError> {
        loop {
            if let Some(item) = self.decoder.next_item() {
                return Ok(item);
            }
            self.fill()?;
        }
    }

    fn write_all(&mut self, bytes: &[u8]) -> Result<(), LinkError> {
        match self.stream.write_all(bytes).and_then(|()| self.stream.flush()) {
            Ok(()) => Ok(()),
            Err(e) if is_disconnect(&e) => Err(LinkError::Closed),
            Err(e) => Err(e.into()),
        }
    }

    /// Sends one frame and waits for its acknowledgement, retransmitting on
    /// NAK. Frames arriving meanwhile are kept for [`Link::recv`].
    pub fn send(&mut self, payload: &[u8]) -> Result<(), LinkError> {
        let frame = encode_frame(payload)?;
        let mut naks = 0;
        self.write_all(&frame)?;
        self.stats.frames_sent += 1;
        loop {
            match self.next_incoming()? {
                Incoming::Ack => return Ok(()),
                Incoming::Nak => {
                    naks += 1;
                    self.stats.naks_received += 1;
                    if naks >= MAX_NAKS {
                        return Err(LinkError::RetransmitExhausted(naks));
                    }
                    self.write_all(&frame)?;
                    self.stats.frames_sent += 1;
                    self.stats.retransmissions += 1;
                }
                other => self.inbox.push_back(other),
            }
        }
    }

    /// Waits for the next intact frame and acknowledges it. Damaged frames
    /// are answered with NAK and skipped. Stray ACK/NAK bytes are ignored.
    pub fn recv(&mut self) -> Result<Received, LinkError> {
        loop {
            let item = match self.inbox.pop_front() {
                Some(item) => item,
                None => self.next_incoming()?,
            };
            match item {
                Incoming::Frame(payload) => {
                    self.write_all(&[ACK])?;
                    self.stats.frames_received += 1;
                    return Ok(Received::Payload(payload));
                }
                Incoming::Oversized => {
                    self.write_all(&[ACK])?;
                    self.stats.frames_received += 1;
                    return Ok(Received::Oversized);
                }
                Incoming::Corrupt => {
                    self.write_all(&[NAK])?;
                    self.stats.naks_sent += 1;
                }
                Incoming::Ack | Incoming::Nak => {}
            }
        }
    }
}

fn is_disconnect(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe
            | io::ErrorKind::UnexpectedEof
            | io::ErrorKind::NotConnected
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference values from an independent byte-sum computation
    // (python: hex(sum(p.encode()) % 256)).
    #[test]
    fn checksum_reference_values() {
        assert_eq!(checksum(b""), Ok(0x00));
        assert_eq!(checksum(b"a"), Ok(0x61));
        assert_eq!(checksum(b"step,1000000"), Ok(0x39));
        assert_eq!(checksum(b"ok"), Ok(0xda));
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_frame(b"").unwrap(), b"$#00");
        assert_eq!(encode_frame(b"ok").unwrap(), b"$ok#da");
        assert_eq!(encode_frame(b"step,1000000").unwrap(), b"$step,1000000#39");
        assert_eq!(encode_frame(b"a#b"), Err(FrameError::IllegalByte { byte: b'#', offset: 1 }));
        assert!(encode_frame(b"a$").is_err());
        assert!(encode_frame(b"\n").is_err());
        assert!(encode_frame(&[0x7f]).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_frame(b"$ok#da"), Ok((b"ok".to_vec(), 6)));
        assert!(matches!(decode_frame(b"$#01"), Err(DecodeError::BadChecksum { consumed: 4, .. })));
        assert_eq!(decode_frame(b"$abc"), Err(DecodeError::Incomplete));
        assert_eq!(decode_frame(b"$abc#1"), Err(DecodeError::Incomplete));
        assert_eq!(decode_frame(b""), Err(DecodeError::Incomplete));
        assert!(matches!(decode_frame(b"xy$ok#da"), Err(DecodeError::Malformed { consumed: 2, .. })));
        assert!(matches!(decode_frame(b"$o\nk#da"), Err(DecodeError::Malformed { consumed: 3, .. })));
        // uppercase hex is not canonical
        assert!(matches!(decode_frame(b"$ok#DA"), Err(DecodeError::BadChecksum { .. })));
    }

    #[test]
    fn decoder_interleaves_acks_and_frames() {
        let mut d = FrameDecoder::default();
        d.feed(b"+$ok#da-junk$#01$a#61");
        assert_eq!(d.next_item(), Some(Incoming::Ack));
        assert_eq!(d.next_item(), Some(Incoming::Frame(b"ok".to_vec())));
        assert_eq!(d.next_item(), Some(Incoming::Nak));
        assert_eq!(d.next_item(), Some(Incoming::Corrupt));
        assert_eq!(d.next_item(), Some(Incoming::Frame(b"a".to_vec())));
        assert_eq!(d.next_item(), None);
    }

    #[test]
    fn decoder_discards_oversized_frames() {
        let mut d = FrameDecoder::new(8);
        d.feed(b"$0123456789abcdef");
        assert_eq!(d.next_item(), None);
        d.feed(b"xyz#00$ok#da");
        assert_eq!(d.next_item(), Some(Incoming::Oversized));
        assert_eq!(d.next_item(), Some(Incoming::Frame(b"ok".to_vec())));
    }

    #[test]
    fn decoder_reports_truncated_frames_as_corrupt() {
        let mut d = FrameDecoder::default();
        d.feed(b"$se\x01t,a#00$ok#da");
        assert_eq!(d.next_item(), Some(Incoming::Corrupt));
        assert_eq!(d.next_item(), Some(Incoming::Frame(b"ok".to_vec())));
        d.feed(b"$abc$ok#da");
        assert_eq!(d.next_item(), Some(Incoming::Corrupt));
        assert_eq!(d.next_item(), Some(Incoming::Frame(b"ok".to_vec())));
    }

    fn payload() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec((0x20u8..=0x7e).prop_filter("framing byte", |b| *b != b'$' && *b != b'#'), 0..64)
    }

    proptest! {
        #[test]
        fn round_trip(p in payload()) {
            let wire = encode_frame(&p).unwrap();
            let (decoded, consumed) = decode_frame(&wire).unwrap();
            prop_assert_eq!(decoded, p);
            prop_assert_eq!(consumed, wire.len());
        }

        #[test]
        fn checksum_corruption_is_always_detected(p in payload(), which in 0usize..2, byte in any::<u8>()) {
            let mut wire = encode_frame(&p).unwrap();
            let pos = wire.len() - 2 + which;
            prop_assume!(wire[pos] != byte);
            wire[pos] = byte;
            prop_assert!(
                matches!(decode_frame(&wire), Err(DecodeError::BadChecksum { .. })),
                "corrupted frame accepted"
            );
        }

        #[test]
        fn stream_decoding_ignores_chunking(
            payloads in proptest::collection::vec(payload(), 0..12),
            cuts in proptest::collection::vec(1usize..16, 0..64),
        ) {
            let wire: Vec<u8> = payloads.iter().flat_map(|p| encode_frame(p).unwrap()).collect();
            let mut d = FrameDecoder::default();
            let mut out = Vec::new();
            let mut rest = &wire[..];
            let mut cuts = cuts.into_iter();
            while !rest.is_empty() {
                let n = cuts.next().unwrap_or(rest.len()).min(rest.len());
                d.feed(&rest[..n]);
                rest = &rest[n..];
                while let Some(item) = d.next_item() {
                    match item {
                        Incoming::Frame(p) => out.push(p),
                        other => prop_assert!(false, "unexpected {:?}", other),
                    }
                }
            }
            prop_assert_eq!(out, payloads);
        }
    }
}
