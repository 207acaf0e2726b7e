//! Connection-oriented content transfer.
//!
//! The beacon side streams a bundle as a 4-byte big-endian length header
//! followed by the raw bytes in `chunk_payload`-sized writes; the client
//! connects, reads until the announced length is in, closes, and reports
//! the connect-to-close wall time. Both ends drive a session state
//! machine whose transitions are checked, and every event is logged as a
//! `ts_ns state event` record against a monotonic clock.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bundler::ContentBundle;

/// ATT op-code plus handle bytes spent per chunk.
pub const ATT_HEADER_BYTES: u16 = 3;
/// BLE 4.0 minimum MTU, the default so chunk counts stay conservative.
pub const MIN_MTU: u16 = 23;
pub const MAX_MTU: u16 = 512;
/// Payload bytes per chunk at the default MTU.
pub const DEFAULT_CHUNK_PAYLOAD: usize = (MIN_MTU - ATT_HEADER_BYTES) as usize;
/// Idle window before a stalled link is declared dead. Sits above the
/// worst transfer observed in the reference data (87.9 s).
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(90);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransferError {
    #[error("mtu {0} outside [{MIN_MTU}, {MAX_MTU}]")]
    InvalidMtu(u16),
    #[error("link dropped: {0}")]
    LinkDropped(String),
    #[error("link idle past the timeout window")]
    Timeout,
    #[error("received {received} bytes but header announced {expected}")]
    LengthMismatch { expected: usize, received: usize },
    #[error("end time precedes start time")]
    NegativeInterval,
    #[error("illegal session transition {from} -> {to}")]
    IllegalTransition { from: String, to: String },
}

/// Negotiated framing: payload per chunk is the MTU minus ATT framing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkParams {
    mtu: u16,
}

impl ChunkParams {
    pub fn new(mtu: u16) -> Result<Self, TransferError> {
        if !(MIN_MTU..=MAX_MTU).contains(&mtu) {
            return Err(TransferError::InvalidMtu(mtu));
        }
        Ok(Self { mtu })
    }

    pub fn mtu(&self) -> u16 {
        self.mtu
    }

    pub fn chunk_payload(&self) -> usize {
        (self.mtu - ATT_HEADER_BYTES) as usize
    }

    /// Chunks needed for a payload of `size_bytes`.
    pub fn chunk_count(&self, size_bytes: usize) -> usize {
        size_bytes.div_ceil(self.chunk_payload())
    }
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self { mtu: MIN_MTU }
    }
}

/// Milliseconds between two monotonic nanosecond samples.
pub fn compute_duration(start_ns: u64, end_ns: u64) -> Result<f64, TransferError> {
    if end_ns < start_ns {
        return Err(TransferError::NegativeInterval);
    }
    Ok((end_ns - start_ns) as f64 / 1e6)
}

/// Connect/close samples for one fetch, from a monotonic clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferTiming {
    pub start_time_ns: u64,
    pub end_time_ns: u64,
    pub difference_ms: f64,
}

impl TransferTiming {
    pub fn new(start_time_ns: u64, end_time_ns: u64) -> Result<Self, TransferError> {
        Ok(Self {
            start_time_ns,
            end_time_ns,
            difference_ms: compute_duration(start_time_ns, end_time_ns)?,
        })
    }

    pub fn elapsed_s(&self) -> f64 {
        self.difference_ms / 1e3
    }
}

/// Nanoseconds since an arbitrary process-local epoch; never goes back.
pub fn monotonic_ns() -> u64 {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed().as_nanos() as u64
}

// ---------------------------------------------------------------------------
// Session state machine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionState {
    Idle,
    Connecting,
    Negotiating,
    Transferring,
    Closing,
    Done,
    Failed(String),
}

impl SessionState {
    pub fn name(&self) -> &'static str {
        match self {
            SessionState::Idle => "idle",
            SessionState::Connecting => "connecting",
            SessionState::Negotiating => "negotiating",
            SessionState::Transferring => "transferring",
            SessionState::Closing => "closing",
            SessionState::Done => "done",
            SessionState::Failed(_) => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, SessionState::Done | SessionState::Failed(_))
    }
}

/// The transition relation: the forward chain, plus failure from any
/// non-terminal state. Nothing leaves `Done` or `Failed`.
pub fn transition_allowed(from: &SessionState, to: &SessionState) -> bool {
    use SessionState::*;
    matches!(
        (from, to),
        (Idle, Connecting)
            | (Connecting, Negotiating)
            | (Negotiating, Transferring)
            | (Transferring, Closing)
            | (Closing, Done)
    ) || (!from.is_terminal() && matches!(to, Failed(_)))
}

/// One `ts_ns state event` record.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionEvent {
    pub ts_ns: u64,
    pub state: String,
    pub event: String,
}

impl std::fmt::Display for SessionEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {}", self.ts_ns, self.state, self.event)
    }
}

/// One transfer's state, single-threaded, with an event log.
#[derive(Debug)]
pub struct Session {
    state: SessionState,
    events: Vec<SessionEvent>,
}

impl Session {
    pub fn new() -> Self {
        let mut session = Self {
            state: SessionState::Idle,
            events: Vec::new(),
        };
        session.log("session_created");
        session
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn render_log(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }

    fn log(&mut self, event: &str) {
        self.events.push(SessionEvent {
            ts_ns: monotonic_ns(),
            state: self.state.name().to_owned(),
            event: event.to_owned(),
        });
    }

    /// Moves to `to` if the relation allows it; the state is untouched
    /// on rejection.
    pub fn transition(&mut self, to: SessionState, event: &str) -> Result<(), TransferError> {
        if !transition_allowed(&self.state, &to) {
            return Err(TransferError::IllegalTransition {
                from: self.state.name().to_owned(),
                to: to.name().to_owned(),
            });
        }
        self.state = to;
        self.log(event);
        Ok(())
    }

    /// Failure entry; a no-op when the session is already terminal.
    pub fn fail(&mut self, reason: &str) {
        if !self.state.is_terminal() {
            self.state = SessionState::Failed(reason.to_owned());
            self.log(reason);
        }
    }
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Link abstraction
// ---------------------------------------------------------------------------

/// A reliable in-order byte stream standing in for the radio connection.
pub trait Link: Read + Write {
    /// Orderly shutdown; the fetch clock stops after this returns.
    fn close(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Link for TcpStream {
    fn close(&mut self) -> io::Result<()> {
        // Both directions: the peer sees EOF and the handshake is done.
        match self.shutdown(std::net::Shutdown::Both) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotConnected => Ok(()),
            Err(e) => Err(e),
        }
    }
}

fn map_io(err: io::Error) -> TransferError {
    match err.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransferError::Timeout,
        _ => TransferError::LinkDropped(err.to_string()),
    }
}

/// In-memory duplex link built from two message channels; each write is
/// delivered as one message, which keeps chunk boundaries observable in
/// tests.
#[derive(Debug)]
pub struct MemLink {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
    staged: Vec<u8>,
    pub recv_timeout: Duration,
    pub messages_sent: usize,
}

/// A connected pair of in-memory links.
pub fn mem_link_pair() -> (MemLink, MemLink) {
    let (tx_a, rx_b) = std::sync::mpsc::channel();
    let (tx_b, rx_a) = std::sync::mpsc::channel();
    let mk = |tx, rx| MemLink {
        tx: Some(tx),
        rx,
        staged: Vec::new(),
        recv_timeout: DEFAULT_IDLE_TIMEOUT,
        messages_sent: 0,
    };
    (mk(tx_a, rx_a), mk(tx_b, rx_b))
}

impl Read for MemLink {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.staged.is_empty() {
            match self.rx.recv_timeout(self.recv_timeout) {
                Ok(msg) => self.staged = msg,
                Err(RecvTimeoutError::Disconnected) => return Ok(0),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "idle link"));
                }
            }
        }
        let n = self.staged.len().min(buf.len());
        buf[..n].copy_from_slice(&self.staged[..n]);
        self.staged.drain(..n);
        Ok(n)
    }
}

impl Write for MemLink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let tx = self
            .tx
            .as_ref()
            .ok_or_else(|| io::Error::new(io::ErrorKind::BrokenPipe, "link closed"))?;
        tx.send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer gone"))?;
        self.messages_sent += 1;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Link for MemLink {
    fn close(&mut self) -> io::Result<()> {
        self.tx = None;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Serve / fetch
// ---------------------------------------------------------------------------

/// Streams a bundle over an open link: length header, then chunk-sized
/// writes. Returns the total bytes put on the wire (header included).
pub fn serve(
    bundle: &ContentBundle,
    params: ChunkParams,
    link: &mut dyn Link,
) -> Result<u64, TransferError> {
    let mut session = Session::new();
    session
        .transition(SessionState::Connecting, "peer_accepted")
        .expect("fresh session");
    session
        .transition(SessionState::Negotiating, "params_fixed")
        .expect("chain");
    session
        .transition(SessionState::Transferring, "header_sent")
        .expect("chain");

    match serve_body(bundle, params, link) {
        Ok(served) => {
            session
                .transition(SessionState::Closing, "content_served")
                .expect("chain");
            link.close().map_err(map_io)?;
            session
                .transition(SessionState::Done, "closed")
                .expect("chain");
            Ok(served)
        }
        Err(err) => {
            session.fail(&err.to_string());
            Err(err)
        }
    }
}

fn serve_body(
    bundle: &ContentBundle,
    params: ChunkParams,
    link: &mut dyn Link,
) -> Result<u64, TransferError> {
    let body = bundle.html.as_bytes();
    let header = (body.len() as u32).to_be_bytes();
    link.write_all(&header).map_err(map_io)?;
    let mut served = header.len() as u64;
    for chunk in body.chunks(params.chunk_payload()) {
        link.write_all(chunk).map_err(map_io)?;
        served += chunk.len() as u64;
    }
    link.flush().map_err(map_io)?;
    Ok(served)
}

/// Everything a completed fetch produced.
#[derive(Debug)]
pub struct FetchOutcome {
    pub bytes: Vec<u8>,
    pub timing: TransferTiming,
    pub events: Vec<SessionEvent>,
}

/// Connects to a beacon and reads the announced content. The clock
/// starts before the connection is initiated and stops after close, so
/// setup and negotiation are inside the measured window. On any failure
/// partial content is discarded; an atomic document has no useful
/// prefix.
pub fn fetch<L, C>(peer: &str, connect: C) -> Result<FetchOutcome, TransferError>
where
    L: Link,
    C: FnOnce() -> io::Result<L>,
{
    let mut session = Session::new();
    let start_time_ns = monotonic_ns();
    session
        .transition(
            SessionState::Connecting,
            &format!("connect_initiated peer={peer}"),
        )
        .expect("fresh session");

    match fetch_body(&mut session, connect) {
        Ok((bytes, end_time_ns)) => {
            session
                .transition(SessionState::Done, "closed")
                .expect("chain");
            let timing = TransferTiming::new(start_time_ns, end_time_ns)?;
            Ok(FetchOutcome {
                bytes,
                timing,
                events: session.events().to_vec(),
            })
        }
        Err(err) => {
            session.fail(&err.to_string());
            Err(err)
        }
    }
}

fn fetch_body<L, C>(session: &mut Session, connect: C) -> Result<(Vec<u8>, u64), TransferError>
where
    L: Link,
    C: FnOnce() -> io::Result<L>,
{
    let mut link = connect().map_err(map_io)?;
    session
        .transition(SessionState::Negotiating, "link_open")
        .expect("chain");
    let params = ChunkParams::default();
    session
        .transition(SessionState::Transferring, "mtu_negotiated")
        .expect("chain");

    let mut header = [0u8; 4];
    read_exact(&mut link, &mut header)?;
    let expected = u32::from_be_bytes(header) as usize;
    let mut bytes = Vec::new();
    // Drain in large swigs; the server writes chunk-sized pieces and a
    // paced link accounts its delays by bytes, so read granularity only
    // affects syscall count.
    let mut buf = vec![0u8; params.chunk_payload().max(64 * 1024)];
    while bytes.len() < expected {
        let want = buf.len().min(expected - bytes.len());
        let got = link.read(&mut buf[..want]).map_err(map_io)?;
        if got == 0 {
            return Err(TransferError::LengthMismatch {
                expected,
                received: bytes.len(),
            });
        }
        bytes.extend_from_slice(&buf[..got]);
    }
    session
        .transition(SessionState::Closing, "content_received")
        .expect("chain");
    link.close().map_err(map_io)?;
    Ok((bytes, monotonic_ns()))
}

fn read_exact(link: &mut dyn Link, buf: &mut [u8]) -> Result<(), TransferError> {
    let mut filled = 0;
    while filled < buf.len() {
        let got = link.read(&mut buf[filled..]).map_err(map_io)?;
        if got == 0 {
            return Err(TransferError::LengthMismatch {
                expected: buf.len(),
                received: filled,
            });
        }
        filled += got;
    }
    Ok(())
}
