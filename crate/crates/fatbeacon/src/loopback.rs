//! Loopback stand-in for the radio.
//!
//! The advertising channel is a UDP socket the advertiser binds on
//! `adv_port`; a scanner registers by sending any datagram there (the
//! moral equivalent of an active scan request) and then receives the
//! advertisement frame every interval. Content transfer is a TCP stream
//! on `conn_port` carrying the chunked wire format from [`crate::transfer`].
//! Datagram payloads are exactly the encoded advertisement bytes, so a
//! capture of the channel is a valid hex-dump fixture.
//!
//! Simulated link delays are injected on the scanner side only, by
//! pacing the stream reads with a seeded [`ChunkPacer`]; one advertiser
//! can therefore serve clients at different simulated distances at once.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bundler::{validate_atomic, ContentBundle, Violation};
use crate::frames::{classify_frame, encode_fatbeacon, FatBeaconFrame, FrameKind, RawAdvPacket};
use crate::sim::{rssi_at, AdvertiserConfig, ChunkPacer, LinkProfile, SimError};
use crate::transfer::{
    self, fetch, serve, ChunkParams, FetchOutcome, Link, TransferError, DEFAULT_IDLE_TIMEOUT,
};

/// How long a scanner's registration on the advertising channel lasts
/// without a fresh probe.
const SUBSCRIPTION_TTL: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum LoopbackError {
    #[error("port already in use: {0}")]
    PortInUse(SocketAddr),
    #[error("bundle is not atomic: {}", format_violations(.0))]
    InvalidBundle(Vec<Violation>),
    #[error("no FatBeacon advertisement within the scan window")]
    ScanTimeout,
    #[error("endpoint rejected: {0}")]
    InvalidEndpoint(String),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Frame(#[from] crate::frames::FrameError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Where the fake radio lives: a datagram port for advertisements and a
/// stream port for transfers, both loopback-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopbackEndpoint {
    pub host: IpAddr,
    pub adv_port: u16,
    pub conn_port: u16,
}

impl LoopbackEndpoint {
    pub fn new(host: IpAddr, adv_port: u16, conn_port: u16) -> Result<Self, LoopbackError> {
        if !host.is_loopback() {
            return Err(LoopbackError::InvalidEndpoint(format!(
                "{host} is not loopback"
            )));
        }
        if adv_port == conn_port && adv_port != 0 {
            return Err(LoopbackError::InvalidEndpoint(format!(
                "advertising and transfer ports must differ, both are {adv_port}"
            )));
        }
        Ok(Self {
            host,
            adv_port,
            conn_port,
        })
    }

    pub fn localhost(adv_port: u16, conn_port: u16) -> Result<Self, LoopbackError> {
        Self::new(IpAddr::V4(Ipv4Addr::LOCALHOST), adv_port, conn_port)
    }

    fn adv_addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.adv_port)
    }

    fn conn_addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.conn_port)
    }
}

fn bind_udp(addr: SocketAddr) -> Result<UdpSocket, LoopbackError> {
    UdpSocket::bind(addr).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => LoopbackError::PortInUse(addr),
        _ => LoopbackError::Io(e),
    })
}

fn bind_tcp(addr: SocketAddr) -> Result<TcpListener, LoopbackError> {
    TcpListener::bind(addr).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => LoopbackError::PortInUse(addr),
        _ => LoopbackError::Io(e),
    })
}

// ---------------------------------------------------------------------------
// Advertiser
// ---------------------------------------------------------------------------

/// A running beacon: broadcasts its frame every interval and serves the
/// bundle to anyone who connects. The two loops share only the
/// immutable bundle.
#[derive(Debug)]
pub struct Advertiser {
    adv_addr: SocketAddr,
    conn_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl Advertiser {
    /// Validates the bundle, claims both ports, and starts broadcasting.
    pub fn start(
        bundle: ContentBundle,
        config: AdvertiserConfig,
        endpoint: &LoopbackEndpoint,
        params: ChunkParams,
    ) -> Result<Self, LoopbackError> {
        let violations = validate_atomic(&bundle);
        if !violations.is_empty() {
            return Err(LoopbackError::InvalidBundle(violations));
        }
        let frame = FatBeaconFrame {
            tx_power_dbm: config.tx_power_dbm,
            title: bundle.title.clone(),
        };
        let packet = encode_fatbeacon(&frame)?;

        let udp = bind_udp(endpoint.adv_addr())?;
        let listener = bind_tcp(endpoint.conn_addr())?;
        let adv_addr = udp.local_addr()?;
        let conn_addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;

        let stop = Arc::new(AtomicBool::new(false));
        let bundle = Arc::new(bundle);

        let broadcast = {
            let stop = Arc::clone(&stop);
            let interval = Duration::from_millis(config.interval_ms as u64);
            thread::spawn(move || broadcast_loop(&udp, &packet.bytes, interval, &stop))
        };
        let accept = {
            let stop = Arc::clone(&stop);
            let bundle = Arc::clone(&bundle);
            thread::spawn(move || accept_loop(&listener, &bundle, params, &stop))
        };

        Ok(Self {
            adv_addr,
            conn_addr,
            stop,
            threads: vec![broadcast, accept],
        })
    }

    /// Actual advertising address (useful when bound to port 0).
    pub fn adv_addr(&self) -> SocketAddr {
        self.adv_addr
    }

    /// Actual transfer address.
    pub fn conn_addr(&self) -> SocketAddr {
        self.conn_addr
    }

    pub fn endpoint(&self) -> LoopbackEndpoint {
        LoopbackEndpoint {
            host: self.adv_addr.ip(),
            adv_port: self.adv_addr.port(),
            conn_port: self.conn_addr.port(),
        }
    }

    pub fn stop(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for handle in self.threads.drain(..) {
            let _ = handle.join();
        }
    }
}

impl Drop for Advertiser {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for handle in self.threads.drain(..) {
            let _ = handle.join();
        }
    }
}

fn broadcast_loop(udp: &UdpSocket, packet: &[u8], interval: Duration, stop: &AtomicBool) {
    let mut subscribers: HashMap<SocketAddr, Instant> = HashMap::new();
    let mut next_tick = Instant::now();
    let mut buf = [0u8; 64];
    while !stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now >= next_tick {
            subscribers.retain(|_, seen| now.duration_since(*seen) < SUBSCRIPTION_TTL);
            for addr in subscribers.keys() {
                let _ = udp.send_to(packet, addr);
            }
            next_tick += interval;
            continue;
        }
        // Wait for probes, but wake often enough to honor stop and tick.
        let wait = (next_tick - now).min(Duration::from_millis(50));
        let _ = udp.set_read_timeout(Some(wait.max(Duration::from_millis(1))));
        match udp.recv_from(&mut buf) {
            Ok((_, from)) => {
                subscribers.insert(from, Instant::now());
            }
            Err(ref e)
                if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut => {
            }
            Err(_) => {}
        }
    }
}

fn accept_loop(
    listener: &TcpListener,
    bundle: &Arc<ContentBundle>,
    params: ChunkParams,
    stop: &AtomicBool,
) {
    let sessions: Mutex<Vec<JoinHandle<()>>> = Mutex::new(Vec::new());
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _peer)) => {
                let bundle = Arc::clone(bundle);
                let handle = thread::spawn(move || {
                    let mut stream = stream;
                    let _ = stream.set_write_timeout(Some(DEFAULT_IDLE_TIMEOUT));
                    let _ = stream.set_read_timeout(Some(DEFAULT_IDLE_TIMEOUT));
                    let _ = stream.set_nodelay(true);
                    let _ = serve(&bundle, params, &mut stream);
                });
                sessions.lock().expect("session list").push(handle);
            }
            Err(ref e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(5));
            }
            Err(_) => break,
        }
    }
    for handle in sessions.into_inner().expect("session list").drain(..) {
        let _ = handle.join();
    }
}

// ---------------------------------------------------------------------------
// Scanner
// ---------------------------------------------------------------------------

/// Simulated-link settings injected into a fetch.
#[derive(Debug, Clone)]
pub struct Throttle {
    pub profile: LinkProfile,
    pub distance_m: f64,
}

/// What one scan-and-fetch produced.
#[derive(Debug)]
pub struct ScanOutcome {
    pub title: String,
    pub bytes: Vec<u8>,
    pub timing: transfer::TransferTiming,
    /// Monotonic timestamp of the notification, before the connection
    /// was initiated.
    pub notified_ts_ns: u64,
    pub events: Vec<transfer::SessionEvent>,
    /// RSSI attached to the advertisement when a throttle profile was
    /// supplied.
    pub adv_rssi_dbm: Option<f64>,
}

impl ScanOutcome {
    pub fn elapsed_s(&self) -> f64 {
        self.timing.elapsed_s()
    }
}

/// Listens on the advertising channel until a FatBeacon frame shows up,
/// emits the notification, then connects and fetches the content.
/// `on_notify` runs before the connection is initiated.
pub fn scan_and_fetch(
    endpoint: &LoopbackEndpoint,
    timeout: Duration,
    throttle: Option<Throttle>,
    mut on_notify: impl FnMut(&FatBeaconFrame),
) -> Result<ScanOutcome, LoopbackError> {
    let (frame, adv_rssi_dbm) = wait_for_fatbeacon(endpoint, timeout, throttle.as_ref())?;
    on_notify(&frame);
    let notified_ts_ns = transfer::monotonic_ns();

    let conn_addr = endpoint.conn_addr();
    let connect_plain = move || -> io::Result<TcpStream> {
        let stream = TcpStream::connect(conn_addr)?;
        stream.set_read_timeout(Some(DEFAULT_IDLE_TIMEOUT))?;
        stream.set_nodelay(true)?;
        Ok(stream)
    };

    let outcome: FetchOutcome = match throttle {
        None => fetch(&frame.title, connect_plain)?,
        Some(t) => {
            let pacer = ChunkPacer::new(
                &t.profile,
                t.distance_m,
                ChunkParams::default().chunk_payload(),
            )?;
            fetch(&frame.title, move || {
                let stream = connect_plain()?;
                Ok(ThrottledLink::new(
                    stream,
                    pacer,
                    ChunkParams::default().chunk_payload(),
                ))
            })?
        }
    };

    Ok(ScanOutcome {
        title: frame.title,
        bytes: outcome.bytes,
        timing: outcome.timing,
        notified_ts_ns,
        events: outcome.events,
        adv_rssi_dbm,
    })
}

fn wait_for_fatbeacon(
    endpoint: &LoopbackEndpoint,
    timeout: Duration,
    throttle: Option<&Throttle>,
) -> Result<(FatBeaconFrame, Option<f64>), LoopbackError> {
    let rssi = throttle
        .map(|t| rssi_at(&t.profile, t.distance_m))
        .transpose()?;
    let udp = bind_udp(SocketAddr::new(endpoint.host, 0))?;
    let adv_addr = endpoint.adv_addr();
    let deadline = Instant::now() + timeout;
    let mut next_probe = Instant::now();
    let mut buf = [0u8; 64];
    loop {
        let now = Instant::now();
        if now >= deadline {
            return Err(LoopbackError::ScanTimeout);
        }
        if now >= next_probe {
            let _ = udp.send_to(&[], adv_addr);
            next_probe = now + Duration::from_secs(1);
        }
        let wait = (deadline - now)
            .min(next_probe - now)
            .max(Duration::from_millis(1));
        udp.set_read_timeout(Some(wait))?;
        match udp.recv_from(&mut buf) {
            Ok((n, _)) => {
                let mut packet = RawAdvPacket::from_bytes(buf[..n].to_vec());
                packet.rssi_dbm = rssi;
                if let FrameKind::FatBeacon(frame) = classify_frame(&packet) {
                    return Ok((frame, rssi));
                }
            }
            Err(ref e)
                if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut => {
            }
            Err(e) => return Err(LoopbackError::Io(e)),
        }
    }
}

/// Captures every advertisement observed during `window`. A hex dump of
/// the result is a valid golden-vector fixture.
pub fn observe_advertisements(
    endpoint: &LoopbackEndpoint,
    window: Duration,
) -> Result<Vec<RawAdvPacket>, LoopbackError> {
    let udp = bind_udp(SocketAddr::new(endpoint.host, 0))?;
    let adv_addr = endpoint.adv_addr();
    udp.send_to(&[], adv_addr)?;
    let deadline = Instant::now() + window;
    let mut packets = Vec::new();
    let mut buf = [0u8; 64];
    loop {
        let now = Instant::now();
        if now >= deadline {
            return Ok(packets);
        }
        udp.set_read_timeout(Some((deadline - now).max(Duration::from_millis(1))))?;
        match udp.recv_from(&mut buf) {
            Ok((n, _)) => packets.push(RawAdvPacket::from_bytes(buf[..n].to_vec())),
            Err(ref e)
                if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut => {
            }
            Err(e) => return Err(LoopbackError::Io(e)),
        }
    }
}

// ---------------------------------------------------------------------------
// Simulated pacing
// ---------------------------------------------------------------------------

/// Wraps a link so the wall clock tracks the simulated schedule: the
/// setup latency before the first byte, then one sampled delay per
/// completed chunk, against absolute deadlines.
///
/// The inner link is drained hungrily into a buffer before any pacing
/// happens. Pausing mid-socket would close the peer's send window and
/// drop the connection into persist-timer trickle (hundreds of
/// milliseconds per segment on older kernels), which would distort the
/// measurement with real TCP artifacts instead of modeled ones. The
/// length header announces how much to expect, so the drain knows when
/// the wire is done; delivery out of the buffer is then metered purely
/// in userspace and `close` blocks until the exact schedule total.
pub struct ThrottledLink<L: Link> {
    inner: L,
    pacer: ChunkPacer,
    chunk_payload: usize,
    started: Option<Instant>,
    target_s: f64,
    pending: Vec<u8>,
    served: usize,
    drained: bool,
    paced_chunks: usize,
}

impl<L: Link> ThrottledLink<L> {
    pub fn new(inner: L, pacer: ChunkPacer, chunk_payload: usize) -> Self {
        Self {
            inner,
            pacer,
            chunk_payload,
            started: None,
            target_s: 0.0,
            pending: Vec::new(),
            served: 0,
            drained: false,
            paced_chunks: 0,
        }
    }

    fn target(&self) -> Duration {
        Duration::from_secs_f64(self.target_s)
    }

    fn pace_coarse(&self) {
        let Some(started) = self.started else { return };
        if let Some(deficit) = self.target().checked_sub(started.elapsed()) {
            if deficit > Duration::from_millis(100) {
                thread::sleep(deficit - Duration::from_millis(50));
            }
        }
    }

    /// Blocks until the schedule total, to sub-millisecond precision.
    fn pace_exact(&self) {
        let Some(started) = self.started else { return };
        let target = self.target();
        loop {
            let Some(remaining) = target.checked_sub(started.elapsed()) else {
                return;
            };
            if remaining > Duration::from_millis(5) {
                thread::sleep(remaining - Duration::from_millis(2));
            } else {
                thread::yield_now();
            }
        }
    }

    /// Pulls the header plus the announced content off the wire without
    /// pausing. Stops early on EOF so length mismatches still surface
    /// to the caller.
    fn drain_inner(&mut self) -> io::Result<()> {
        let mut buf = vec![0u8; 64 * 1024];
        while self.pending.len() < 4 {
            let n = self.inner.read(&mut buf)?;
            if n == 0 {
                return Ok(());
            }
            self.pending.extend_from_slice(&buf[..n]);
        }
        let announced = u32::from_be_bytes(self.pending[..4].try_into().expect("4 bytes")) as usize;
        while self.pending.len() < 4 + announced {
            let n = self.inner.read(&mut buf)?;
            if n == 0 {
                return Ok(());
            }
            self.pending.extend_from_slice(&buf[..n]);
        }
        Ok(())
    }

    /// Chunks fully delivered so far; the 4-byte header rides along
    /// with setup and is not a chunk.
    fn completed_chunks(&self) -> usize {
        self.served.saturating_sub(4) / self.chunk_payload
    }
}

impl<L: Link> Read for ThrottledLink<L> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.started.is_none() {
            self.started = Some(Instant::now());
            self.target_s = self.pacer.setup_s();
        }
        if !self.drained {
            self.drain_inner()?;
            self.drained = true;
        }
        let available = self.pending.len() - self.served.min(self.pending.len());
        if available == 0 {
            return Ok(0);
        }
        let n = buf.len().min(available);
        buf[..n].copy_from_slice(&self.pending[self.served..self.served + n]);
        self.served += n;
        while self.paced_chunks < self.completed_chunks() {
            self.target_s += self.pacer.next_chunk_s();
            self.paced_chunks += 1;
        }
        self.pace_coarse();
        Ok(n)
    }
}

impl<L: Link> Write for ThrottledLink<L> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.inner.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl<L: Link> Link for ThrottledLink<L> {
    fn close(&mut self) -> io::Result<()> {
        // Account for a trailing partial chunk before the clock stops.
        if !self
            .served
            .saturating_sub(4)
            .is_multiple_of(self.chunk_payload)
        {
            self.target_s += self.pacer.next_chunk_s();
        }
        self.pace_exact();
        self.inner.close()
    }
}
