//! Advertisement frame codecs.
//!
//! Both beacon modes share one service-data layout: the 16-bit service
//! UUID `0xFEAA` (little-endian on the wire), the URL frame type byte
//! `0x10`, a calibrated TX power byte, then a scheme byte. Scheme bytes
//! `0x00..=0x03` select a URL prefix and the rest of the packet is a
//! compressed URL; the reserved scheme byte `0x0E` marks a FatBeacon and
//! the rest of the packet is the UTF-8 title of the content the beacon
//! serves over a connection.

use thiserror::Error;

/// Legacy advertising PDU payload bound.
pub const MAX_ADV_PACKET_BYTES: usize = 31;
/// Compressed URL bytes after the scheme byte.
pub const MAX_ENCODED_URL_BYTES: usize = 18;
/// FatBeacon title bytes after the scheme byte. With the 7 bytes of
/// service-data framing this saturates the 31-byte packet bound exactly.
pub const MAX_TITLE_BYTES: usize = 26;
/// Calibrated TX power range accepted on both encode and decode.
pub const TX_POWER_RANGE_DBM: core::ops::RangeInclusive<i8> = -100..=20;

const SERVICE_UUID_LE: [u8; 2] = [0xAA, 0xFE];
const FRAME_TYPE_URL: u8 = 0x10;
/// Reserved scheme byte that discriminates a FatBeacon advertisement.
pub const FATBEACON_SCHEME: u8 = 0x0E;

const URL_SCHEMES: [&str; 4] = ["http://www.", "https://www.", "http://", "https://"];
const URL_EXPANSIONS: [&str; 14] = [
    ".com/", ".org/", ".edu/", ".net/", ".info/", ".biz/", ".gov/", ".com", ".org", ".edu", ".net",
    ".info", ".biz", ".gov",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("url does not fit in {MAX_ENCODED_URL_BYTES} encoded bytes: {0}")]
    UrlTooLong(String),
    #[error("url scheme not expressible in the prefix table: {0}")]
    UnsupportedScheme(String),
    #[error("url contains a byte outside the encodable ASCII range: {0:?}")]
    UnencodableChar(char),
    #[error("title is empty")]
    EmptyTitle,
    #[error("title exceeds {MAX_TITLE_BYTES} bytes: {0} bytes")]
    TitleTooLong(usize),
    #[error("tx power {0} dBm outside calibrated range [-100, 20]")]
    TxPowerOutOfRange(i8),
    #[error("bad hex dump at line {line}: {reason}")]
    BadHexDump { line: usize, reason: String },
}

/// Classic URL-broadcast advertisement: a compressed URL plus the
/// calibrated transmit power at 0 m.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EddystoneUrlFrame {
    pub tx_power_dbm: i8,
    pub url: String,
}

/// FatBeacon advertisement: the beacon serves the content itself, so the
/// packet only carries the content title and the TX power.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FatBeaconFrame {
    pub tx_power_dbm: i8,
    pub title: String,
}

/// Raw advertisement bytes plus the signal strength the receiving link
/// observed (absent on freshly encoded packets).
#[derive(Debug, Clone, PartialEq)]
pub struct RawAdvPacket {
    pub bytes: Vec<u8>,
    pub rssi_dbm: Option<f64>,
}

impl RawAdvPacket {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self {
            bytes,
            rssi_dbm: None,
        }
    }
}

/// What a scanner concluded about one received packet.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameKind {
    UrlBeacon(EddystoneUrlFrame),
    FatBeacon(FatBeaconFrame),
    Unknown,
}

fn check_tx_power(tx: i8) -> Result<(), FrameError> {
    if TX_POWER_RANGE_DBM.contains(&tx) {
        Ok(())
    } else {
        Err(FrameError::TxPowerOutOfRange(tx))
    }
}

fn packet_with_body(tx: i8, scheme: u8, payload: &[u8]) -> RawAdvPacket {
    let mut bytes = Vec::with_capacity(5 + payload.len());
    bytes.extend_from_slice(&SERVICE_UUID_LE);
    bytes.push(FRAME_TYPE_URL);
    bytes.push(tx as u8);
    bytes.push(scheme);
    bytes.extend_from_slice(payload);
    debug_assert!(bytes.len() <= MAX_ADV_PACKET_BYTES);
    RawAdvPacket::from_bytes(bytes)
}

/// Compresses the URL body with the expansion table, longest match first.
fn compress_url_body(body: &str) -> Result<Vec<u8>, FrameError> {
    let mut by_len: Vec<(usize, &str)> = URL_EXPANSIONS.iter().copied().enumerate().collect();
    by_len.sort_by_key(|(_, s)| core::cmp::Reverse(s.len()));
    let mut out = Vec::new();
    let mut rest = body;
    'outer: while !rest.is_empty() {
        for &(code, expansion) in &by_len {
            if rest.starts_with(expansion) {
                out.push(code as u8);
                rest = &rest[expansion.len()..];
                continue 'outer;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        if !ch.is_ascii() || (ch as u8) <= 0x20 || (ch as u8) == 0x7F {
            return Err(FrameError::UnencodableChar(ch));
        }
        out.push(ch as u8);
        rest = &rest[1..];
    }
    Ok(out)
}

fn expand_url_body(body: &[u8]) -> Option<String> {
    let mut url = String::new();
    for &b in body {
        match b {
            0x00..=0x0D => url.push_str(URL_EXPANSIONS[b as usize]),
            0x21..=0x7E => url.push(b as char),
            _ => return None,
        }
    }
    Some(url)
}

/// Encodes a URL-broadcast frame into advertisement bytes.
pub fn encode_eddystone_url(frame: &EddystoneUrlFrame) -> Result<RawAdvPacket, FrameError> {
    check_tx_power(frame.tx_power_dbm)?;
    // Longest prefix wins so "https://www." is tried before "https://".
    let mut candidates: Vec<(usize, &str)> = URL_SCHEMES.iter().copied().enumerate().collect();
    candidates.sort_by_key(|(_, s)| core::cmp::Reverse(s.len()));
    let (scheme, prefix) = candidates
        .into_iter()
        .find(|(_, p)| frame.url.starts_with(p))
        .ok_or_else(|| FrameError::UnsupportedScheme(frame.url.clone()))?;
    let body = compress_url_body(&frame.url[prefix.len()..])?;
    if body.len() > MAX_ENCODED_URL_BYTES {
        return Err(FrameError::UrlTooLong(frame.url.clone()));
    }
    Ok(packet_with_body(frame.tx_power_dbm, scheme as u8, &body))
}

/// Encodes a FatBeacon frame into advertisement bytes.
pub fn encode_fatbeacon(frame: &FatBeaconFrame) -> Result<RawAdvPacket, FrameError> {
    check_tx_power(frame.tx_power_dbm)?;
    if frame.title.is_empty() {
        return Err(FrameError::EmptyTitle);
    }
    if frame.title.len() > MAX_TITLE_BYTES {
        return Err(FrameError::TitleTooLong(frame.title.len()));
    }
    Ok(packet_with_body(
        frame.tx_power_dbm,
        FATBEACON_SCHEME,
        frame.title.as_bytes(),
    ))
}

/// Classifies a received packet. Total: malformed input is `Unknown`,
/// never an error.
pub fn classify_frame(packet: &RawAdvPacket) -> FrameKind {
    let b = &packet.bytes;
    if b.len() < 5 || b.len() > MAX_ADV_PACKET_BYTES {
        return FrameKind::Unknown;
    }
    if b[0..2] != SERVICE_UUID_LE || b[2] != FRAME_TYPE_URL {
        return FrameKind::Unknown;
    }
    let tx_power_dbm = b[3] as i8;
    if check_tx_power(tx_power_dbm).is_err() {
        return FrameKind::Unknown;
    }
    let payload = &b[5..];
    match b[4] {
        scheme @ 0x00..=0x03 => match expand_url_body(payload) {
            Some(body) => FrameKind::UrlBeacon(EddystoneUrlFrame {
                tx_power_dbm,
                url: format!("{}{}", URL_SCHEMES[scheme as usize], body),
            }),
            None => FrameKind::Unknown,
        },
        FATBEACON_SCHEME => match core::str::from_utf8(payload) {
            Ok(title) if !title.is_empty() && title.len() <= MAX_TITLE_BYTES => {
                FrameKind::FatBeacon(FatBeaconFrame {
                    tx_power_dbm,
                    title: title.to_owned(),
                })
            }
            _ => FrameKind::Unknown,
        },
        _ => FrameKind::Unknown,
    }
}

/// One packet as a lowercase, space-separated hex line (the golden vector
/// format under `testdata/frames.hex`).
pub fn to_hex_line(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses a hex dump: one packet per line, `#` comments and blank lines
/// ignored.
pub fn parse_hex_dump(text: &str) -> Result<Vec<Vec<u8>>, FrameError> {
    let mut packets = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut packet = Vec::new();
        for tok in line.split_whitespace() {
            let byte = u8::from_str_radix(tok, 16).map_err(|e| FrameError::BadHexDump {
                line: idx + 1,
                reason: format!("{tok:?}: {e}"),
            })?;
            if tok.len() != 2 {
                return Err(FrameError::BadHexDump {
                    line: idx + 1,
                    reason: format!("byte token {tok:?} is not two hex digits"),
                });
            }
            packet.push(byte);
        }
        packets.push(packet);
    }
    Ok(packets)
}
