//! Open Sound Control 1.0 codec.
//!
//! Only the `i`, `f`, `s` and `b` argument types are supported. Everything is
//! big-endian and padded to 4-byte boundaries as OSC 1.0 requires. Decoding
//! never panics on malformed input; it returns an [`OscError`].

use thiserror::Error;

/// Bundles nested deeper than this are rejected while decoding.
pub const MAX_BUNDLE_DEPTH: usize = 32;

const BUNDLE_HEADER: &[u8; 8] = b"#bundle\0";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OscError {
    #[error("address must be non-empty and start with '/': {0:?}")]
    InvalidAddress(String),
    #[error("string argument contains an interior NUL byte")]
    InteriorNul,
    #[error("packet truncated")]
    Truncated,
    #[error("unsupported or malformed type tag {0:?}")]
    BadTypeTag(char),
    #[error("packet length or element size is not a multiple of 4")]
    Misaligned,
    #[error("missing \"#bundle\" header")]
    BadHeader,
    #[error("non-zero padding byte")]
    BadPadding,
    #[error("string is not valid UTF-8")]
    InvalidString,
    #[error("bundle nesting deeper than {MAX_BUNDLE_DEPTH}")]
    TooDeep,
}

/// A single typed message argument.
#[derive(Debug, Clone)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    String(String),
    Blob(Vec<u8>),
}

impl OscArg {
    pub fn type_tag(&self) -> char {
        match self {
            OscArg::Int(_) => 'i',
            OscArg::Float(_) => 'f',
            OscArg::String(_) => 's',
            OscArg::Blob(_) => 'b',
        }
    }

    pub fn as_f32(&self) -> Option<f32> {
        match *self {
            OscArg::Float(v) => Some(v),
            OscArg::Int(v) => Some(v as f32),
            _ => None,
        }
    }
}

// Floats compare by bit pattern so that NaN payloads and signed zeros
// survive the round-trip identity check.
impl PartialEq for OscArg {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (OscArg::Int(a), OscArg::Int(b)) => a == b,
            (OscArg::Float(a), OscArg::Float(b)) => a.to_bits() == b.to_bits(),
            (OscArg::String(a), OscArg::String(b)) => a == b,
            (OscArg::Blob(a), OscArg::Blob(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        Self {
            address: address.into(),
            args,
        }
    }

    /// Message whose arguments are all `f32`.
    pub fn floats(address: impl Into<String>, values: &[f32]) -> Self {
        Self::new(address, values.iter().map(|&v| OscArg::Float(v)).collect())
    }

    /// `,` followed by one tag character per argument.
    pub fn type_tags(&self) -> String {
        std::iter::once(',')
            .chain(self.args.iter().map(OscArg::type_tag))
            .collect()
    }
}

/// 64-bit NTP timestamp: seconds since 1900 in the high word, fraction in the low word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeTag(pub u64);

impl TimeTag {
    pub const IMMEDIATE: TimeTag = TimeTag(1);

    pub fn is_immediate(self) -> bool {
        self == Self::IMMEDIATE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscBundle {
    pub timetag: TimeTag,
    pub elements: Vec<OscPacket>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OscPacket {
    Message(OscMessage),
    Bundle(OscBundle),
}

impl From<OscMessage> for OscPacket {
    fn from(m: OscMessage) -> Self {
        OscPacket::Message(m)
    }
}

impl From<OscBundle> for OscPacket {
    fn from(b: OscBundle) -> Self {
        OscPacket::Bundle(b)
    }
}

/// Exact match, or prefix match when `pattern` ends in a single `*`.
pub fn address_matches(pattern: &str, address: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => address.starts_with(prefix),
        None => pattern == address,
    }
}

fn padded_len(n: usize) -> usize {
    (n + 3) & !3
}

fn write_padded_str(out: &mut Vec<u8>, s: &str) -> Result<(), OscError> {
    if s.as_bytes().contains(&0) {
        return Err(OscError::InteriorNul);
    }
    out.extend_from_slice(s.as_bytes());
    // at least one terminating NUL, then pad to 4
    let total = padded_len(s.len() + 1);
    out.resize(out.len() + (total - s.len()), 0);
    Ok(())
}

fn validate_address(address: &str) -> Result<(), OscError> {
    if !address.starts_with('/') {
        return Err(OscError::InvalidAddress(address.to_string()));
    }
    Ok(())
}

pub fn encode_message(msg: &OscMessage) -> Result<Vec<u8>, OscError> {
    let mut out = Vec::with_capacity(64);
    encode_message_into(msg, &mut out)?;
    Ok(out)
}

fn encode_message_into(msg: &OscMessage, out: &mut Vec<u8>) -> Result<(), OscError> {
    validate_address(&msg.address)?;
    if msg.address.as_bytes().contains(&0) {
        return Err(OscError::InvalidAddress(msg.address.clone()));
    }
    write_padded_str(out, &msg.address)?;
    write_padded_str(out, &msg.type_tags())?;
    for arg in &msg.args {
        match arg {
            OscArg::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::String(s) => write_padded_str(out, s)?,
            OscArg::Blob(b) => {
                let len = i32::try_from(b.len()).map_err(|_| OscError::Truncated)?;
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(b);
                out.resize(out.len() + (padded_len(b.len()) - b.len()), 0);
            }
        }
    }
    Ok(())
}

pub fn encode_bundle(bundle: &OscBundle) -> Result<Vec<u8>, OscError> {
    let mut out = Vec::with_capacity(64);
    encode_bundle_into(bundle, &mut out)?;
    Ok(out)
}

fn encode_bundle_into(bundle: &OscBundle, out: &mut Vec<u8>) -> Result<(), OscError> {
    out.extend_from_slice(BUNDLE_HEADER);
    out.extend_from_slice(&bundle.timetag.0.to_be_bytes());
    for element in &bundle.elements {
        let size_at = out.len();
        out.extend_from_slice(&[0; 4]);
        match element {
            OscPacket::Message(m) => encode_message_into(m, out)?,
            OscPacket::Bundle(b) => encode_bundle_into(b, out)?,
        }
        let size = i32::try_from(out.len() - size_at - 4).map_err(|_| OscError::Truncated)?;
        out[size_at..size_at + 4].copy_from_slice(&size.to_be_bytes());
    }
    Ok(())
}

pub fn encode_packet(packet: &OscPacket) -> Result<Vec<u8>, OscError> {
    match packet {
        OscPacket::Message(m) => encode_message(m),
        OscPacket::Bundle(b) => encode_bundle(b),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], OscError> {
        if n > self.remaining() {
            return Err(OscError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn word(&mut self) -> Result<[u8; 4], OscError> {
        let b = self.take(4)?;
        Ok([b[0], b[1], b[2], b[3]])
    }

    fn skip_padding(&mut self, used: usize) -> Result<(), OscError> {
        let pad = padded_len(used) - used;
        if self.take(pad)?.iter().any(|&b| b != 0) {
            return Err(OscError::BadPadding);
        }
        Ok(())
    }

    fn string(&mut self) -> Result<&'a str, OscError> {
        let rest = &self.buf[self.pos..];
        let nul = rest.iter().position(|&b| b == 0).ok_or(OscError::Truncated)?;
        let bytes = &rest[..nul];
        self.pos += nul + 1;
        self.skip_padding(nul + 1)?;
        std::str::from_utf8(bytes).map_err(|_| OscError::InvalidString)
    }
}

fn check_frame(bytes: &[u8]) -> Result<(), OscError> {
    if bytes.len() < 4 {
        return Err(OscError::Truncated);
    }
    if bytes.len() % 4 != 0 {
        return Err(OscError::Misaligned);
    }
    Ok(())
}

pub fn decode_message(bytes: &[u8]) -> Result<OscMessage, OscError> {
    check_frame(bytes)?;
    let mut r = Reader::new(bytes);
    let address = r.string()?;
    validate_address(address)?;
    if r.remaining() == 0 {
        return Err(OscError::Truncated);
    }
    let tags = r.string()?;
    let mut chars = tags.chars();
    match chars.next() {
        Some(',') => {}
        Some(c) => return Err(OscError::BadTypeTag(c)),
        None => return Err(OscError::BadTypeTag('\0')),
    }
    let mut args = Vec::with_capacity(tags.len() - 1);
    for tag in chars {
        let arg = match tag {
            'i' => OscArg::Int(i32::from_be_bytes(r.word()?)),
            'f' => OscArg::Float(f32::from_be_bytes(r.word()?)),
            's' => OscArg::String(r.string()?.to_string()),
            'b' => {
                let len = i32::from_be_bytes(r.word()?);
                let len = usize::try_from(len).map_err(|_| OscError::Truncated)?;
                let data = r.take(len)?.to_vec();
                r.skip_padding(len)?;
                OscArg::Blob(data)
            }
            other => return Err(OscError::BadTypeTag(other)),
        };
        args.push(arg);
    }
    if r.remaining() != 0 {
        return Err(OscError::Misaligned);
    }
    Ok(OscMessage {
        address: address.to_string(),
        args,
    })
}

pub fn decode_bundle(bytes: &[u8]) -> Result<OscBundle, OscError> {
    decode_bundle_at_depth(bytes, 0)
}

fn decode_bundle_at_depth(bytes: &[u8], depth: usize) -> Result<OscBundle, OscError> {
    if depth >= MAX_BUNDLE_DEPTH {
        return Err(OscError::TooDeep);
    }
    check_frame(bytes)?;
    let mut r = Reader::new(bytes);
    if r.take(8).map_err(|_| OscError::BadHeader)? != BUNDLE_HEADER {
        return Err(OscError::BadHeader);
    }
    let hi = u32::from_be_bytes(r.word()?) as u64;
    let lo = u32::from_be_bytes(r.word()?) as u64;
    let timetag = TimeTag(hi << 32 | lo);
    let mut elements = Vec::new();
    while r.remaining() > 0 {
        let size = i32::from_be_bytes(r.word()?);
        let size = usize::try_from(size).map_err(|_| OscError::Truncated)?;
        if size % 4 != 0 {
            return Err(OscError::Misaligned);
        }
        let body = r.take(size)?;
        elements.push(decode_packet_at_depth(body, depth + 1)?);
    }
    Ok(OscBundle { timetag, elements })
}

pub fn decode_packet(bytes: &[u8]) -> Result<OscPacket, OscError> {
    decode_packet_at_depth(bytes, 0)
}

fn decode_packet_at_depth(bytes: &[u8], depth: usize) -> Result<OscPacket, OscError> {
    match bytes.first() {
        Some(b'#') => decode_bundle_at_depth(bytes, depth).map(OscPacket::Bundle),
        Some(_) => decode_message(bytes).map(OscPacket::Message),
        None => Err(OscError::Truncated),
    }
}
