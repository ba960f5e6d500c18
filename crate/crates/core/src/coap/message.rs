//! CoAP message framing (4-byte header, token, delta-encoded options,
//! payload marker).

use std::fmt;

use thiserror::Error;

pub const VERSION: u8 = 1;
pub const PAYLOAD_MARKER: u8 = 0xFF;
/// Largest option delta or length expressible (two extension bytes).
pub const MAX_OPTION_EXT: usize = 65535 + 269;

pub mod option {
    pub const OBSERVE: u16 = 6;
    pub const LOCATION_PATH: u16 = 8;
    pub const URI_PATH: u16 = 11;
    pub const CONTENT_FORMAT: u16 = 12;
    pub const URI_QUERY: u16 = 15;
    pub const ACCEPT: u16 = 17;
}

pub mod content_format {
    pub const TEXT_PLAIN: u16 = 0;
    pub const LINK_FORMAT: u16 = 40;
    pub const OCTET_STREAM: u16 = 42;
    pub const JSON: u16 = 50;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    Con = 0,
    Non = 1,
    Ack = 2,
    Rst = 3,
}

impl MessageType {
    fn from_bits(bits: u8) -> Self {
        match bits & 3 {
            0 => MessageType::Con,
            1 => MessageType::Non,
            2 => MessageType::Ack,
            _ => MessageType::Rst,
        }
    }
}

/// Request method or response code, `class.detail`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Code(pub u8);

impl Code {
    pub const EMPTY: Code = Code(0);
    pub const GET: Code = Code(1);
    pub const POST: Code = Code(2);
    pub const PUT: Code = Code(3);
    pub const DELETE: Code = Code(4);
    pub const CREATED: Code = Code::new(2, 1);
    pub const DELETED: Code = Code::new(2, 2);
    pub const CHANGED: Code = Code::new(2, 4);
    pub const CONTENT: Code = Code::new(2, 5);
    pub const BAD_REQUEST: Code = Code::new(4, 0);
    pub const NOT_FOUND: Code = Code::new(4, 4);
    pub const METHOD_NOT_ALLOWED: Code = Code::new(4, 5);
    pub const NOT_ACCEPTABLE: Code = Code::new(4, 6);
    pub const UNSUPPORTED_CONTENT_FORMAT: Code = Code::new(4, 15);
    pub const INTERNAL_SERVER_ERROR: Code = Code::new(5, 0);

    pub const fn new(class: u8, detail: u8) -> Code {
        Code((class << 5) | (detail & 0x1f))
    }

    pub fn class(self) -> u8 {
        self.0 >> 5
    }

    pub fn detail(self) -> u8 {
        self.0 & 0x1f
    }

    pub fn is_request(self) -> bool {
        self.class() == 0 && self.detail() != 0
    }

    pub fn is_response(self) -> bool {
        (2..=5).contains(&self.class())
    }

    pub fn is_success(self) -> bool {
        self.class() == 2
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.class(), self.detail())
    }
}

impl fmt::Debug for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoapOption {
    pub number: u16,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub mtype: MessageType,
    pub code: Code,
    pub message_id: u16,
    pub token: Vec<u8>,
    /// Sorted by number; repeated options keep their relative order.
    pub options: Vec<CoapOption>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("token longer than 8 bytes")]
    TokenTooLong,
    #[error("empty message must carry no token, options or payload")]
    NonEmptyEmpty,
    #[error("option delta {0} exceeds {MAX_OPTION_EXT}")]
    DeltaTooLarge(usize),
    #[error("option length {0} exceeds {MAX_OPTION_EXT}")]
    LengthTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("datagram shorter than the 4-byte header")]
    Short,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("token length {0} is reserved")]
    TokenLength(u8),
    #[error("truncated token")]
    TruncatedToken,
    #[error("truncated option")]
    TruncatedOption,
    #[error("reserved option nibble 15")]
    ReservedNibble,
    #[error("option number overflow")]
    OptionOverflow,
    #[error("payload marker followed by no payload")]
    EmptyPayload,
    #[error("empty message with trailing bytes")]
    NonEmptyEmpty,
}

impl Message {
    pub fn new(mtype: MessageType, code: Code, message_id: u16) -> Self {
        Message {
            mtype,
            code,
            message_id,
            token: Vec::new(),
            options: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn request(mtype: MessageType, method: Code, path: &str) -> Self {
        let mut m = Message::new(mtype, method, 0);
        m.set_uri_path(path);
        m
    }

    /// Empty ACK or RST for a received message.
    pub fn empty(mtype: MessageType, message_id: u16) -> Self {
        Message::new(mtype, Code::EMPTY, message_id)
    }

    pub fn is_empty_message(&self) -> bool {
        self.code == Code::EMPTY
    }

    pub fn with_token(mut self, token: &[u8]) -> Self {
        self.token = token.to_vec();
        self
    }

    pub fn with_payload(mut self, payload: impl Into<Vec<u8>>) -> Self {
        self.payload = payload.into();
        self
    }

    /// Inserts after any options with the same or lower number.
    pub fn add_option(&mut self, number: u16, value: impl Into<Vec<u8>>) {
        let at = self.options.partition_point(|o| o.number <= number);
        self.options.insert(
            at,
            CoapOption {
                number,
                value: value.into(),
            },
        );
    }

    pub fn add_uint_option(&mut self, number: u16, value: u32) {
        self.add_option(number, encode_uint(value));
    }

    pub fn remove_option(&mut self, number: u16) {
        self.options.retain(|o| o.number != number);
    }

    pub fn option_values(&self, number: u16) -> impl Iterator<Item = &[u8]> {
        self.options
            .iter()
            .filter(move |o| o.number == number)
            .map(|o| o.value.as_slice())
    }

    pub fn uint_option(&self, number: u16) -> Option<u32> {
        self.option_values(number).next().map(decode_uint)
    }

    pub fn string_options(&self, number: u16) -> Vec<String> {
        self.option_values(number)
            .map(|v| String::from_utf8_lossy(v).into_owned())
            .collect()
    }

    pub fn set_uri_path(&mut self, path: &str) {
        self.remove_option(option::URI_PATH);
        for seg in path.split('/').filter(|s| !s.is_empty()) {
            self.add_option(option::URI_PATH, seg.as_bytes());
        }
    }

    pub fn uri_path(&self) -> Vec<String> {
        self.string_options(option::URI_PATH)
    }

    pub fn uri_query(&self) -> Vec<String> {
        self.string_options(option::URI_QUERY)
    }

    /// Value of the first `key=value` Uri-Query option with this key.
    pub fn query_value(&self, key: &str) -> Option<String> {
        self.uri_query()
            .into_iter()
            .find_map(|q| q.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
    }

    pub fn location_path(&self) -> Vec<String> {
        self.string_options(option::LOCATION_PATH)
    }

    pub fn content_format(&self) -> Option<u16> {
        self.uint_option(option::CONTENT_FORMAT).map(|v| v as u16)
    }

    pub fn set_content_format(&mut self, format: u16) {
        self.remove_option(option::CONTENT_FORMAT);
        self.add_uint_option(option::CONTENT_FORMAT, format as u32);
    }

    pub fn accept(&self) -> Option<u16> {
        self.uint_option(option::ACCEPT).map(|v| v as u16)
    }

    pub fn observe(&self) -> Option<u32> {
        self.uint_option(option::OBSERVE)
    }

    pub fn set_observe(&mut self, value: u32) {
        self.remove_option(option::OBSERVE);
        self.add_uint_option(option::OBSERVE, value & 0xFF_FFFF);
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        encode(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        decode(bytes)
    }
}

/// Shortest big-endian form; zero is the empty string.
pub fn encode_uint(value: u32) -> Vec<u8> {
    let bytes = value.to_be_bytes();
    let skip = bytes.iter().take_while(|b| **b == 0).count();
    bytes[skip..].to_vec()
}

pub fn decode_uint(bytes: &[u8]) -> u32 {
    bytes.iter().rev().take(4).rev().fold(0u32, |acc, b| (acc << 8) | *b as u32)
}

fn nibble(v: usize) -> Option<(u8, Vec<u8>)> {
    match v {
        0..=12 => Some((v as u8, Vec::new())),
        13..=268 => Some((13, vec![(v - 13) as u8])),
        269..=MAX_OPTION_EXT => Some((14, ((v - 269) as u16).to_be_bytes().to_vec())),
        _ => None,
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    if msg.token.len() > 8 {
        return Err(EncodeError::TokenTooLong);
    }
    if msg.code == Code::EMPTY && (!msg.token.is_empty() || !msg.options.is_empty() || !msg.payload.is_empty()) {
        return Err(EncodeError::NonEmptyEmpty);
    }
    let mut out = Vec::with_capacity(8 + msg.token.len() + msg.payload.len());
    out.push((VERSION << 6) | ((msg.mtype as u8) << 4) | msg.token.len() as u8);
    out.push(msg.code.0);
    out.extend_from_slice(&msg.message_id.to_be_bytes());
    out.extend_from_slice(&msg.token);

    let mut options: Vec<&CoapOption> = msg.options.iter().collect();
    options.sort_by_key(|o| o.number);
    let mut last = 0u16;
    for o in options {
        let delta = (o.number - last) as usize;
        let (dn, dx) = nibble(delta).ok_or(EncodeError::DeltaTooLarge(delta))?;
        let (ln, lx) = nibble(o.value.len()).ok_or(EncodeError::LengthTooLarge(o.value.len()))?;
        out.push((dn << 4) | ln);
        out.extend_from_slice(&dx);
        out.extend_from_slice(&lx);
        out.extend_from_slice(&o.value);
        last = o.number;
    }
    if !msg.payload.is_empty() {
        out.push(PAYLOAD_MARKER);
        out.extend_from_slice(&msg.payload);
    }
    Ok(out)
}

fn read_ext(n: u8, bytes: &[u8], pos: &mut usize) -> Result<usize, DecodeError> {
    match n {
        0..=12 => Ok(n as usize),
        13 => {
            let b = *bytes.get(*pos).ok_or(DecodeError::TruncatedOption)?;
            *pos += 1;
            Ok(b as usize + 13)
        }
        14 => {
            let hi = *bytes.get(*pos).ok_or(DecodeError::TruncatedOption)?;
            let lo = *bytes.get(*pos + 1).ok_or(DecodeError::TruncatedOption)?;
            *pos += 2;
            Ok(u16::from_be_bytes([hi, lo]) as usize + 269)
        }
        _ => Err(DecodeError::ReservedNibble),
    }
}

/// Total over byte strings: every input yields a message or an error.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::Short);
    }
    let version = bytes[0] >> 6;
    if version != VERSION {
        return Err(DecodeError::Version(version));
    }
    let tkl = bytes[0] & 0x0f;
    if tkl > 8 {
        return Err(DecodeError::TokenLength(tkl));
    }
    let mut msg = Message::new(
        MessageType::from_bits(bytes[0] >> 4),
        Code(bytes[1]),
        u16::from_be_bytes([bytes[2], bytes[3]]),
    );
    if msg.code == Code::EMPTY {
        return if bytes.len() == 4 && tkl == 0 {
            Ok(msg)
        } else {
            Err(DecodeError::NonEmptyEmpty)
        };
    }
    let mut pos = 4 + tkl as usize;
    msg.token = bytes.get(4..pos).ok_or(DecodeError::TruncatedToken)?.to_vec();

    let mut number = 0usize;
    while pos < bytes.len() {
        let head = bytes[pos];
        pos += 1;
        if head == PAYLOAD_MARKER {
            if pos == bytes.len() {
                return Err(DecodeError::EmptyPayload);
            }
            msg.payload = bytes[pos..].to_vec();
            break;
        }
        number += read_ext(head >> 4, bytes, &mut pos)?;
        let len = read_ext(head & 0x0f, bytes, &mut pos)?;
        if number > u16::MAX as usize {
            return Err(DecodeError::OptionOverflow);
        }
        let value = bytes.get(pos..pos + len).ok_or(DecodeError::TruncatedOption)?;
        pos += len;
        msg.options.push(CoapOption {
            number: number as u16,
            value: value.to_vec(),
        });
    }
    Ok(msg)
}
