//! CoAP over UDP: message codec and an endpoint with confirmable
//! retransmission and duplicate detection.

mod endpoint;
mod message;

pub use endpoint::{
    CoapConfig, CoapEndpoint, CoapError, EndpointStats, NotificationHandler, RequestHandler, ResetHandler,
};
pub use message::{
    content_format, decode, decode_uint, encode, encode_uint, option, Code, CoapOption, DecodeError, EncodeError,
    Message, MessageType, MAX_OPTION_EXT, PAYLOAD_MARKER, VERSION,
};

/// Default UDP port.
pub const DEFAULT_PORT: u16 = 5683;
