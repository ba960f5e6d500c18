//! LWM2M client and server over CoAP.
//!
//! The client serves a [`DispatchTable`](crate::wrapper_gen::DispatchTable)
//! and registers it with a server; the server keeps the registration
//! directory and issues device management, service enablement and observe
//! requests against registered clients.

mod client;
pub mod link;
pub mod payload;
mod server;

use std::time::Duration;

use thiserror::Error;

pub use client::{ChangeSignal, ClientConfig, Lwm2mClient};
pub use payload::Lwm2mContent;
pub use server::{Lwm2mServer, Notification, Observation, RegistrationEntry, ServerConfig};

use crate::coap::{option, Code, CoapError, Message, MessageType};
use crate::object_model::{parse_path, Depth, Lwm2mOp, ResourcePath};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Lwm2mError {
    #[error("client answered {0}")]
    Status(Code),
    #[error("registration rejected with {0}")]
    Rejected(Code),
    #[error("no response")]
    Timeout,
    #[error("peer reset the exchange")]
    Reset,
    #[error("endpoint {0} is not registered")]
    Unregistered(String),
    #[error("cannot decode response: {0}")]
    Decode(String),
    #[error("attributes need pmin <= pmax")]
    BadAttributes,
    #[error(transparent)]
    Coap(CoapError),
}

impl From<CoapError> for Lwm2mError {
    fn from(e: CoapError) -> Self {
        match e {
            CoapError::Timeout => Lwm2mError::Timeout,
            CoapError::Reset => Lwm2mError::Reset,
            other => Lwm2mError::Coap(other),
        }
    }
}

/// The CoAP method each operation travels as.
pub fn method_for(op: Lwm2mOp) -> Code {
    match op {
        Lwm2mOp::Read | Lwm2mOp::Discover | Lwm2mOp::Observe => Code::GET,
        Lwm2mOp::Write | Lwm2mOp::WriteAttributes => Code::PUT,
        Lwm2mOp::Execute | Lwm2mOp::Create => Code::POST,
        Lwm2mOp::Delete => Code::DELETE,
    }
}

/// Observe/notification attributes. Values are seconds; decimals are accepted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Attributes {
    pub pmin: Option<f64>,
    pub pmax: Option<f64>,
}

impl Attributes {
    pub fn is_valid(&self) -> bool {
        let nonneg = |v: Option<f64>| v.map_or(true, |x| x.is_finite() && x >= 0.0);
        nonneg(self.pmin)
            && nonneg(self.pmax)
            && match (self.pmin, self.pmax) {
                (Some(a), Some(b)) => a <= b,
                _ => true,
            }
    }

    pub fn pmin_duration(&self) -> Option<Duration> {
        self.pmin.map(Duration::from_secs_f64)
    }

    pub fn pmax_duration(&self) -> Option<Duration> {
        self.pmax.map(Duration::from_secs_f64)
    }

    pub fn merged_over(self, base: Attributes) -> Attributes {
        Attributes {
            pmin: self.pmin.or(base.pmin),
            pmax: self.pmax.or(base.pmax),
        }
    }
}

/// How an incoming request reads as an LWM2M operation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Classified {
    Op(Lwm2mOp, ResourcePath),
    CancelObserve(ResourcePath),
    Attributes(ResourcePath, Attributes),
}

/// Maps method, options and path of a request to an operation. `Err`
/// carries the response code for requests that are not LWM2M operations.
pub(crate) fn classify(req: &Message) -> Result<Classified, Code> {
    let segments = req.uri_path();
    let path = parse_path(&segments.join("/")).map_err(|_| Code::NOT_FOUND)?;
    let op = match req.code {
        Code::GET => match req.observe() {
            Some(0) => Lwm2mOp::Observe,
            Some(1) => return Ok(Classified::CancelObserve(path)),
            Some(_) => return Err(Code::BAD_REQUEST),
            None if req.accept() == Some(crate::coap::content_format::LINK_FORMAT) => Lwm2mOp::Discover,
            None => Lwm2mOp::Read,
        },
        Code::PUT => {
            let queries = req.uri_query();
            if req.payload.is_empty() && !queries.is_empty() {
                return parse_attributes(&queries).map(|a| Classified::Attributes(path, a));
            }
            Lwm2mOp::Write
        }
        Code::POST if path.depth() == Depth::Object => Lwm2mOp::Create,
        Code::POST => Lwm2mOp::Execute,
        Code::DELETE => Lwm2mOp::Delete,
        _ => return Err(Code::METHOD_NOT_ALLOWED),
    };
    Ok(Classified::Op(op, path))
}

fn parse_attributes(queries: &[String]) -> Result<Attributes, Code> {
    let mut attrs = Attributes::default();
    for q in queries {
        let (k, v) = q.split_once('=').ok_or(Code::BAD_REQUEST)?;
        let value: f64 = v.parse().map_err(|_| Code::BAD_REQUEST)?;
        match k {
            "pmin" => attrs.pmin = Some(value),
            "pmax" => attrs.pmax = Some(value),
            _ => return Err(Code::BAD_REQUEST),
        }
    }
    if attrs.is_valid() {
        Ok(attrs)
    } else {
        Err(Code::BAD_REQUEST)
    }
}

/// A request for `op` on `path`, without payload.
pub fn request_for(op: Lwm2mOp, path: &ResourcePath) -> Message {
    let mut m = Message::request(MessageType::Con, method_for(op), &path.to_string());
    match op {
        Lwm2mOp::Discover => m.add_uint_option(option::ACCEPT, crate::coap::content_format::LINK_FORMAT as u32),
        Lwm2mOp::Observe => m.set_observe(0),
        _ => {}
    }
    m
}
