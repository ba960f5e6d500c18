use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

use log::info;

use super::link::{parse_instance_links, parse_links, Link};
use super::payload::{
    decode_instance_json, decode_object_json, decode_resource_json, encode_instance_json, encode_resource_json,
    parse_value_text, value_format, value_text, Lwm2mContent,
};
use super::{request_for, Attributes, Lwm2mError};
use crate::coap::{content_format, option, Code, CoapConfig, CoapEndpoint, Message, MessageType};
use crate::object_model::{
    registry_build, InstanceType, Lwm2mOp, ModelError, ObjectRegistry, ObjectTypeDescriptor, ResourceContent,
    ResourcePath, ResourceValue,
};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub coap: CoapConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([0, 0, 0, 0], crate::coap::DEFAULT_PORT)),
            coap: CoapConfig::default(),
        }
    }
}

impl ServerConfig {
    /// Loopback on an ephemeral port.
    pub fn local() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationEntry {
    pub endpoint_name: String,
    pub peer: SocketAddr,
    pub lifetime: Duration,
    /// Server-assigned path, e.g. `rd/3`.
    pub location: String,
    pub links: Vec<(u16, u16)>,
    pub registered_at: Instant,
    pub last_update: Instant,
    pub updates: u64,
}

impl RegistrationEntry {
    pub fn expires_at(&self) -> Instant {
        self.last_update + self.lifetime
    }
}

/// A notification delivered to an observer callback.
#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub endpoint: String,
    pub path: ResourcePath,
    pub seq: u32,
    pub code: Code,
    pub content: Option<Lwm2mContent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub endpoint: String,
    pub path: ResourcePath,
    pub token: Vec<u8>,
    pub initial: Lwm2mContent,
    pub initial_seq: u32,
}

#[derive(Default)]
struct Directory {
    by_name: HashMap<String, RegistrationEntry>,
    next_id: u32,
    /// Locations stay with an endpoint name for the server's lifetime.
    locations: HashMap<String, String>,
}

impl Directory {
    fn expire(&mut self, now: Instant) {
        self.by_name.retain(|name, e| {
            let live = e.expires_at() > now;
            if !live {
                info!("registration of {name} expired");
            }
            live
        });
    }

    fn by_location(&mut self, location: &str) -> Option<&mut RegistrationEntry> {
        self.by_name.values_mut().find(|e| e.location == location)
    }
}

struct ServerInner {
    endpoint: CoapEndpoint,
    directory: Mutex<Directory>,
    registered: Condvar,
    model: ObjectRegistry,
}

/// The server half: registration directory plus operations on registered clients.
pub struct Lwm2mServer {
    inner: Arc<ServerInner>,
}

/// RFC 7641 freshness: is `new` later than `old` in 24-bit sequence space?
fn fresher(old: u32, new: u32) -> bool {
    const HALF: u32 = 1 << 23;
    (old < new && new - old < HALF) || (old > new && old - new > HALF)
}

impl Lwm2mServer {
    /// `descriptors` are the object types clients may expose; they are used
    /// to decode values.
    pub fn start(config: ServerConfig, descriptors: &[ObjectTypeDescriptor]) -> Result<Self, Lwm2mError> {
        let model = registry_build(descriptors).map_err(|e: ModelError| Lwm2mError::Decode(e.to_string()))?;
        let endpoint = CoapEndpoint::bind(config.bind, config.coap)?;
        let inner = Arc::new(ServerInner {
            endpoint,
            directory: Mutex::new(Directory::default()),
            registered: Condvar::new(),
            model,
        });
        let weak: Weak<ServerInner> = Arc::downgrade(&inner);
        inner.endpoint.serve(Arc::new(move |req: &Message, peer| match weak.upgrade() {
            Some(s) => s.handle_registration(req, peer),
            None => Message::new(MessageType::Ack, Code::INTERNAL_SERVER_ERROR, 0),
        }));
        Ok(Lwm2mServer { inner })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.inner.endpoint.local_addr()
    }

    pub fn model(&self) -> &ObjectRegistry {
        &self.inner.model
    }

    pub fn registration(&self, endpoint: &str) -> Option<RegistrationEntry> {
        let mut dir = self.inner.directory.lock().unwrap();
        dir.expire(Instant::now());
        dir.by_name.get(endpoint).cloned()
    }

    pub fn registrations(&self) -> Vec<RegistrationEntry> {
        let mut dir = self.inner.directory.lock().unwrap();
        dir.expire(Instant::now());
        let mut v: Vec<_> = dir.by_name.values().cloned().collect();
        v.sort_by(|a, b| a.endpoint_name.cmp(&b.endpoint_name));
        v
    }

    /// Blocks until every named endpoint is registered, or the timeout passes.
    pub fn wait_registered(&self, endpoints: &[&str], timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut dir = self.inner.directory.lock().unwrap();
        loop {
            dir.expire(Instant::now());
            if endpoints.iter().all(|e| dir.by_name.contains_key(*e)) {
                return true;
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return false;
            }
            dir = self.inner.registered.wait_timeout(dir, left).unwrap().0;
        }
    }

    fn peer(&self, endpoint: &str) -> Result<SocketAddr, Lwm2mError> {
        self.registration(endpoint)
            .map(|e| e.peer)
            .ok_or_else(|| Lwm2mError::Unregistered(endpoint.to_string()))
    }

    /// Sends a request to a registered client and returns the raw response.
    pub fn request(&self, endpoint: &str, msg: Message) -> Result<Message, Lwm2mError> {
        let peer = self.peer(endpoint)?;
        Ok(self.inner.endpoint.request(peer, msg)?)
    }

    fn expect(&self, endpoint: &str, msg: Message, ok: Code) -> Result<Message, Lwm2mError> {
        let resp = self.request(endpoint, msg)?;
        if resp.code == ok {
            Ok(resp)
        } else {
            Err(Lwm2mError::Status(resp.code))
        }
    }

    pub fn read(&self, endpoint: &str, path: &ResourcePath) -> Result<Lwm2mContent, Lwm2mError> {
        let resp = self.expect(endpoint, request_for(Lwm2mOp::Read, path), Code::CONTENT)?;
        self.decode(path, &resp)
    }

    /// Reads a single-instance resource.
    pub fn read_value(&self, endpoint: &str, path: &ResourcePath) -> Result<ResourceValue, Lwm2mError> {
        match self.read(endpoint, path)? {
            Lwm2mContent::Resource(ResourceContent::Single(v)) => Ok(v),
            other => Err(Lwm2mError::Decode(format!("expected one value, got {other:?}"))),
        }
    }

    pub fn write(&self, endpoint: &str, path: &ResourcePath, value: &ResourceValue) -> Result<(), Lwm2mError> {
        let mut req = request_for(Lwm2mOp::Write, path);
        req.set_content_format(value_format(value.value_type()));
        req.payload = value_text(value);
        self.expect(endpoint, req, Code::CHANGED).map(|_| ())
    }

    /// Writes a multiple-instance resource as a whole.
    pub fn write_content(&self, endpoint: &str, path: &ResourcePath, content: &ResourceContent) -> Result<(), Lwm2mError> {
        let mut req = request_for(Lwm2mOp::Write, path);
        req.set_content_format(content_format::JSON);
        req.payload = encode_resource_json(content);
        self.expect(endpoint, req, Code::CHANGED).map(|_| ())
    }

    pub fn write_instance(
        &self,
        endpoint: &str,
        path: &ResourcePath,
        values: &BTreeMap<u16, ResourceContent>,
    ) -> Result<(), Lwm2mError> {
        let mut req = request_for(Lwm2mOp::Write, path);
        req.set_content_format(content_format::JSON);
        req.payload = encode_instance_json(values);
        self.expect(endpoint, req, Code::CHANGED).map(|_| ())
    }

    pub fn execute(&self, endpoint: &str, path: &ResourcePath, argument: Option<&[u8]>) -> Result<(), Lwm2mError> {
        let mut req = request_for(Lwm2mOp::Execute, path);
        if let Some(arg) = argument {
            req.payload = arg.to_vec();
        }
        self.expect(endpoint, req, Code::CHANGED).map(|_| ())
    }

    pub fn discover(&self, endpoint: &str, path: &ResourcePath) -> Result<Vec<Link>, Lwm2mError> {
        let resp = self.expect(endpoint, request_for(Lwm2mOp::Discover, path), Code::CONTENT)?;
        let text = String::from_utf8(resp.payload).map_err(|e| Lwm2mError::Decode(e.to_string()))?;
        parse_links(&text).map_err(|e| Lwm2mError::Decode(e.to_string()))
    }

    pub fn write_attributes(&self, endpoint: &str, path: &ResourcePath, attrs: Attributes) -> Result<(), Lwm2mError> {
        let mut req = request_for(Lwm2mOp::WriteAttributes, path);
        if let Some(v) = attrs.pmin {
            req.add_option(option::URI_QUERY, format!("pmin={v}").into_bytes());
        }
        if let Some(v) = attrs.pmax {
            req.add_option(option::URI_QUERY, format!("pmax={v}").into_bytes());
        }
        self.expect(endpoint, req, Code::CHANGED).map(|_| ())
    }

    /// Creates an instance and returns the id the client allocated.
    pub fn create(
        &self,
        endpoint: &str,
        object_id: u16,
        initial: &BTreeMap<u16, ResourceContent>,
    ) -> Result<u16, Lwm2mError> {
        let mut req = request_for(Lwm2mOp::Create, &ResourcePath::object(object_id));
        if !initial.is_empty() {
            req.set_content_format(content_format::JSON);
            req.payload = encode_instance_json(initial);
        }
        let resp = self.expect(endpoint, req, Code::CREATED)?;
        resp.location_path()
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Lwm2mError::Decode("created instance has no location".into()))
    }

    pub fn delete(&self, endpoint: &str, path: &ResourcePath) -> Result<(), Lwm2mError> {
        self.expect(endpoint, request_for(Lwm2mOp::Delete, path), Code::DELETED)
            .map(|_| ())
    }

    /// Starts observing; `on_notify` runs for every later notification
    /// (stale or duplicate sequence numbers are dropped).
    pub fn observe(
        &self,
        endpoint: &str,
        path: &ResourcePath,
        on_notify: impl Fn(Notification) + Send + Sync + 'static,
    ) -> Result<Observation, Lwm2mError> {
        let peer = self.peer(endpoint)?;
        let token = self.inner.endpoint.new_token();
        let last_seq = Arc::new(Mutex::new(None::<u32>));
        let weak = Arc::downgrade(&self.inner);
        let (ep, p, seqs) = (endpoint.to_string(), *path, last_seq.clone());
        self.inner.endpoint.listen_token(
            &token,
            Arc::new(move |msg: &Message, _| {
                let Some(inner) = weak.upgrade() else { return };
                let seq = msg.observe().unwrap_or(0);
                {
                    let mut last = seqs.lock().unwrap();
                    if msg.code.is_success() {
                        if last.is_some_and(|l| !fresher(l, seq)) {
                            return;
                        }
                        *last = Some(seq);
                    }
                }
                let content = if msg.code.is_success() {
                    decode_content(&inner.model, &p, msg).ok()
                } else {
                    inner.endpoint.forget_token(&msg.token);
                    None
                };
                on_notify(Notification {
                    endpoint: ep.clone(),
                    path: p,
                    seq,
                    code: msg.code,
                    content,
                });
            }),
        );
        let req = request_for(Lwm2mOp::Observe, path).with_token(&token);
        let resp = match self.inner.endpoint.request(peer, req) {
            Ok(r) => r,
            Err(e) => {
                self.inner.endpoint.forget_token(&token);
                return Err(e.into());
            }
        };
        if resp.code != Code::CONTENT || resp.observe().is_none() {
            self.inner.endpoint.forget_token(&token);
            return Err(Lwm2mError::Status(resp.code));
        }
        let initial_seq = resp.observe().unwrap_or(0);
        {
            let mut last = last_seq.lock().unwrap();
            if last.map_or(true, |l| fresher(l, initial_seq)) {
                *last = Some(initial_seq);
            }
        }
        Ok(Observation {
            endpoint: endpoint.to_string(),
            path: *path,
            token,
            initial: self.decode(path, &resp)?,
            initial_seq,
        })
    }

    /// Cancels with a GET carrying Observe=1; returns the current value.
    pub fn cancel_observe(&self, obs: &Observation) -> Result<Lwm2mContent, Lwm2mError> {
        self.inner.endpoint.forget_token(&obs.token);
        let mut req = request_for(Lwm2mOp::Read, &obs.path).with_token(&obs.token);
        req.set_observe(1);
        let resp = self.expect(&obs.endpoint, req, Code::CONTENT)?;
        self.decode(&obs.path, &resp)
    }

    fn decode(&self, path: &ResourcePath, resp: &Message) -> Result<Lwm2mContent, Lwm2mError> {
        decode_content(&self.inner.model, path, resp)
    }

    pub fn shutdown(&self) {
        self.inner.endpoint.shutdown();
    }
}

impl Drop for Lwm2mServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn decode_content(model: &ObjectRegistry, path: &ResourcePath, resp: &Message) -> Result<Lwm2mContent, Lwm2mError> {
    let ty = model
        .object_type(path.object_id)
        .ok_or_else(|| Lwm2mError::Decode(format!("object {} is not described", path.object_id)))?;
    let err = |e: super::payload::PayloadError| Lwm2mError::Decode(e.to_string());
    match (path.instance_id, path.resource_id) {
        (None, _) => Ok(Lwm2mContent::Object(decode_object_json(&resp.payload, ty).map_err(err)?)),
        (Some(_), None) => Ok(Lwm2mContent::Instance(decode_instance_json(&resp.payload, ty).map_err(err)?)),
        (Some(_), Some(r)) => {
            let rd = ty
                .resource(r)
                .ok_or_else(|| Lwm2mError::Decode(format!("resource {r} is not described")))?;
            let multiple = rd.instance_type == InstanceType::Multiple && path.resource_instance_id.is_none();
            let content = if resp.content_format() == Some(content_format::JSON) {
                decode_resource_json(&resp.payload, rd.value_type, multiple).map_err(err)?
            } else {
                ResourceContent::Single(parse_value_text(&resp.payload, rd.value_type).map_err(err)?)
            };
            Ok(Lwm2mContent::Resource(content))
        }
    }
}

impl ServerInner {
    fn handle_registration(&self, req: &Message, peer: SocketAddr) -> Message {
        let path = req.uri_path();
        let code = match (req.code, path.as_slice()) {
            (Code::POST, [rd]) if rd == "rd" => return self.register(req, peer),
            (Code::POST, [rd, id]) if rd == "rd" => self.update(&format!("rd/{id}"), req, peer),
            (Code::DELETE, [rd, id]) if rd == "rd" => self.deregister(&format!("rd/{id}")),
            _ => Code::NOT_FOUND,
        };
        Message::new(MessageType::Ack, code, 0)
    }

    fn register(&self, req: &Message, peer: SocketAddr) -> Message {
        let bad = Message::new(MessageType::Ack, Code::BAD_REQUEST, 0);
        let Some(name) = req.query_value("ep").filter(|n| !n.is_empty()) else {
            return bad;
        };
        let lifetime = match req.query_value("lt").map(|v| v.parse::<u32>()) {
            None => 86_400,
            Some(Ok(v)) if v > 0 => v,
            _ => return bad,
        };
        let Ok(links) = std::str::from_utf8(&req.payload)
            .map_err(|_| ())
            .and_then(|t| parse_instance_links(t).map_err(|_| ()))
        else {
            return bad;
        };
        let now = Instant::now();
        let mut dir = self.directory.lock().unwrap();
        dir.expire(now);
        let location = match dir.locations.get(&name) {
            Some(l) => l.clone(),
            None => {
                dir.next_id += 1;
                let l = format!("rd/{}", dir.next_id);
                dir.locations.insert(name.clone(), l.clone());
                l
            }
        };
        info!("{name} registered from {peer} at /{location}, lifetime {lifetime} s");
        dir.by_name.insert(
            name.clone(),
            RegistrationEntry {
                endpoint_name: name,
                peer,
                lifetime: Duration::from_secs(lifetime as u64),
                location: location.clone(),
                links,
                registered_at: now,
                last_update: now,
                updates: 0,
            },
        );
        self.registered.notify_all();
        let mut resp = Message::new(MessageType::Ack, Code::CREATED, 0);
        for seg in location.split('/') {
            resp.add_option(option::LOCATION_PATH, seg.as_bytes());
        }
        resp
    }

    fn update(&self, location: &str, req: &Message, peer: SocketAddr) -> Code {
        let lifetime = match req.query_value("lt").map(|v| v.parse::<u32>()) {
            None => None,
            Some(Ok(v)) if v > 0 => Some(v),
            _ => return Code::BAD_REQUEST,
        };
        let links = if req.payload.is_empty() {
            None
        } else {
            match std::str::from_utf8(&req.payload).ok().and_then(|t| parse_instance_links(t).ok()) {
                Some(l) => Some(l),
                None => return Code::BAD_REQUEST,
            }
        };
        let now = Instant::now();
        let mut dir = self.directory.lock().unwrap();
        dir.expire(now);
        let Some(entry) = dir.by_location(location) else {
            return Code::NOT_FOUND;
        };
        entry.peer = peer;
        entry.last_update = now;
        entry.updates += 1;
        if let Some(lt) = lifetime {
            entry.lifetime = Duration::from_secs(lt as u64);
        }
        if let Some(l) = links {
            entry.links = l;
        }
        self.registered.notify_all();
        Code::CHANGED
    }

    fn deregister(&self, location: &str) -> Code {
        let mut dir = self.directory.lock().unwrap();
        dir.expire(Instant::now());
        let name = dir.by_location(location).map(|e| e.endpoint_name.clone());
        match name {
            Some(n) => {
                info!("{n} deregistered");
                dir.by_name.remove(&n);
                Code::DELETED
            }
            None => Code::NOT_FOUND,
        }
    }
}
