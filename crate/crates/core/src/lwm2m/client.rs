use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock, RwLockReadGuard, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::link::{instance_links, render_links, Link};
use super::payload::{
    decode_instance_json, decode_object_json, decode_resource_json, encode_instance_json, encode_object_json,
    encode_resource_json, parse_value_text, value_format, value_text,
};
use super::{classify, Attributes, Classified, Lwm2mError};
use crate::coap::{content_format, option, Code, CoapConfig, CoapEndpoint, Message, MessageType};
use crate::object_model::{
    legality_check, Depth, InstanceType, Lwm2mOp, ResourceContent, ResourceDescriptor, ResourceOp, ResourcePath,
    Violation,
};
use crate::wrapper_gen::{DispatchError, DispatchTable};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub endpoint_name: String,
    pub server: SocketAddr,
    /// Registration lifetime in seconds.
    pub lifetime: u32,
    pub bind: SocketAddr,
    pub coap: CoapConfig,
    /// Defaults to half the lifetime.
    pub update_interval: Option<Duration>,
    /// How often observed values are re-read when no change is signalled.
    pub observe_poll: Duration,
}

impl ClientConfig {
    pub fn new(endpoint_name: impl Into<String>, server: SocketAddr) -> Self {
        ClientConfig {
            endpoint_name: endpoint_name.into(),
            server,
            lifetime: 60,
            bind: "127.0.0.1:0".parse().unwrap(),
            coap: CoapConfig::default(),
            update_interval: None,
            observe_poll: Duration::from_millis(20),
        }
    }

    pub fn update_period(&self) -> Duration {
        self.update_interval
            .unwrap_or_else(|| Duration::from_secs_f64(self.lifetime as f64 / 2.0))
    }
}

/// Wakes the notifier when component state may have changed.
#[derive(Clone, Default)]
pub struct ChangeSignal(Arc<(Mutex<u64>, Condvar)>);

impl ChangeSignal {
    pub fn notify(&self) {
        let (m, cv) = &*self.0;
        *m.lock().unwrap() += 1;
        cv.notify_all();
    }

    fn wait(&self, seen: u64, timeout: Duration) -> u64 {
        let (m, cv) = &*self.0;
        let guard = m.lock().unwrap();
        let (guard, _) = cv.wait_timeout_while(guard, timeout, |v| *v == seen).unwrap();
        *guard
    }
}

struct Relation {
    path: ResourcePath,
    seq: u32,
    last_sent: Instant,
    last_payload: Vec<u8>,
}

#[derive(Default)]
struct UpdaterState {
    running: bool,
    stop: bool,
    dirty: bool,
}

struct ClientInner {
    config: ClientConfig,
    endpoint: CoapEndpoint,
    table: RwLock<DispatchTable>,
    serial: Mutex<()>,
    relations: Mutex<HashMap<(SocketAddr, Vec<u8>), Relation>>,
    attributes: Mutex<HashMap<ResourcePath, Attributes>>,
    location: Mutex<Option<String>>,
    signal: ChangeSignal,
    updater: Mutex<UpdaterState>,
    updater_cv: Condvar,
    stopping: AtomicBool,
    threads: Mutex<Vec<JoinHandle<()>>>,
    updates_sent: AtomicU64,
}

/// The client half: serves a dispatch table and keeps it registered.
pub struct Lwm2mClient {
    inner: Arc<ClientInner>,
}

type Reply = (Code, Option<u16>, Vec<u8>);

fn status(code: Code) -> Reply {
    (code, None, Vec::new())
}

fn violation_code(v: &Violation) -> Code {
    match v {
        Violation::UnknownPath(_) => Code::NOT_FOUND,
        _ => Code::METHOD_NOT_ALLOWED,
    }
}

fn dispatch_code(e: &DispatchError) -> Code {
    match e {
        DispatchError::UnknownInstance(..)
        | DispatchError::UnknownResource(..)
        | DispatchError::Unbound(..)
        | DispatchError::UnknownObject(_) => Code::NOT_FOUND,
        DispatchError::NotSupported(..) | DispatchError::SingleInstance(_) => Code::METHOD_NOT_ALLOWED,
        DispatchError::InstanceExists(..) => Code::BAD_REQUEST,
        DispatchError::TypeMismatch { .. } | DispatchError::Handler(_) => Code::INTERNAL_SERVER_ERROR,
    }
}

fn write_code(e: &DispatchError) -> Code {
    match e {
        DispatchError::TypeMismatch { .. } => Code::BAD_REQUEST,
        other => dispatch_code(other),
    }
}

fn ops_letters(rd: &ResourceDescriptor) -> String {
    rd.operations.letters()
}

impl Lwm2mClient {
    /// Binds the client's socket and starts answering requests. Registration
    /// is separate: see [`connect`](Self::connect).
    pub fn start(table: DispatchTable, config: ClientConfig) -> Result<Self, Lwm2mError> {
        let endpoint = CoapEndpoint::bind(config.bind, config.coap.clone())?;
        let inner = Arc::new(ClientInner {
            config,
            endpoint,
            table: RwLock::new(table),
            serial: Mutex::new(()),
            relations: Mutex::new(HashMap::new()),
            attributes: Mutex::new(HashMap::new()),
            location: Mutex::new(None),
            signal: ChangeSignal::default(),
            updater: Mutex::new(UpdaterState::default()),
            updater_cv: Condvar::new(),
            stopping: AtomicBool::new(false),
            threads: Mutex::new(Vec::new()),
            updates_sent: AtomicU64::new(0),
        });
        let weak: Weak<ClientInner> = Arc::downgrade(&inner);
        inner.endpoint.serve(Arc::new(move |req: &Message, peer| match weak.upgrade() {
            Some(c) => c.respond(req, peer),
            None => Message::new(MessageType::Ack, Code::INTERNAL_SERVER_ERROR, 0),
        }));
        let weak = Arc::downgrade(&inner);
        inner.endpoint.on_reset(Arc::new(move |peer, token: &[u8]| {
            if let Some(c) = weak.upgrade() {
                c.relations.lock().unwrap().remove(&(peer, token.to_vec()));
            }
        }));
        let notifier = inner.clone();
        let handle = thread::Builder::new()
            .name(format!("lwm2m-notify-{}", inner.config.endpoint_name))
            .spawn(move || notifier.notify_loop())
            .map_err(|e| Lwm2mError::Coap(e.into()))?;
        inner.threads.lock().unwrap().push(handle);
        Ok(Lwm2mClient { inner })
    }

    pub fn endpoint_name(&self) -> &str {
        &self.inner.config.endpoint_name
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.inner.endpoint.local_addr()
    }

    pub fn table(&self) -> RwLockReadGuard<'_, DispatchTable> {
        self.inner.table.read().unwrap()
    }

    /// Handle for telling the notifier that state changed.
    pub fn change_signal(&self) -> ChangeSignal {
        self.inner.signal.clone()
    }

    pub fn location(&self) -> Option<String> {
        self.inner.location.lock().unwrap().clone()
    }

    pub fn updates_sent(&self) -> u64 {
        self.inner.updates_sent.load(Ordering::SeqCst)
    }

    /// Answers one request without the network. CON requests get a
    /// piggy-backed ACK with the same message id and token.
    pub fn handle_request(&self, req: &Message) -> Message {
        let peer = SocketAddr::from(([0, 0, 0, 0], 0));
        let mut resp = self.inner.respond(req, peer);
        resp.mtype = if req.mtype == MessageType::Con {
            MessageType::Ack
        } else {
            MessageType::Non
        };
        resp.message_id = req.message_id;
        resp.token = req.token.clone();
        resp
    }

    /// Registration payload: every object instance in the table.
    pub fn registration_links(&self) -> String {
        self.inner.links()
    }

    pub fn register(&self) -> Result<String, Lwm2mError> {
        self.inner.register()
    }

    pub fn update(&self) -> Result<(), Lwm2mError> {
        self.inner.update(false)
    }

    /// Registers and keeps the registration alive from a background thread.
    pub fn connect(&self) -> Result<String, Lwm2mError> {
        let loc = self.inner.register()?;
        self.start_updates();
        Ok(loc)
    }

    pub fn start_updates(&self) {
        let mut st = self.inner.updater.lock().unwrap();
        if st.running {
            return;
        }
        st.running = true;
        st.stop = false;
        drop(st);
        let inner = self.inner.clone();
        let handle = thread::Builder::new()
            .name(format!("lwm2m-update-{}", self.inner.config.endpoint_name))
            .spawn(move || inner.update_loop())
            .expect("spawn updater");
        self.inner.threads.lock().unwrap().push(handle);
    }

    /// Stops sending updates; the server expires the entry after its lifetime.
    pub fn stop_updates(&self) {
        let mut st = self.inner.updater.lock().unwrap();
        st.stop = true;
        self.inner.updater_cv.notify_all();
        drop(st);
        let me = thread::current().id();
        let mut threads = self.inner.threads.lock().unwrap();
        let (updaters, rest): (Vec<_>, Vec<_>) = threads
            .drain(..)
            .partition(|t| t.thread().name().is_some_and(|n| n.starts_with("lwm2m-update")));
        *threads = rest;
        drop(threads);
        for t in updaters {
            if t.thread().id() != me {
                let _ = t.join();
            }
        }
        self.inner.updater.lock().unwrap().running = false;
    }

    pub fn deregister(&self) -> Result<(), Lwm2mError> {
        self.stop_updates();
        let Some(loc) = self.inner.location.lock().unwrap().take() else {
            return Ok(());
        };
        let req = Message::request(MessageType::Con, Code::DELETE, &loc);
        let resp = self.inner.endpoint.request(self.inner.config.server, req)?;
        if resp.code == Code::DELETED {
            Ok(())
        } else {
            Err(Lwm2mError::Rejected(resp.code))
        }
    }

    pub fn shutdown(&self) {
        self.stop_updates();
        self.inner.stopping.store(true, Ordering::SeqCst);
        self.inner.signal.notify();
        let me = thread::current().id();
        for t in self.inner.threads.lock().unwrap().drain(..) {
            if t.thread().id() != me {
                let _ = t.join();
            }
        }
        self.inner.endpoint.shutdown();
    }
}

impl Drop for Lwm2mClient {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl ClientInner {
    fn links(&self) -> String {
        instance_links(self.table.read().unwrap().instances())
    }

    fn register(&self) -> Result<String, Lwm2mError> {
        let cfg = &self.config;
        let mut req = Message::request(MessageType::Con, Code::POST, "rd");
        for q in [
            format!("ep={}", cfg.endpoint_name),
            format!("lt={}", cfg.lifetime),
            "lwm2m=1.0".to_string(),
            "b=U".to_string(),
        ] {
            req.add_option(option::URI_QUERY, q.into_bytes());
        }
        req.set_content_format(content_format::LINK_FORMAT);
        req.payload = self.links().into_bytes();
        let resp = self.endpoint.request(cfg.server, req)?;
        if resp.code != Code::CREATED {
            return Err(Lwm2mError::Rejected(resp.code));
        }
        let loc = resp.location_path().join("/");
        info!("{} registered at /{loc}", cfg.endpoint_name);
        *self.location.lock().unwrap() = Some(loc.clone());
        Ok(loc)
    }

    fn update(&self, with_links: bool) -> Result<(), Lwm2mError> {
        let Some(loc) = self.location.lock().unwrap().clone() else {
            return self.register().map(|_| ());
        };
        let mut req = Message::request(MessageType::Con, Code::POST, &loc);
        req.add_option(option::URI_QUERY, format!("lt={}", self.config.lifetime).into_bytes());
        if with_links {
            req.set_content_format(content_format::LINK_FORMAT);
            req.payload = self.links().into_bytes();
        }
        let resp = self.endpoint.request(self.config.server, req)?;
        self.updates_sent.fetch_add(1, Ordering::SeqCst);
        match resp.code {
            Code::CHANGED => Ok(()),
            Code::NOT_FOUND => {
                debug!("{}: registration gone, registering again", self.config.endpoint_name);
                self.register().map(|_| ())
            }
            other => Err(Lwm2mError::Rejected(other)),
        }
    }

    fn update_loop(&self) {
        let period = self.config.update_period();
        let mut next = Instant::now() + period;
        loop {
            let mut st = self.updater.lock().unwrap();
            while !st.stop && !st.dirty {
                let left = next.saturating_duration_since(Instant::now());
                if left.is_zero() {
                    break;
                }
                st = self.updater_cv.wait_timeout(st, left).unwrap().0;
            }
            if st.stop {
                return;
            }
            let dirty = std::mem::take(&mut st.dirty);
            drop(st);
            if let Err(e) = self.update(dirty) {
                warn!("{}: registration update failed: {e}", self.config.endpoint_name);
            }
            next = Instant::now() + period;
        }
    }

    fn mark_links_dirty(&self) {
        let mut st = self.updater.lock().unwrap();
        st.dirty = true;
        self.updater_cv.notify_all();
    }

    fn attributes_for(&self, path: &ResourcePath) -> Attributes {
        let attrs = self.attributes.lock().unwrap();
        let mut out = Attributes::default();
        let mut p = Some(*path);
        while let Some(cur) = p {
            if let Some(a) = attrs.get(&cur) {
                out = out.merged_over(*a);
            }
            p = parent(&cur);
        }
        out
    }

    fn respond(&self, req: &Message, peer: SocketAddr) -> Message {
        let (code, format, payload, observe) = self.respond_parts(req, peer);
        let mut resp = Message::new(MessageType::Ack, code, 0);
        if let Some(seq) = observe {
            resp.set_observe(seq);
        }
        if let Some(cf) = format {
            resp.set_content_format(cf);
        }
        if code == Code::CREATED {
            if let Some(loc) = created_location(&payload) {
                for seg in loc {
                    resp.add_option(option::LOCATION_PATH, seg.into_bytes());
                }
                return resp;
            }
        }
        resp.payload = payload;
        resp
    }

    fn respond_parts(&self, req: &Message, peer: SocketAddr) -> (Code, Option<u16>, Vec<u8>, Option<u32>) {
        let _serial = self.serial.lock().unwrap();
        let classified = match classify(req) {
            Ok(c) => c,
            Err(code) => return (code, None, Vec::new(), None),
        };
        let with_obs = |(c, f, p): Reply, obs| (c, f, p, obs);
        match classified {
            Classified::Attributes(path, attrs) => {
                let table = self.table.read().unwrap();
                if let Err(v) = legality_check(Lwm2mOp::WriteAttributes, &path, table.registry()) {
                    return (violation_code(&v), None, Vec::new(), None);
                }
                let mut stored = self.attributes.lock().unwrap();
                let merged = attrs.merged_over(stored.get(&path).copied().unwrap_or_default());
                if !merged.is_valid() {
                    return (Code::BAD_REQUEST, None, Vec::new(), None);
                }
                stored.insert(path, merged);
                (Code::CHANGED, None, Vec::new(), None)
            }
            Classified::CancelObserve(path) => {
                self.relations.lock().unwrap().remove(&(peer, req.token.clone()));
                let table = self.table.read().unwrap();
                match legality_check(Lwm2mOp::Read, &path, table.registry()) {
                    Err(v) => (violation_code(&v), None, Vec::new(), None),
                    Ok(()) => with_obs(read_reply(&table, &path), None),
                }
            }
            Classified::Op(op, path) => {
                let reply = {
                    let table = self.table.read().unwrap();
                    if let Err(v) = legality_check(op, &path, table.registry()) {
                        return (violation_code(&v), None, Vec::new(), None);
                    }
                    match op {
                        Lwm2mOp::Read => Some(read_reply(&table, &path)),
                        Lwm2mOp::Write => Some(write_reply(&table, &path, req)),
                        Lwm2mOp::Execute => {
                            let arg = (!req.payload.is_empty()).then_some(req.payload.as_slice());
                            let (o, i, r) = (path.object_id, path.instance_id.unwrap(), path.resource_id.unwrap());
                            Some(match table.execute(o, i, r, arg) {
                                Ok(()) => status(Code::CHANGED),
                                Err(e) => status(dispatch_code(&e)),
                            })
                        }
                        Lwm2mOp::Discover => Some(self.discover_reply(&table, &path)),
                        Lwm2mOp::Observe => {
                            return self.observe(&table, &path, peer, &req.token);
                        }
                        Lwm2mOp::Create | Lwm2mOp::Delete | Lwm2mOp::WriteAttributes => None,
                    }
                };
                let reply = match reply {
                    Some(r) => r,
                    None => {
                        let mut table = self.table.write().unwrap();
                        let r = match op {
                            Lwm2mOp::Create => create_reply(&mut table, &path, req),
                            _ => match table.delete_instance(path.object_id, path.instance_id.unwrap()) {
                                Ok(()) => status(Code::DELETED),
                                Err(e) => status(dispatch_code(&e)),
                            },
                        };
                        if r.0.is_success() {
                            self.mark_links_dirty();
                        }
                        r
                    }
                };
                if matches!(op, Lwm2mOp::Write | Lwm2mOp::Execute | Lwm2mOp::Create | Lwm2mOp::Delete) {
                    self.signal.notify();
                }
                with_obs(reply, None)
            }
        }
    }

    fn observe(
        &self,
        table: &DispatchTable,
        path: &ResourcePath,
        peer: SocketAddr,
        token: &[u8],
    ) -> (Code, Option<u16>, Vec<u8>, Option<u32>) {
        if path.depth() == Depth::Resource {
            let rd = table
                .registry()
                .object_type(path.object_id)
                .and_then(|t| t.resource(path.resource_id.unwrap()));
            if !rd.is_some_and(|rd| rd.observable && rd.operations.contains(ResourceOp::Read)) {
                return (Code::METHOD_NOT_ALLOWED, None, Vec::new(), None);
            }
        }
        let (code, cf, payload) = read_reply(table, path);
        if !code.is_success() {
            return (code, cf, payload, None);
        }
        self.relations.lock().unwrap().insert(
            (peer, token.to_vec()),
            Relation {
                path: *path,
                seq: 0,
                last_sent: Instant::now(),
                last_payload: payload.clone(),
            },
        );
        (code, cf, payload, Some(0))
    }

    fn discover_reply(&self, table: &DispatchTable, path: &ResourcePath) -> Reply {
        let Some(ty) = table.registry().object_type(path.object_id) else {
            return status(Code::NOT_FOUND);
        };
        let attrs = self.attributes.lock().unwrap();
        let with_attrs = |mut link: Link, p: &ResourcePath| {
            if let Some(a) = attrs.get(p) {
                if let Some(v) = a.pmin {
                    link = link.attr("pmin", Some(&v.to_string()));
                }
                if let Some(v) = a.pmax {
                    link = link.attr("pmax", Some(&v.to_string()));
                }
            }
            link
        };
        let resource_link = |o: u16, i: u16, rd: &ResourceDescriptor| {
            let p = ResourcePath::resource(o, i, rd.id);
            let mut l = Link::new(p.to_string()).attr("ops", Some(&ops_letters(rd)));
            if rd.observable {
                l = l.attr("obs", None);
            }
            with_attrs(l, &p)
        };
        let mut links = Vec::new();
        let instances: Vec<u16> = match path.instance_id {
            Some(i) => vec![i],
            None => {
                links.push(with_attrs(Link::new(path.to_string()), path));
                table
                    .registry()
                    .instances_of(path.object_id)
                    .map(|r| r.instance_id)
                    .collect()
            }
        };
        match (path.resource_id, path.resource_instance_id) {
            (Some(_), Some(_)) => links.push(with_attrs(Link::new(path.to_string()), path)),
            (Some(r), None) => match ty.resource(r) {
                Some(rd) => links.push(resource_link(path.object_id, path.instance_id.unwrap(), rd)),
                None => return status(Code::NOT_FOUND),
            },
            (None, _) => {
                for i in instances {
                    let ip = ResourcePath::instance(path.object_id, i);
                    links.push(with_attrs(Link::new(ip.to_string()), &ip));
                    for rd in &ty.resources {
                        links.push(resource_link(path.object_id, i, rd));
                    }
                }
            }
        }
        (
            Code::CONTENT,
            Some(content_format::LINK_FORMAT),
            render_links(&links).into_bytes(),
        )
    }

    fn notify_loop(&self) {
        let mut seen = 0;
        while !self.stopping.load(Ordering::SeqCst) {
            seen = self.signal.wait(seen, self.config.observe_poll);
            if self.stopping.load(Ordering::SeqCst) {
                return;
            }
            self.check_relations();
        }
    }

    fn check_relations(&self) {
        let keys: Vec<(SocketAddr, Vec<u8>, ResourcePath)> = self
            .relations
            .lock()
            .unwrap()
            .iter()
            .map(|((peer, tok), r)| (*peer, tok.clone(), r.path))
            .collect();
        for (peer, token, path) in keys {
            let attrs = self.attributes_for(&path);
            let (code, cf, payload) = {
                let _serial = self.serial.lock().unwrap();
                let table = self.table.read().unwrap();
                read_reply(&table, &path)
            };
            let now = Instant::now();
            let mut rels = self.relations.lock().unwrap();
            let Some(rel) = rels.get_mut(&(peer, token.clone())) else {
                continue;
            };
            let since = now.duration_since(rel.last_sent);
            let changed = payload != rel.last_payload || !code.is_success();
            let pmin_ok = attrs.pmin_duration().map_or(true, |p| since >= p);
            let heartbeat = attrs.pmax_duration().is_some_and(|p| since >= p);
            if !((changed && pmin_ok) || heartbeat) {
                continue;
            }
            rel.seq = (rel.seq + 1) & 0xFF_FFFF;
            rel.last_sent = now;
            rel.last_payload = payload.clone();
            let mut msg = Message::new(MessageType::Non, code, 0).with_token(&token);
            if code.is_success() {
                msg.set_observe(rel.seq);
            } else {
                rels.remove(&(peer, token.clone()));
            }
            drop(rels);
            if let Some(cf) = cf {
                msg.set_content_format(cf);
            }
            msg.payload = payload;
            if let Err(e) = self.endpoint.notify(peer, msg) {
                debug!("notification to {peer} failed: {e}");
            }
        }
    }
}

fn parent(p: &ResourcePath) -> Option<ResourcePath> {
    match p.depth() {
        Depth::Object => None,
        Depth::Instance => Some(ResourcePath::object(p.object_id)),
        Depth::Resource => Some(ResourcePath::instance(p.object_id, p.instance_id.unwrap())),
        Depth::ResourceInstance => Some(ResourcePath::resource(
            p.object_id,
            p.instance_id.unwrap(),
            p.resource_id.unwrap(),
        )),
    }
}

fn readable(rd: &ResourceDescriptor) -> bool {
    rd.operations.contains(ResourceOp::Read)
}

fn read_instance(table: &DispatchTable, o: u16, i: u16) -> Result<BTreeMap<u16, ResourceContent>, Code> {
    let ty = table.registry().object_type(o).ok_or(Code::NOT_FOUND)?;
    let mut out = BTreeMap::new();
    for rd in ty.resources.iter().filter(|rd| readable(rd)) {
        if !table.is_bound(o, i, rd.id) {
            continue;
        }
        let v = table.read(o, i, rd.id).map_err(|e| dispatch_code(&e))?;
        out.insert(rd.id, v);
    }
    Ok(out)
}

fn read_reply(table: &DispatchTable, path: &ResourcePath) -> Reply {
    let o = path.object_id;
    let result = match (path.instance_id, path.resource_id, path.resource_instance_id) {
        (None, ..) => {
            let ids: Vec<u16> = table.registry().instances_of(o).map(|r| r.instance_id).collect();
            let mut all = BTreeMap::new();
            for i in ids {
                match read_instance(table, o, i) {
                    Ok(m) => {
                        all.insert(i, m);
                    }
                    Err(c) => return status(c),
                }
            }
            Ok((content_format::JSON, encode_object_json(&all)))
        }
        (Some(i), None, _) => read_instance(table, o, i).map(|m| (content_format::JSON, encode_instance_json(&m))),
        (Some(i), Some(r), ri) => table.read(o, i, r).map_err(|e| dispatch_code(&e)).and_then(|content| {
            let rd = table.registry().object_type(o).and_then(|t| t.resource(r));
            let vt = rd.map(|rd| rd.value_type).unwrap_or(crate::object_model::ValueType::String);
            match (content, ri) {
                (ResourceContent::Single(v), None) => Ok((value_format(vt), value_text(&v))),
                (c @ ResourceContent::Multiple(_), None) => Ok((content_format::JSON, encode_resource_json(&c))),
                (ResourceContent::Multiple(m), Some(ri)) => m
                    .get(&ri)
                    .map(|v| (value_format(vt), value_text(v)))
                    .ok_or(Code::NOT_FOUND),
                (ResourceContent::Single(_), Some(_)) => Err(Code::NOT_FOUND),
            }
        }),
    };
    match result {
        Ok((cf, payload)) => (Code::CONTENT, Some(cf), payload),
        Err(c) => status(c),
    }
}

fn decode_single(req: &Message, rd: &ResourceDescriptor) -> Result<ResourceContent, Code> {
    let multiple = rd.instance_type == InstanceType::Multiple;
    match req.content_format() {
        Some(content_format::JSON) => {
            decode_resource_json(&req.payload, rd.value_type, multiple).map_err(|_| Code::BAD_REQUEST)
        }
        None | Some(content_format::TEXT_PLAIN) | Some(content_format::OCTET_STREAM) if !multiple => {
            parse_value_text(&req.payload, rd.value_type)
                .map(ResourceContent::Single)
                .map_err(|_| Code::BAD_REQUEST)
        }
        None | Some(content_format::TEXT_PLAIN) | Some(content_format::OCTET_STREAM) => Err(Code::BAD_REQUEST),
        Some(_) => Err(Code::UNSUPPORTED_CONTENT_FORMAT),
    }
}

fn write_instance(
    table: &DispatchTable,
    o: u16,
    i: u16,
    values: BTreeMap<u16, ResourceContent>,
) -> Result<(), Code> {
    let ty = table.registry().object_type(o).ok_or(Code::NOT_FOUND)?;
    for id in values.keys() {
        let rd = ty.resource(*id).ok_or(Code::NOT_FOUND)?;
        if !rd.operations.contains(ResourceOp::Write) {
            return Err(Code::METHOD_NOT_ALLOWED);
        }
    }
    for (id, v) in values {
        table.write(o, i, id, v).map_err(|e| write_code(&e))?;
    }
    Ok(())
}

fn write_reply(table: &DispatchTable, path: &ResourcePath, req: &Message) -> Reply {
    let o = path.object_id;
    let Some(ty) = table.registry().object_type(o) else {
        return status(Code::NOT_FOUND);
    };
    let json = req.content_format() == Some(content_format::JSON);
    let result = match (path.instance_id, path.resource_id, path.resource_instance_id) {
        (None, ..) => {
            if !json {
                return status(Code::UNSUPPORTED_CONTENT_FORMAT);
            }
            decode_object_json(&req.payload, ty)
                .map_err(|_| Code::BAD_REQUEST)
                .and_then(|all| {
                    if all.keys().any(|i| table.registry().instance(o, *i).is_none()) {
                        return Err(Code::NOT_FOUND);
                    }
                    all.into_iter().try_for_each(|(i, m)| write_instance(table, o, i, m))
                })
        }
        (Some(i), None, _) => {
            if !json {
                return status(Code::UNSUPPORTED_CONTENT_FORMAT);
            }
            decode_instance_json(&req.payload, ty)
                .map_err(|_| Code::BAD_REQUEST)
                .and_then(|m| write_instance(table, o, i, m))
        }
        (Some(i), Some(r), None) => {
            let rd = ty.resource(r).expect("legality checked");
            decode_single(req, rd).and_then(|c| table.write(o, i, r, c).map_err(|e| write_code(&e)))
        }
        (Some(i), Some(r), Some(ri)) => {
            let rd = ty.resource(r).expect("legality checked");
            parse_value_text(&req.payload, rd.value_type)
                .map_err(|_| Code::BAD_REQUEST)
                .and_then(|v| {
                    let mut current = if readable(rd) {
                        match table.read(o, i, r) {
                            Ok(ResourceContent::Multiple(m)) => m,
                            Ok(_) => BTreeMap::new(),
                            Err(e) => return Err(dispatch_code(&e)),
                        }
                    } else {
                        BTreeMap::new()
                    };
                    current.insert(ri, v);
                    table
                        .write(o, i, r, ResourceContent::Multiple(current))
                        .map_err(|e| write_code(&e))
                })
        }
    };
    match result {
        Ok(()) => status(Code::CHANGED),
        Err(c) => status(c),
    }
}

/// Carries the new instance's location through the reply payload slot.
fn create_reply(table: &mut DispatchTable, path: &ResourcePath, req: &Message) -> Reply {
    let o = path.object_id;
    let Some(i) = table.free_instance_id(o) else {
        return status(Code::INTERNAL_SERVER_ERROR);
    };
    let initial = if req.payload.is_empty() {
        BTreeMap::new()
    } else {
        let ty = table.registry().object_type(o).expect("legality checked");
        match decode_instance_json(&req.payload, ty) {
            Ok(m) => m,
            Err(_) => return status(Code::BAD_REQUEST),
        }
    };
    if let Err(e) = table.create_instance(o, i) {
        return status(dispatch_code(&e));
    }
    if let Err(code) = write_instance(table, o, i, initial) {
        let _ = table.delete_instance(o, i);
        return status(code);
    }
    (Code::CREATED, None, format!("{o}/{i}").into_bytes())
}

fn created_location(payload: &[u8]) -> Option<Vec<String>> {
    let text = std::str::from_utf8(payload).ok()?;
    Some(text.split('/').map(str::to_string).collect())
}
