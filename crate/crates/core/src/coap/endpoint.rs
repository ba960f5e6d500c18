//! UDP endpoint: confirmable retransmission, duplicate detection, piggy-backed
//! responses and token-matched notifications.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU16, AtomicU32, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, trace, warn};
use rand::Rng;
use thiserror::Error;

use super::message::{decode, Code, EncodeError, Message, MessageType};

/// Transmission parameters. Defaults are the protocol's defaults; tests shrink them.
#[derive(Debug, Clone)]
pub struct CoapConfig {
    pub ack_timeout: Duration,
    pub ack_random_factor: f64,
    pub max_retransmit: u32,
    pub exchange_lifetime: Duration,
    /// How long to wait for a NON response, or for a separate response after an empty ACK.
    pub response_timeout: Duration,
    /// Threads running request handlers.
    pub workers: usize,
}

impl Default for CoapConfig {
    fn default() -> Self {
        CoapConfig {
            ack_timeout: Duration::from_secs(2),
            ack_random_factor: 1.5,
            max_retransmit: 4,
            exchange_lifetime: Duration::from_secs(247),
            response_timeout: Duration::from_secs(10),
            workers: 4,
        }
    }
}

impl CoapConfig {
    /// Every timing parameter multiplied by `factor`.
    pub fn scaled(factor: f64) -> Self {
        let d = CoapConfig::default();
        CoapConfig {
            ack_timeout: d.ack_timeout.mul_f64(factor),
            exchange_lifetime: d.exchange_lifetime.mul_f64(factor),
            response_timeout: d.response_timeout.mul_f64(factor),
            ..d
        }
    }

    /// Longest a CON request waits before giving up:
    /// `ack_timeout · factor · (2^(max_retransmit+1) − 1)`.
    pub fn max_transmit_wait(&self) -> Duration {
        self.ack_timeout
            .mul_f64(self.ack_random_factor * ((1u64 << (self.max_retransmit + 1)) - 1) as f64)
    }
}

pub type RequestHandler = Arc<dyn Fn(&Message, SocketAddr) -> Message + Send + Sync>;
pub type NotificationHandler = Arc<dyn Fn(&Message, SocketAddr) + Send + Sync>;
pub type ResetHandler = Arc<dyn Fn(SocketAddr, &[u8]) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoapError {
    #[error("no response before the retransmission limit")]
    Timeout,
    #[error("peer answered with reset")]
    Reset,
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("socket error: {0}")]
    Io(String),
    #[error("endpoint shut down")]
    Shutdown,
}

impl From<io::Error> for CoapError {
    fn from(e: io::Error) -> Self {
        CoapError::Io(e.to_string())
    }
}

enum Outcome {
    Response(Message),
    Acked,
    Reset,
}

struct Pending {
    peer: SocketAddr,
    message_id: u16,
    tx: Sender<Outcome>,
}

enum Cached {
    InProgress,
    Done(Vec<u8>),
}

struct CacheEntry {
    cached: Cached,
    expires: Instant,
}

#[derive(Default)]
struct ExchangeState {
    pending: HashMap<Vec<u8>, Pending>,
    /// Requests received, keyed by (peer, message id).
    requests: HashMap<(SocketAddr, u16), CacheEntry>,
    /// Responses and notifications received as CON/NON, for duplicate detection.
    responses: HashMap<(SocketAddr, u16), Instant>,
    observers: HashMap<Vec<u8>, NotificationHandler>,
    /// Notifications sent by us: (peer, message id) → token, so a reset can cancel them.
    notified: HashMap<(SocketAddr, u16), (Vec<u8>, Instant)>,
    last_sweep: Option<Instant>,
}

impl ExchangeState {
    fn sweep(&mut self, now: Instant) {
        if self.last_sweep.is_some_and(|t| now.duration_since(t) < Duration::from_millis(500)) {
            return;
        }
        self.last_sweep = Some(now);
        self.requests.retain(|_, e| e.expires > now);
        self.responses.retain(|_, t| *t > now);
        self.notified.retain(|_, (_, t)| *t > now);
    }
}

/// Counters exposed for tests and diagnostics.
#[derive(Debug, Default)]
pub struct EndpointStats {
    pub handler_calls: AtomicU64,
    pub duplicates: AtomicU64,
    pub resets_sent: AtomicU64,
    pub retransmissions: AtomicU64,
}

type Job = Box<dyn FnOnce() + Send>;

struct Inner {
    socket: UdpSocket,
    config: CoapConfig,
    state: Mutex<ExchangeState>,
    handler: Mutex<Option<RequestHandler>>,
    on_reset: Mutex<Option<ResetHandler>>,
    jobs: Mutex<Option<Sender<Job>>>,
    notifications: Mutex<Option<Sender<Job>>>,
    next_mid: AtomicU16,
    next_token: AtomicU32,
    shutdown: AtomicBool,
    stats: EndpointStats,
}

pub struct CoapEndpoint {
    inner: Arc<Inner>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl CoapEndpoint {
    pub fn bind(addr: impl ToSocketAddrs, config: CoapConfig) -> Result<Self, CoapError> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let mut rng = rand::thread_rng();
        let (job_tx, job_rx) = mpsc::channel::<Job>();
        let (note_tx, note_rx) = mpsc::channel::<Job>();
        let workers = config.workers.max(1);
        let inner = Arc::new(Inner {
            socket,
            config,
            state: Mutex::new(ExchangeState::default()),
            handler: Mutex::new(None),
            on_reset: Mutex::new(None),
            jobs: Mutex::new(Some(job_tx)),
            notifications: Mutex::new(Some(note_tx)),
            next_mid: AtomicU16::new(rng.gen()),
            next_token: AtomicU32::new(rng.gen()),
            shutdown: AtomicBool::new(false),
            stats: EndpointStats::default(),
        });

        let mut threads = Vec::new();
        let job_rx = Arc::new(Mutex::new(job_rx));
        for n in 0..workers {
            let rx = job_rx.clone();
            threads.push(
                thread::Builder::new()
                    .name(format!("coap-worker-{n}"))
                    .spawn(move || run_jobs(&rx))?,
            );
        }
        let note_rx = Arc::new(Mutex::new(note_rx));
        threads.push(
            thread::Builder::new()
                .name("coap-notify".into())
                .spawn(move || run_jobs(&note_rx))?,
        );
        let rx_inner = inner.clone();
        threads.push(
            thread::Builder::new()
                .name("coap-recv".into())
                .spawn(move || receive_loop(&rx_inner))?,
        );
        Ok(CoapEndpoint {
            inner,
            threads: Mutex::new(threads),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.inner.socket.local_addr().expect("bound socket has an address")
    }

    pub fn config(&self) -> &CoapConfig {
        &self.inner.config
    }

    pub fn stats(&self) -> &EndpointStats {
        &self.inner.stats
    }

    /// Starts answering requests with `handler`. The handler fills in code,
    /// options and payload; type, message id and token are set here.
    pub fn serve(&self, handler: RequestHandler) {
        *self.inner.handler.lock().unwrap() = Some(handler);
    }

    /// Called when a peer resets one of our notifications.
    pub fn on_reset(&self, handler: ResetHandler) {
        *self.inner.on_reset.lock().unwrap() = Some(handler);
    }

    pub fn next_message_id(&self) -> u16 {
        self.inner.next_mid.fetch_add(1, Ordering::Relaxed)
    }

    pub fn new_token(&self) -> Vec<u8> {
        self.inner.next_token.fetch_add(1, Ordering::Relaxed).to_be_bytes().to_vec()
    }

    /// Routes responses carrying `token` that match no pending request
    /// (observe notifications) to `handler`.
    pub fn listen_token(&self, token: &[u8], handler: NotificationHandler) {
        self.inner.state.lock().unwrap().observers.insert(token.to_vec(), handler);
    }

    pub fn forget_token(&self, token: &[u8]) {
        self.inner.state.lock().unwrap().observers.remove(token);
    }

    /// Sends a datagram as is.
    pub fn send_raw(&self, peer: SocketAddr, bytes: &[u8]) -> Result<(), CoapError> {
        self.inner.socket.send_to(bytes, peer)?;
        Ok(())
    }

    /// Sends a NON notification with a fresh message id.
    pub fn notify(&self, peer: SocketAddr, mut msg: Message) -> Result<(), CoapError> {
        msg.mtype = MessageType::Non;
        msg.message_id = self.next_message_id();
        let bytes = msg.encode()?;
        let expires = Instant::now() + self.inner.config.exchange_lifetime;
        self.inner
            .state
            .lock()
            .unwrap()
            .notified
            .insert((peer, msg.message_id), (msg.token.clone(), expires));
        self.send_raw(peer, &bytes)
    }

    /// Sends a CON or NON request and blocks until its response arrives.
    /// A fresh message id is always assigned; an empty token is replaced by a fresh one.
    pub fn request(&self, peer: SocketAddr, mut msg: Message) -> Result<Message, CoapError> {
        if self.inner.shutdown.load(Ordering::SeqCst) {
            return Err(CoapError::Shutdown);
        }
        msg.message_id = self.next_message_id();
        if msg.token.is_empty() {
            msg.token = self.new_token();
        }
        let bytes = msg.encode()?;
        let (tx, rx) = mpsc::channel();
        self.inner.state.lock().unwrap().pending.insert(
            msg.token.clone(),
            Pending {
                peer,
                message_id: msg.message_id,
                tx,
            },
        );
        let result = self.exchange(peer, &msg, &bytes, &rx);
        self.inner.state.lock().unwrap().pending.remove(&msg.token);
        result
    }

    fn exchange(&self, peer: SocketAddr, msg: &Message, bytes: &[u8], rx: &Receiver<Outcome>) -> Result<Message, CoapError> {
        let cfg = &self.inner.config;
        self.send_raw(peer, bytes)?;
        if msg.mtype != MessageType::Con {
            return wait_response(rx, cfg.response_timeout);
        }
        let factor = cfg.ack_random_factor.max(1.0);
        let mut timeout = cfg
            .ack_timeout
            .mul_f64(rand::thread_rng().gen_range(1.0..=factor));
        let mut retransmits = 0;
        loop {
            match rx.recv_timeout(timeout) {
                Ok(Outcome::Response(m)) => return Ok(m),
                Ok(Outcome::Reset) => return Err(CoapError::Reset),
                Ok(Outcome::Acked) => return wait_response(rx, cfg.response_timeout),
                Err(RecvTimeoutError::Disconnected) => return Err(CoapError::Shutdown),
                Err(RecvTimeoutError::Timeout) => {
                    if retransmits >= cfg.max_retransmit || self.inner.shutdown.load(Ordering::SeqCst) {
                        return Err(CoapError::Timeout);
                    }
                    retransmits += 1;
                    self.inner.stats.retransmissions.fetch_add(1, Ordering::Relaxed);
                    trace!("retransmit {} of mid {}", retransmits, msg.message_id);
                    self.send_raw(peer, bytes)?;
                    timeout *= 2;
                }
            }
        }
    }

    pub fn shutdown(&self) {
        if self.inner.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        self.inner.jobs.lock().unwrap().take();
        self.inner.notifications.lock().unwrap().take();
        self.inner.state.lock().unwrap().pending.clear();
        let me = thread::current().id();
        for t in self.threads.lock().unwrap().drain(..) {
            if t.thread().id() != me {
                let _ = t.join();
            }
        }
    }
}

impl Drop for CoapEndpoint {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn wait_response(rx: &Receiver<Outcome>, timeout: Duration) -> Result<Message, CoapError> {
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(Outcome::Response(m)) => return Ok(m),
            Ok(Outcome::Reset) => return Err(CoapError::Reset),
            Ok(Outcome::Acked) => continue,
            Err(RecvTimeoutError::Timeout) => return Err(CoapError::Timeout),
            Err(RecvTimeoutError::Disconnected) => return Err(CoapError::Shutdown),
        }
    }
}

fn run_jobs(rx: &Mutex<Receiver<Job>>) {
    loop {
        let job = match rx.lock().unwrap().recv() {
            Ok(job) => job,
            Err(_) => return,
        };
        job();
    }
}

fn receive_loop(inner: &Arc<Inner>) {
    let mut buf = vec![0u8; 2048];
    while !inner.shutdown.load(Ordering::SeqCst) {
        let (n, peer) = match inner.socket.recv_from(&mut buf) {
            Ok(x) => x,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                inner.state.lock().unwrap().sweep(Instant::now());
                continue;
            }
            Err(e) => {
                // ICMP port-unreachable surfaces here on some platforms.
                debug!("recv error: {e}");
                continue;
            }
        };
        handle_datagram(inner, &buf[..n], peer);
    }
}

fn send_rst(inner: &Inner, peer: SocketAddr, message_id: u16) {
    inner.stats.resets_sent.fetch_add(1, Ordering::Relaxed);
    let bytes = Message::empty(MessageType::Rst, message_id)
        .encode()
        .expect("empty message encodes");
    let _ = inner.socket.send_to(&bytes, peer);
}

fn send_ack(inner: &Inner, peer: SocketAddr, message_id: u16) {
    let bytes = Message::empty(MessageType::Ack, message_id)
        .encode()
        .expect("empty message encodes");
    let _ = inner.socket.send_to(&bytes, peer);
}

fn handle_datagram(inner: &Arc<Inner>, bytes: &[u8], peer: SocketAddr) {
    let msg = match decode(bytes) {
        Ok(m) => m,
        Err(e) => {
            debug!("malformed datagram from {peer}: {e}");
            let con_shaped = bytes.len() >= 4 && bytes[0] >> 6 == 1 && (bytes[0] >> 4) & 3 == 0;
            if con_shaped {
                send_rst(inner, peer, u16::from_be_bytes([bytes[2], bytes[3]]));
            }
            return;
        }
    };
    let now = Instant::now();
    match msg.mtype {
        MessageType::Con | MessageType::Non if msg.code.is_request() => handle_request(inner, msg, peer, now),
        MessageType::Con if msg.is_empty_message() => send_rst(inner, peer, msg.message_id),
        MessageType::Con | MessageType::Non if msg.code.is_response() => {
            let is_con = msg.mtype == MessageType::Con;
            let mut st = inner.state.lock().unwrap();
            st.sweep(now);
            if st.responses.contains_key(&(peer, msg.message_id)) {
                inner.stats.duplicates.fetch_add(1, Ordering::Relaxed);
                drop(st);
                if is_con {
                    send_ack(inner, peer, msg.message_id);
                }
                return;
            }
            st.responses
                .insert((peer, msg.message_id), now + inner.config.exchange_lifetime);
            if let Some(p) = st.pending.get(&msg.token).filter(|p| p.peer == peer) {
                let _ = p.tx.send(Outcome::Response(msg.clone()));
                drop(st);
                if is_con {
                    send_ack(inner, peer, msg.message_id);
                }
            } else if let Some(cb) = st.observers.get(&msg.token).cloned() {
                drop(st);
                if is_con {
                    send_ack(inner, peer, msg.message_id);
                }
                let tx = inner.notifications.lock().unwrap().clone();
                if let Some(tx) = tx {
                    let _ = tx.send(Box::new(move || cb(&msg, peer)));
                }
            } else {
                drop(st);
                if is_con {
                    send_rst(inner, peer, msg.message_id);
                }
            }
        }
        MessageType::Ack => {
            let st = inner.state.lock().unwrap();
            let hit = if msg.is_empty_message() {
                st.pending
                    .values()
                    .find(|p| p.message_id == msg.message_id && p.peer == peer)
                    .map(|p| (p, Outcome::Acked))
            } else {
                st.pending
                    .get(&msg.token)
                    .filter(|p| p.message_id == msg.message_id && p.peer == peer)
                    .map(|p| (p, Outcome::Response(msg.clone())))
            };
            if let Some((p, outcome)) = hit {
                let _ = p.tx.send(outcome);
            }
        }
        MessageType::Rst => {
            let mut st = inner.state.lock().unwrap();
            if let Some(p) = st
                .pending
                .values()
                .find(|p| p.message_id == msg.message_id && p.peer == peer)
            {
                let _ = p.tx.send(Outcome::Reset);
            } else if let Some((token, _)) = st.notified.remove(&(peer, msg.message_id)) {
                drop(st);
                let cb = inner.on_reset.lock().unwrap().clone();
                if let Some(cb) = cb {
                    cb(peer, &token);
                }
            }
        }
        _ => trace!("ignored {:?} {} from {peer}", msg.mtype, msg.code),
    }
}

fn handle_request(inner: &Arc<Inner>, msg: Message, peer: SocketAddr, now: Instant) {
    let key = (peer, msg.message_id);
    {
        let mut st = inner.state.lock().unwrap();
        st.sweep(now);
        match st.requests.get(&key) {
            Some(e) if e.expires > now => {
                inner.stats.duplicates.fetch_add(1, Ordering::Relaxed);
                if let (Cached::Done(bytes), MessageType::Con) = (&e.cached, msg.mtype) {
                    let _ = inner.socket.send_to(bytes, peer);
                }
                return;
            }
            _ => {}
        }
        st.requests.insert(
            key,
            CacheEntry {
                cached: Cached::InProgress,
                expires: now + inner.config.exchange_lifetime,
            },
        );
    }
    let Some(handler) = inner.handler.lock().unwrap().clone() else {
        if msg.mtype == MessageType::Con {
            send_rst(inner, peer, msg.message_id);
        }
        inner.state.lock().unwrap().requests.remove(&key);
        return;
    };
    let worker_inner = inner.clone();
    let job: Job = Box::new(move || {
        let inner = worker_inner;
        inner.stats.handler_calls.fetch_add(1, Ordering::Relaxed);
        let mut resp = catch_unwind(AssertUnwindSafe(|| handler(&msg, peer))).unwrap_or_else(|_| {
            warn!("request handler panicked");
            Message::new(MessageType::Ack, Code::INTERNAL_SERVER_ERROR, 0)
        });
        if msg.mtype == MessageType::Con {
            resp.mtype = MessageType::Ack;
            resp.message_id = msg.message_id;
        } else {
            resp.mtype = MessageType::Non;
            resp.message_id = inner.next_mid.fetch_add(1, Ordering::Relaxed);
        }
        resp.token = msg.token.clone();
        let bytes = resp.encode().unwrap_or_else(|e| {
            warn!("response does not encode: {e}");
            let mut fallback = Message::new(resp.mtype, Code::INTERNAL_SERVER_ERROR, resp.message_id);
            fallback.token = msg.token.clone();
            fallback.encode().expect("plain error response encodes")
        });
        if let Some(e) = inner.state.lock().unwrap().requests.get_mut(&key) {
            e.cached = Cached::Done(bytes.clone());
        }
        let _ = inner.socket.send_to(&bytes, peer);
    });
    let tx = inner.jobs.lock().unwrap().clone();
    if let Some(tx) = tx {
        let _ = tx.send(job);
    }
}
