//! Round-trip latency of EXECUTE and READ requests against a wrapped
//! component, for statically and dynamically resolved wrappers.
//!
//! The component under test is the small SmartSilo whose handlers only flip
//! or report a flag, so the measured time is transport plus dispatch.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::coap::{Code, CoapConfig, CoapEndpoint, Message};
use crate::lwm2m::{request_for, ClientConfig, Lwm2mClient, Lwm2mError, Lwm2mServer, ServerConfig};
use crate::object_model::{Lwm2mOp, ResourcePath, ResourceValue};
use crate::plant::SMARTSILO_CID;
use crate::wrapper_gen::{
    aot_artifacts, Binding, DispatchTable, GenError, GenMode, Handler, HandlerRegistry, InstanceBinding,
    InstanceContext, Resolution,
};

pub const DEFAULT_PATH: &str = "/16663/0/2";
pub const DEFAULT_READ_PATH: &str = "/16663/0/0";
pub const BENCH_ENDPOINT: &str = "benchSilo";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOp {
    Execute,
    Read,
}

impl BenchOp {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchOp::Execute => "EXECUTE",
            BenchOp::Read => "READ",
        }
    }

    /// `fill` for EXECUTE, `filling` for READ.
    pub fn default_path(self) -> ResourcePath {
        let p = match self {
            BenchOp::Execute => DEFAULT_PATH,
            BenchOp::Read => DEFAULT_READ_PATH,
        };
        p.parse().expect("default path parses")
    }

    fn lwm2m(self) -> Lwm2mOp {
        match self {
            BenchOp::Execute => Lwm2mOp::Execute,
            BenchOp::Read => Lwm2mOp::Read,
        }
    }

    fn expected(self) -> Code {
        match self {
            BenchOp::Execute => Code::CHANGED,
            BenchOp::Read => Code::CONTENT,
        }
    }
}

impl FromStr for BenchOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "execute" => Ok(BenchOp::Execute),
            "read" => Ok(BenchOp::Read),
            _ => Err(format!("unknown op {s:?}, expected execute or read")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Request and response pass through the codec and the client's handler
    /// without a socket.
    InProcess,
    /// Server and client in this process over loopback UDP.
    Localhost,
    /// A bench component served elsewhere (`iat serve --bench`): static mode
    /// at the address, dynamic mode one port above.
    Remote(SocketAddr),
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Target::InProcess => "inproc".into(),
            Target::Localhost => "localhost".into(),
            Target::Remote(a) => a.to_string(),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inproc" | "in_process" => Ok(Target::InProcess),
            "localhost" => Ok(Target::Localhost),
            other => other
                .parse()
                .map(Target::Remote)
                .map_err(|_| format!("target {other:?} is not inproc, localhost or HOST:PORT")),
        }
    }
}

pub fn mode_label(mode: Resolution) -> &'static str {
    match mode {
        Resolution::Static => "static",
        Resolution::Dynamic => "dynamic",
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub op: BenchOp,
    pub n: usize,
    pub mode: Resolution,
    pub target: Target,
    pub path: ResourcePath,
    /// Operations issued first and kept out of the statistics.
    pub warmup: usize,
    pub coap: CoapConfig,
}

impl BenchSpec {
    pub fn new(op: BenchOp, mode: Resolution, target: Target) -> Self {
        BenchSpec {
            op,
            n: 1000,
            mode,
            target,
            path: op.default_path(),
            warmup: 100,
            coap: CoapConfig::default(),
        }
    }
}

/// Milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub samples: Vec<f64>,
    pub warmup: Vec<f64>,
}

impl LatencyStats {
    /// Statistics over `samples`; `None` when there are none.
    pub fn from_samples(samples: Vec<f64>, warmup: Vec<f64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - avg) * (s - avg)).sum::<f64>() / n;
        // Rounding can push the mean a hair outside [min, max] for constant samples.
        let avg = avg.clamp(min, max);
        Some(LatencyStats {
            min,
            max,
            avg,
            stddev: var.sqrt(),
            samples,
            warmup,
        })
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench needs n > 0")]
    Empty,
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("{path} answered {code}, expected {expected}")]
    Status { path: ResourcePath, code: Code, expected: Code },
    #[error("aborted after {completed} of {n} operations: {cause}")]
    Aborted {
        completed: usize,
        n: usize,
        cause: String,
        /// Statistics over the operations that completed.
        partial: Option<LatencyStats>,
    },
    #[error("modes differ on {0}")]
    NotEquivalent(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// The benchmarked component: every handler reads or flips one flag.
#[derive(Default)]
pub struct BenchComponent {
    filling: AtomicBool,
    heater: AtomicBool,
    valve: AtomicBool,
}

fn component(ctx: &InstanceContext) -> &BenchComponent {
    ctx.binding.get::<Arc<BenchComponent>>().expect("bench binding")
}

fn flag(ctx: &InstanceContext) -> &AtomicBool {
    let c = component(ctx);
    match ctx.via.as_deref() {
        Some("heater") => &c.heater,
        Some(_) => &c.valve,
        None => &c.filling,
    }
}

fn bench_registry() -> HandlerRegistry {
    let read = || Handler::reader(|ctx| Ok(ResourceValue::Boolean(flag(ctx).load(Ordering::Relaxed)).into()));
    let set = |v: bool| {
        Handler::executor(move |ctx, _| {
            flag(ctx).store(v, Ordering::Relaxed);
            Ok(())
        })
    };
    HandlerRegistry::new()
        .with("SmartSilo", "filling", read())
        .with(
            "SmartSilo",
            "fill",
            Handler::executor(|ctx, _| {
                flag(ctx).fetch_xor(true, Ordering::Relaxed);
                Ok(())
            }),
        )
        .with("Heater", "status", read())
        .with("Heater", "heaterOn", set(true))
        .with("Heater", "heaterOff", set(false))
        .with("Valve", "open", read())
        .with("Valve", "openValve", set(true))
        .with("Valve", "closeValve", set(false))
}

/// The bench component's wrapper, resolved as `mode`. Static tables are
/// bound from ahead-of-time artifacts, dynamic ones built at startup.
pub fn bench_table(mode: Resolution) -> Result<DispatchTable, GenError> {
    let instances = [InstanceBinding::new(
        16663,
        0,
        Binding::new(Arc::new(BenchComponent::default())),
    )];
    let gen = match mode {
        Resolution::Static => GenMode::AheadOfTime,
        Resolution::Dynamic => GenMode::Startup,
    };
    crate::wrapper_gen::generate(gen, SMARTSILO_CID, &bench_registry(), &instances, None)
}

fn bench_descriptors() -> Vec<crate::object_model::ObjectTypeDescriptor> {
    aot_artifacts(SMARTSILO_CID).expect("shipped CID lowers").descriptors
}

/// Where requests go.
enum Link {
    InProcess(Lwm2mClient),
    Localhost { server: Lwm2mServer, _client: Lwm2mClient },
    Remote { endpoint: CoapEndpoint, peer: SocketAddr },
}

impl Link {
    fn open(mode: Resolution, target: Target, coap: &CoapConfig) -> Result<Self, BenchError> {
        let setup = |e: Lwm2mError| BenchError::Setup(e.to_string());
        match target {
            Target::InProcess => {
                let cfg = ClientConfig::new(BENCH_ENDPOINT, "127.0.0.1:9".parse().unwrap());
                Ok(Link::InProcess(Lwm2mClient::start(bench_table(mode)?, cfg).map_err(setup)?))
            }
            Target::Localhost => {
                let server = Lwm2mServer::start(
                    ServerConfig {
                        coap: coap.clone(),
                        ..ServerConfig::local()
                    },
                    &bench_descriptors(),
                )
                .map_err(setup)?;
                let mut cfg = ClientConfig::new(BENCH_ENDPOINT, server.local_addr());
                cfg.coap = coap.clone();
                let client = Lwm2mClient::start(bench_table(mode)?, cfg).map_err(setup)?;
                client.connect().map_err(setup)?;
                Ok(Link::Localhost { server, _client: client })
            }
            Target::Remote(addr) => {
                let peer = match mode {
                    Resolution::Static => addr,
                    Resolution::Dynamic => SocketAddr::new(addr.ip(), addr.port() + 1),
                };
                let bind: SocketAddr = if addr.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().unwrap();
                let endpoint = CoapEndpoint::bind(bind, coap.clone()).map_err(|e| BenchError::Setup(e.to_string()))?;
                Ok(Link::Remote { endpoint, peer })
            }
        }
    }

    fn issue(&self, req: &Message) -> Result<Message, String> {
        match self {
            Link::InProcess(client) => {
                let bytes = req.encode().map_err(|e| e.to_string())?;
                let decoded = Message::decode(&bytes).map_err(|e| e.to_string())?;
                let resp = client.handle_request(&decoded);
                let bytes = resp.encode().map_err(|e| e.to_string())?;
                Message::decode(&bytes).map_err(|e| e.to_string())
            }
            Link::Localhost { server, .. } => server.request(BENCH_ENDPOINT, req.clone()).map_err(|e| e.to_string()),
            Link::Remote { endpoint, peer } => endpoint.request(*peer, req.clone()).map_err(|e| e.to_string()),
        }
    }
}

fn measure(link: &Link, spec: &BenchSpec) -> Result<LatencyStats, BenchError> {
    if spec.n == 0 {
        return Err(BenchError::Empty);
    }
    let req = request_for(spec.op.lwm2m(), &spec.path);
    let expected = spec.op.expected();
    let total = spec.warmup + spec.n;
    let mut warmup = Vec::with_capacity(spec.warmup);
    let mut samples = Vec::with_capacity(spec.n);
    for k in 0..total {
        let start = Instant::now();
        let result = link.issue(&req);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let resp = match result {
            Ok(r) => r,
            Err(cause) => {
                return Err(BenchError::Aborted {
                    completed: samples.len(),
                    n: spec.n,
                    cause,
                    partial: LatencyStats::from_samples(samples, warmup),
                })
            }
        };
        if resp.code != expected {
            return Err(BenchError::Status {
                path: spec.path,
                code: resp.code,
                expected,
            });
        }
        if k < spec.warmup {
            warmup.push(ms);
        } else {
            samples.push(ms);
        }
    }
    Ok(LatencyStats::from_samples(samples, warmup).expect("n > 0"))
}

/// Issues `warmup + n` sequential operations and times each round trip.
pub fn run_bench(spec: &BenchSpec) -> Result<LatencyStats, BenchError> {
    let link = Link::open(spec.mode, spec.target, &spec.coap)?;
    measure(&link, spec)
}

/// Probe requests over every instance and resource of a table: reads at all
/// depths, discovers, writes of a plausible value, executes, unknown paths,
/// and finally create and delete. Mutating probes run in the same order for
/// every table, so equal wrappers answer equally.
pub fn probe_requests(table: &DispatchTable) -> Vec<Message> {
    let mut out = Vec::new();
    let mut deletes = Vec::new();
    let mut objects: Vec<u16> = table.instances().iter().map(|(o, _)| *o).collect();
    objects.dedup();
    for &(o, i) in table.instances() {
        let inst = ResourcePath::instance(o, i);
        out.push(request_for(Lwm2mOp::Read, &inst));
        out.push(request_for(Lwm2mOp::Discover, &inst));
        let ty = table.registry().object_type(o).expect("instance type registered");
        for rd in &ty.resources {
            let p = ResourcePath::resource(o, i, rd.id);
            out.push(request_for(Lwm2mOp::Read, &p));
            out.push(request_for(Lwm2mOp::Discover, &p));
            let mut w = request_for(Lwm2mOp::Write, &p);
            w.payload = match rd.value_type {
                crate::object_model::ValueType::Boolean => b"true".to_vec(),
                crate::object_model::ValueType::Float => b"1.5".to_vec(),
                crate::object_model::ValueType::String => b"probe".to_vec(),
                crate::object_model::ValueType::Opaque => vec![0, 1, 2],
                _ => b"3".to_vec(),
            };
            out.push(w);
            out.push(request_for(Lwm2mOp::Execute, &p));
        }
        out.push(request_for(Lwm2mOp::Read, &ResourcePath::resource(o, i, 9999)));
        out.push(request_for(Lwm2mOp::Execute, &inst));
        deletes.push(request_for(Lwm2mOp::Delete, &inst));
    }
    for o in objects {
        out.push(request_for(Lwm2mOp::Read, &ResourcePath::object(o)));
        out.push(request_for(Lwm2mOp::Discover, &ResourcePath::object(o)));
        out.push(request_for(Lwm2mOp::Create, &ResourcePath::object(o)));
    }
    out.push(request_for(Lwm2mOp::Read, &ResourcePath::instance(65000, 0)));
    out.extend(deletes);
    out
}

/// A response with message id and token cleared, for byte comparison.
pub fn canonical_response(resp: &Message) -> Vec<u8> {
    let mut m = resp.clone();
    m.message_id = 0;
    m.token.clear();
    m.encode().unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct ModeReport {
    pub op: BenchOp,
    pub target: String,
    pub static_stats: LatencyStats,
    pub dynamic_stats: LatencyStats,
    /// Number of probes answered byte-identically by both modes.
    pub probes: usize,
}

/// Sends every probe to both links and fails on the first differing answer.
fn check_equivalence(a: &Link, b: &Link, table: &DispatchTable) -> Result<usize, BenchError> {
    let probes = probe_requests(table);
    for req in &probes {
        let ra = a.issue(req).map_err(|e| BenchError::NotEquivalent(e))?;
        let rb = b.issue(req).map_err(|e| BenchError::NotEquivalent(e))?;
        if canonical_response(&ra) != canonical_response(&rb) {
            return Err(BenchError::NotEquivalent(format!(
                "{} {}: {} vs {}",
                req.code,
                req.uri_path().join("/"),
                ra.code,
                rb.code
            )));
        }
    }
    Ok(probes.len())
}

/// Benchmarks both modes with the same spec, then checks that they answer a
/// probe suite identically.
pub fn compare_modes(
    op: BenchOp,
    n: usize,
    target: Target,
    warmup: usize,
    path: ResourcePath,
) -> Result<ModeReport, BenchError> {
    let mut spec = BenchSpec::new(op, Resolution::Static, target);
    spec.n = n;
    spec.warmup = warmup;
    spec.path = path;
    let static_link = Link::open(Resolution::Static, target, &spec.coap)?;
    let static_stats = measure(&static_link, &spec)?;
    spec.mode = Resolution::Dynamic;
    let dynamic_link = Link::open(Resolution::Dynamic, target, &spec.coap)?;
    let dynamic_stats = measure(&dynamic_link, &spec)?;

    // Fresh components so both start from the same state.
    let a = Link::open(Resolution::Static, target, &spec.coap)?;
    let b = Link::open(Resolution::Dynamic, target, &spec.coap)?;
    let probes = check_equivalence(&a, &b, &bench_table(Resolution::Static)?)?;
    Ok(ModeReport {
        op,
        target: target.label(),
        static_stats,
        dynamic_stats,
        probes,
    })
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub histogram: PathBuf,
    pub series: PathBuf,
    pub warmup: PathBuf,
}

/// Histogram bins of 0.1 ms covering [floor(min), ceil(max)]: (bin start in
/// tenths of a millisecond, count per run).
pub fn histogram(runs: &[&LatencyStats]) -> Vec<(i64, Vec<usize>)> {
    let lo = runs.iter().map(|s| s.min).fold(f64::INFINITY, f64::min).floor();
    let hi = runs.iter().map(|s| s.max).fold(f64::NEG_INFINITY, f64::max).ceil();
    let lo_t = (lo * 10.0) as i64;
    let bins = (((hi - lo) * 10.0).round() as usize).max(1);
    let mut counts = vec![vec![0usize; runs.len()]; bins];
    for (r, s) in runs.iter().enumerate() {
        for x in &s.samples {
            let k = ((x * 10.0).floor() as i64 - lo_t).clamp(0, bins as i64 - 1) as usize;
            counts[k][r] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo_t + k as i64, c))
        .collect()
}

/// Writes summary, histogram, per-operation series and warmup CSVs.
pub fn emit_report(
    op: BenchOp,
    target: &str,
    runs: &[(Resolution, &LatencyStats)],
    out_dir: &Path,
) -> Result<ReportFiles, BenchError> {
    fs::create_dir_all(out_dir)?;
    let files = ReportFiles {
        summary: out_dir.join("summary.csv"),
        histogram: out_dir.join("histogram.csv"),
        series: out_dir.join("series.csv"),
        warmup: out_dir.join("warmup.csv"),
    };
    let labels: Vec<&str> = runs.iter().map(|(m, _)| mode_label(*m)).collect();

    let mut summary = fs::File::create(&files.summary)?;
    writeln!(summary, "mode,op,target,min,max,avg,stddev")?;
    for (mode, s) in runs {
        writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            mode_label(*mode),
            op.as_str(),
            target,
            s.min,
            s.max,
            s.avg,
            s.stddev
        )?;
    }

    let stats: Vec<&LatencyStats> = runs.iter().map(|(_, s)| *s).collect();
    let mut hist = fs::File::create(&files.histogram)?;
    writeln!(hist, "bin_start_ms,{}", labels.join(","))?;
    for (start, counts) in histogram(&stats) {
        let counts: Vec<String> = counts.iter().map(usize::to_string).collect();
        writeln!(hist, "{}.{},{}", start.div_euclid(10), start.rem_euclid(10), counts.join(","))?;
    }

    let series_header: Vec<String> = labels.iter().map(|l| format!("{l}_ms")).collect();
    let write_series = |path: &Path, pick: fn(&LatencyStats) -> &[f64]| -> Result<(), BenchError> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "op_index,{}", series_header.join(","))?;
        let rows = stats.iter().map(|s| pick(s).len()).max().unwrap_or(0);
        for k in 0..rows {
            let cells: Vec<String> = stats
                .iter()
                .map(|s| pick(s).get(k).map(f64::to_string).unwrap_or_default())
                .collect();
            writeln!(f, "{k},{}", cells.join(","))?;
        }
        Ok(())
    };
    write_series(&files.series, |s| &s.samples)?;
    write_series(&files.warmup, |s| &s.warmup)?;
    Ok(files)
}

/// Serves the bench component for remote runs: static mode at `addr`,
/// dynamic mode one port above. Runs until the returned clients drop.
pub fn serve_bench(addr: SocketAddr) -> Result<[Lwm2mClient; 2], BenchError> {
    let start = |mode, bind| {
        let mut cfg = ClientConfig::new(BENCH_ENDPOINT, "127.0.0.1:9".parse().unwrap());
        cfg.bind = bind;
        Lwm2mClient::start(bench_table(mode)?, cfg).map_err(|e| BenchError::Setup(e.to_string()))
    };
    Ok([
        start(Resolution::Static, addr)?,
        start(Resolution::Dynamic, SocketAddr::new(addr.ip(), addr.port() + 1))?,
    ])
}

impl fmt::Display for LatencyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} min={:.3} max={:.3} avg={:.3} stddev={:.3} ms",
            self.samples.len(),
            self.min,
            self.max,
            self.avg,
            self.stddev
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_laws() {
        let s = LatencyStats::from_samples(vec![1.0, 2.0, 3.0, 4.0], vec![]).unwrap();
        assert_eq!((s.min, s.max, s.avg), (1.0, 4.0, 2.5));
        assert_eq!(s.stddev, 1.25_f64.sqrt());
        assert!(LatencyStats::from_samples(vec![], vec![]).is_none());
        let c = LatencyStats::from_samples(vec![0.1; 7], vec![]).unwrap();
        assert!(c.min <= c.avg && c.avg <= c.max);
    }

    #[test]
    fn histogram_bins() {
        let s = LatencyStats::from_samples(vec![1.04, 1.05, 1.19, 2.0], vec![]).unwrap();
        let h = histogram(&[&s]);
        assert_eq!(h.first().unwrap().0, 10);
        assert_eq!(h.len(), 10);
        assert_eq!(h[0].1, vec![2]);
        assert_eq!(h[1].1, vec![1]);
        assert_eq!(h[9].1, vec![1]);
        assert_eq!(h.iter().map(|(_, c)| c[0]).sum::<usize>(), 4);
    }

    #[test]
    fn parses_cli_words() {
        assert_eq!("execute".parse::<BenchOp>(), Ok(BenchOp::Execute));
        assert_eq!("inproc".parse::<Target>(), Ok(Target::InProcess));
        assert_eq!(
            "10.0.0.2:5683".parse::<Target>(),
            Ok(Target::Remote("10.0.0.2:5683".parse().unwrap()))
        );
        assert!("nowhere".parse::<Target>().is_err());
    }
}
