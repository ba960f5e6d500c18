//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::net::UdpSocket;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::Rig;
use iat::bench::{canonical_response, probe_requests, LatencyStats};
use iat::coap::{decode, CoapConfig, CoapEndpoint, CoapError, CoapOption, Code, Message, MessageType};
use iat::lwm2m::{ClientConfig, Lwm2mClient, Lwm2mError, Lwm2mServer, ServerConfig};
use iat::object_model::{legality_check, Depth, InstanceRecord, Lwm2mOp, ResourcePath, ResourceValue, Violation};
use iat::orchestrator::{check_trace, run_parallel, BatchTrace, ClockDriver, Kind, Recipe, RunOptions, TraceEvent};
use iat::plant::{
    endpoint_names, plant_descriptors, silo_endpoint, wire_wrappers, Command, HostOptions, Plant, PlantConfig,
    PlantHost, SharedPlant, SMARTSILO_CID,
};
use iat::wrapper_gen::{aot_artifacts, generate, Binding, GenMode, Handler, HandlerRegistry, InstanceBinding};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn hex(s: &str) -> Vec<u8> {
    s.split_whitespace().map(|b| u8::from_str_radix(b, 16).unwrap()).collect()
}

fn fixture_fidelity() -> Outcome {
    let first = aot_artifacts(SMARTSILO_CID).map_err(|e| e.to_string())?;
    let doc: serde_json::Value = serde_json::from_slice(&first.descriptor_json).map_err(|e| e.to_string())?;
    let silo = doc["objects"]
        .as_array()
        .and_then(|a| a.iter().find(|o| o["id"] == 16663))
        .ok_or("object 16663 missing")?;
    ensure!(silo["name"] == "SmartSilo", "name {}", silo["name"]);
    let res: Vec<(u64, &str, Vec<&str>, &str)> = silo["resourcedefs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                r["id"].as_u64().unwrap(),
                r["name"].as_str().unwrap(),
                r["operations"].as_array().unwrap().iter().map(|o| o.as_str().unwrap()).collect(),
                r["type"].as_str().unwrap(),
            )
        })
        .collect();
    ensure!(
        res == vec![(0, "filling", vec!["R"], "boolean"), (2, "fill", vec!["E"], "boolean")],
        "resources {res:?}"
    );
    let refs: Vec<(u64, &str, u64)> = silo["instancerefs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["id"].as_u64().unwrap(), r["name"].as_str().unwrap(), r["objecttypeid"].as_u64().unwrap()))
        .collect();
    ensure!(refs == vec![(0, "heater", 16668), (1, "inValve", 16664)], "refs {refs:?}");
    for _ in 0..5 {
        let again = aot_artifacts(SMARTSILO_CID).map_err(|e| e.to_string())?;
        ensure!(again.descriptor_json == first.descriptor_json, "descriptor JSON not byte-stable");
        ensure!(again.manifest == first.manifest, "manifest not byte-stable");
    }
    Ok(format!("{} bytes, stable over 6 runs", first.descriptor_json.len()))
}

// Admissible depths per operation: Object, Instance, Resource, Resource Instance.
const MATRIX: [(Lwm2mOp, [bool; 4]); 8] = [
    (Lwm2mOp::Read, [true, true, true, true]),
    (Lwm2mOp::Write, [true, true, true, true]),
    (Lwm2mOp::Execute, [false, false, true, false]),
    (Lwm2mOp::Discover, [true, true, true, true]),
    (Lwm2mOp::WriteAttributes, [true, true, true, true]),
    (Lwm2mOp::Create, [true, false, false, false]),
    (Lwm2mOp::Delete, [false, true, false, false]),
    (Lwm2mOp::Observe, [false, true, true, false]),
];

const PROBE_CID: &str = "component Probe root=Probe;
object-type Probe id=30000 multiple {
    resource values id=0 ops=[read,write] type=integer multiple;
    resource act id=1 ops=[execute];
}
";

fn legality_matrix() -> Outcome {
    let doc = iat::cid::parse_cid(PROBE_CID).map_err(|e| e.to_string())?;
    let mut reg = iat::object_model::registry_build(&iat::cid::lower_to_descriptors(&doc).unwrap()).unwrap();
    reg.add_instance(InstanceRecord {
        object_id: 30000,
        instance_id: 0,
        via: None,
    })
    .unwrap();
    let mut cells = 0;
    for (op, row) in MATRIX {
        let res = if op == Lwm2mOp::Execute { 1 } else { 0 };
        let paths = [
            ResourcePath::object(30000),
            ResourcePath::instance(30000, 0),
            ResourcePath::resource(30000, 0, res),
            ResourcePath::resource_instance(30000, 0, 0, 1),
        ];
        for (k, depth) in Depth::ALL.iter().enumerate() {
            let want = if row[k] {
                Ok(())
            } else {
                Err(Violation::WrongConstruct { op, depth: *depth })
            };
            let got = legality_check(op, &paths[k], &reg);
            ensure!(got == want, "{op:?} on {depth:?}: {got:?}, expected {want:?}");
            cells += 1;
        }
    }
    let rig = Rig::new();
    match rig.server.execute(&silo_endpoint(1), &ResourcePath::instance(16663, 0), None) {
        Err(Lwm2mError::Status(Code::METHOD_NOT_ALLOWED)) => {}
        other => return Err(format!("EXECUTE /16663/0 gave {other:?}")),
    }
    Ok(format!("{cells} cells match; EXECUTE /16663/0 -> 4.05 over UDP"))
}

fn arb_message() -> impl Strategy<Value = Message> {
    let options = prop::collection::vec((0u16..=300, prop::collection::vec(any::<u8>(), 0..=20)), 0..8).prop_map(|steps| {
        let mut number = 0u16;
        steps
            .into_iter()
            .map(|(delta, value)| {
                number += delta;
                CoapOption { number, value }
            })
            .collect::<Vec<_>>()
    });
    (
        0u8..4,
        any::<u8>().prop_filter("class 1 and 6/7 are reserved", |c| !matches!(c >> 5, 1 | 6 | 7)),
        any::<u16>(),
        prop::collection::vec(any::<u8>(), 0..=8),
        options,
        prop::collection::vec(any::<u8>(), 0..64),
    )
        .prop_map(|(t, code, mid, token, options, payload)| {
            let mtype = [MessageType::Con, MessageType::Non, MessageType::Ack, MessageType::Rst][t as usize];
            let mut m = Message::new(mtype, Code(code), mid).with_token(&token);
            m.options = options;
            m.payload = payload;
            if code == 0 {
                m.token.clear();
                m.options.clear();
                m.payload.clear();
            }
            m
        })
}

fn coap_codec() -> Outcome {
    let mut get = Message::request(MessageType::Con, Code::GET, "/16663/0/0").with_token(&[0xab]);
    get.message_id = 0x1234;
    ensure!(
        get.encode().unwrap() == hex("41 01 12 34 ab b5 31 36 36 36 33 01 30 01 30"),
        "GET vector differs"
    );
    let ack = Message::empty(MessageType::Ack, 0x1234);
    ensure!(ack.encode().unwrap() == hex("60 00 12 34"), "empty ACK vector differs");

    let cases = 10_000;
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&arb_message(), |m| {
            let bytes = m.encode().map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?, m);
            Ok(())
        })
        .map_err(|e| format!("round trip: {e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..cases {
        let len = rng.gen_range(0..96);
        let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let caught = panic::catch_unwind(|| decode(&bytes));
        ensure!(caught.is_ok(), "decode panicked on {bytes:02x?}");
    }
    Ok(format!("{cases} round trips, {cases} fuzzed decodes, both vectors match"))
}

fn fast_coap() -> CoapConfig {
    CoapConfig {
        ack_timeout: Duration::from_millis(40),
        ack_random_factor: 1.5,
        max_retransmit: 4,
        exchange_lifetime: Duration::from_secs(5),
        response_timeout: Duration::from_millis(500),
        workers: 2,
    }
}

fn dedup_and_retransmit() -> Outcome {
    // Counting executor behind the generated SmartSilo wrapper.
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let mut registry = HandlerRegistry::new()
        .with("SmartSilo", "filling", Handler::reader(|_| Ok(ResourceValue::Boolean(false).into())))
        .with(
            "SmartSilo",
            "fill",
            Handler::executor(move |_, _| {
                c.fetch_add(1, Ordering::SeqCst);
                Ok(())
            }),
        );
    for (ty, names) in [("Heater", ["heaterOn", "heaterOff"]), ("Valve", ["openValve", "closeValve"])] {
        for n in names {
            registry = registry.with(ty, n, Handler::executor(|_, _| Ok(())));
        }
    }
    registry = registry
        .with("Heater", "status", Handler::reader(|_| Ok(ResourceValue::Boolean(false).into())))
        .with("Valve", "open", Handler::reader(|_| Ok(ResourceValue::Boolean(false).into())));
    let table = generate(
        GenMode::AheadOfTime,
        SMARTSILO_CID,
        &registry,
        &[InstanceBinding::new(16663, 0, Binding::new(()))],
        None,
    )
    .map_err(|e| e.to_string())?;
    let mut cfg = ClientConfig::new("dedup", "127.0.0.1:9".parse().unwrap());
    cfg.coap = fast_coap();
    let client = Lwm2mClient::start(table, cfg).map_err(|e| e.to_string())?;

    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    let mut req = Message::request(MessageType::Con, Code::POST, "/16663/0/2").with_token(&[9, 9]);
    req.message_id = 0x4242;
    let bytes = req.encode().unwrap();
    let mut buf = [0u8; 512];
    let mut answers = Vec::new();
    for _ in 0..3 {
        sock.send_to(&bytes, client.local_addr()).unwrap();
        let (n, _) = sock.recv_from(&mut buf).map_err(|e| e.to_string())?;
        answers.push(buf[..n].to_vec());
    }
    ensure!(calls.load(Ordering::SeqCst) == 1, "fill ran {} times", calls.load(Ordering::SeqCst));
    ensure!(answers.windows(2).all(|w| w[0] == w[1]), "duplicate answers differ");
    ensure!(decode(&answers[0]).unwrap().code == Code::CHANGED, "fill not 2.04");

    // Same on the plant: a re-executed fill would reopen the closed inlet.
    let rig = Rig::new();
    let silo1 = rig.host.client(&silo_endpoint(1)).unwrap().local_addr();
    sock.send_to(&bytes, silo1).unwrap();
    sock.recv_from(&mut buf).map_err(|e| e.to_string())?;
    ensure!(rig.plant.lock().silo(1).unwrap().in_valve, "fill did not open the inlet");
    rig.plant.update(|p| p.command(1, Command::CloseIn)).unwrap();
    sock.send_to(&bytes, silo1).unwrap();
    sock.recv_from(&mut buf).map_err(|e| e.to_string())?;
    ensure!(!rig.plant.lock().silo(1).unwrap().in_valve, "duplicate fill reached the plant");

    // Retransmission gaps toward a peer that never answers.
    let hole = UdpSocket::bind("127.0.0.1:0").unwrap();
    hole.set_read_timeout(Some(Duration::from_secs(3))).unwrap();
    let coap = fast_coap();
    let ep = CoapEndpoint::bind("127.0.0.1:0", coap.clone()).unwrap();
    let to = hole.local_addr().unwrap();
    let waiter = thread::spawn(move || ep.request(to, Message::request(MessageType::Con, Code::POST, "/16663/0/2")));
    let mut arrivals = Vec::new();
    while arrivals.len() < 5 {
        hole.recv_from(&mut buf).map_err(|e| e.to_string())?;
        arrivals.push(Instant::now());
    }
    ensure!(waiter.join().unwrap() == Err(CoapError::Timeout), "no timeout after the last retransmission");
    let gaps: Vec<f64> = arrivals.windows(2).map(|w| (w[1] - w[0]).as_secs_f64()).collect();
    let t = coap.ack_timeout.as_secs_f64();
    ensure!(gaps[0] >= t * 0.95 && gaps[0] <= t * 1.5 + 0.02, "first gap {:.4}", gaps[0]);
    for w in gaps.windows(2) {
        ensure!((1.7..=2.3).contains(&(w[1] / w[0])), "gaps {gaps:?}");
    }
    let ms: Vec<String> = gaps.iter().map(|g| format!("{:.0}", g * 1e3)).collect();
    Ok(format!("fill ran once for 3 copies; gaps {} ms", ms.join("/")))
}

fn run_virtual(rig: &Rig, recipes: &[Recipe]) -> Result<BatchTrace, String> {
    let mut clock = ClockDriver::Virtual(rig.plant.clone());
    run_parallel(recipes, &rig.server, &mut clock, &RunOptions::default()).map_err(|e| e.to_string())
}

fn end_to_end_batch() -> Outcome {
    let cfg = PlantConfig::default();
    // Oracle: heating starts at ambient and gains heat_rate * step per step.
    let steps = ((35.0 - cfg.ambient_temp) / (cfg.heat_rate * cfg.step)).ceil();
    let heat_oracle = steps * cfg.step;

    let rig = Rig::new();
    let trace = run_virtual(&rig, &[Recipe::new(Kind::B, "B1", 35.0, 10.0)])?;
    let phases = trace.phases("B1");
    ensure!(
        phases == ["fill2", "heat2", "transfer_2_to_3", "mix3", "empty3", "done"],
        "phases {phases:?}"
    );
    let heat = trace.phase_time("B1", iat::orchestrator::BatchPhase::Heat2).unwrap();
    let next = trace.phase_time("B1", iat::orchestrator::BatchPhase::Transfer2To3).unwrap();
    ensure!(next - heat == heat_oracle, "heat2 took {} s, oracle {heat_oracle}", next - heat);
    let mix = trace.phase_time("B1", iat::orchestrator::BatchPhase::Mix3).unwrap();
    let empty = trace.phase_time("B1", iat::orchestrator::BatchPhase::Empty3).unwrap();
    ensure!(empty - mix == 10.0, "mix3 took {}", empty - mix);
    Ok(format!("heat2 {heat_oracle} s as predicted, done at {} s", trace.events.last().unwrap().time_s))
}

fn constraint_properties() -> Outcome {
    let seeds = 100u64;
    let workers = 4;
    let failures: Vec<String> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    let mut bad = Vec::new();
                    for seed in (0..seeds).filter(|k| k % workers == w) {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let a = Recipe::new(Kind::A, "A1", rng.gen_range(21.0..60.0), rng.gen_range(0.5..25.0))
                            .with_basic_process(rng.gen_range(0.0..15.0));
                        let b = Recipe::new(Kind::B, "B1", rng.gen_range(21.0..60.0), rng.gen_range(0.5..25.0));
                        let rig = Rig::new();
                        match run_virtual(&rig, &[a, b]) {
                            Ok(t) => {
                                if let Err(v) = check_trace(&t) {
                                    bad.push(format!("seed {seed}: {}", v[0]));
                                } else if t.phases("A1").last() != Some(&"done") || t.phases("B1").last() != Some(&"done") {
                                    bad.push(format!("seed {seed}: a batch did not finish"));
                                }
                            }
                            Err(e) => bad.push(format!("seed {seed}: {e}")),
                        }
                    }
                    bad
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    ensure!(failures.is_empty(), "{}", failures.join("; "));

    let forged = |rows: &[(f64, &str, &str)]| BatchTrace {
        events: rows.iter().map(|(t, b, e)| TraceEvent::new(*t, b, *e)).collect(),
    };
    let pipe = forged(&[
        (0.0, "A1", "pipe_acquire:1->4"),
        (1.0, "B1", "pipe_acquire:2->3"),
        (2.0, "A1", "abort:x"),
        (2.0, "B1", "abort:x"),
    ]);
    let mixer = forged(&[
        (0.0, "A1", "mixer_on:4"),
        (1.0, "B1", "mixer_on:3"),
        (2.0, "A1", "abort:x"),
        (2.0, "B1", "abort:x"),
    ]);
    for (t, kind) in [(pipe, "pipe overlap"), (mixer, "mixer power")] {
        match check_trace(&t) {
            Err(v) if v.iter().any(|v| v.kind.as_str() == kind) => {}
            other => return Err(format!("forged {kind} trace gave {other:?}")),
        }
    }
    Ok(format!("{seeds} seeded pairs ok, forged traces rejected"))
}

fn conservation_and_bounds() -> Outcome {
    let steps_per_seed = 30_000;
    let seeds = 4;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut p = Plant::new(PlantConfig::default());
        let cfg = p.config().clone();
        for step in 0..steps_per_seed {
            for _ in 0..rng.gen_range(0..3) {
                let cmd = match rng.gen_range(0..12) {
                    0 => Command::Fill,
                    1 => Command::Empty,
                    2 => Command::Heat2Temp(rng.gen_range(15.0..90.0)),
                    3 => Command::HeaterOn,
                    4 => Command::HeaterOff,
                    5 => Command::MixerOn,
                    6 => Command::MixerOff,
                    7 => Command::OpenIn,
                    8 => Command::CloseIn,
                    9 => Command::OpenOut,
                    10 => Command::CloseOut,
                    _ => Command::Stop,
                };
                let _ = p.command(rng.gen_range(1..=4), cmd);
            }
            if rng.gen_bool(0.05) {
                let _ = p.pipe_acquire("X", rng.gen_range(1..=4), rng.gen_range(1..=4));
            }
            if rng.gen_bool(0.03) {
                p.pipe_release(None);
            }
            let before: Vec<f64> = (1..=4).map(|i| p.silo(i).unwrap().level).collect();
            let flows = p.step(cfg.step);
            for i in 1..=4 {
                let s = p.silo(i).unwrap();
                ensure!((0.0..=1.0).contains(&s.level), "seed {seed} step {step}: level {}", s.level);
                ensure!(
                    s.low == (s.level <= cfg.low_threshold) && s.high == (s.level >= cfg.high_threshold),
                    "seed {seed} step {step}: sensors disagree with level {}",
                    s.level
                );
                let mut expect = before[i - 1] + flows.inflow[i - 1] - flows.outflow[i - 1];
                if let Some((src, dst, d)) = flows.transfer {
                    if src == i {
                        expect -= d;
                    }
                    if dst == i {
                        expect += d;
                    }
                }
                ensure!((s.level - expect).abs() <= 1e-9, "seed {seed} step {step}: silo {i} off by {}", s.level - expect);
            }
            if let Some((src, dst, d)) = flows.transfer {
                let out = before[src - 1] - p.silo(src).unwrap().level + flows.inflow[src - 1] - flows.outflow[src - 1];
                let inn = p.silo(dst).unwrap().level - before[dst - 1] - flows.inflow[dst - 1] + flows.outflow[dst - 1];
                ensure!((out - d).abs() <= 1e-9 && (inn - d).abs() <= 1e-9, "transfer not conserved");
            }
        }
    }
    Ok(format!("{} steps", steps_per_seed * seeds))
}

fn mode_equivalence() -> Outcome {
    let fresh = || SharedPlant::new(Plant::new(PlantConfig::default()));
    let (pa, pb) = (fresh(), fresh());
    let (wa, wb) = (wire_wrappers(&pa), wire_wrappers(&pb));
    let mut probes = 0;
    for (da, db) in wa.devices.iter().zip(&wb.devices) {
        let ta = wa.table(da, GenMode::AheadOfTime).map_err(|e| e.to_string())?;
        let tb = wb.table(db, GenMode::Startup).map_err(|e| e.to_string())?;
        ensure!(
            ta.resolution() != tb.resolution(),
            "both tables resolve the same way"
        );
        let requests = probe_requests(&ta);
        let ca = Lwm2mClient::start(ta, ClientConfig::new(da.endpoint_name.clone(), "127.0.0.1:9".parse().unwrap()))
            .map_err(|e| e.to_string())?;
        let cb = Lwm2mClient::start(tb, ClientConfig::new(db.endpoint_name.clone(), "127.0.0.1:9".parse().unwrap()))
            .map_err(|e| e.to_string())?;
        for (k, req) in requests.iter().enumerate() {
            let (ra, rb) = (ca.handle_request(req), cb.handle_request(req));
            ensure!(
                canonical_response(&ra) == canonical_response(&rb),
                "{} probe {k} {} /{}: {} vs {}",
                da.endpoint_name,
                req.code,
                req.uri_path().join("/"),
                ra.code,
                rb.code
            );
            probes += 1;
            if k % 7 == 0 {
                pa.step();
                pb.step();
            }
        }
        ca.shutdown();
        cb.shutdown();
    }
    Ok(format!("{probes} probes over {} devices byte-identical", wa.devices.len()))
}

fn benchmark() -> Outcome {
    let n = 1000;
    let dir = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_iat"))
        .args(["bench", "--op", "execute", "--n", "1000", "--mode", "both", "--target", "localhost", "--out"])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "bench exited {}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let files = iat::bench::ReportFiles {
        summary: dir.path().join("summary.csv"),
        histogram: dir.path().join("histogram.csv"),
        series: dir.path().join("series.csv"),
        warmup: dir.path().join("warmup.csv"),
    };

    let series = std::fs::read_to_string(&files.series).unwrap();
    let mut cols: [Vec<f64>; 2] = Default::default();
    for line in series.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        cols[0].push(cells[1].parse().unwrap());
        cols[1].push(cells[2].parse().unwrap());
    }
    ensure!(cols[0].len() == n && cols[1].len() == n, "series rows {} / {}", cols[0].len(), cols[1].len());
    let summary = std::fs::read_to_string(&files.summary).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
    ensure!(rows[0][..3] == ["static", "EXECUTE", "localhost"], "row {:?}", rows[0]);
    ensure!(rows[1][..3] == ["dynamic", "EXECUTE", "localhost"], "row {:?}", rows[1]);
    let mut avgs = Vec::new();
    for (row, col) in rows.iter().zip(cols) {
        let again = LatencyStats::from_samples(col, vec![]).unwrap();
        let nums: Vec<f64> = row[3..].iter().map(|c| c.parse().unwrap()).collect();
        ensure!(
            nums == [again.min, again.max, again.avg, again.stddev],
            "{} summary {nums:?} but series gives {again}",
            row[0]
        );
        ensure!(again.avg < 50.0, "{} avg {} ms", row[0], again.avg);
        avgs.push(again.avg);
    }
    let hist = std::fs::read_to_string(&files.histogram).unwrap();
    let total: usize = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|c| c.parse::<usize>().unwrap()).sum::<usize>())
        .sum();
    ensure!(total == 2 * n, "histogram holds {total} samples");
    Ok(format!("1000 samples per mode; avg static {:.3} ms, dynamic {:.3} ms", avgs[0], avgs[1]))
}

fn registration_lifecycle() -> Outcome {
    let server = Lwm2mServer::start(ServerConfig::local(), &plant_descriptors()).map_err(|e| e.to_string())?;
    let plant = SharedPlant::new(Plant::new(PlantConfig::default()));
    let opts = HostOptions {
        lifetime: 2,
        ..HostOptions::default()
    };
    let host = PlantHost::start(plant, server.local_addr(), &opts).map_err(|e| e.to_string())?;
    let names = endpoint_names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    ensure!(server.wait_registered(&refs, Duration::from_secs(5)), "not all devices registered");

    let mut instances = 0;
    for c in host.clients() {
        let links = c.registration_links();
        for (o, i) in c.table().instances() {
            ensure!(links.contains(&format!("</{o}/{i}>")), "{} links lack /{o}/{i}", c.endpoint_name());
            instances += 1;
        }
        let mut got = server.registration(c.endpoint_name()).unwrap().links;
        let mut want = c.table().instances().to_vec();
        got.sort();
        want.sort();
        ensure!(got == want, "server holds {got:?} for {}", c.endpoint_name());
    }

    thread::sleep(Duration::from_millis(2600));
    for c in host.clients() {
        ensure!(c.updates_sent() >= 2, "{} sent {} updates", c.endpoint_name(), c.updates_sent());
        ensure!(server.registration(c.endpoint_name()).is_some(), "{} expired", c.endpoint_name());
    }

    let (gone, lapsing) = (silo_endpoint(1), silo_endpoint(2));
    host.client(&gone).unwrap().deregister().map_err(|e| e.to_string())?;
    ensure!(server.registration(&gone).is_none(), "deregistered entry still listed");
    host.client(&lapsing).unwrap().stop_updates();
    thread::sleep(Duration::from_millis(2300));
    ensure!(server.registration(&lapsing).is_none(), "entry outlived its lifetime");
    ensure!(server.registration(&silo_endpoint(3)).is_some(), "updating entry expired");
    Ok(format!("{instances} instances listed; 2 updates survived; deregister and lapse both remove"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("fixture fidelity", fixture_fidelity, Duration::from_secs(1)),
        ("legality matrix", legality_matrix, Duration::from_secs(10)),
        ("coap codec", coap_codec, Duration::from_secs(30)),
        ("dedup and retransmission", dedup_and_retransmit, Duration::from_secs(10)),
        ("end-to-end batch", end_to_end_batch, Duration::from_secs(5)),
        ("constraint properties", constraint_properties, Duration::from_secs(60)),
        ("conservation and bounds", conservation_and_bounds, Duration::from_secs(60)),
        ("mode equivalence", mode_equivalence, Duration::from_secs(30)),
        ("benchmark reproduction", benchmark, Duration::from_secs(120)),
        ("registration lifecycle", registration_lifecycle, Duration::from_secs(20)),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, f, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > *budget => Err(format!("{detail}; took {took:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({took:.2?})", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} ({took:.2?})", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
