use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use iat::bench::{self, BenchOp, BenchSpec, Target};
use iat::lwm2m::{Lwm2mServer, ServerConfig};
use iat::orchestrator::{check_trace, run_parallel, BatchTrace, ClockDriver, Recipe, RunOptions};
use iat::plant::{endpoint_names, plant_descriptors, write_plant_trace, HostOptions, Plant, PlantConfig, PlantHost, SharedPlant};
use iat::wrapper_gen::{aot_artifacts, generate_aot, GenMode, Resolution};

#[derive(Parser)]
#[command(name = "iat", version, about = "LWM2M wrappers for plant components")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenModeArg {
    Aot,
    Startup,
}

impl From<GenModeArg> for GenMode {
    fn from(m: GenModeArg) -> Self {
        match m {
            GenModeArg::Aot => GenMode::AheadOfTime,
            GenModeArg::Startup => GenMode::Startup,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Execute,
    Read,
}

impl From<OpArg> for BenchOp {
    fn from(o: OpArg) -> Self {
        match o {
            OpArg::Execute => BenchOp::Execute,
            OpArg::Read => BenchOp::Read,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMode {
    Static,
    Dynamic,
    Both,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate wrapper artifacts from a component description.
    Gen {
        #[arg(long)]
        cid: PathBuf,
        #[arg(long, value_enum, default_value = "aot")]
        mode: GenModeArg,
        #[arg(long, default_value = "build")]
        out: PathBuf,
    },
    /// Run the plant and register its devices with an LWM2M server.
    Serve {
        #[arg(long, required_unless_present = "bench")]
        plant: Option<PathBuf>,
        #[arg(long, required_unless_present = "bench")]
        server: Option<SocketAddr>,
        #[arg(long, value_enum, default_value = "aot")]
        mode: GenModeArg,
        #[arg(long, default_value_t = 60)]
        lifetime: u32,
        /// Simulated seconds per wall second; overrides the plant file.
        #[arg(long)]
        time_scale: Option<f64>,
        /// Stop after this many wall seconds instead of running until killed.
        #[arg(long)]
        duration: Option<f64>,
        /// Serve the latency bench component instead of the plant.
        #[arg(long)]
        bench: bool,
        /// Bench address; dynamic mode listens one port above.
        #[arg(long, default_value = "127.0.0.1:5783")]
        bind: SocketAddr,
    },
    /// Run recipes and write the batch trace.
    Run {
        #[arg(long = "recipe", required = true)]
        recipes: Vec<PathBuf>,
        /// Plant physics for the in-process plant.
        #[arg(long)]
        plant: Option<PathBuf>,
        /// Use a plant started by `iat serve` instead of an in-process one.
        #[arg(long)]
        served: bool,
        /// Server address for a served plant.
        #[arg(long, default_value = "127.0.0.1:5683")]
        listen: SocketAddr,
        /// Served plant only: seconds to wait for its devices to register.
        #[arg(long, default_value_t = 30.0)]
        wait: f64,
        /// Served plant only: must match the served plant.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
        #[arg(long, default_value = "trace.csv")]
        trace_out: PathBuf,
        #[arg(long)]
        plant_trace: Option<PathBuf>,
    },
    /// Measure EXECUTE or READ round-trip latency.
    Bench {
        #[arg(long, value_enum, default_value = "execute")]
        op: OpArg,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, value_enum, default_value = "both")]
        mode: BenchMode,
        #[arg(long, default_value = "localhost")]
        target: Target,
        /// Defaults to fill for EXECUTE and filling for READ.
        #[arg(long)]
        path: Option<String>,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        #[arg(long, default_value = "bench_out")]
        out: PathBuf,
    },
    /// Check a batch trace for pipe, mixer and phase-order violations.
    Check {
        #[arg(long)]
        trace: PathBuf,
    },
}

type CliResult = Result<ExitCode, String>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = e.print();
            if e.use_stderr() && !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Cmd::Gen { cid, mode, out } => gen(&cid, mode.into(), &out),
        Cmd::Serve {
            plant,
            server,
            mode,
            lifetime,
            time_scale,
            duration,
            bench,
            bind,
        } => {
            if bench {
                serve_bench(bind, duration)
            } else {
                serve(&plant.unwrap(), server.unwrap(), mode.into(), lifetime, time_scale, duration)
            }
        }
        Cmd::Run {
            recipes,
            plant,
            served,
            listen,
            wait,
            time_scale,
            trace_out,
            plant_trace,
        } => run(&recipes, plant.as_deref(), served.then_some((listen, wait, time_scale)), &trace_out, plant_trace.as_deref()),
        Cmd::Bench {
            op,
            n,
            mode,
            target,
            path,
            warmup,
            out,
        } => run_bench(op.into(), n, mode, target, path, warmup, &out),
        Cmd::Check { trace } => check(&trace),
    };
    result.unwrap_or_else(|e| {
        eprintln!("iat: {e}");
        ExitCode::from(2)
    })
}

fn gen(cid: &Path, mode: GenMode, out: &Path) -> CliResult {
    let text = fs::read_to_string(cid).map_err(|e| format!("{}: {e}", cid.display()))?;
    match mode {
        GenMode::AheadOfTime => {
            let files = generate_aot(&text, out).map_err(|e| e.to_string())?;
            println!("{}", files.descriptors.display());
            println!("{}", files.manifest.display());
        }
        GenMode::Startup => {
            // Nothing is written: startup wrappers parse the CID when they start.
            let art = aot_artifacts(&text).map_err(|e| e.to_string())?;
            for d in &art.descriptors {
                println!("{} {} ({} resources)", d.id, d.name, d.resources.len());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_plant(path: Option<&Path>) -> Result<PlantConfig, String> {
    match path {
        Some(p) => PlantConfig::load(p).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(PlantConfig::default()),
    }
}

fn serve(
    plant: &Path,
    server: SocketAddr,
    mode: GenMode,
    lifetime: u32,
    time_scale: Option<f64>,
    duration: Option<f64>,
) -> CliResult {
    let cfg = load_plant(Some(plant))?;
    let scale = time_scale.unwrap_or(cfg.clock.time_scale);
    let shared = SharedPlant::new(Plant::new(cfg));
    let opts = HostOptions {
        mode,
        lifetime,
        ..Default::default()
    };
    // The server may come up after us.
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut host = loop {
        match PlantHost::start(shared.clone(), server, &opts) {
            Ok(h) => break h,
            Err(e) if Instant::now() < deadline => {
                log::info!("registration failed, retrying: {e}");
                thread::sleep(Duration::from_millis(500));
            }
            Err(e) => return Err(e.to_string()),
        }
    };
    host.run_real_clock(scale);
    println!("serving {} at {scale}x", endpoint_names().join(","));
    sleep_for(duration);
    host.shutdown();
    Ok(ExitCode::SUCCESS)
}

fn serve_bench(bind: SocketAddr, duration: Option<f64>) -> CliResult {
    let _clients = bench::serve_bench(bind).map_err(|e| e.to_string())?;
    println!(
        "bench component: static at {bind}, dynamic at {}",
        SocketAddr::new(bind.ip(), bind.port() + 1)
    );
    sleep_for(duration);
    Ok(ExitCode::SUCCESS)
}

fn sleep_for(duration: Option<f64>) {
    match duration {
        Some(s) => thread::sleep(Duration::from_secs_f64(s)),
        None => loop {
            thread::park();
        },
    }
}

fn run(
    recipe_paths: &[PathBuf],
    plant: Option<&Path>,
    served: Option<(SocketAddr, f64, f64)>,
    trace_out: &Path,
    plant_trace: Option<&Path>,
) -> CliResult {
    let recipes = recipe_paths
        .iter()
        .map(|p| Recipe::load(p).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = load_plant(plant)?;
    let opts = RunOptions {
        ambient_temp: cfg.ambient_temp,
        ..Default::default()
    };

    let trace = match served {
        Some((listen, wait, scale)) => {
            let server = Lwm2mServer::start(
                ServerConfig {
                    bind: listen,
                    ..Default::default()
                },
                &plant_descriptors(),
            )
            .map_err(|e| e.to_string())?;
            let names = endpoint_names();
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            if !server.wait_registered(&names, Duration::from_secs_f64(wait)) {
                log::warn!("not every plant device registered within {wait} s");
            }
            let mut clock = ClockDriver::real(scale, cfg.step);
            let trace = run_parallel(&recipes, &server, &mut clock, &opts).map_err(|e| e.to_string())?;
            server.shutdown();
            trace
        }
        None => {
            let server = Lwm2mServer::start(ServerConfig::local(), &plant_descriptors()).map_err(|e| e.to_string())?;
            let mut p = Plant::new(cfg);
            p.set_tracing(plant_trace.is_some());
            let shared = SharedPlant::new(p);
            let mut host =
                PlantHost::start(shared.clone(), server.local_addr(), &HostOptions::default()).map_err(|e| e.to_string())?;
            let mut clock = ClockDriver::Virtual(shared.clone());
            let trace = run_parallel(&recipes, &server, &mut clock, &opts).map_err(|e| e.to_string())?;
            host.shutdown();
            server.shutdown();
            if let Some(path) = plant_trace {
                let events = shared.lock().take_trace();
                let f = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
                write_plant_trace(&events, f).map_err(|e| e.to_string())?;
            }
            trace
        }
    };

    let f = fs::File::create(trace_out).map_err(|e| format!("{}: {e}", trace_out.display()))?;
    trace.write_csv(f).map_err(|e| e.to_string())?;
    println!("{}", trace_out.display());
    let aborted = trace.events.iter().any(|e| e.event.starts_with("abort"));
    Ok(if aborted { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn run_bench(
    op: BenchOp,
    n: usize,
    mode: BenchMode,
    target: Target,
    path: Option<String>,
    warmup: usize,
    out: &Path,
) -> CliResult {
    let path = match path {
        Some(p) => p.parse().map_err(|e| format!("--path {p}: {e}"))?,
        None => op.default_path(),
    };
    let label = target.label();
    let files = if mode == BenchMode::Both {
        let report = bench::compare_modes(op, n, target, warmup, path).map_err(|e| e.to_string())?;
        println!("static  {}", report.static_stats);
        println!("dynamic {}", report.dynamic_stats);
        println!("{} probes answered identically", report.probes);
        bench::emit_report(
            op,
            &label,
            &[
                (Resolution::Static, &report.static_stats),
                (Resolution::Dynamic, &report.dynamic_stats),
            ],
            out,
        )
    } else {
        let resolution = if mode == BenchMode::Static {
            Resolution::Static
        } else {
            Resolution::Dynamic
        };
        let mut spec = BenchSpec::new(op, resolution, target);
        spec.n = n;
        spec.warmup = warmup;
        spec.path = path;
        let stats = bench::run_bench(&spec).map_err(|e| e.to_string())?;
        println!("{} {stats}", bench::mode_label(resolution));
        bench::emit_report(op, &label, &[(resolution, &stats)], out)
    }
    .map_err(|e| e.to_string())?;
    for f in [&files.summary, &files.histogram, &files.series, &files.warmup] {
        println!("{}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn check(path: &Path) -> CliResult {
    let f = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let trace = BatchTrace::read_csv(f).map_err(|e| format!("{}: {e}", path.display()))?;
    match check_trace(&trace) {
        Ok(()) => {
            println!("ok: {} events", trace.events.len());
            Ok(ExitCode::SUCCESS)
        }
        Err(violations) => {
            for v in &violations {
                println!("{v}");
            }
            Ok(ExitCode::from(1))
        }
    }
}
