//! Time EXECUTE round trips against statically and dynamically resolved
//! wrappers over loopback and write the CSV report.
//!
//! cargo run --release --example latency_bench [N] [OUT_DIR]

use iat::bench::{compare_modes, emit_report, BenchOp, Target};
use iat::wrapper_gen::Resolution;

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(1000, |a| a.parse().expect("N"));
    let out = args.next().unwrap_or_else(|| "bench_out".into());

    let report = compare_modes(BenchOp::Execute, n, Target::Localhost, 100, BenchOp::Execute.default_path()).unwrap();
    println!("static  {}", report.static_stats);
    println!("dynamic {}", report.dynamic_stats);
    println!("{} probes answered identically", report.probes);
    let files = emit_report(
        report.op,
        &report.target,
        &[
            (Resolution::Static, &report.static_stats),
            (Resolution::Dynamic, &report.dynamic_stats),
        ],
        out.as_ref(),
    )
    .unwrap();
    println!("{}", files.summary.display());
}
