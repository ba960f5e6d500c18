use iat::bench::{compare_modes, emit_report, run_bench, BenchOp, BenchSpec, LatencyStats, Target, DEFAULT_PATH};
use iat::wrapper_gen::Resolution;

fn read_summary(path: &std::path::Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn inproc_execute_and_read() {
    for op in [BenchOp::Execute, BenchOp::Read] {
        let mut spec = BenchSpec::new(op, Resolution::Dynamic, Target::InProcess);
        spec.n = 50;
        spec.warmup = 5;
        let s = run_bench(&spec).unwrap();
        assert_eq!(s.samples.len(), 50);
        assert_eq!(s.warmup.len(), 5);
        assert!(s.min <= s.avg && s.avg <= s.max);
    }
}

#[test]
fn localhost_modes_agree_and_report_is_consistent() {
    let report = compare_modes(BenchOp::Execute, 100, Target::Localhost, 10, DEFAULT_PATH.parse().unwrap()).unwrap();
    assert!(report.probes > 30);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(
        report.op,
        &report.target,
        &[
            (Resolution::Static, &report.static_stats),
            (Resolution::Dynamic, &report.dynamic_stats),
        ],
        dir.path(),
    )
    .unwrap();

    let series = std::fs::read_to_string(&files.series).unwrap();
    let mut cols: [Vec<f64>; 2] = Default::default();
    for line in series.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        cols[0].push(cells[1].parse().unwrap());
        cols[1].push(cells[2].parse().unwrap());
    }
    let summary = read_summary(&files.summary);
    assert_eq!(summary[0][..3], ["static", "EXECUTE", "localhost"]);
    assert_eq!(summary[1][0], "dynamic");
    for (row, col) in summary.iter().zip(cols) {
        let again = LatencyStats::from_samples(col, vec![]).unwrap();
        let nums: Vec<f64> = row[3..].iter().map(|c| c.parse().unwrap()).collect();
        assert_eq!(nums, vec![again.min, again.max, again.avg, again.stddev]);
    }

    let hist = std::fs::read_to_string(&files.histogram).unwrap();
    let total: usize = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|c| c.parse::<usize>().unwrap()).sum::<usize>())
        .sum();
    assert_eq!(total, 200);
}

#[test]
fn remote_target_unreachable_aborts() {
    let sock = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let addr = sock.local_addr().unwrap();
    let mut spec = BenchSpec::new(BenchOp::Read, Resolution::Static, Target::Remote(addr));
    spec.n = 3;
    spec.warmup = 0;
    spec.coap = iat::coap::CoapConfig::scaled(0.01);
    match run_bench(&spec) {
        Err(iat::bench::BenchError::Aborted { completed, partial, .. }) => {
            assert_eq!(completed, 0);
            assert!(partial.is_none());
        }
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn remote_target_against_served_component() {
    let probe = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let addr = probe.local_addr().unwrap();
    drop(probe);
    let _served = iat::bench::serve_bench(addr).unwrap();
    for mode in [Resolution::Static, Resolution::Dynamic] {
        let mut spec = BenchSpec::new(BenchOp::Execute, mode, Target::Remote(addr));
        spec.n = 20;
        spec.warmup = 2;
        assert_eq!(run_bench(&spec).unwrap().samples.len(), 20);
    }
}
