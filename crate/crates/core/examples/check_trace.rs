//! Check a batch trace CSV, or a built-in forged one when no file is given.
//!
//! cargo run --example check_trace [TRACE_CSV]

use iat::orchestrator::{check_trace, BatchTrace};

const FORGED: &str = "time_s,batch_id,event
0.0,A1,phase:fill1
0.0,B1,phase:fill2
20.0,A1,pipe_acquire:1->4
21.0,B1,pipe_acquire:2->3
25.0,B1,mixer_on:3
26.0,A1,mixer_on:4
30.0,A1,abort:test
30.0,B1,abort:test
";

fn main() {
    let trace = match std::env::args().nth(1) {
        Some(path) => BatchTrace::read_csv(std::fs::File::open(path).unwrap()).unwrap(),
        None => BatchTrace::read_csv(FORGED.as_bytes()).unwrap(),
    };
    match check_trace(&trace) {
        Ok(()) => println!("ok"),
        Err(vs) => {
            for v in vs {
                println!("{v}");
            }
            std::process::exit(1);
        }
    }
}
