//! Run one kind-A and one kind-B batch side by side on the simulated plant
//! under the virtual clock and print the batch trace.
//!
//! cargo run --example liqueur_batch [TRACE_CSV]

use iat::lwm2m::{Lwm2mServer, ServerConfig};
use iat::orchestrator::{check_trace, run_parallel, ClockDriver, Kind, Recipe, RunOptions};
use iat::plant::{plant_descriptors, HostOptions, Plant, PlantConfig, PlantHost, SharedPlant};

fn main() {
    let server = Lwm2mServer::start(ServerConfig::local(), &plant_descriptors()).unwrap();
    let plant = SharedPlant::new(Plant::new(PlantConfig::default()));
    let _host = PlantHost::start(plant.clone(), server.local_addr(), &HostOptions::default()).unwrap();

    let recipes = [
        Recipe::new(Kind::A, "A1", 40.0, 10.0).with_basic_process(5.0),
        Recipe::new(Kind::B, "B1", 35.0, 10.0),
    ];
    let mut clock = ClockDriver::Virtual(plant.clone());
    let trace = run_parallel(&recipes, &server, &mut clock, &RunOptions::default()).unwrap();

    for e in &trace.events {
        println!("{:>7.1}  {}  {}", e.time_s, e.batch_id, e.event);
    }
    println!("check: {:?}", check_trace(&trace).map(|_| "ok"));
    if let Some(path) = std::env::args().nth(1) {
        trace.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
        println!("wrote {path}");
    }
}
