//! Register the simulated plant with an in-process LWM2M server and drive
//! silo 1 over CoAP: discover, read, execute, write.
//!
//! cargo run --example smartsilo_endpoint

use std::time::Duration;

use iat::lwm2m::{Lwm2mServer, ServerConfig};
use iat::object_model::{ResourcePath, ResourceValue};
use iat::plant::{endpoint_names, plant_descriptors, silo_endpoint, HostOptions, Plant, PlantConfig, PlantHost, SharedPlant};

fn main() {
    let server = Lwm2mServer::start(ServerConfig::local(), &plant_descriptors()).unwrap();
    let plant = SharedPlant::new(Plant::new(PlantConfig::default()));
    let host = PlantHost::start(plant.clone(), server.local_addr(), &HostOptions::default()).unwrap();
    let names = endpoint_names();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    assert!(server.wait_registered(&names, Duration::from_secs(5)));

    for r in server.registrations() {
        println!("{} at {} lt={:?}", r.endpoint_name, r.location, r.lifetime);
    }

    let ep = silo_endpoint(1);
    for link in server.discover(&ep, &ResourcePath::instance(16663, 0)).unwrap() {
        println!("  {link}");
    }

    let filling = ResourcePath::resource(16663, 0, 0);
    let level = ResourcePath::resource(16663, 0, 1);
    println!("filling={:?}", server.read_value(&ep, &filling).unwrap());
    server.execute(&ep, &ResourcePath::resource(16663, 0, 2), None).unwrap();
    println!("after fill: filling={:?}", server.read_value(&ep, &filling).unwrap());

    for _ in 0..20 {
        plant.step();
    }
    println!("10 s later: level={:?}", server.read_value(&ep, &level).unwrap());

    let target = ResourcePath::resource(16663, 0, 5);
    server
        .write(&silo_endpoint(2), &target, &ResourceValue::Float(42.0))
        .unwrap();
    println!("silo 2 heatTarget={:?}", server.read_value(&silo_endpoint(2), &target).unwrap());
    drop(host);
}
