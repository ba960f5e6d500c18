//! Observe silo 2's temperature sensor while its heater runs.
//!
//! cargo run --example observe_temperature

use std::sync::mpsc;
use std::time::Duration;

use iat::lwm2m::{Attributes, Lwm2mServer, ServerConfig};
use iat::object_model::ResourcePath;
use iat::plant::{plant_descriptors, silo_endpoint, HostOptions, Plant, PlantConfig, PlantHost, SharedPlant};

fn main() {
    let server = Lwm2mServer::start(ServerConfig::local(), &plant_descriptors()).unwrap();
    let plant = SharedPlant::new(Plant::new(PlantConfig::default()));
    let _host = PlantHost::start(plant.clone(), server.local_addr(), &HostOptions::default()).unwrap();
    let ep = silo_endpoint(2);
    assert!(server.wait_registered(&[&ep], Duration::from_secs(5)));

    let temp = ResourcePath::resource(3303, 0, 5700);
    server
        .write_attributes(
            &ep,
            &temp,
            Attributes {
                pmin: Some(0.0),
                pmax: Some(5.0),
            },
        )
        .unwrap();
    let (tx, rx) = mpsc::channel();
    let obs = server
        .observe(&ep, &temp, move |n| {
            let _ = tx.send(n);
        })
        .unwrap();
    println!("initial {:?}", obs.initial.value());

    server.execute(&ep, &ResourcePath::resource(16668, 0, 1), None).unwrap();
    for _ in 0..6 {
        plant.step();
        match rx.recv_timeout(Duration::from_secs(2)) {
            Ok(n) => println!("t={:>4} seq={} {:?}", plant.now(), n.seq, n.content.as_ref().and_then(|c| c.value())),
            Err(_) => println!("no notification"),
        }
    }
    println!("cancelled, last value {:?}", server.cancel_observe(&obs).unwrap().value());
}
