//! Print which operations may target each construct depth, then show the
//! wire answer to an EXECUTE on an object instance.
//!
//! cargo run --example legality_matrix

use std::time::Duration;

use iat::lwm2m::{Lwm2mError, Lwm2mServer, ServerConfig};
use iat::object_model::{Depth, Lwm2mOp, ResourcePath};
use iat::plant::{plant_descriptors, silo_endpoint, HostOptions, Plant, PlantConfig, PlantHost, SharedPlant};

fn main() {
    print!("{:<18}", "");
    for d in Depth::ALL {
        print!("{:<18}", format!("{d:?}"));
    }
    println!();
    for op in Lwm2mOp::ALL {
        print!("{:<18}", format!("{op:?}"));
        for d in Depth::ALL {
            print!("{:<18}", if op.applies_to(d) { "yes" } else { "-" });
        }
        println!();
    }

    let server = Lwm2mServer::start(ServerConfig::local(), &plant_descriptors()).unwrap();
    let plant = SharedPlant::new(Plant::new(PlantConfig::default()));
    let _host = PlantHost::start(plant, server.local_addr(), &HostOptions::default()).unwrap();
    let ep = silo_endpoint(1);
    assert!(server.wait_registered(&[&ep], Duration::from_secs(5)));
    match server.execute(&ep, &ResourcePath::instance(16663, 0), None) {
        Err(Lwm2mError::Status(code)) => println!("\nEXECUTE /16663/0 on {ep} -> {code}"),
        other => println!("\nunexpected: {other:?}"),
    }
}
