#![allow(dead_code)]

use std::time::Duration;

use iat::lwm2m::{Lwm2mServer, ServerConfig};
use iat::plant::{endpoint_names, plant_descriptors, HostOptions, Plant, PlantConfig, PlantHost, SharedPlant};
use iat::wrapper_gen::GenMode;

/// A server, the simulated plant and its registered clients on loopback.
pub struct Rig {
    pub host: PlantHost,
    pub server: Lwm2mServer,
    pub plant: SharedPlant,
}

impl Rig {
    pub fn new() -> Self {
        Self::with(GenMode::AheadOfTime, &[])
    }

    pub fn with(mode: GenMode, skip: &[&str]) -> Self {
        let plant = SharedPlant::new(Plant::new(PlantConfig::default()));
        let server = Lwm2mServer::start(ServerConfig::local(), &plant_descriptors()).unwrap();
        let opts = HostOptions {
            mode,
            skip: skip.iter().map(|s| s.to_string()).collect(),
            ..HostOptions::default()
        };
        let host = PlantHost::start(plant.clone(), server.local_addr(), &opts).unwrap();
        let expected: Vec<String> = endpoint_names()
            .into_iter()
            .filter(|n| !skip.contains(&n.as_str()))
            .collect();
        let names: Vec<&str> = expected.iter().map(String::as_str).collect();
        assert!(server.wait_registered(&names, Duration::from_secs(5)));
        Rig { host, server, plant }
    }
}

