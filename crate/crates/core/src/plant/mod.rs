//! Simulated liqueur plant: four smart silos and a shared pipe, reachable
//! only through generated LWM2M wrappers.
//!
//! Silos 1 and 2 take raw liquid from an external feed; 2 and 4 carry a
//! heater and temperature sensor; 3 and 4 carry a mixer. Mixers 3 and 4 are
//! never powered together and the pipe serves one batch at a time.

mod host;
mod sim;
mod wrappers;

use std::sync::{Arc, Mutex, MutexGuard};

pub use host::{HostError, HostOptions, PlantHost};
pub use sim::{
    write_plant_trace, ClockConfig, ClockMode, Command, ConfigError, Outcome, PipeGrant, PipeState, Plant,
    PlantConfig, PlantError, PlantEvent, SiloConfig, SiloState, StepFlows,
};
pub use wrappers::{wire_wrappers, DeviceWrapper, PipeBinding, PlantWrappers, SiloBinding};

use crate::cid::{lower_to_descriptors, parse_cid};
use crate::lwm2m::ChangeSignal;
use crate::object_model::ObjectTypeDescriptor;

/// Smart silo as deployed in the plant, with the well-known types appended.
pub const SILO_CID: &str = concat!(include_str!("../../data/silo.cid"), "\n", include_str!("../../data/wellknown.cid"));
pub const PIPE_CID: &str = include_str!("../../data/pipe.cid");
/// The small SmartSilo: filling, fill, a heater and an inlet valve.
pub const SMARTSILO_CID: &str = include_str!("../../data/smartsilo.cid");
pub const WELLKNOWN_CID: &str = include_str!("../../data/wellknown.cid");

pub const PIPE_ENDPOINT: &str = "smartPipe";

pub fn silo_endpoint(i: usize) -> String {
    format!("smartSilo{i}")
}

/// Every endpoint the plant registers.
pub fn endpoint_names() -> Vec<String> {
    let mut names: Vec<String> = (1..=4).map(silo_endpoint).collect();
    names.push(PIPE_ENDPOINT.to_string());
    names
}

/// Object types of every plant device, as the server needs them to decode
/// responses.
pub fn plant_descriptors() -> Vec<ObjectTypeDescriptor> {
    let mut out: Vec<ObjectTypeDescriptor> = Vec::new();
    for cid in [SILO_CID, PIPE_CID] {
        let doc = parse_cid(cid).expect("shipped CID parses");
        for d in lower_to_descriptors(&doc).expect("shipped CID lowers") {
            if !out.iter().any(|o| o.id == d.id) {
                out.push(d);
            }
        }
    }
    out
}

/// A plant shared between wrappers, the clock and tests. Mutations through
/// [`update`](Self::update) and [`step`](Self::step) wake observers.
#[derive(Clone)]
pub struct SharedPlant {
    plant: Arc<Mutex<Plant>>,
    signals: Arc<Mutex<Vec<ChangeSignal>>>,
}

impl SharedPlant {
    pub fn new(plant: Plant) -> Self {
        SharedPlant {
            plant: Arc::new(Mutex::new(plant)),
            signals: Arc::new(Mutex::new(Vec::new())),
        }
    }

    /// Read access. Changes made through the guard do not wake observers.
    pub fn lock(&self) -> MutexGuard<'_, Plant> {
        self.plant.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn update<R>(&self, f: impl FnOnce(&mut Plant) -> R) -> R {
        let r = f(&mut self.lock());
        self.notify();
        r
    }

    /// One configured step.
    pub fn step(&self) -> StepFlows {
        self.update(|p| {
            let dt = p.config().step;
            p.step(dt)
        })
    }

    pub fn now(&self) -> f64 {
        self.lock().now()
    }

    pub fn subscribe(&self, signal: ChangeSignal) {
        self.signals.lock().unwrap().push(signal);
    }

    fn notify(&self) {
        for s in self.signals.lock().unwrap().iter() {
            s.notify();
        }
    }
}
