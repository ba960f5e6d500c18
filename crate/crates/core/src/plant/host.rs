use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::wrappers::{wire_wrappers, PlantWrappers};
use super::SharedPlant;
use crate::coap::CoapConfig;
use crate::lwm2m::{ClientConfig, Lwm2mClient, Lwm2mError};
use crate::wrapper_gen::{GenError, GenMode};

#[derive(Debug, Error)]
pub enum HostError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("{endpoint}: {source}")]
    Client { endpoint: String, source: Lwm2mError },
}

#[derive(Debug, Clone)]
pub struct HostOptions {
    pub mode: GenMode,
    /// Registration lifetime in seconds.
    pub lifetime: u32,
    pub coap: CoapConfig,
    pub bind_ip: IpAddr,
    /// Endpoints to leave out, as if their hosts were down.
    pub skip: Vec<String>,
}

impl Default for HostOptions {
    fn default() -> Self {
        HostOptions {
            mode: GenMode::AheadOfTime,
            lifetime: 60,
            coap: CoapConfig::default(),
            bind_ip: IpAddr::V4(Ipv4Addr::LOCALHOST),
            skip: Vec::new(),
        }
    }
}

/// The plant's LWM2M clients, one per device, registered with a server.
pub struct PlantHost {
    plant: SharedPlant,
    wrappers: PlantWrappers,
    clients: Vec<Lwm2mClient>,
    ticker: Option<(Arc<AtomicBool>, JoinHandle<()>)>,
}

impl PlantHost {
    /// Builds every device's wrapper, starts its client and registers it.
    pub fn start(plant: SharedPlant, server: SocketAddr, opts: &HostOptions) -> Result<Self, HostError> {
        let wrappers = wire_wrappers(&plant);
        let mut clients = Vec::new();
        for d in &wrappers.devices {
            if opts.skip.contains(&d.endpoint_name) {
                continue;
            }
            let table = wrappers.table(d, opts.mode)?;
            let mut cfg = ClientConfig::new(d.endpoint_name.clone(), server);
            cfg.lifetime = opts.lifetime;
            cfg.coap = opts.coap.clone();
            cfg.bind = SocketAddr::new(opts.bind_ip, 0);
            let err = |source| HostError::Client {
                endpoint: d.endpoint_name.clone(),
                source,
            };
            let client = Lwm2mClient::start(table, cfg).map_err(err)?;
            plant.subscribe(client.change_signal());
            client.connect().map_err(err)?;
            clients.push(client);
        }
        Ok(PlantHost {
            plant,
            wrappers,
            clients,
            ticker: None,
        })
    }

    pub fn plant(&self) -> &SharedPlant {
        &self.plant
    }

    pub fn wrappers(&self) -> &PlantWrappers {
        &self.wrappers
    }

    pub fn clients(&self) -> &[Lwm2mClient] {
        &self.clients
    }

    pub fn client(&self, endpoint_name: &str) -> Option<&Lwm2mClient> {
        self.clients.iter().find(|c| c.endpoint_name() == endpoint_name)
    }

    /// Steps the plant from a background thread, one configured step per
    /// `step / time_scale` wall seconds.
    pub fn run_real_clock(&mut self, time_scale: f64) {
        if self.ticker.is_some() {
            return;
        }
        let stop = Arc::new(AtomicBool::new(false));
        let plant = self.plant.clone();
        let flag = stop.clone();
        let step = plant.lock().config().step;
        let period = Duration::from_secs_f64(step / time_scale);
        let handle = thread::Builder::new()
            .name("plant-clock".into())
            .spawn(move || {
                let mut next = Instant::now() + period;
                while !flag.load(Ordering::SeqCst) {
                    let now = Instant::now();
                    if now < next {
                        thread::sleep((next - now).min(Duration::from_millis(20)));
                        continue;
                    }
                    plant.step();
                    next += period;
                }
            })
            .expect("spawn plant clock");
        self.ticker = Some((stop, handle));
    }

    /// Stops the clock, deregisters every client and closes their sockets.
    pub fn shutdown(&mut self) {
        if let Some((stop, handle)) = self.ticker.take() {
            stop.store(true, Ordering::SeqCst);
            let _ = handle.join();
        }
        for c in self.clients.drain(..) {
            if let Err(e) = c.deregister() {
                log::debug!("{} deregister: {e}", c.endpoint_name());
            }
            c.shutdown();
        }
    }
}

impl Drop for PlantHost {
    fn drop(&mut self) {
        self.shutdown();
    }
}
