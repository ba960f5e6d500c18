//! Handlers binding the silo and pipe CIDs to the simulated plant.

use crate::object_model::{ResourceContent, ResourceValue};
use crate::wrapper_gen::{
    generate, Binding, DispatchTable, GenError, GenMode, Handler, HandlerError, HandlerRegistry, InstanceBinding,
    InstanceContext,
};

use super::sim::{Command, Plant, PlantError};
use super::{silo_endpoint, SharedPlant, PIPE_CID, PIPE_ENDPOINT, SILO_CID};

/// What a silo instance's handlers act on.
#[derive(Clone)]
pub struct SiloBinding {
    pub plant: SharedPlant,
    pub index: usize,
}

#[derive(Clone)]
pub struct PipeBinding {
    pub plant: SharedPlant,
}

/// One LWM2M client's worth of wrapper: the CID it serves and its instances.
#[derive(Debug, Clone)]
pub struct DeviceWrapper {
    pub endpoint_name: String,
    pub cid: &'static str,
    pub instances: Vec<InstanceBinding>,
}

#[derive(Debug, Clone)]
pub struct PlantWrappers {
    pub registry: HandlerRegistry,
    pub devices: Vec<DeviceWrapper>,
}

impl PlantWrappers {
    pub fn device(&self, endpoint_name: &str) -> Option<&DeviceWrapper> {
        self.devices.iter().find(|d| d.endpoint_name == endpoint_name)
    }

    pub fn table(&self, device: &DeviceWrapper, mode: GenMode) -> Result<DispatchTable, GenError> {
        generate(mode, device.cid, &self.registry, &device.instances, None)
    }
}

fn plant_err(e: PlantError) -> HandlerError {
    HandlerError::new(e.to_string())
}

fn silo_of(ctx: &InstanceContext) -> Result<&SiloBinding, HandlerError> {
    ctx.binding
        .get::<SiloBinding>()
        .ok_or_else(|| HandlerError::new("instance is not bound to a silo"))
}

fn pipe_of(ctx: &InstanceContext) -> Result<&PipeBinding, HandlerError> {
    ctx.binding
        .get::<PipeBinding>()
        .ok_or_else(|| HandlerError::new("instance is not bound to the pipe"))
}

fn silo_reader(f: fn(&Plant, usize) -> ResourceValue) -> Handler {
    Handler::reader(move |ctx| {
        let b = silo_of(ctx)?;
        let plant = b.plant.lock();
        plant.silo(b.index).map_err(plant_err)?;
        Ok(ResourceContent::Single(f(&plant, b.index)))
    })
}

fn silo_command(cmd: fn(&InstanceContext) -> Command) -> Handler {
    Handler::executor(move |ctx, _arg| {
        let b = silo_of(ctx)?;
        // A denied mixer start is not an error: the caller reads `running` back.
        b.plant.update(|p| p.command(b.index, cmd(ctx))).map(|_| ()).map_err(plant_err)
    })
}

fn state<T>(p: &Plant, i: usize, f: impl Fn(&super::SiloState) -> T) -> T {
    f(p.silo(i).expect("silo checked by caller"))
}

fn bool_of(p: &Plant, i: usize, f: fn(&super::SiloState) -> bool) -> ResourceValue {
    ResourceValue::Boolean(state(p, i, f))
}

fn via_inlet(ctx: &InstanceContext) -> bool {
    ctx.via.as_deref() != Some("outValve")
}

fn parse_text<T: std::str::FromStr>(arg: &[u8]) -> Result<T, HandlerError> {
    std::str::from_utf8(arg)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| HandlerError::new(format!("bad argument {:?}", String::from_utf8_lossy(arg))))
}

/// Handlers for every resource of the silo and pipe object types, and one
/// device per silo plus the pipe. Silo 1 has no heater, sensor or mixer,
/// silo 2 no mixer and silo 3 no heater or sensor.
pub fn wire_wrappers(plant: &SharedPlant) -> PlantWrappers {
    let mut reg = HandlerRegistry::new();
    let mut bind = |t: &str, r: &str, h: Handler| reg.bind(t, r, h).expect("each resource is bound once");

    bind("SmartSilo", "filling", silo_reader(|p, i| bool_of(p, i, |s| s.filling())));
    bind("SmartSilo", "level", silo_reader(|p, i| ResourceValue::Float(state(p, i, |s| s.level))));
    bind("SmartSilo", "fill", silo_command(|_| Command::Fill));
    bind("SmartSilo", "empty", silo_command(|_| Command::Empty));
    bind("SmartSilo", "emptying", silo_reader(|p, i| bool_of(p, i, |s| s.emptying())));
    bind(
        "SmartSilo",
        "heatTarget",
        Handler::reader_writer(
            |ctx| {
                let b = silo_of(ctx)?;
                let t = b.plant.lock().silo(b.index).map_err(plant_err)?.heat_target;
                Ok(ResourceValue::Float(t).into())
            },
            |ctx, content| {
                let b = silo_of(ctx)?;
                let t = content
                    .single()
                    .and_then(ResourceValue::as_f64)
                    .ok_or_else(|| HandlerError::new("heatTarget takes a float"))?;
                b.plant.update(|p| p.set_heat_target(b.index, t)).map_err(plant_err)
            },
        ),
    );
    bind(
        "SmartSilo",
        "heat2Temp",
        Handler::executor(|ctx, arg| {
            let b = silo_of(ctx)?;
            let target = match arg {
                Some(a) if !a.is_empty() => Some(parse_text::<f64>(a)?),
                _ => None,
            };
            b.plant
                .update(|p| {
                    let t = match target {
                        Some(t) => t,
                        None => p.silo(b.index)?.heat_target,
                    };
                    p.command(b.index, Command::Heat2Temp(t))
                })
                .map(|_| ())
                .map_err(plant_err)
        }),
    );
    bind("SmartSilo", "stop", silo_command(|_| Command::Stop));
    bind("SmartSilo", "lowLevel", silo_reader(|p, i| bool_of(p, i, |s| s.low)));
    bind("SmartSilo", "highLevel", silo_reader(|p, i| bool_of(p, i, |s| s.high)));
    bind(
        "SmartSilo",
        "temperatureReached",
        silo_reader(|p, i| bool_of(p, i, |s| s.temperature_reached())),
    );
    bind("SmartSilo", "mixElapsed", silo_reader(|p, i| ResourceValue::Float(state(p, i, |s| s.mix_elapsed))));

    bind("Heater", "status", silo_reader(|p, i| bool_of(p, i, |s| s.heater)));
    bind("Heater", "heaterOn", silo_command(|_| Command::HeaterOn));
    bind("Heater", "heaterOff", silo_command(|_| Command::HeaterOff));

    bind(
        "Valve",
        "open",
        Handler::reader(|ctx| {
            let b = silo_of(ctx)?;
            let p = b.plant.lock();
            let s = p.silo(b.index).map_err(plant_err)?;
            let open = if via_inlet(ctx) { s.in_valve } else { s.out_valve };
            Ok(ResourceValue::Boolean(open).into())
        }),
    );
    bind(
        "Valve",
        "openValve",
        silo_command(|ctx| if via_inlet(ctx) { Command::OpenIn } else { Command::OpenOut }),
    );
    bind(
        "Valve",
        "closeValve",
        silo_command(|ctx| if via_inlet(ctx) { Command::CloseIn } else { Command::CloseOut }),
    );

    bind("Mixer", "running", silo_reader(|p, i| bool_of(p, i, |s| s.mixer)));
    bind("Mixer", "mixerOn", silo_command(|_| Command::MixerOn));
    bind("Mixer", "mixerOff", silo_command(|_| Command::MixerOff));

    bind(
        "Temperature",
        "sensorValue",
        silo_reader(|p, i| ResourceValue::Float(state(p, i, |s| s.temperature))),
    );
    bind(
        "Temperature",
        "sensorUnits",
        Handler::reader(|_| Ok(ResourceValue::String("Cel".into()).into())),
    );

    let pipe_reader = |f: fn(&super::PipeState) -> ResourceValue| {
        Handler::reader(move |ctx| Ok(f(pipe_of(ctx)?.plant.lock().pipe()).into()))
    };
    bind("SmartPipe", "transferring", pipe_reader(|p| ResourceValue::Boolean(p.transferring)));
    bind(
        "SmartPipe",
        "holder",
        pipe_reader(|p| ResourceValue::String(p.holder.clone().unwrap_or_default())),
    );
    bind("SmartPipe", "source", pipe_reader(|p| ResourceValue::Integer(p.source as i64)));
    bind("SmartPipe", "destination", pipe_reader(|p| ResourceValue::Integer(p.destination as i64)));
    bind(
        "SmartPipe",
        "acquire",
        Handler::executor(|ctx, arg| {
            let b = pipe_of(ctx)?;
            let text = std::str::from_utf8(arg.unwrap_or_default())
                .map_err(|_| HandlerError::new("acquire takes batch,source,destination"))?;
            let parts: Vec<&str> = text.split(',').map(str::trim).collect();
            let [batch, src, dst] = parts[..] else {
                return Err(HandlerError::new("acquire takes batch,source,destination"));
            };
            let src = parse_text::<usize>(src.as_bytes())?;
            let dst = parse_text::<usize>(dst.as_bytes())?;
            // Busy leaves the pipe as it is; the caller reads holder back.
            b.plant
                .update(|p| p.pipe_acquire(batch, src, dst))
                .map(|_| ())
                .map_err(plant_err)
        }),
    );
    bind(
        "SmartPipe",
        "release",
        Handler::executor(|ctx, arg| {
            let b = pipe_of(ctx)?;
            let batch = arg
                .filter(|a| !a.is_empty())
                .map(|a| String::from_utf8_lossy(a).trim().to_string());
            b.plant.update(|p| p.pipe_release(batch.as_deref()));
            Ok(())
        }),
    );

    let silo = |i: usize, omit: &[&str]| {
        let mut ib = InstanceBinding::new(
            16663,
            0,
            Binding::new(SiloBinding {
                plant: plant.clone(),
                index: i,
            }),
        );
        for r in omit {
            ib = ib.without(r);
        }
        DeviceWrapper {
            endpoint_name: silo_endpoint(i),
            cid: SILO_CID,
            instances: vec![ib],
        }
    };
    let devices = vec![
        silo(1, &["heater", "temperature", "mixer"]),
        silo(2, &["mixer"]),
        silo(3, &["heater", "temperature"]),
        silo(4, &[]),
        DeviceWrapper {
            endpoint_name: PIPE_ENDPOINT.to_string(),
            cid: PIPE_CID,
            instances: vec![InstanceBinding::new(
                16666,
                0,
                Binding::new(PipeBinding { plant: plant.clone() }),
            )],
        },
    ];
    PlantWrappers { registry: reg, devices }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantConfig;

    #[test]
    fn every_device_builds_in_both_modes() {
        let plant = SharedPlant::new(Plant::new(PlantConfig::default()));
        let w = wire_wrappers(&plant);
        for d in &w.devices {
            for mode in [GenMode::AheadOfTime, GenMode::Startup] {
                let t = w.table(d, mode).unwrap();
                assert!(!t.is_empty(), "{}", d.endpoint_name);
            }
        }
        let t = w.table(w.device("smartSilo2").unwrap(), GenMode::Startup).unwrap();
        assert_eq!(t.instances(), &[(16663, 0), (16668, 0), (16664, 1), (16664, 2), (3303, 0)]);
        t.execute(16663, 0, 2, None).unwrap();
        assert!(plant.lock().silo(2).unwrap().in_valve);
        assert_eq!(t.read(16664, 1, 0).unwrap(), ResourceValue::Boolean(true).into());
        assert_eq!(t.read(16664, 2, 0).unwrap(), ResourceValue::Boolean(false).into());
    }
}
