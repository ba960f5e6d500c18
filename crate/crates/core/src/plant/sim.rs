use std::fmt;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Physics constants shared by every silo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// Level fraction per second through an open inlet with a supply.
    pub fill_rate: f64,
    /// Level fraction per second through an open outlet, and through the pipe.
    pub drain_rate: f64,
    /// Cel per second with the heater on.
    pub heat_rate: f64,
    /// Cel per second toward ambient with the heater off.
    pub cooling_rate: f64,
    pub ambient_temp: f64,
    pub low_threshold: f64,
    pub high_threshold: f64,
    /// Simulation step in seconds.
    pub step: f64,
    pub clock: ClockConfig,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            fill_rate: 0.1,
            drain_rate: 0.1,
            heat_rate: 1.0,
            cooling_rate: 0.05,
            ambient_temp: 20.0,
            low_threshold: 0.05,
            high_threshold: 0.95,
            step: 0.5,
            clock: ClockConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Virtual,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    pub mode: ClockMode,
    /// Real mode only: simulated seconds per wall-clock second.
    pub time_scale: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            mode: ClockMode::Virtual,
            time_scale: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("invalid plant config: {0}")]
    Invalid(String),
}

impl PlantConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PlantConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let rates = [self.fill_rate, self.drain_rate, self.heat_rate, self.step];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("rates and step must be positive");
        }
        if !(self.cooling_rate.is_finite() && self.cooling_rate >= 0.0) {
            return bad("cooling_rate must be non-negative");
        }
        if !(0.0 < self.low_threshold && self.low_threshold < self.high_threshold && self.high_threshold < 1.0) {
            return bad("need 0 < low_threshold < high_threshold < 1");
        }
        if !(self.clock.time_scale.is_finite() && self.clock.time_scale > 0.0) {
            return bad("clock.time_scale must be positive");
        }
        Ok(())
    }
}

/// Static description of one silo.
#[derive(Debug, Clone, PartialEq)]
pub struct SiloConfig {
    pub index: usize,
    pub has_heater: bool,
    pub has_mixer: bool,
    /// Whether the inlet is connected to an unlimited external feed.
    pub has_feed: bool,
    pub fill_rate: f64,
    pub drain_rate: f64,
    pub heat_rate: f64,
    pub cooling_rate: f64,
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub ambient_temp: f64,
}

impl SiloConfig {
    /// The plant layout: heaters in 2 and 4, mixers in 3 and 4, feed into 1 and 2.
    pub fn for_index(index: usize, cfg: &PlantConfig) -> Self {
        SiloConfig {
            index,
            has_heater: matches!(index, 2 | 4),
            has_mixer: matches!(index, 3 | 4),
            has_feed: matches!(index, 1 | 2),
            fill_rate: cfg.fill_rate,
            drain_rate: cfg.drain_rate,
            heat_rate: cfg.heat_rate,
            cooling_rate: cfg.cooling_rate,
            low_threshold: cfg.low_threshold,
            high_threshold: cfg.high_threshold,
            ambient_temp: cfg.ambient_temp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiloState {
    pub in_valve: bool,
    pub out_valve: bool,
    pub level: f64,
    /// Low level sensor E.
    pub low: bool,
    /// High level sensor F.
    pub high: bool,
    pub heater: bool,
    /// The heater switches itself off at `heat_target`.
    pub heat_auto_off: bool,
    pub temperature: f64,
    pub mixer: bool,
    pub mix_elapsed: f64,
    pub heat_target: f64,
}

impl SiloState {
    fn new(cfg: &SiloConfig) -> Self {
        let mut s = SiloState {
            in_valve: false,
            out_valve: false,
            level: 0.0,
            low: true,
            high: false,
            heater: false,
            heat_auto_off: false,
            temperature: cfg.ambient_temp,
            mixer: false,
            mix_elapsed: 0.0,
            heat_target: cfg.ambient_temp,
        };
        s.sense(cfg);
        s
    }

    fn sense(&mut self, cfg: &SiloConfig) {
        self.low = self.level <= cfg.low_threshold;
        self.high = self.level >= cfg.high_threshold;
    }

    pub fn filling(&self) -> bool {
        self.in_valve && self.level < 1.0
    }

    pub fn emptying(&self) -> bool {
        self.out_valve && self.level > 0.0
    }

    pub fn temperature_reached(&self) -> bool {
        self.temperature >= self.heat_target
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipeState {
    pub holder: Option<String>,
    pub source: usize,
    pub destination: usize,
    pub transferring: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Fill,
    Empty,
    Heat2Temp(f64),
    HeaterOn,
    HeaterOff,
    MixerOn,
    MixerOff,
    OpenIn,
    CloseIn,
    OpenOut,
    CloseOut,
    /// Closes both valves and switches heater and mixer off.
    Stop,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fill => "fill",
            Command::Empty => "empty",
            Command::Heat2Temp(_) => "heat2temp",
            Command::HeaterOn => "heater_on",
            Command::HeaterOff => "heater_off",
            Command::MixerOn => "mixer_on",
            Command::MixerOff => "mixer_off",
            Command::OpenIn => "open_in",
            Command::CloseIn => "close_in",
            Command::OpenOut => "open_out",
            Command::CloseOut => "close_out",
            Command::Stop => "stop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Refused by an actuation-layer gate; the caller should wait and retry.
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipeGrant {
    Granted,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlantError {
    #[error("no silo {0}")]
    NoSilo(usize),
    #[error("silo {silo} has no {device}")]
    UnsupportedDevice { silo: usize, device: &'static str },
    #[error("pipe source and destination are both silo {0}")]
    SameSilo(usize),
    #[error("heat target {0} is not a finite temperature")]
    BadTarget(String),
}

/// One line of the plant trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantEvent {
    pub time_s: f64,
    pub component: String,
    pub event: String,
    pub value: String,
}

/// Liquid moved during one step, per silo (index 0 is silo 1).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepFlows {
    pub inflow: [f64; 4],
    pub outflow: [f64; 4],
    /// (source, destination, amount) of the pipe transfer.
    pub transfer: Option<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct Plant {
    config: PlantConfig,
    silos: Vec<(SiloConfig, SiloState)>,
    pipe: PipeState,
    now: f64,
    trace: Vec<PlantEvent>,
    tracing: bool,
}

impl Plant {
    pub fn new(config: PlantConfig) -> Self {
        let silos = (1..=4)
            .map(|i| {
                let c = SiloConfig::for_index(i, &config);
                let s = SiloState::new(&c);
                (c, s)
            })
            .collect();
        Plant {
            config,
            silos,
            pipe: PipeState::default(),
            now: 0.0,
            trace: Vec::new(),
            tracing: true,
        }
    }

    /// Turns the trace log on or off (long fuzz runs switch it off).
    pub fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn silo(&self, i: usize) -> Result<&SiloState, PlantError> {
        self.silos.get(i.wrapping_sub(1)).map(|(_, s)| s).ok_or(PlantError::NoSilo(i))
    }

    pub fn silo_config(&self, i: usize) -> Result<&SiloConfig, PlantError> {
        self.silos.get(i.wrapping_sub(1)).map(|(c, _)| c).ok_or(PlantError::NoSilo(i))
    }

    pub fn pipe(&self) -> &PipeState {
        &self.pipe
    }

    pub fn trace(&self) -> &[PlantEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<PlantEvent> {
        std::mem::take(&mut self.trace)
    }

    fn log(&mut self, component: String, event: &str, value: impl fmt::Display) {
        if self.tracing {
            self.trace.push(PlantEvent {
                time_s: self.now,
                component,
                event: event.to_string(),
                value: value.to_string(),
            });
        }
    }

    fn set_actuator(&mut self, i: usize, name: &str, get: fn(&mut SiloState) -> &mut bool, on: bool) {
        let slot = get(&mut self.silos[i - 1].1);
        if *slot != on {
            *slot = on;
            self.log(format!("silo{i}"), name, on);
        }
    }

    /// Applies a command to silo `i`. Effects show up in later steps.
    pub fn command(&mut self, i: usize, cmd: Command) -> Result<Outcome, PlantError> {
        let cfg = self.silo_config(i)?.clone();
        let need = |has: bool, device: &'static str| {
            if has {
                Ok(())
            } else {
                Err(PlantError::UnsupportedDevice { silo: i, device })
            }
        };
        match cmd {
            Command::Heat2Temp(_) | Command::HeaterOn | Command::HeaterOff => need(cfg.has_heater, "heater")?,
            Command::MixerOn | Command::MixerOff => need(cfg.has_mixer, "mixer")?,
            _ => {}
        }
        match cmd {
            Command::Fill => {
                self.set_actuator(i, "out_valve", |s| &mut s.out_valve, false);
                if !self.silos[i - 1].1.high {
                    self.set_actuator(i, "in_valve", |s| &mut s.in_valve, true);
                }
            }
            Command::Empty => {
                self.set_actuator(i, "in_valve", |s| &mut s.in_valve, false);
                if !self.silos[i - 1].1.low {
                    self.set_actuator(i, "out_valve", |s| &mut s.out_valve, true);
                }
            }
            Command::Heat2Temp(target) => {
                if !target.is_finite() {
                    return Err(PlantError::BadTarget(target.to_string()));
                }
                self.set_heat_target(i, target)?;
                let s = &mut self.silos[i - 1].1;
                s.heat_auto_off = true;
                let on = s.temperature < target;
                self.set_actuator(i, "heater", |s| &mut s.heater, on);
            }
            Command::HeaterOn => {
                self.silos[i - 1].1.heat_auto_off = false;
                self.set_actuator(i, "heater", |s| &mut s.heater, true);
            }
            Command::HeaterOff => self.set_actuator(i, "heater", |s| &mut s.heater, false),
            Command::MixerOn => {
                if self.silos[i - 1].1.mixer {
                    return Ok(Outcome::Done);
                }
                if self.mixer_power_gate(i) == Outcome::Denied {
                    self.log(format!("silo{i}"), "mixer_denied", true);
                    return Ok(Outcome::Denied);
                }
                self.silos[i - 1].1.mix_elapsed = 0.0;
                self.set_actuator(i, "mixer", |s| &mut s.mixer, true);
            }
            Command::MixerOff => self.set_actuator(i, "mixer", |s| &mut s.mixer, false),
            Command::OpenIn => self.set_actuator(i, "in_valve", |s| &mut s.in_valve, true),
            Command::CloseIn => self.set_actuator(i, "in_valve", |s| &mut s.in_valve, false),
            Command::OpenOut => self.set_actuator(i, "out_valve", |s| &mut s.out_valve, true),
            Command::CloseOut => self.set_actuator(i, "out_valve", |s| &mut s.out_valve, false),
            Command::Stop => {
                self.set_actuator(i, "in_valve", |s| &mut s.in_valve, false);
                self.set_actuator(i, "out_valve", |s| &mut s.out_valve, false);
                if cfg.has_heater {
                    self.set_actuator(i, "heater", |s| &mut s.heater, false);
                }
                if cfg.has_mixer {
                    self.set_actuator(i, "mixer", |s| &mut s.mixer, false);
                }
            }
        }
        log::trace!("silo{i} {} at t={}", cmd.name(), self.now);
        Ok(Outcome::Done)
    }

    /// Applies commands in ascending silo order, so of two simultaneous
    /// mixer requests the lower silo wins.
    pub fn command_all(&mut self, cmds: &[(usize, Command)]) -> Vec<Result<Outcome, PlantError>> {
        let mut order: Vec<usize> = (0..cmds.len()).collect();
        order.sort_by_key(|&k| cmds[k].0);
        let mut out = vec![Ok(Outcome::Done); cmds.len()];
        for k in order {
            out[k] = self.command(cmds[k].0, cmds[k].1.clone());
        }
        out
    }

    pub fn set_heat_target(&mut self, i: usize, target: f64) -> Result<(), PlantError> {
        if !target.is_finite() {
            return Err(PlantError::BadTarget(target.to_string()));
        }
        self.silo(i)?;
        let s = &mut self.silos[i - 1].1;
        if s.heat_target != target {
            s.heat_target = target;
            self.log(format!("silo{i}"), "heat_target", target);
        }
        Ok(())
    }

    /// Whether a mixer may start in silo `i`: mixers 3 and 4 never run together.
    pub fn mixer_power_gate(&self, i: usize) -> Outcome {
        let other = match i {
            3 => 4,
            4 => 3,
            _ => return Outcome::Done,
        };
        if self.silos[other - 1].1.mixer {
            Outcome::Denied
        } else {
            Outcome::Done
        }
    }

    pub fn pipe_acquire(&mut self, batch: &str, source: usize, destination: usize) -> Result<PipeGrant, PlantError> {
        self.silo(source)?;
        self.silo(destination)?;
        if source == destination {
            return Err(PlantError::SameSilo(source));
        }
        match &self.pipe.holder {
            Some(h) if h != batch => return Ok(PipeGrant::Busy),
            Some(_) if (self.pipe.source, self.pipe.destination) == (source, destination) => {
                return Ok(PipeGrant::Granted)
            }
            _ => {}
        }
        self.pipe = PipeState {
            holder: Some(batch.to_string()),
            source,
            destination,
            transferring: true,
        };
        self.log("pipe".into(), "acquire", format_args!("{batch}:{source}->{destination}"));
        Ok(PipeGrant::Granted)
    }

    /// Frees the pipe. With a batch id, only that holder can release it.
    pub fn pipe_release(&mut self, batch: Option<&str>) -> Outcome {
        match (&self.pipe.holder, batch) {
            (None, _) => Outcome::Done,
            (Some(h), Some(b)) if h != b => Outcome::Denied,
            (Some(h), _) => {
                let h = h.clone();
                self.pipe = PipeState::default();
                self.log("pipe".into(), "release", h);
                Outcome::Done
            }
        }
    }

    /// Advances the plant by `dt` seconds.
    pub fn step(&mut self, dt: f64) -> StepFlows {
        assert!(dt > 0.0 && dt.is_finite(), "step needs a positive dt");
        let mut flows = StepFlows::default();
        let before: Option<Vec<SiloState>> = self.tracing.then(|| self.silos.iter().map(|(_, s)| s.clone()).collect());

        for (k, (c, s)) in self.silos.iter_mut().enumerate() {
            if s.in_valve && c.has_feed {
                let d = (c.fill_rate * dt).min(1.0 - s.level).max(0.0);
                s.level += d;
                flows.inflow[k] = d;
            }
            if s.out_valve {
                let d = (c.drain_rate * dt).min(s.level).max(0.0);
                s.level -= d;
                flows.outflow[k] = d;
            }
        }

        if self.pipe.transferring {
            let (src, dst) = (self.pipe.source - 1, self.pipe.destination - 1);
            let (src_low_at, rate) = (self.silos[src].0.low_threshold, self.silos[src].0.drain_rate);
            let src_low = self.silos[src].1.level <= src_low_at;
            let dst_high = self.silos[dst].1.level >= self.silos[dst].0.high_threshold;
            if src_low || dst_high {
                self.pipe.transferring = false;
            } else {
                let d = (rate * dt)
                    .min(self.silos[src].1.level)
                    .min(1.0 - self.silos[dst].1.level)
                    .max(0.0);
                self.silos[src].1.level -= d;
                self.silos[dst].1.level += d;
                flows.transfer = Some((src + 1, dst + 1, d));
                if self.silos[src].1.level <= src_low_at
                    || self.silos[dst].1.level >= self.silos[dst].0.high_threshold
                {
                    self.pipe.transferring = false;
                }
            }
        }

        for (c, s) in self.silos.iter_mut() {
            if s.heater {
                let mut t = s.temperature + c.heat_rate * dt;
                if s.heat_auto_off && t >= s.heat_target {
                    t = t.min(s.heat_target.max(s.temperature));
                    s.heater = false;
                }
                s.temperature = t;
            } else if s.temperature > c.ambient_temp {
                s.temperature = (s.temperature - c.cooling_rate * dt).max(c.ambient_temp);
            } else if s.temperature < c.ambient_temp {
                s.temperature = (s.temperature + c.cooling_rate * dt).min(c.ambient_temp);
            }
            if s.mixer {
                s.mix_elapsed += dt;
            }
            s.sense(c);
            if s.high && s.in_valve {
                s.in_valve = false;
            }
            if s.low && s.out_valve {
                s.out_valve = false;
            }
        }

        self.now += dt;
        if let Some(before) = before {
            for (k, old) in before.iter().enumerate() {
                let new = self.silos[k].1.clone();
                let name = format!("silo{}", k + 1);
                let edges: [(&str, bool, bool); 6] = [
                    ("in_valve", old.in_valve, new.in_valve),
                    ("out_valve", old.out_valve, new.out_valve),
                    ("heater", old.heater, new.heater),
                    ("low", old.low, new.low),
                    ("high", old.high, new.high),
                    ("temperature_reached", old.temperature_reached(), new.temperature_reached()),
                ];
                for (ev, a, b) in edges {
                    if a != b {
                        self.log(name.clone(), ev, b);
                    }
                }
            }
        }
        if flows.transfer.is_some() && !self.pipe.transferring {
            self.log("pipe".into(), "transfer_done", self.pipe.holder.clone().unwrap_or_default());
        }
        flows
    }

    /// Steps until `now` has advanced by `duration`, in configured steps.
    pub fn run_for(&mut self, duration: f64) {
        let dt = self.config.step;
        let n = (duration / dt).round() as u64;
        for _ in 0..n {
            self.step(dt);
        }
    }
}

pub fn write_plant_trace(events: &[PlantEvent], w: impl io::Write) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for e in events {
        out.serialize(e)?;
    }
    out.flush()?;
    Ok(())
}
