//! Liqueur batches driven from the LWM2M server side.
//!
//! Each batch is a state machine advanced once per clock tick. It touches
//! the plant only through LWM2M requests to the registered silos and pipe.
//! Shared devices are taken through the plant's gates (pipe acquire, mixer
//! power) and confirmed by reading state back, so a denied request shows up
//! as waiting rather than as an error.

mod recipe;
mod trace;

use std::collections::BTreeSet;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use recipe::{BatchPhase, Kind, Recipe, RecipeError};
pub use trace::{check_trace, BatchTrace, TraceEvent, TraceLog, Violation, ViolationKind};

use crate::lwm2m::{Lwm2mError, Lwm2mServer};
use crate::object_model::{ResourcePath, ResourceValue};
use crate::plant::{silo_endpoint, SharedPlant, PIPE_ENDPOINT};

const SILO: u16 = 16663;
const MIXER: u16 = 16665;
const PIPE: u16 = 16666;
const TEMPERATURE: u16 = 3303;

fn silo_res(r: u16) -> ResourcePath {
    ResourcePath::resource(SILO, 0, r)
}

const FILL: u16 = 2;
const EMPTY: u16 = 3;
const HEAT_TARGET: u16 = 5;
const HEAT2TEMP: u16 = 6;
const LOW_LEVEL: u16 = 8;
const HIGH_LEVEL: u16 = 9;
const MIX_ELAPSED: u16 = 11;

/// Drives time for the orchestrator.
pub enum ClockDriver {
    /// Each tick steps the in-process plant once; runs as fast as requests allow.
    Virtual(SharedPlant),
    /// Wall time times `scale`; a tick sleeps until the next step boundary.
    Real { origin: Instant, scale: f64, step: f64, ticks: u64 },
}

impl ClockDriver {
    pub fn real(scale: f64, step: f64) -> Self {
        ClockDriver::Real {
            origin: Instant::now(),
            scale,
            step,
            ticks: 0,
        }
    }

    /// Simulated seconds.
    pub fn now(&self) -> f64 {
        match self {
            ClockDriver::Virtual(p) => p.now(),
            ClockDriver::Real { origin, scale, .. } => origin.elapsed().as_secs_f64() * scale,
        }
    }

    pub fn tick(&mut self) {
        match self {
            ClockDriver::Virtual(p) => {
                p.step();
            }
            ClockDriver::Real {
                origin,
                scale,
                step,
                ticks,
            } => {
                *ticks += 1;
                let due = Duration::from_secs_f64(*ticks as f64 * *step / *scale);
                let elapsed = origin.elapsed();
                if due > elapsed {
                    thread::sleep(due - elapsed);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Simulated seconds a batch may wait for the pipe or a mixer.
    pub gate_deadline: f64,
    /// Simulated seconds any single phase may take.
    pub phase_timeout: f64,
    pub ambient_temp: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            gate_deadline: 600.0,
            phase_timeout: 900.0,
            ambient_temp: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Recipe(#[from] RecipeError),
    #[error("recipes {0} and {1} both need couple {2}")]
    CoupleConflict(String, String, Kind),
    #[error("batch id {0} used twice")]
    DuplicateBatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Enter,
    /// Waiting for a gate, since the given time.
    Waiting(f64),
    Running,
}

struct Batch {
    recipe: Recipe,
    phase: usize,
    phase_started: f64,
    stage: Stage,
    started: bool,
    finished: bool,
}

/// Everything a batch tick needs.
struct Ctx<'a> {
    server: &'a Lwm2mServer,
    log: &'a TraceLog,
    opts: &'a RunOptions,
    now: f64,
    /// Orchestrator-side mixer tokens: silos whose mixer a batch runs.
    mixers: &'a mut BTreeSet<u16>,
}

enum Abort {
    Unreachable,
    Rejected(String),
    Starved(&'static str),
    Timeout,
}

impl From<Lwm2mError> for Abort {
    fn from(e: Lwm2mError) -> Self {
        match e {
            Lwm2mError::Status(c) | Lwm2mError::Rejected(c) => Abort::Rejected(c.to_string()),
            Lwm2mError::Decode(m) => Abort::Rejected(m),
            _ => Abort::Unreachable,
        }
    }
}

impl Abort {
    fn tag(&self) -> String {
        match self {
            Abort::Unreachable => "abort:unreachable".into(),
            Abort::Rejected(c) => format!("abort:rejected {c}"),
            Abort::Starved(what) => format!("abort:starved {what}"),
            Abort::Timeout => "abort:timeout".into(),
        }
    }
}

fn read_bool(cx: &Ctx, ep: &str, path: ResourcePath) -> Result<bool, Abort> {
    match cx.server.read_value(ep, &path)? {
        ResourceValue::Boolean(b) => Ok(b),
        other => Err(Abort::Rejected(format!("{path} is {other:?}, not a boolean"))),
    }
}

fn read_f64(cx: &Ctx, ep: &str, path: ResourcePath) -> Result<f64, Abort> {
    cx.server
        .read_value(ep, &path)?
        .as_f64()
        .ok_or_else(|| Abort::Rejected(format!("{path} is not numeric")))
}

fn exec(cx: &Ctx, ep: &str, path: ResourcePath, arg: Option<&str>) -> Result<(), Abort> {
    Ok(cx.server.execute(ep, &path, arg.map(str::as_bytes))?)
}

impl Batch {
    fn new(recipe: Recipe) -> Self {
        Batch {
            recipe,
            phase: 0,
            phase_started: 0.0,
            stage: Stage::Enter,
            started: false,
            finished: false,
        }
    }

    fn current(&self) -> BatchPhase {
        BatchPhase::sequence(self.recipe.kind)[self.phase]
    }

    fn id(&self) -> &str {
        &self.recipe.batch_id
    }

    /// One tick. Phases that complete at once hand over within the tick.
    fn tick(&mut self, cx: &mut Ctx) {
        if self.finished {
            return;
        }
        if !self.started {
            self.started = true;
            self.phase_started = cx.now;
            cx.log.push(cx.now, self.id(), format!("phase:{}", self.current()));
        }
        loop {
            match self.advance(cx) {
                Ok(true) => {
                    self.phase += 1;
                    self.stage = Stage::Enter;
                    self.phase_started = cx.now;
                    let p = self.current();
                    cx.log.push(cx.now, self.id(), format!("phase:{p}"));
                    if p == BatchPhase::Done {
                        self.finished = true;
                        return;
                    }
                }
                Ok(false) => {
                    if cx.now - self.phase_started > cx.opts.phase_timeout {
                        self.abort(cx, Abort::Timeout);
                    }
                    return;
                }
                Err(a) => return self.abort(cx, a),
            }
        }
    }

    fn abort(&mut self, cx: &mut Ctx, why: Abort) {
        // Leave shared devices free for other batches, as far as they answer.
        match self.current() {
            BatchPhase::Transfer1To4 | BatchPhase::Transfer2To3 if self.stage == Stage::Running => {
                let _ = exec(cx, PIPE_ENDPOINT, ResourcePath::resource(PIPE, 0, 5), Some(&self.recipe.batch_id));
                cx.log.push(cx.now, self.id(), "pipe_release");
            }
            BatchPhase::Mix3 | BatchPhase::Mix4 if self.stage == Stage::Running => {
                let silo = if self.current() == BatchPhase::Mix3 { 3 } else { 4 };
                let _ = exec(cx, &silo_endpoint(silo), ResourcePath::resource(MIXER, 0, 2), None);
                cx.mixers.remove(&(silo as u16));
                cx.log.push(cx.now, self.id(), format!("mixer_off:{silo}"));
            }
            _ => {}
        }
        cx.log.push(cx.now, self.id(), why.tag());
        self.finished = true;
    }

    fn wait(&mut self, cx: &Ctx, what: &'static str, event: String) -> Result<bool, Abort> {
        match self.stage {
            Stage::Waiting(since) if cx.now - since > cx.opts.gate_deadline => Err(Abort::Starved(what)),
            Stage::Waiting(_) => Ok(false),
            _ => {
                self.stage = Stage::Waiting(cx.now);
                cx.log.push(cx.now, self.id(), event);
                Ok(false)
            }
        }
    }

    /// Runs the current phase; true when it is complete.
    fn advance(&mut self, cx: &mut Ctx) -> Result<bool, Abort> {
        use BatchPhase::*;
        let r = self.recipe.clone();
        match self.current() {
            Fill1 | Fill2 => {
                let ep = silo_endpoint(if self.current() == Fill1 { 1 } else { 2 });
                if self.stage == Stage::Enter {
                    exec(cx, &ep, silo_res(FILL), None)?;
                    self.stage = Stage::Running;
                }
                read_bool(cx, &ep, silo_res(HIGH_LEVEL))
            }
            BasicProcess => {
                // Valves stay closed; the process is a timed hold.
                self.stage = Stage::Running;
                Ok(cx.now - self.phase_started >= r.basic_process_time - 1e-9)
            }
            Heat2 | Heat4 => {
                let ep = silo_endpoint(if self.current() == Heat2 { 2 } else { 4 });
                if self.stage == Stage::Enter {
                    cx.server
                        .write(&ep, &silo_res(HEAT_TARGET), &ResourceValue::Float(r.target_temp))?;
                    exec(cx, &ep, silo_res(HEAT2TEMP), None)?;
                    self.stage = Stage::Running;
                }
                let t = read_f64(cx, &ep, ResourcePath::resource(TEMPERATURE, 0, 5700))?;
                Ok(t >= r.target_temp)
            }
            Transfer1To4 | Transfer2To3 => {
                let (src, dst) = if self.current() == Transfer1To4 { (1, 4) } else { (2, 3) };
                if self.stage != Stage::Running {
                    let arg = format!("{},{src},{dst}", r.batch_id);
                    exec(cx, PIPE_ENDPOINT, ResourcePath::resource(PIPE, 0, 4), Some(&arg))?;
                    let holder = cx.server.read_value(PIPE_ENDPOINT, &ResourcePath::resource(PIPE, 0, 1))?;
                    if holder.as_str() != Some(r.batch_id.as_str()) {
                        return self.wait(cx, "pipe", "wait_pipe".into());
                    }
                    cx.log.push(cx.now, self.id(), format!("pipe_acquire:{src}->{dst}"));
                    self.stage = Stage::Running;
                }
                if read_bool(cx, PIPE_ENDPOINT, ResourcePath::resource(PIPE, 0, 0))? {
                    return Ok(false);
                }
                exec(cx, PIPE_ENDPOINT, ResourcePath::resource(PIPE, 0, 5), Some(&r.batch_id))?;
                cx.log.push(cx.now, self.id(), "pipe_release");
                Ok(true)
            }
            Mix3 | Mix4 => {
                let silo: u16 = if self.current() == Mix3 { 3 } else { 4 };
                let ep = silo_endpoint(silo as usize);
                if self.stage != Stage::Running {
                    let other = 7 - silo;
                    let event = format!("wait_mixer:{silo}");
                    if cx.mixers.contains(&other) {
                        return self.wait(cx, "mixer", event);
                    }
                    exec(cx, &ep, ResourcePath::resource(MIXER, 0, 1), None)?;
                    if !read_bool(cx, &ep, ResourcePath::resource(MIXER, 0, 0))? {
                        return self.wait(cx, "mixer", event);
                    }
                    cx.mixers.insert(silo);
                    cx.log.push(cx.now, self.id(), format!("mixer_on:{silo}"));
                    self.stage = Stage::Running;
                }
                if read_f64(cx, &ep, silo_res(MIX_ELAPSED))? < r.mix_time - 1e-9 {
                    return Ok(false);
                }
                exec(cx, &ep, ResourcePath::resource(MIXER, 0, 2), None)?;
                cx.mixers.remove(&silo);
                cx.log.push(cx.now, self.id(), format!("mixer_off:{silo}"));
                Ok(true)
            }
            Empty3 | Empty4 => {
                let ep = silo_endpoint(if self.current() == Empty3 { 3 } else { 4 });
                if self.stage == Stage::Enter {
                    exec(cx, &ep, silo_res(EMPTY), None)?;
                    self.stage = Stage::Running;
                }
                read_bool(cx, &ep, silo_res(LOW_LEVEL))
            }
            Done => Ok(false),
        }
    }
}

/// Checks recipes for a parallel run: valid, distinct ids, one per couple.
pub fn validate_recipes(recipes: &[Recipe], ambient_temp: f64) -> Result<(), OrchestratorError> {
    for (k, r) in recipes.iter().enumerate() {
        r.validate(ambient_temp)?;
        for other in &recipes[..k] {
            if other.kind == r.kind {
                return Err(OrchestratorError::CoupleConflict(
                    other.batch_id.clone(),
                    r.batch_id.clone(),
                    r.kind,
                ));
            }
            if other.batch_id == r.batch_id {
                return Err(OrchestratorError::DuplicateBatch(r.batch_id.clone()));
            }
        }
    }
    Ok(())
}

/// Runs batches side by side until each is done or aborted.
pub fn run_parallel(
    recipes: &[Recipe],
    server: &Lwm2mServer,
    clock: &mut ClockDriver,
    opts: &RunOptions,
) -> Result<BatchTrace, OrchestratorError> {
    validate_recipes(recipes, opts.ambient_temp)?;
    let log = TraceLog::default();
    let mut batches: Vec<Batch> = recipes.iter().cloned().map(Batch::new).collect();
    let mut mixers = BTreeSet::new();
    while batches.iter().any(|b| !b.finished) {
        let now = clock.now();
        for b in batches.iter_mut() {
            let mut cx = Ctx {
                server,
                log: &log,
                opts,
                now,
                mixers: &mut mixers,
            };
            b.tick(&mut cx);
        }
        if batches.iter().any(|b| !b.finished) {
            clock.tick();
        }
    }
    Ok(log.snapshot())
}

pub fn run_batch(
    recipe: &Recipe,
    server: &Lwm2mServer,
    clock: &mut ClockDriver,
    opts: &RunOptions,
) -> Result<BatchTrace, OrchestratorError> {
    run_parallel(std::slice::from_ref(recipe), server, clock, opts)
}
