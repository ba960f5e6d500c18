use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::recipe::{BatchPhase, Kind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time_s: f64,
    pub batch_id: String,
    pub event: String,
}

impl TraceEvent {
    pub fn new(time_s: f64, batch_id: &str, event: impl Into<String>) -> Self {
        TraceEvent {
            time_s,
            batch_id: batch_id.to_string(),
            event: event.into(),
        }
    }
}

/// Events of one or more batches on a single time axis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchTrace {
    pub events: Vec<TraceEvent>,
}

impl BatchTrace {
    pub fn for_batch(&self, batch_id: &str) -> Vec<&TraceEvent> {
        self.events.iter().filter(|e| e.batch_id == batch_id).collect()
    }

    /// Phase names entered by a batch, in order.
    pub fn phases(&self, batch_id: &str) -> Vec<&str> {
        self.for_batch(batch_id)
            .into_iter()
            .filter_map(|e| e.event.strip_prefix("phase:"))
            .collect()
    }

    /// Time the batch entered `phase`.
    pub fn phase_time(&self, batch_id: &str, phase: BatchPhase) -> Option<f64> {
        let tag = format!("phase:{phase}");
        self.for_batch(batch_id)
            .into_iter()
            .find(|e| e.event == tag)
            .map(|e| e.time_s)
    }

    pub fn write_csv(&self, w: impl io::Write) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.events {
            out.serialize(e)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl io::Read) -> Result<Self, csv::Error> {
        let events = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<Result<Vec<TraceEvent>, _>>()?;
        Ok(BatchTrace { events })
    }
}

/// Shared append-only log; each append is atomic.
#[derive(Debug, Clone, Default)]
pub struct TraceLog(Arc<Mutex<Vec<TraceEvent>>>);

impl TraceLog {
    pub fn push(&self, time_s: f64, batch_id: &str, event: impl Into<String>) {
        let e = TraceEvent::new(time_s, batch_id, event);
        log::debug!("{:>8.2} {} {}", e.time_s, e.batch_id, e.event);
        self.0.lock().unwrap().push(e);
    }

    pub fn snapshot(&self) -> BatchTrace {
        BatchTrace {
            events: self.0.lock().unwrap().clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    PipeOverlap,
    MixerPower,
    PhaseOrder,
    TimeOrder,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::PipeOverlap => "pipe overlap",
            ViolationKind::MixerPower => "mixer power",
            ViolationKind::PhaseOrder => "phase order",
            ViolationKind::TimeOrder => "time order",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Index of the offending event.
    pub index: usize,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at event {}: {}", self.kind.as_str(), self.index, self.detail)
    }
}

#[derive(Default)]
struct BatchProgress {
    kind: Option<Kind>,
    next: usize,
    closed: bool,
}

/// Verifies pipe exclusivity, mixer power exclusion and per-batch phase order.
/// Events are taken in trace order; intervals are half-open, so a release and
/// an acquire at the same instant do not overlap.
pub fn check_trace(trace: &BatchTrace) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut v = |kind, index, detail: String| out.push(Violation { kind, index, detail });
    let mut pipe: Option<&str> = None;
    let mut mixers: BTreeMap<u8, &str> = BTreeMap::new();
    let mut batches: BTreeMap<&str, BatchProgress> = BTreeMap::new();
    let mut last_time = f64::NEG_INFINITY;

    for (i, e) in trace.events.iter().enumerate() {
        let b = e.batch_id.as_str();
        if e.time_s < last_time {
            v(ViolationKind::TimeOrder, i, format!("time {} after {}", e.time_s, last_time));
        }
        last_time = last_time.max(e.time_s);
        let (head, arg) = e.event.split_once(':').unwrap_or((e.event.as_str(), ""));
        let progress = batches.entry(b).or_default();
        if progress.closed {
            v(ViolationKind::PhaseOrder, i, format!("{b} logs {} after finishing", e.event));
        }
        match head {
            "pipe_acquire" => match pipe {
                Some(h) if h != b => v(ViolationKind::PipeOverlap, i, format!("{b} acquires while {h} holds the pipe")),
                _ => pipe = Some(b),
            },
            "pipe_release" => match pipe {
                Some(h) if h == b => pipe = None,
                Some(h) => v(ViolationKind::PipeOverlap, i, format!("{b} releases the pipe held by {h}")),
                None => v(ViolationKind::PipeOverlap, i, format!("{b} releases a free pipe")),
            },
            "mixer_on" | "mixer_off" => {
                let Ok(silo) = arg.parse::<u8>() else {
                    v(ViolationKind::MixerPower, i, format!("unknown mixer {arg:?}"));
                    continue;
                };
                if head == "mixer_off" {
                    mixers.remove(&silo);
                    continue;
                }
                let other = match silo {
                    3 => Some(4),
                    4 => Some(3),
                    _ => None,
                };
                if let Some(h) = other.and_then(|o| mixers.get(&o)) {
                    v(
                        ViolationKind::MixerPower,
                        i,
                        format!("mixer {silo} on for {b} while mixer {} runs for {h}", other.unwrap()),
                    );
                }
                mixers.insert(silo, b);
            }
            "phase" => {
                let Some(phase) = BatchPhase::parse(arg) else {
                    v(ViolationKind::PhaseOrder, i, format!("unknown phase {arg:?}"));
                    continue;
                };
                let kind = *progress.kind.get_or_insert_with(|| {
                    if BatchPhase::sequence(Kind::A).first() == Some(&phase) {
                        Kind::A
                    } else {
                        Kind::B
                    }
                });
                let seq = BatchPhase::sequence(kind);
                match seq.get(progress.next) {
                    Some(want) if *want == phase => {
                        progress.next += 1;
                        if phase == BatchPhase::Done {
                            progress.closed = true;
                        }
                    }
                    want => v(
                        ViolationKind::PhaseOrder,
                        i,
                        format!(
                            "{b} enters {phase}, expected {}",
                            want.map_or("nothing".to_string(), |p| p.to_string())
                        ),
                    ),
                }
            }
            "abort" => progress.closed = true,
            _ => {}
        }
    }

    let open: BTreeSet<&str> = batches
        .iter()
        .filter(|(_, p)| !p.closed)
        .map(|(b, _)| *b)
        .collect();
    for b in open {
        out.push(Violation {
            kind: ViolationKind::PhaseOrder,
            index: trace.events.len(),
            detail: format!("{b} neither finished nor aborted"),
        });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
