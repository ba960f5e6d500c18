//! Expose software components as LWM2M devices.
//!
//! A component's interface is written in a small description language
//! ([`cid`]), lowered to LWM2M object descriptors ([`object_model`]) and
//! bound to handlers by [`wrapper_gen`]. The result is served over CoAP by
//! [`lwm2m`]. [`plant`] simulates the liqueur plant used to exercise the
//! stack, [`orchestrator`] runs batches on it and [`bench`] measures
//! request latency.

pub mod cid;
pub mod object_model;
pub mod wrapper_gen;
pub mod coap;
pub mod lwm2m;
pub mod plant;
pub mod orchestrator;
pub mod bench;
