//! Deterministic discrete-event simulation of a multipath TCP connection
//! whose subflows run over several logical links (tunnels to different
//! roadside units) that all share one vehicular radio.
//!
//! The stack, bottom-up:
//!
//! * [`sim`]: virtual clock, cancellable event queue, seeded RNG.
//! * [`medium`]: the shared half-duplex channel and its logical links.
//! * [`engine`]: connection and subflow state, ACK clocking, loss recovery,
//!   reinjection, and the receiver.
//! * [`scheduler`]: minRTT (default) and round-robin packet schedulers.
//! * [`lia`]: coupled congestion control.
//! * [`handover`]: the connection manager that turns RSU beacons into
//!   link attach/detach and subflow add/remove.
//! * [`scenario`]: configs, the run loop wiring everything together,
//!   metrics and summaries.

pub mod engine;
pub mod handover;
pub mod lia;
pub mod medium;
pub mod scenario;
pub mod scheduler;
pub mod sim;
