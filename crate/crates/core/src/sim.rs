//! Deterministic discrete-event core: virtual clock, cancellable event
//! queue, seeded randomness and the run loop.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is the insertion
//! counter, so two events scheduled for the same instant fire in the order
//! they were scheduled. Nothing about the payload takes part in ordering.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulation time in integer microseconds since the start of the run.
///
/// Also used for durations; the arithmetic saturates at zero instead of
/// wrapping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond. Negative and NaN inputs map to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if s.is_nan() || s <= 0.0 {
            return SimTime::ZERO;
        }
        SimTime((s * 1e6).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn times(self, k: u64) -> SimTime {
        SimTime(self.0.saturating_mul(k))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        self.saturating_sub(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}s", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Opaque handle returned by [`Sim::schedule`], used for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled in the past: fire_at {fire_at} < now {now}")]
    PastEvent { fire_at: SimTime, now: SimTime },
    #[error("at {at}: {message}")]
    Component { at: SimTime, message: String },
}

/// Seeded pseudorandom source. The generator is ChaCha8, so a given seed
/// yields the same draw sequence on every platform.
#[derive(Clone, Debug)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn seed_from(seed: u64) -> Self {
        SimRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform draw in `[0, upper)`; returns 0 when `upper` is 0.
    pub fn below(&mut self, upper: u64) -> u64 {
        if upper == 0 {
            0
        } else {
            self.inner.random_range(0..upper)
        }
    }
}

/// Outcome of a [`Sim::run_until`] call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub events_processed: u64,
    pub clock: SimTime,
}

/// Receives events popped from the queue.
pub trait Handler<E> {
    fn handle(&mut self, sim: &mut Sim<E>, event: E) -> Result<(), SimError>;
}

/// One line of the optional event trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub at: SimTime,
    pub seq: u64,
    pub label: String,
}

pub struct Sim<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    pending: HashMap<u64, E>,
    rng: SimRng,
    trace: Option<Vec<TraceEntry>>,
}

impl<E: fmt::Debug> Sim<E> {
    pub fn new(seed: u64) -> Self {
        Sim {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            pending: HashMap::new(),
            rng: SimRng::seed_from(seed),
            trace: None,
        }
    }

    /// Records every processed event as `(time, seq, Debug of payload)`.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.trace.as_deref()
    }

    /// Number of live (scheduled, not cancelled, not yet fired) events.
    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::PastEvent {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((fire_at, seq)));
        self.pending.insert(seq, event);
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> Result<EventHandle, SimError> {
        self.schedule(self.now + delay, event)
    }

    /// Returns true iff the event had not fired yet and is now inert.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0).is_some()
    }

    fn pop_due(&mut self, t_end: SimTime) -> Option<(SimTime, u64, E)> {
        while let Some(&Reverse((at, seq))) = self.heap.peek() {
            if at > t_end {
                return None;
            }
            self.heap.pop();
            // cancelled entries stay in the heap until they surface here
            if let Some(ev) = self.pending.remove(&seq) {
                return Some((at, seq, ev));
            }
        }
        None
    }

    /// Processes every event with `fire_at <= t_end` in `(fire_at, seq)`
    /// order, then leaves the clock at `t_end`.
    pub fn run_until<H: Handler<E>>(
        &mut self,
        t_end: SimTime,
        handler: &mut H,
    ) -> Result<RunStats, SimError> {
        let mut processed = 0;
        while let Some((at, seq, ev)) = self.pop_due(t_end) {
            self.now = at;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEntry {
                    at,
                    seq,
                    label: format!("{ev:?}"),
                });
            }
            handler.handle(self, ev)?;
            processed += 1;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        Ok(RunStats {
            events_processed: processed,
            clock: self.now,
        })
    }
}
