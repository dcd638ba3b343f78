//! Multipath TCP connection semantics, abstracted from any wire format.
//!
//! One connection-level data sequence space (DSN) is split into segments
//! that are mapped onto per-subflow sequence spaces (SSN). Each subflow runs
//! its own ACK clock, RTT estimator, loss recovery and congestion window; the
//! windows are coupled through [`crate::lia`]. When a subflow goes away, or
//! times out while other subflows are usable, its unacknowledged mappings
//! are queued for reinjection and go out ahead of new data.
//!
//! The connection is a passive state machine. The caller feeds it ACKs and
//! timer expiries, pulls segments with [`Connection::try_send`] and keeps
//! RTO timers in sync with [`Connection::rto_deadline`].

mod ranges;
mod receiver;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lia::{self, CongestionPolicy, CouplingSnapshot, LossCause, PathWindow};
use crate::medium::{LinkId, LinkStatus, RsuId};
use crate::scheduler::{Candidate, PacketScheduler, SchedulerPolicy};
use crate::sim::SimTime;

pub use ranges::RangeSet;
pub use receiver::{AppSink, Receiver, RecvOutcome};

pub const INITIAL_WINDOW_SEGMENTS: u64 = 10;
const INITIAL_RTO: SimTime = SimTime::from_secs(1);
const MAX_RTO: SimTime = SimTime::from_secs(60);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubflowId(pub u32);

impl fmt::Display for SubflowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Main,
    Joined,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckPolicy {
    /// One ACK per received segment, no delayed ACKs.
    #[default]
    EverySegment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineParams {
    pub mss: u32,
    pub ack_policy: AckPolicy,
    /// Seconds.
    pub min_rto: f64,
    pub dupack_threshold: u32,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            mss: 1400,
            ack_policy: AckPolicy::EverySegment,
            min_rto: 0.2,
            dupack_threshold: 3,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.mss == 0 {
            return Err(EngineError::InvalidParams("engine.mss: must be > 0".into()));
        }
        if !(self.min_rto > 0.0 && self.min_rto.is_finite()) {
            return Err(EngineError::InvalidParams(format!(
                "engine.min_rto: must be > 0, got {}",
                self.min_rto
            )));
        }
        if self.dupack_threshold == 0 {
            return Err(EngineError::InvalidParams(
                "engine.dupack_threshold: must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("link {0} is not up")]
    LinkDown(LinkId),
    #[error("link {0} already carries subflow {1}")]
    DuplicateSubflow(LinkId, SubflowId),
    #[error("unknown subflow {0}")]
    UnknownSubflow(SubflowId),
    #[error("invalid engine params: {0}")]
    InvalidParams(String),
}

/// A data segment on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub subflow: SubflowId,
    pub link: LinkId,
    pub ssn: u64,
    pub dsn: u64,
    pub len: u32,
    /// Timestamp echoed back by the receiver.
    pub sent_at: SimTime,
    pub retransmission: bool,
}

/// A subflow ACK carrying the connection-level DATA_ACK.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AckInfo {
    pub subflow: SubflowId,
    pub ack_ssn: u64,
    pub data_ack: u64,
    pub ts_echo: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentMapping {
    pub dsn_start: u64,
    pub length: u32,
    pub ssn_start: u64,
    pub send_time: SimTime,
    pub retransmitted: bool,
    /// Declared lost by a timeout and waiting to be sent again.
    pub lost: bool,
}

impl SegmentMapping {
    pub fn dsn_end(&self) -> u64 {
        self.dsn_start + u64::from(self.length)
    }

    pub fn ssn_end(&self) -> u64 {
        self.ssn_start + u64::from(self.length)
    }
}

#[derive(Clone, Debug)]
pub struct Subflow {
    pub id: SubflowId,
    pub link: LinkId,
    pub rsu: RsuId,
    pub role: Role,
    pub next_ssn: u64,
    pub subflow_acked: u64,
    /// Bytes.
    pub cwnd: f64,
    /// Bytes.
    pub ssthresh: f64,
    pub srtt: Option<SimTime>,
    pub rttvar: SimTime,
    pub rto: SimTime,
    /// Used in place of `srtt` until the first sample.
    pub base_rtt: SimTime,
    pub active_at: SimTime,
    pub inflight: u64,
    pub dup_acks: u32,
    pub mappings: BTreeMap<u64, SegmentMapping>,
    recover: Option<u64>,
    partial_ack_seen: bool,
    urgent: Vec<u64>,
    rto_deadline: Option<SimTime>,
}

impl Subflow {
    fn new(
        id: SubflowId,
        link: LinkId,
        rsu: RsuId,
        role: Role,
        mss: u32,
        base_rtt: SimTime,
        active_at: SimTime,
    ) -> Self {
        Subflow {
            id,
            link,
            rsu,
            role,
            next_ssn: 0,
            subflow_acked: 0,
            cwnd: (INITIAL_WINDOW_SEGMENTS * u64::from(mss)) as f64,
            ssthresh: f64::INFINITY,
            srtt: None,
            rttvar: SimTime::ZERO,
            rto: INITIAL_RTO,
            base_rtt,
            active_at,
            inflight: 0,
            dup_acks: 0,
            mappings: BTreeMap::new(),
            recover: None,
            partial_ack_seen: false,
            urgent: Vec::new(),
            rto_deadline: None,
        }
    }

    /// SRTT, or the configured base RTT before any sample.
    pub fn rtt_estimate(&self) -> SimTime {
        self.srtt.unwrap_or(self.base_rtt)
    }

    pub fn space(&self) -> u64 {
        (self.cwnd as u64).saturating_sub(self.inflight)
    }

    pub fn in_recovery(&self) -> bool {
        self.recover.is_some()
    }

    pub fn is_active(&self, now: SimTime) -> bool {
        now >= self.active_at
    }

    fn update_rtt(&mut self, sample: SimTime, min_rto: SimTime) {
        let r = sample.as_micros() as f64;
        match self.srtt {
            None => {
                self.srtt = Some(sample);
                self.rttvar = SimTime::from_micros((r / 2.0).round() as u64);
            }
            Some(srtt) => {
                let s = srtt.as_micros() as f64;
                let var = self.rttvar.as_micros() as f64;
                let var = 0.75 * var + 0.25 * (s - r).abs();
                let s = 0.875 * s + 0.125 * r;
                self.rttvar = SimTime::from_micros(var.round() as u64);
                self.srtt = Some(SimTime::from_micros(s.round() as u64));
            }
        }
        let rto = self.srtt.unwrap_or(sample) + self.rttvar.times(4);
        self.rto = rto.max(min_rto).min(MAX_RTO);
    }

    fn first_unacked(&self) -> Option<u64> {
        self.mappings.keys().next().copied()
    }
}

/// Notifications for the metrics and event log.
#[derive(Clone, Debug, PartialEq)]
pub enum EngineEvent {
    Retransmit {
        subflow: SubflowId,
        ssn: u64,
        cause: LossCause,
    },
    Reinjection {
        from: SubflowId,
        bytes: u64,
    },
    RttSample {
        subflow: SubflowId,
        srtt: SimTime,
    },
}

/// One scheduler call, kept for offline checking of the policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub at: SimTime,
    pub need: u64,
    pub candidates: Vec<Candidate>,
    pub chosen: SubflowId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Reinjection {
    len: u32,
    /// Subflow the data is stuck on; it must go elsewhere.
    avoid: Option<SubflowId>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AckOutcome {
    pub newly_acked: u64,
    pub dup: bool,
    pub fast_retransmit: bool,
}

pub struct Connection {
    params: EngineParams,
    min_rto: SimTime,
    scheduler: PacketScheduler,
    congestion: CongestionPolicy,
    next_dsn: u64,
    data_acked: u64,
    /// `None` is a greedy, always-backlogged source.
    app_limit: Option<u64>,
    subflows: BTreeMap<SubflowId, Subflow>,
    next_subflow: u32,
    reinject: BTreeMap<u64, Reinjection>,
    /// DSN ranges acked on some subflow but not yet covered by DATA_ACK.
    acked_above: RangeSet,
    events: Vec<EngineEvent>,
    decisions: Option<Vec<Decision>>,
}

impl Connection {
    /// Opens the connection with its main subflow on `link`. Data may flow
    /// once the handshake, abstracted as one `base_rtt`, has elapsed.
    #[allow(clippy::too_many_arguments)]
    pub fn open(
        params: EngineParams,
        scheduler: SchedulerPolicy,
        congestion: CongestionPolicy,
        paths: &impl LinkStatus,
        link: LinkId,
        rsu: RsuId,
        base_rtt: SimTime,
        now: SimTime,
    ) -> Result<Connection, EngineError> {
        params.validate()?;
        if !paths.is_up(link) {
            return Err(EngineError::LinkDown(link));
        }
        let mut conn = Connection {
            min_rto: SimTime::from_secs_f64(params.min_rto),
            params,
            scheduler: PacketScheduler::new(scheduler),
            congestion,
            next_dsn: 0,
            data_acked: 0,
            app_limit: None,
            subflows: BTreeMap::new(),
            next_subflow: 1,
            reinject: BTreeMap::new(),
            acked_above: RangeSet::new(),
            events: Vec::new(),
            decisions: None,
        };
        conn.insert_subflow(link, rsu, Role::Main, base_rtt, now);
        Ok(conn)
    }

    /// Stops the source after `bytes` bytes instead of running greedy.
    pub fn with_app_limit(mut self, bytes: u64) -> Self {
        self.app_limit = Some(bytes);
        self
    }

    pub fn with_decision_log(mut self) -> Self {
        self.decisions = Some(Vec::new());
        self
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn next_dsn(&self) -> u64 {
        self.next_dsn
    }

    pub fn data_acked(&self) -> u64 {
        self.data_acked
    }

    pub fn subflow(&self, id: SubflowId) -> Option<&Subflow> {
        self.subflows.get(&id)
    }

    pub fn subflows(&self) -> impl Iterator<Item = &Subflow> {
        self.subflows.values()
    }

    pub fn decisions(&self) -> Option<&[Decision]> {
        self.decisions.as_deref()
    }

    pub fn drain_events(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.events)
    }

    /// Bytes waiting in the reinjection queue.
    pub fn reinjection_backlog(&self) -> u64 {
        self.reinject.values().map(|r| u64::from(r.len)).sum()
    }

    pub fn rto_deadline(&self, id: SubflowId) -> Option<SimTime> {
        self.subflows.get(&id).and_then(|s| s.rto_deadline)
    }

    fn insert_subflow(
        &mut self,
        link: LinkId,
        rsu: RsuId,
        role: Role,
        base_rtt: SimTime,
        now: SimTime,
    ) -> SubflowId {
        let id = SubflowId(self.next_subflow);
        self.next_subflow += 1;
        let sf = Subflow::new(
            id,
            link,
            rsu,
            role,
            self.params.mss,
            base_rtt,
            now + base_rtt,
        );
        self.subflows.insert(id, sf);
        id
    }

    /// Joins a new subflow on `link`; it becomes schedulable one `base_rtt`
    /// later.
    pub fn add_subflow(
        &mut self,
        paths: &impl LinkStatus,
        link: LinkId,
        rsu: RsuId,
        base_rtt: SimTime,
        now: SimTime,
    ) -> Result<SubflowId, EngineError> {
        if !paths.is_up(link) {
            return Err(EngineError::LinkDown(link));
        }
        if let Some(sf) = self.subflows.values().find(|s| s.link == link) {
            return Err(EngineError::DuplicateSubflow(link, sf.id));
        }
        Ok(self.insert_subflow(link, rsu, Role::Joined, base_rtt, now))
    }

    /// Destroys the subflow and queues every mapping not yet covered by the
    /// DATA_ACK for reinjection. Returns the reinjected byte count.
    pub fn remove_subflow(&mut self, id: SubflowId) -> Result<u64, EngineError> {
        let sf = self
            .subflows
            .remove(&id)
            .ok_or(EngineError::UnknownSubflow(id))?;
        let bytes = self.queue_reinjection(sf.mappings.values(), None);
        if bytes > 0 {
            self.events
                .push(EngineEvent::Reinjection { from: id, bytes });
        }
        Ok(bytes)
    }

    fn queue_reinjection<'a>(
        &mut self,
        mappings: impl Iterator<Item = &'a SegmentMapping>,
        avoid: Option<SubflowId>,
    ) -> u64 {
        let mut bytes = 0;
        for m in mappings {
            if m.dsn_end() <= self.data_acked {
                continue;
            }
            let start = m.dsn_start.max(self.data_acked);
            let len = (m.dsn_end() - start) as u32;
            let entry = self
                .reinject
                .entry(start)
                .or_insert(Reinjection { len, avoid });
            if entry.avoid != avoid {
                // queued once as "avoid X" and once unrestricted: unrestricted wins
                entry.avoid = None;
            }
            entry.len = entry.len.max(len);
            bytes += u64::from(len);
        }
        bytes
    }

    fn advance_data_ack(&mut self, data_ack: u64) {
        if data_ack <= self.data_acked {
            return;
        }
        self.data_acked = data_ack;
        self.acked_above.trim_below(data_ack);
        let stale: Vec<u64> = self.reinject.range(..data_ack).map(|(&s, _)| s).collect();
        for s in stale {
            let r = self.reinject.remove(&s).expect("key from range");
            let end = s + u64::from(r.len);
            if end > data_ack {
                self.reinject.insert(
                    data_ack,
                    Reinjection {
                        len: (end - data_ack) as u32,
                        avoid: r.avoid,
                    },
                );
            }
        }
    }

    fn snapshot(&self, now: SimTime) -> CouplingSnapshot {
        CouplingSnapshot::new(
            self.subflows
                .values()
                .filter(|s| s.is_active(now))
                .map(|s| PathWindow {
                    cwnd: s.cwnd,
                    srtt: s.rtt_estimate().as_secs_f64().max(1e-6),
                })
                .collect(),
        )
    }

    pub fn on_ack(&mut self, ack: &AckInfo, now: SimTime) -> AckOutcome {
        self.advance_data_ack(ack.data_ack);
        let mss = self.params.mss;
        let threshold = self.params.dupack_threshold;
        let min_rto = self.min_rto;
        let policy = self.congestion;
        let snapshot = self.snapshot(now);
        let Some(sf) = self.subflows.get_mut(&ack.subflow) else {
            return AckOutcome::default();
        };
        let mut out = AckOutcome::default();

        if ack.ack_ssn > sf.subflow_acked {
            let newly = ack.ack_ssn - sf.subflow_acked;
            out.newly_acked = newly;
            while let Some((&ssn, m)) = sf.mappings.iter().next() {
                if m.ssn_end() > ack.ack_ssn {
                    break;
                }
                if !m.lost {
                    sf.inflight -= u64::from(m.length);
                }
                if m.dsn_end() > self.data_acked {
                    self.acked_above.insert(m.dsn_start, m.dsn_end());
                }
                sf.mappings.remove(&ssn);
            }
            sf.urgent.retain(|ssn| *ssn >= ack.ack_ssn);
            sf.subflow_acked = ack.ack_ssn;
            sf.dup_acks = 0;

            sf.update_rtt(now - ack.ts_echo, min_rto);
            self.events.push(EngineEvent::RttSample {
                subflow: sf.id,
                srtt: sf.rtt_estimate(),
            });

            let mut restart_timer = true;
            match sf.recover {
                Some(recover) if ack.ack_ssn >= recover => {
                    sf.recover = None;
                    sf.partial_ack_seen = false;
                    sf.cwnd = sf.ssthresh;
                }
                Some(_) => {
                    // partial ACK: the next hole is lost too
                    if let Some(head) = sf.first_unacked() {
                        if !sf.urgent.contains(&head) {
                            sf.urgent.push(head);
                        }
                    }
                    restart_timer = !sf.partial_ack_seen;
                    sf.partial_ack_seen = true;
                }
                None => {
                    sf.cwnd =
                        lia::on_ack_increase(policy, sf.cwnd, sf.ssthresh, newly, mss, &snapshot);
                }
            }
            if sf.mappings.is_empty() {
                sf.rto_deadline = None;
            } else if restart_timer {
                sf.rto_deadline = Some(now + sf.rto);
            }
        } else if ack.ack_ssn == sf.subflow_acked && !sf.mappings.is_empty() {
            out.dup = true;
            sf.dup_acks += 1;
            if sf.dup_acks == threshold && sf.recover.is_none() {
                let (cwnd, ssthresh) = lia::on_decrease(sf.cwnd, mss, LossCause::FastRetransmit);
                sf.cwnd = cwnd;
                sf.ssthresh = ssthresh;
                sf.recover = Some(sf.next_ssn);
                sf.partial_ack_seen = false;
                if let Some(head) = sf.first_unacked() {
                    sf.urgent.push(head);
                }
                out.fast_retransmit = true;
            }
        }
        out
    }

    /// RTO expiry. Ignored unless `now` is the subflow's armed deadline.
    pub fn on_timeout(&mut self, id: SubflowId, now: SimTime) -> bool {
        let mss = self.params.mss;
        let others_usable = self
            .subflows
            .values()
            .any(|s| s.id != id && s.is_active(now));
        let Some(sf) = self.subflows.get_mut(&id) else {
            return false;
        };
        if sf.rto_deadline != Some(now) {
            return false;
        }
        if sf.mappings.is_empty() {
            sf.rto_deadline = None;
            return false;
        }
        let (cwnd, ssthresh) = lia::on_decrease(sf.cwnd, mss, LossCause::Timeout);
        sf.cwnd = cwnd;
        sf.ssthresh = ssthresh;
        sf.rto = sf.rto.times(2).min(MAX_RTO);
        sf.recover = None;
        sf.partial_ack_seen = false;
        sf.dup_acks = 0;
        sf.urgent.clear();
        // everything outstanding is presumed lost and resent in order
        for m in sf.mappings.values_mut() {
            m.lost = true;
        }
        sf.inflight = 0;
        sf.rto_deadline = Some(now + sf.rto);
        let head = sf.first_unacked().unwrap_or(sf.subflow_acked);
        self.events.push(EngineEvent::Retransmit {
            subflow: id,
            ssn: head,
            cause: LossCause::Timeout,
        });
        if others_usable {
            let mappings: Vec<SegmentMapping> =
                self.subflows[&id].mappings.values().copied().collect();
            let bytes = self.queue_reinjection(mappings.iter(), Some(id));
            if bytes > 0 {
                self.events
                    .push(EngineEvent::Reinjection { from: id, bytes });
            }
        }
        true
    }

    fn next_new_chunk(&self) -> Option<u32> {
        let mss = u64::from(self.params.mss);
        match self.app_limit {
            None => Some(mss as u32),
            Some(limit) if self.next_dsn < limit => Some((limit - self.next_dsn).min(mss) as u32),
            Some(_) => None,
        }
    }

    fn candidates(&self, now: SimTime, avoid: Option<SubflowId>) -> Vec<Candidate> {
        self.subflows
            .values()
            .filter(|s| s.is_active(now) && Some(s.id) != avoid)
            .map(|s| Candidate {
                id: s.id,
                srtt: s.rtt_estimate(),
                space: s.space(),
            })
            .collect()
    }

    fn emit(&mut self, id: SubflowId, ssn: u64, now: SimTime, out: &mut Vec<Segment>) {
        let sf = self.subflows.get_mut(&id).expect("subflow exists");
        let m = sf.mappings.get_mut(&ssn).expect("mapping exists");
        m.send_time = now;
        out.push(Segment {
            subflow: id,
            link: sf.link,
            ssn: m.ssn_start,
            dsn: m.dsn_start,
            len: m.length,
            sent_at: now,
            retransmission: m.retransmitted,
        });
        if sf.rto_deadline.is_none() {
            sf.rto_deadline = Some(now + sf.rto);
        }
    }

    /// Emits every segment the windows allow right now: loss-recovery
    /// retransmissions first, then reinjected data, then new data.
    pub fn try_send(&mut self, now: SimTime) -> Vec<Segment> {
        let mut out = Vec::new();
        let ids: Vec<SubflowId> = self.subflows.keys().copied().collect();

        for &id in &ids {
            let urgent = std::mem::take(&mut self.subflows.get_mut(&id).unwrap().urgent);
            for ssn in urgent {
                let sf = self.subflows.get_mut(&id).unwrap();
                let Some(m) = sf.mappings.get_mut(&ssn) else {
                    continue;
                };
                m.retransmitted = true;
                if m.lost {
                    m.lost = false;
                    sf.inflight += u64::from(m.length);
                }
                self.events.push(EngineEvent::Retransmit {
                    subflow: id,
                    ssn,
                    cause: LossCause::FastRetransmit,
                });
                self.emit(id, ssn, now, &mut out);
            }
        }

        // timeout recovery: resend presumed-lost mappings as the window allows
        for &id in &ids {
            loop {
                let sf = &self.subflows[&id];
                if !sf.is_active(now) {
                    break;
                }
                let Some((ssn, len)) = sf
                    .mappings
                    .values()
                    .find(|m| m.lost)
                    .map(|m| (m.ssn_start, u64::from(m.length)))
                else {
                    break;
                };
                if sf.space() < len {
                    break;
                }
                let sf = self.subflows.get_mut(&id).unwrap();
                let m = sf.mappings.get_mut(&ssn).unwrap();
                m.lost = false;
                m.retransmitted = true;
                sf.inflight += len;
                self.emit(id, ssn, now, &mut out);
            }
        }

        loop {
            // reinjected ranges first, each on some subflow it may use
            let mut pick = None;
            for (&dsn, r) in &self.reinject {
                let cands = self.candidates(now, r.avoid);
                if cands.iter().any(|c| c.space >= u64::from(r.len)) {
                    pick = Some((dsn, r.len, cands, true));
                    break;
                }
            }
            if pick.is_none() {
                if let Some(len) = self.next_new_chunk() {
                    pick = Some((self.next_dsn, len, self.candidates(now, None), false));
                }
            }
            let Some((dsn, len, cands, is_reinjection)) = pick else {
                break;
            };
            let need = u64::from(len);
            let Some(chosen) = self.scheduler.select_subflow(&cands, need) else {
                break;
            };
            if let Some(log) = self.decisions.as_mut() {
                log.push(Decision {
                    at: now,
                    need,
                    candidates: cands,
                    chosen,
                });
            }
            if is_reinjection {
                self.reinject.remove(&dsn);
            } else {
                self.next_dsn += need;
            }
            let sf = self.subflows.get_mut(&chosen).expect("candidate exists");
            let ssn = sf.next_ssn;
            sf.next_ssn += need;
            sf.inflight += need;
            debug_assert!(sf.inflight as f64 <= sf.cwnd);
            sf.mappings.insert(
                ssn,
                SegmentMapping {
                    dsn_start: dsn,
                    length: len,
                    ssn_start: ssn,
                    send_time: now,
                    retransmitted: false,
                    lost: false,
                },
            );
            self.emit(chosen, ssn, now, &mut out);
        }
        out
    }

    /// Checks the bookkeeping invariants; used by tests and debug runs.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.data_acked > self.next_dsn {
            return Err(format!(
                "data_acked {} beyond next_dsn {}",
                self.data_acked, self.next_dsn
            ));
        }
        let mss = f64::from(self.params.mss);
        let mut covered = RangeSet::new();
        for sf in self.subflows.values() {
            if sf.cwnd < 2.0 * mss - 1e-9 {
                return Err(format!("subflow {} cwnd {} below 2 MSS", sf.id, sf.cwnd));
            }
            let mut prev_end = sf.subflow_acked;
            let mut inflight = 0;
            for m in sf.mappings.values() {
                if m.length == 0 || m.length > self.params.mss {
                    return Err(format!("subflow {} mapping length {}", sf.id, m.length));
                }
                if m.ssn_start < prev_end {
                    return Err(format!(
                        "subflow {} overlapping ssn at {}",
                        sf.id, m.ssn_start
                    ));
                }
                prev_end = m.ssn_end();
                if !m.lost {
                    inflight += u64::from(m.length);
                }
                covered.insert(m.dsn_start, m.dsn_end());
            }
            if inflight != sf.inflight {
                return Err(format!(
                    "subflow {} inflight {} but mappings say {}",
                    sf.id, sf.inflight, inflight
                ));
            }
        }
        for (&s, r) in &self.reinject {
            covered.insert(s, s + u64::from(r.len));
        }
        for (s, e) in self.acked_above.iter() {
            covered.insert(s, e);
        }
        let missing = covered.insert(self.data_acked, self.next_dsn);
        if missing > 0 {
            return Err(format!(
                "{missing} bytes in [{}, {}) neither mapped, acked nor queued",
                self.data_acked, self.next_dsn
            ));
        }
        Ok(())
    }
}
