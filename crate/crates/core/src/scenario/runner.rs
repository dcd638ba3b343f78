//! Wires the medium, connection, receiver and connection manager to one
//! event loop and runs a scenario.
//!
//! Data flows from the vehicle (OBU) to a server behind the RSUs: segments
//! are uplink frames, ACKs come back from the server over the wired
//! backhaul and then as downlink frames from the RSU.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use thiserror::Error;

use crate::engine::{AckInfo, Connection, Decision, EngineEvent, Receiver, Segment, SubflowId};
use crate::handover::{Beacon, CmAction, HandoverCm, RangeSchedule};
use crate::lia::LossCause;
use crate::medium::{AirtimeLedger, Direction, Frame, LinkId, Medium, RsuId};
use crate::sim::{EventHandle, Handler, RunStats, Sim, SimError, SimTime};

use super::config::{ConfigError, ScenarioConfig};
use super::metrics::{
    write_events_csv, write_metrics_csv, EventKind, EventRecord, GapTracker, MetricsRecorder,
    MetricsRow,
};
use super::summary::{summarize, RunSummary};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("writing {path}: {message}")]
    Output { path: String, message: String },
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Keep every scheduler decision in [`RunOutput::decisions`].
    pub record_decisions: bool,
    /// Run the connection's bookkeeping checks after every step. Slow.
    pub check_invariants: bool,
}

#[derive(Clone, Debug)]
enum Pdu {
    Data(Segment),
    Ack(AckInfo),
}

#[derive(Debug)]
enum Ev {
    TxComplete,
    AtServer(Segment),
    AckAtRsu { link: LinkId, ack: AckInfo },
    AtObu(AckInfo),
    Rto(SubflowId),
    Wake,
    RangeOn(RsuId),
    RangeOff(RsuId),
    Beacon { rsu: RsuId, nominal: SimTime },
    Liveness(RsuId),
    MetricsTick,
}

struct RsuSite {
    schedule: RangeSchedule,
    prop_delay: SimTime,
    extra_delay: SimTime,
    position: (f64, f64),
    signal_strength: f64,
}

struct World {
    cfg: ScenarioConfig,
    options: RunOptions,
    medium: Medium<Pdu>,
    cm: HandoverCm,
    conn: Option<Connection>,
    receiver: Receiver,
    sites: BTreeMap<RsuId, RsuSite>,
    rsu_link: BTreeMap<RsuId, LinkId>,
    rsu_subflow: BTreeMap<RsuId, SubflowId>,
    rto_timers: BTreeMap<SubflowId, (SimTime, EventHandle)>,
    liveness_timers: BTreeMap<RsuId, EventHandle>,
    beacon_period: SimTime,
    beacon_jitter_us: u64,
    metrics: MetricsRecorder,
    events: Vec<EventRecord>,
    gap: GapTracker,
}

fn component(at: SimTime, message: impl ToString) -> SimError {
    SimError::Component {
        at,
        message: message.to_string(),
    }
}

impl World {
    fn log(&mut self, time: SimTime, kind: EventKind, subflow: Option<SubflowId>, detail: String) {
        self.events.push(EventRecord {
            time,
            kind,
            subflow,
            detail,
        });
    }

    fn live_subflows(&self) -> usize {
        self.conn.as_ref().map_or(0, |c| c.subflows().count())
    }

    fn kick(&mut self, sim: &mut Sim<Ev>) -> Result<(), SimError> {
        if let Some(tx) = self.medium.arbitrate(sim.now()) {
            sim.schedule(tx.complete_at, Ev::TxComplete)?;
        }
        Ok(())
    }

    /// Pulls whatever the connection may send now, then brings timers and
    /// logs up to date.
    fn pump(&mut self, sim: &mut Sim<Ev>) -> Result<(), SimError> {
        let now = sim.now();
        let Some(conn) = self.conn.as_mut() else {
            return Ok(());
        };
        for seg in conn.try_send(now) {
            let frame = Frame {
                link: seg.link,
                direction: Direction::Uplink,
                payload_bytes: seg.len,
                payload: Pdu::Data(seg),
            };
            // Ok(false) is a drop-tail loss, recovered like any other
            self.medium
                .send_frame(frame)
                .map_err(|e| component(now, e))?;
        }
        if self.options.check_invariants {
            conn.check_invariants().map_err(|e| component(now, e))?;
        }

        for ev in conn.drain_events() {
            match ev {
                EngineEvent::RttSample { subflow, srtt } => self.metrics.srtt_sample(subflow, srtt),
                EngineEvent::Retransmit {
                    subflow,
                    ssn,
                    cause,
                } => {
                    let cause = match cause {
                        LossCause::FastRetransmit => "fast",
                        LossCause::Timeout => "timeout",
                    };
                    self.events.push(EventRecord {
                        time: now,
                        kind: EventKind::Retransmit,
                        subflow: Some(subflow),
                        detail: format!("ssn={ssn} cause={cause}"),
                    });
                }
                EngineEvent::Reinjection { from, bytes } => self.events.push(EventRecord {
                    time: now,
                    kind: EventKind::Reinjection,
                    subflow: Some(from),
                    detail: format!("bytes={bytes}"),
                }),
            }
        }

        let ids: Vec<SubflowId> = conn.subflows().map(|s| s.id).collect();
        for id in ids {
            let want = conn.rto_deadline(id);
            let have = self.rto_timers.get(&id).map(|&(t, _)| t);
            if want == have {
                continue;
            }
            if let Some((_, h)) = self.rto_timers.remove(&id) {
                sim.cancel(h);
            }
            if let Some(t) = want {
                let h = sim.schedule(t, Ev::Rto(id))?;
                self.rto_timers.insert(id, (t, h));
            }
        }
        self.kick(sim)
    }

    fn apply(&mut self, sim: &mut Sim<Ev>, action: CmAction) -> Result<(), SimError> {
        let now = sim.now();
        match action {
            CmAction::AttachLink(rsu) => {
                let site = &self.sites[&rsu];
                let link = self
                    .medium
                    .attach_link(rsu, site.prop_delay, site.extra_delay)
                    .map_err(|e| component(now, e))?;
                self.rsu_link.insert(rsu, link);
                self.log(
                    now,
                    EventKind::LinkUp,
                    None,
                    format!("rsu={rsu} link={link}"),
                );
            }
            CmAction::AddSubflow(rsu) => {
                let link = *self
                    .rsu_link
                    .get(&rsu)
                    .ok_or_else(|| component(now, format!("no link to rsu {rsu}")))?;
                let mss = self.cfg.engine.mss;
                let base = self.medium.base_rtt(link, mss).expect("attached link");
                let id = match self.conn.as_mut() {
                    Some(conn) => conn
                        .add_subflow(&self.medium, link, rsu, base, now)
                        .map_err(|e| component(now, e))?,
                    None => {
                        let mut conn = Connection::open(
                            self.cfg.engine.clone(),
                            self.cfg.scheduler,
                            self.cfg.congestion,
                            &self.medium,
                            link,
                            rsu,
                            base,
                            now,
                        )
                        .map_err(|e| component(now, e))?;
                        if self.options.record_decisions {
                            conn = conn.with_decision_log();
                        }
                        let id = conn.subflows().next().expect("main subflow").id;
                        self.conn = Some(conn);
                        id
                    }
                };
                let sf = self
                    .conn
                    .as_ref()
                    .and_then(|c| c.subflow(id))
                    .expect("just added");
                let (active_at, cwnd) = (sf.active_at, sf.cwnd as u64);
                self.rsu_subflow.insert(rsu, id);
                self.metrics.subflow_added(id, rsu, base, cwnd);
                self.log(
                    now,
                    EventKind::SubflowAdd,
                    Some(id),
                    format!("rsu={rsu} link={link}"),
                );
                let live = self.live_subflows();
                self.gap.set_live(now, live);
                sim.schedule(active_at, Ev::Wake)?;
            }
            CmAction::ArmLiveness { rsu, deadline } => {
                if let Some(h) = self.liveness_timers.remove(&rsu) {
                    sim.cancel(h);
                }
                let h = sim.schedule(deadline, Ev::Liveness(rsu))?;
                self.liveness_timers.insert(rsu, h);
            }
            CmAction::RemoveSubflow(rsu) => {
                let Some(id) = self.rsu_subflow.remove(&rsu) else {
                    return Ok(());
                };
                let conn = self.conn.as_mut().expect("subflow implies connection");
                let reinjected = conn.remove_subflow(id).map_err(|e| component(now, e))?;
                if let Some((_, h)) = self.rto_timers.remove(&id) {
                    sim.cancel(h);
                }
                self.metrics.subflow_removed(id);
                self.log(
                    now,
                    EventKind::SubflowRemove,
                    Some(id),
                    format!("rsu={rsu} reinjected={reinjected}"),
                );
                let live = self.live_subflows();
                self.gap.set_live(now, live);
            }
            CmAction::DetachLink(rsu) => {
                let Some(link) = self.rsu_link.remove(&rsu) else {
                    return Ok(());
                };
                let dropped = self
                    .medium
                    .detach_link(link)
                    .map_err(|e| component(now, e))?;
                self.log(
                    now,
                    EventKind::LinkDown,
                    None,
                    format!("rsu={rsu} link={link} dropped={}", dropped.len()),
                );
            }
        }
        Ok(())
    }

    fn jitter(&self, sim: &mut Sim<Ev>) -> SimTime {
        SimTime::from_micros(sim.rng().below(self.beacon_jitter_us))
    }
}

impl Handler<Ev> for World {
    fn handle(&mut self, sim: &mut Sim<Ev>, event: Ev) -> Result<(), SimError> {
        let now = sim.now();
        match event {
            Ev::TxComplete => {
                if let Some(d) = self.medium.complete(now) {
                    match d.frame.payload {
                        Pdu::Data(seg) => sim.schedule(d.deliver_at, Ev::AtServer(seg))?,
                        Pdu::Ack(ack) => sim.schedule(d.deliver_at, Ev::AtObu(ack))?,
                    };
                }
                self.kick(sim)?;
            }
            Ev::AtServer(seg) => {
                let out = self.receiver.on_segment(&seg);
                self.metrics.bytes(seg.subflow, out.new_bytes);
                if out.delivered > 0 {
                    self.gap.delivered(now);
                }
                sim.schedule(
                    now + self.medium.wired_delay(),
                    Ev::AckAtRsu {
                        link: seg.link,
                        ack: out.ack,
                    },
                )?;
            }
            Ev::AckAtRsu { link, ack } => {
                let frame = Frame {
                    link,
                    direction: Direction::Downlink,
                    payload_bytes: 0,
                    payload: Pdu::Ack(ack),
                };
                // a torn-down tunnel or silent RSU just loses the ACK
                if self.medium.send_frame(frame).is_ok() {
                    self.kick(sim)?;
                }
            }
            Ev::AtObu(ack) => {
                if let Some(conn) = self.conn.as_mut() {
                    conn.on_ack(&ack, now);
                }
                self.pump(sim)?;
            }
            Ev::Rto(id) => {
                if self.rto_timers.get(&id).is_some_and(|&(t, _)| t == now) {
                    self.rto_timers.remove(&id);
                }
                if let Some(conn) = self.conn.as_mut() {
                    conn.on_timeout(id, now);
                }
                self.pump(sim)?;
            }
            Ev::Wake => self.pump(sim)?,
            Ev::RangeOn(rsu) => {
                self.medium.set_rsu_reachable(rsu, true);
                let j = self.jitter(sim);
                sim.schedule(now + j, Ev::Beacon { rsu, nominal: now })?;
            }
            Ev::RangeOff(rsu) => {
                self.medium.set_rsu_reachable(rsu, false);
            }
            Ev::Beacon { rsu, nominal } => {
                let site = &self.sites[&rsu];
                if !site.schedule.contains(nominal) {
                    return Ok(());
                }
                let beacon = Beacon {
                    rsu,
                    sent_at: nominal,
                    position: site.position,
                    signal_strength: site.signal_strength,
                };
                let next = nominal + self.beacon_period;
                if site.schedule.contains(next) {
                    let j = self.jitter(sim);
                    sim.schedule(next + j, Ev::Beacon { rsu, nominal: next })?;
                }
                let actions = self.cm.on_beacon(&beacon, now);
                let changed = actions.len() > 1;
                for a in actions {
                    self.apply(sim, a)?;
                }
                if changed {
                    self.pump(sim)?;
                }
            }
            Ev::Liveness(rsu) => {
                self.liveness_timers.remove(&rsu);
                let actions = self.cm.on_liveness_timeout(rsu, now);
                if !actions.is_empty() {
                    for a in actions {
                        self.apply(sim, a)?;
                    }
                    self.pump(sim)?;
                }
            }
            Ev::MetricsTick => {
                if let Some(conn) = self.conn.as_ref() {
                    for sf in conn.subflows() {
                        self.metrics.cwnd(sf.id, sf.cwnd as u64);
                    }
                }
                self.metrics.close_bin();
            }
        }
        Ok(())
    }
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub events: Vec<EventRecord>,
    pub summary: RunSummary,
    pub decisions: Option<Vec<Decision>>,
    pub airtime: AirtimeLedger,
    /// In-order chunks `(start, end)` handed to the application.
    pub delivery_log: Vec<(u64, u64)>,
    pub delivered_bytes: u64,
    pub unique_bytes: u64,
    pub max_delivery_gap: SimTime,
    pub stats: RunStats,
}

pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, RunError> {
    run_with(cfg, RunOptions::default())
}

pub fn run_with(cfg: &ScenarioConfig, options: RunOptions) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let bin = cfg.bin_time();
    let duration = cfg.duration_time();
    let mut medium = Medium::new(cfg.medium.clone())
        .map_err(|e| ConfigError::Invalid(e.to_string()))?
        .with_ledger(bin);
    let cm = HandoverCm::new(cfg.cm.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let mut sim: Sim<Ev> = Sim::new(cfg.seed);
    let mut sites = BTreeMap::new();
    for (i, spec) in cfg.rsus.iter().enumerate() {
        // RSUs start silent and come into range on their own schedule
        medium.set_rsu_reachable(spec.rsu_id, false);
        let schedule = spec.schedule();
        for &(s, e) in schedule.intervals() {
            sim.schedule(s, Ev::RangeOn(spec.rsu_id))?;
            sim.schedule(e, Ev::RangeOff(spec.rsu_id))?;
        }
        sites.insert(
            spec.rsu_id,
            RsuSite {
                schedule,
                prop_delay: SimTime::from_secs_f64(spec.prop_delay),
                extra_delay: SimTime::from_secs_f64(spec.extra_delay),
                position: (300.0 * i as f64, 0.0),
                signal_strength: if i % 2 == 0 { -65.0 } else { -70.0 },
            },
        );
    }
    let mut k = 1;
    while bin.times(k) <= duration {
        sim.schedule(bin.times(k), Ev::MetricsTick)?;
        k += 1;
    }

    let mut world = World {
        options,
        beacon_period: SimTime::from_secs_f64(cfg.cm.beacon_period),
        beacon_jitter_us: SimTime::from_secs_f64(cfg.cm.beacon_jitter).as_micros(),
        cfg: cfg.clone(),
        medium,
        cm,
        conn: None,
        receiver: Receiver::new(),
        sites,
        rsu_link: BTreeMap::new(),
        rsu_subflow: BTreeMap::new(),
        rto_timers: BTreeMap::new(),
        liveness_timers: BTreeMap::new(),
        metrics: MetricsRecorder::new(bin),
        events: Vec::new(),
        gap: GapTracker::default(),
    };
    let stats = sim.run_until(duration, &mut world)?;
    world.gap.finish(duration);

    let metrics = world.metrics.into_rows();
    let max_gap = world.gap.max_gap();
    let summary = summarize(
        &metrics,
        &world.events,
        cfg.metrics_bin,
        cfg.duration,
        Some(max_gap.as_secs_f64()),
    );
    let decisions = world
        .conn
        .as_ref()
        .and_then(|c| c.decisions())
        .map(<[Decision]>::to_vec);
    Ok(RunOutput {
        metrics,
        events: world.events,
        summary,
        decisions,
        airtime: world.medium.ledger().cloned().unwrap_or_default(),
        delivery_log: world.receiver.sink().log().to_vec(),
        delivered_bytes: world.receiver.sink().delivered(),
        unique_bytes: world.receiver.unique_bytes(),
        max_delivery_gap: max_gap,
        stats,
    })
}

fn out_err(path: &Path, e: impl ToString) -> RunError {
    RunError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `metrics.csv`, `events.csv` and `summary.json` into `dir`,
/// creating it if needed.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
    let p = dir.join("metrics.csv");
    let f = fs::File::create(&p).map_err(|e| out_err(&p, e))?;
    write_metrics_csv(&out.metrics, BufWriter::new(f)).map_err(|e| out_err(&p, e))?;
    let p = dir.join("events.csv");
    let f = fs::File::create(&p).map_err(|e| out_err(&p, e))?;
    write_events_csv(&out.events, BufWriter::new(f)).map_err(|e| out_err(&p, e))?;
    let p = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&out.summary).map_err(|e| out_err(&p, e))?;
    fs::write(&p, text + "\n").map_err(|e| out_err(&p, e))?;
    Ok(())
}
