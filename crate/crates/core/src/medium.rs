//! The OBU's single half-duplex radio, shared by every logical link
//! (tunnel) to an RSU.
//!
//! Each link has a bounded uplink queue at the OBU and a bounded downlink
//! queue at its RSU. All nonempty `(link, direction)` queues contend for the
//! one channel and are served per-frame in round-robin order. Only one frame
//! is ever on the air.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RsuId(pub u32);

impl fmt::Display for RsuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// OBU to RSU (and on to the server).
    Uplink,
    /// RSU to OBU.
    Downlink,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkState {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumConfig {
    /// Channel bit rate in bits per second.
    pub phy_rate: f64,
    /// Bytes added to every frame for MAC, IP, tunnel and transport headers.
    pub frame_overhead: u32,
    /// Fraction of airtime taken by foreign stations, in `[0, 1)`.
    pub background_occupancy: f64,
    /// One-way RSU to server latency, seconds.
    pub wired_delay: f64,
    /// Frames per link per direction.
    pub queue_capacity: usize,
}

impl Default for MediumConfig {
    fn default() -> Self {
        MediumConfig {
            phy_rate: 9_000_000.0,
            frame_overhead: 82,
            background_occupancy: 0.0,
            wired_delay: 0.005,
            queue_capacity: 100,
        }
    }
}

impl MediumConfig {
    pub fn validate(&self) -> Result<(), MediumError> {
        let bad = |key: &str, why: String| {
            Err(MediumError::InvalidConfig(format!("medium.{key}: {why}")))
        };
        if !(self.phy_rate > 0.0 && self.phy_rate.is_finite()) {
            return bad("phy_rate", format!("must be > 0, got {}", self.phy_rate));
        }
        if !(0.0..1.0).contains(&self.background_occupancy) {
            return bad(
                "background_occupancy",
                format!("must be in [0, 1), got {}", self.background_occupancy),
            );
        }
        if !(self.wired_delay >= 0.0 && self.wired_delay.is_finite()) {
            return bad(
                "wired_delay",
                format!("must be >= 0, got {}", self.wired_delay),
            );
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity", "must be >= 1".into());
        }
        Ok(())
    }

    fn effective_rate(&self) -> f64 {
        self.phy_rate * (1.0 - self.background_occupancy)
    }

    /// Channel time taken by a frame, including the share lost to foreign
    /// stations. Rounded up to whole microseconds.
    pub fn airtime(&self, payload_bytes: u32) -> SimTime {
        let bits = f64::from(payload_bytes + self.frame_overhead) * 8.0;
        SimTime::from_micros((bits / self.effective_rate() * 1e6).ceil() as u64)
    }

    /// Airtime the frame's own bits need at the nominal rate, in seconds.
    pub fn nominal_airtime_secs(&self, payload_bytes: u32) -> f64 {
        f64::from(payload_bytes + self.frame_overhead) * 8.0 / self.phy_rate
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MediumError {
    #[error("rsu {0} already has an Up link")]
    DuplicateAttach(RsuId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("link {0} is down")]
    LinkDown(LinkId),
    #[error("invalid medium config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame<P> {
    pub link: LinkId,
    pub direction: Direction,
    pub payload_bytes: u32,
    pub payload: P,
}

/// Lets other components ask about link state without owning the medium.
pub trait LinkStatus {
    fn is_up(&self, link: LinkId) -> bool;
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub frames_sent: [u64; 2],
    pub payload_bytes_sent: [u64; 2],
    pub frames_dropped_full: [u64; 2],
}

#[derive(Debug)]
pub struct LogicalLink<P> {
    pub id: LinkId,
    pub rsu: RsuId,
    pub state: LinkState,
    pub prop_delay: SimTime,
    pub extra_delay: SimTime,
    uplink: VecDeque<Frame<P>>,
    downlink: VecDeque<Frame<P>>,
    pub counters: LinkCounters,
}

impl<P> LogicalLink<P> {
    fn queue(&self, dir: Direction) -> &VecDeque<Frame<P>> {
        match dir {
            Direction::Uplink => &self.uplink,
            Direction::Downlink => &self.downlink,
        }
    }

    fn queue_mut(&mut self, dir: Direction) -> &mut VecDeque<Frame<P>> {
        match dir {
            Direction::Uplink => &mut self.uplink,
            Direction::Downlink => &mut self.downlink,
        }
    }

    pub fn queue_len(&self, dir: Direction) -> usize {
        self.queue(dir).len()
    }
}

fn dir_index(dir: Direction) -> usize {
    match dir {
        Direction::Uplink => 0,
        Direction::Downlink => 1,
    }
}

/// A frame whose transmission just started.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub link: LinkId,
    pub direction: Direction,
    pub start: SimTime,
    pub complete_at: SimTime,
}

/// A frame that left the channel and will reach its far end.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery<P> {
    pub frame: Frame<P>,
    pub deliver_at: SimTime,
}

struct OnAir<P> {
    tx: Transmission,
    frame: Option<Frame<P>>,
}

/// Per-bin channel accounting.
#[derive(Clone, Debug, Default)]
pub struct AirtimeLedger {
    bin: SimTime,
    /// Nominal airtime of our own frames per bin, seconds.
    pub nominal_busy: Vec<f64>,
}

impl AirtimeLedger {
    fn new(bin: SimTime) -> Self {
        AirtimeLedger {
            bin,
            nominal_busy: Vec::new(),
        }
    }

    pub fn bin(&self) -> SimTime {
        self.bin
    }

    /// Spreads `nominal` seconds over `[start, end)` in proportion to overlap.
    fn record(&mut self, start: SimTime, end: SimTime, nominal: f64) {
        let span = (end - start).as_micros();
        if span == 0 {
            return;
        }
        let bin = self.bin.as_micros();
        let mut t = start.as_micros();
        while t < end.as_micros() {
            let idx = (t / bin) as usize;
            let bin_end = (idx as u64 + 1) * bin;
            let seg_end = bin_end.min(end.as_micros());
            if self.nominal_busy.len() <= idx {
                self.nominal_busy.resize(idx + 1, 0.0);
            }
            self.nominal_busy[idx] += nominal * (seg_end - t) as f64 / span as f64;
            t = seg_end;
        }
    }
}

pub struct Medium<P> {
    cfg: MediumConfig,
    wired_delay: SimTime,
    links: BTreeMap<LinkId, LogicalLink<P>>,
    next_link: u32,
    unreachable: BTreeSet<RsuId>,
    last_served: Option<(LinkId, Direction)>,
    on_air: Option<OnAir<P>>,
    ledger: Option<AirtimeLedger>,
}

impl<P> Medium<P> {
    pub fn new(cfg: MediumConfig) -> Result<Self, MediumError> {
        cfg.validate()?;
        Ok(Medium {
            wired_delay: SimTime::from_secs_f64(cfg.wired_delay),
            cfg,
            links: BTreeMap::new(),
            next_link: 1,
            unreachable: BTreeSet::new(),
            last_served: None,
            on_air: None,
            ledger: None,
        })
    }

    /// Enables per-bin airtime accounting.
    pub fn with_ledger(mut self, bin: SimTime) -> Self {
        self.ledger = Some(AirtimeLedger::new(bin));
        self
    }

    pub fn config(&self) -> &MediumConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> Option<&AirtimeLedger> {
        self.ledger.as_ref()
    }

    pub fn wired_delay(&self) -> SimTime {
        self.wired_delay
    }

    pub fn link(&self, id: LinkId) -> Option<&LogicalLink<P>> {
        self.links.get(&id)
    }

    /// Links currently taking part in arbitration.
    pub fn up_links(&self) -> impl Iterator<Item = &LogicalLink<P>> {
        self.links.values().filter(|l| l.state == LinkState::Up)
    }

    pub fn is_busy(&self) -> bool {
        self.on_air.is_some()
    }

    /// Round trip a segment of `payload_bytes` sees on an idle channel.
    pub fn base_rtt(&self, id: LinkId, payload_bytes: u32) -> Option<SimTime> {
        let l = self.links.get(&id)?;
        let one_way = l.prop_delay + l.extra_delay + self.wired_delay;
        Some(one_way.times(2) + self.cfg.airtime(payload_bytes) + self.cfg.airtime(0))
    }

    pub fn attach_link(
        &mut self,
        rsu: RsuId,
        prop_delay: SimTime,
        extra_delay: SimTime,
    ) -> Result<LinkId, MediumError> {
        if self.up_links().any(|l| l.rsu == rsu) {
            return Err(MediumError::DuplicateAttach(rsu));
        }
        let id = LinkId(self.next_link);
        self.next_link += 1;
        self.links.insert(
            id,
            LogicalLink {
                id,
                rsu,
                state: LinkState::Up,
                prop_delay,
                extra_delay,
                uplink: VecDeque::new(),
                downlink: VecDeque::new(),
                counters: LinkCounters::default(),
            },
        );
        Ok(id)
    }

    /// Takes the link down. Queued frames and a frame currently on the air
    /// are returned as dropped; the channel stays busy until that frame's
    /// airtime ends.
    pub fn detach_link(&mut self, id: LinkId) -> Result<Vec<Frame<P>>, MediumError> {
        let link = self
            .links
            .get_mut(&id)
            .ok_or(MediumError::UnknownLink(id))?;
        if link.state == LinkState::Down {
            return Err(MediumError::LinkDown(id));
        }
        link.state = LinkState::Down;
        let mut dropped: Vec<Frame<P>> = link.uplink.drain(..).collect();
        dropped.extend(link.downlink.drain(..));
        if let Some(air) = self.on_air.as_mut() {
            if air.tx.link == id {
                if let Some(f) = air.frame.take() {
                    dropped.push(f);
                }
            }
        }
        Ok(dropped)
    }

    /// Marks an RSU as powered off (or back on). While off, its downlink
    /// queue is flushed and skipped, and uplink frames towards it still
    /// take airtime but are lost.
    pub fn set_rsu_reachable(&mut self, rsu: RsuId, reachable: bool) -> usize {
        if reachable {
            self.unreachable.remove(&rsu);
            return 0;
        }
        self.unreachable.insert(rsu);
        let mut flushed = 0;
        for l in self.links.values_mut().filter(|l| l.rsu == rsu) {
            flushed += l.downlink.len();
            l.downlink.clear();
        }
        flushed
    }

    pub fn is_reachable(&self, rsu: RsuId) -> bool {
        !self.unreachable.contains(&rsu)
    }

    /// Enqueues a frame on its link. `Ok(false)` means the frame was lost:
    /// drop-tail on a full queue, or a downlink frame at a powered-off RSU.
    pub fn send_frame(&mut self, frame: Frame<P>) -> Result<bool, MediumError> {
        let cap = self.cfg.queue_capacity;
        let link = self
            .links
            .get_mut(&frame.link)
            .ok_or(MediumError::UnknownLink(frame.link))?;
        if link.state == LinkState::Down {
            return Err(MediumError::LinkDown(frame.link));
        }
        let dir = frame.direction;
        if dir == Direction::Downlink && self.unreachable.contains(&link.rsu) {
            return Ok(false);
        }
        let q = link.queue_mut(dir);
        if q.len() >= cap {
            link.counters.frames_dropped_full[dir_index(dir)] += 1;
            return Ok(false);
        }
        q.push_back(frame);
        Ok(true)
    }

    fn eligible(&self) -> Vec<(LinkId, Direction)> {
        let mut keys = Vec::new();
        for l in self.up_links() {
            for dir in [Direction::Uplink, Direction::Downlink] {
                if l.queue(dir).is_empty() {
                    continue;
                }
                if dir == Direction::Downlink && self.unreachable.contains(&l.rsu) {
                    continue;
                }
                keys.push((l.id, dir));
            }
        }
        keys
    }

    /// Starts the next transmission if the channel is idle and some queue
    /// is nonempty. Queues are visited round-robin in `(link, direction)`
    /// order, continuing after the one served last.
    pub fn arbitrate(&mut self, now: SimTime) -> Option<Transmission> {
        if self.on_air.is_some() {
            return None;
        }
        let keys = self.eligible();
        let key = match self.last_served {
            Some(last) => keys.iter().find(|k| **k > last).or(keys.first()),
            None => keys.first(),
        }
        .copied()?;
        self.last_served = Some(key);
        let (link_id, dir) = key;
        let link = self.links.get_mut(&link_id).expect("eligible link exists");
        let frame = link
            .queue_mut(dir)
            .pop_front()
            .expect("eligible queue nonempty");
        let airtime = self.cfg.airtime(frame.payload_bytes);
        let tx = Transmission {
            link: link_id,
            direction: dir,
            start: now,
            complete_at: now + airtime,
        };
        if let Some(ledger) = self.ledger.as_mut() {
            ledger.record(
                now,
                tx.complete_at,
                self.cfg.nominal_airtime_secs(frame.payload_bytes),
            );
        }
        self.on_air = Some(OnAir {
            tx,
            frame: Some(frame),
        });
        Some(tx)
    }

    /// Ends the current transmission. Returns the delivery when the frame
    /// survived: its link is still Up and the RSU is reachable.
    pub fn complete(&mut self, now: SimTime) -> Option<Delivery<P>> {
        let air = self.on_air.take()?;
        debug_assert_eq!(air.tx.complete_at, now);
        let frame = air.frame?;
        let link = self.links.get_mut(&frame.link)?;
        if link.state == LinkState::Down || self.unreachable.contains(&link.rsu) {
            return None;
        }
        let di = dir_index(frame.direction);
        link.counters.frames_sent[di] += 1;
        link.counters.payload_bytes_sent[di] += u64::from(frame.payload_bytes);
        let mut deliver_at = now + link.prop_delay + link.extra_delay;
        if frame.direction == Direction::Uplink {
            deliver_at += self.wired_delay;
        }
        Some(Delivery { frame, deliver_at })
    }
}

impl<P> LinkStatus for Medium<P> {
    fn is_up(&self, link: LinkId) -> bool {
        self.links
            .get(&link)
            .is_some_and(|l| l.state == LinkState::Up)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(link: LinkId, dir: Direction, bytes: u32) -> Frame<u32> {
        Frame {
            link,
            direction: dir,
            payload_bytes: bytes,
            payload: 0,
        }
    }

    fn medium() -> Medium<u32> {
        Medium::new(MediumConfig::default()).unwrap()
    }

    #[test]
    fn attach_and_share() {
        let mut m = medium();
        let a = m
            .attach_link(RsuId(1), SimTime::from_millis(2), SimTime::ZERO)
            .unwrap();
        assert_eq!(m.up_links().count(), 1);
        let b = m
            .attach_link(RsuId(2), SimTime::from_millis(2), SimTime::ZERO)
            .unwrap();
        assert_eq!(m.up_links().count(), 2);
        assert_ne!(a, b);
        assert_eq!(
            m.attach_link(RsuId(1), SimTime::ZERO, SimTime::ZERO),
            Err(MediumError::DuplicateAttach(RsuId(1)))
        );
    }

    #[test]
    fn detach_reports_queued_frames() {
        let mut m = medium();
        let a = m
            .attach_link(RsuId(1), SimTime::ZERO, SimTime::ZERO)
            .unwrap();
        assert!(m.detach_link(a).unwrap().is_empty());
        assert_eq!(m.detach_link(a), Err(MediumError::LinkDown(a)));
        assert_eq!(
            m.detach_link(LinkId(99)),
            Err(MediumError::UnknownLink(LinkId(99)))
        );

        let b = m
            .attach_link(RsuId(1), SimTime::ZERO, SimTime::ZERO)
            .unwrap();
        for _ in 0..3 {
            assert!(m.send_frame(frame(b, Direction::Uplink, 100)).unwrap());
        }
        assert_eq!(m.detach_link(b).unwrap().len(), 3);
        assert!(m.arbitrate(SimTime::ZERO).is_none(), "medium idle");
    }

    #[test]
    fn detach_mid_air_drops_the_frame_but_keeps_channel_busy() {
        let mut m = medium();
        let a = m
            .attach_link(RsuId(1), SimTime::ZERO, SimTime::ZERO)
            .unwrap();
        m.send_frame(frame(a, Direction::Uplink, 1400)).unwrap();
        let tx = m.arbitrate(SimTime::ZERO).unwrap();
        assert_eq!(m.detach_link(a).unwrap().len(), 1);
        assert!(m.is_busy());
        assert!(m.complete(tx.complete_at).is_none());
        assert!(!m.is_busy());
    }

    #[test]
    fn drop_tail_and_down_link() {
        let mut m = medium();
        let a = m
            .attach_link(RsuId(1), SimTime::ZERO, SimTime::ZERO)
            .unwrap();
        assert!(m.send_frame(frame(a, Direction::Uplink, 10)).unwrap());
        for _ in 1..100 {
            assert!(m.send_frame(frame(a, Direction::Uplink, 10)).unwrap());
        }
        assert!(!m.send_frame(frame(a, Direction::Uplink, 10)).unwrap());
        // the other direction has its own queue
        assert!(m.send_frame(frame(a, Direction::Downlink, 0)).unwrap());
        m.detach_link(a).unwrap();
        assert_eq!(
            m.send_frame(frame(a, Direction::Uplink, 10)),
            Err(MediumError::LinkDown(a))
        );
    }

    #[test]
    fn airtime_formula() {
        let cfg = MediumConfig::default();
        // (1400 + 82) * 8 / 9e6 s = 1317.33 us, rounded up
        assert_eq!(cfg.airtime(1400), SimTime::from_micros(1318));
        let busy = MediumConfig {
            background_occupancy: 0.3,
            ..cfg.clone()
        };
        // 1317.33 / 0.7 = 1881.9 us
        assert_eq!(busy.airtime(1400), SimTime::from_micros(1882));
    }

    #[test]
    fn delivery_delays() {
        let mut m = medium();
        let a = m
            .attach_link(RsuId(1), SimTime::from_millis(2), SimTime::from_millis(200))
            .unwrap();
        m.send_frame(frame(a, Direction::Uplink, 1400)).unwrap();
        m.send_frame(frame(a, Direction::Downlink, 0)).unwrap();
        let tx = m.arbitrate(SimTime::ZERO).unwrap();
        let d = m.complete(tx.complete_at).unwrap();
        assert_eq!(d.frame.direction, Direction::Uplink);
        assert_eq!(
            d.deliver_at,
            tx.complete_at + SimTime::from_millis(2 + 200 + 5)
        );
        let tx2 = m.arbitrate(tx.complete_at).unwrap();
        assert_eq!(tx2.direction, Direction::Downlink);
        let d2 = m.complete(tx2.complete_at).unwrap();
        assert_eq!(d2.deliver_at, tx2.complete_at + SimTime::from_millis(202));
    }

    #[test]
    fn round_robin_alternates_links_and_directions() {
        let mut m = medium();
        let a = m
            .attach_link(RsuId(1), SimTime::ZERO, SimTime::ZERO)
            .unwrap();
        let b = m
            .attach_link(RsuId(2), SimTime::ZERO, SimTime::ZERO)
            .unwrap();
        for _ in 0..2 {
            m.send_frame(frame(a, Direction::Uplink, 1)).unwrap();
            m.send_frame(frame(a, Direction::Downlink, 1)).unwrap();
            m.send_frame(frame(b, Direction::Uplink, 1)).unwrap();
        }
        let mut order = Vec::new();
        let mut now = SimTime::ZERO;
        while let Some(tx) = m.arbitrate(now) {
            order.push((tx.link, tx.direction));
            now = tx.complete_at;
            m.complete(now);
        }
        use Direction::*;
        assert_eq!(
            order,
            vec![
                (a, Uplink),
                (a, Downlink),
                (b, Uplink),
                (a, Uplink),
                (a, Downlink),
                (b, Uplink)
            ]
        );
    }

    #[test]
    fn powered_off_rsu() {
        let mut m = medium();
        let a = m
            .attach_link(RsuId(1), SimTime::ZERO, SimTime::ZERO)
            .unwrap();
        m.send_frame(frame(a, Direction::Downlink, 0)).unwrap();
        assert_eq!(m.set_rsu_reachable(RsuId(1), false), 1);
        assert!(!m.send_frame(frame(a, Direction::Downlink, 0)).unwrap());
        // uplink still burns airtime, then vanishes
        m.send_frame(frame(a, Direction::Uplink, 1400)).unwrap();
        let tx = m.arbitrate(SimTime::ZERO).unwrap();
        assert!(m.complete(tx.complete_at).is_none());
        m.set_rsu_reachable(RsuId(1), true);
        m.send_frame(frame(a, Direction::Uplink, 1400)).unwrap();
        let tx = m.arbitrate(SimTime::from_secs(1)).unwrap();
        assert!(m.complete(tx.complete_at).is_some());
    }

    #[test]
    fn ledger_splits_across_bins() {
        let mut l = AirtimeLedger::new(SimTime::from_secs(1));
        l.record(
            SimTime::from_micros(999_000),
            SimTime::from_micros(1_001_000),
            0.002,
        );
        assert!((l.nominal_busy[0] - 0.001).abs() < 1e-12);
        assert!((l.nominal_busy[1] - 0.001).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = MediumConfig::default();
        assert!(c.validate().is_ok());
        c.background_occupancy = 1.0;
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("background_occupancy"));
        c = MediumConfig {
            queue_capacity: 0,
            ..Default::default()
        };
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("queue_capacity"));
        c = MediumConfig {
            phy_rate: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
