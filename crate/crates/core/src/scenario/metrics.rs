//! Binned per-subflow metrics, the event log, and their CSV forms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::SubflowId;
use crate::medium::RsuId;
use crate::sim::SimTime;

pub const METRICS_HEADER: [&str; 7] = [
    "bin_start_s",
    "subflow_id",
    "rsu_id",
    "bytes",
    "bitrate_mbps",
    "srtt_ms",
    "cwnd_bytes",
];

pub const EVENTS_HEADER: [&str; 4] = ["time_s", "event", "subflow_id", "detail"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub bin_start_s: f64,
    pub subflow_id: u32,
    pub rsu_id: u32,
    /// Unique payload bytes the receiver got on this subflow during the bin.
    pub bytes: u64,
    pub bitrate_mbps: f64,
    /// Mean SRTT over the samples taken in the bin.
    pub srtt_ms: f64,
    /// At the end of the bin.
    pub cwnd_bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SubflowAdd,
    SubflowRemove,
    LinkUp,
    LinkDown,
    Retransmit,
    Reinjection,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SubflowAdd => "subflow_add",
            EventKind::SubflowRemove => "subflow_remove",
            EventKind::LinkUp => "link_up",
            EventKind::LinkDown => "link_down",
            EventKind::Retransmit => "retransmit",
            EventKind::Reinjection => "reinjection",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "subflow_add" => EventKind::SubflowAdd,
            "subflow_remove" => EventKind::SubflowRemove,
            "link_up" => EventKind::LinkUp,
            "link_down" => EventKind::LinkDown,
            "retransmit" => EventKind::Retransmit,
            "reinjection" => EventKind::Reinjection,
            other => return Err(format!("unknown event kind {other:?}")),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub time: SimTime,
    pub kind: EventKind,
    pub subflow: Option<SubflowId>,
    /// Space-separated `key=value` pairs.
    pub detail: String,
}

pub fn write_metrics_csv<W: io::Write>(rows: &[MetricsRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{:.3}", r.bin_start_s),
            r.subflow_id.to_string(),
            r.rsu_id.to_string(),
            r.bytes.to_string(),
            format!("{:.6}", r.bitrate_mbps),
            format!("{:.3}", r.srtt_ms),
            r.cwnd_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: io::Read>(input: R) -> csv::Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_events_csv<W: io::Write>(events: &[EventRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        w.write_record([
            format!("{:.6}", e.time.as_secs_f64()),
            e.kind.to_string(),
            e.subflow.map(|s| s.to_string()).unwrap_or_default(),
            e.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events_csv<R: io::Read>(input: R) -> Result<Vec<EventRecord>, String> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let field = |i: usize| {
            rec.get(i)
                .ok_or_else(|| format!("short events row: {rec:?}"))
        };
        let time: f64 = field(0)?.parse().map_err(|e| format!("time_s: {e}"))?;
        let kind: EventKind = field(1)?.parse()?;
        let subflow = match field(2)? {
            "" => None,
            s => Some(SubflowId(
                s.parse().map_err(|e| format!("subflow_id: {e}"))?,
            )),
        };
        out.push(EventRecord {
            time: SimTime::from_secs_f64(time),
            kind,
            subflow,
            detail: field(3)?.to_string(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default)]
struct BinAcc {
    bytes: u64,
    srtt_sum_us: f64,
    srtt_n: u64,
}

#[derive(Clone, Copy, Debug)]
struct SubflowInfo {
    rsu: RsuId,
    srtt: SimTime,
    cwnd: u64,
}

/// Accumulates per-bin rows while the simulation runs.
#[derive(Debug)]
pub struct MetricsRecorder {
    bin: SimTime,
    bin_index: u64,
    acc: BTreeMap<SubflowId, BinAcc>,
    info: BTreeMap<SubflowId, SubflowInfo>,
    live: BTreeSet<SubflowId>,
    seen: BTreeSet<SubflowId>,
    rows: Vec<MetricsRow>,
}

impl MetricsRecorder {
    pub fn new(bin: SimTime) -> Self {
        MetricsRecorder {
            bin,
            bin_index: 0,
            acc: BTreeMap::new(),
            info: BTreeMap::new(),
            live: BTreeSet::new(),
            seen: BTreeSet::new(),
            rows: Vec::new(),
        }
    }

    pub fn subflow_added(&mut self, id: SubflowId, rsu: RsuId, srtt: SimTime, cwnd: u64) {
        self.info.insert(id, SubflowInfo { rsu, srtt, cwnd });
        self.live.insert(id);
        self.seen.insert(id);
    }

    pub fn subflow_removed(&mut self, id: SubflowId) {
        self.live.remove(&id);
    }

    pub fn bytes(&mut self, id: SubflowId, n: u64) {
        if n > 0 {
            self.acc.entry(id).or_default().bytes += n;
            self.seen.insert(id);
        }
    }

    pub fn srtt_sample(&mut self, id: SubflowId, srtt: SimTime) {
        let a = self.acc.entry(id).or_default();
        a.srtt_sum_us += srtt.as_micros() as f64;
        a.srtt_n += 1;
        if let Some(i) = self.info.get_mut(&id) {
            i.srtt = srtt;
        }
    }

    pub fn cwnd(&mut self, id: SubflowId, cwnd: u64) {
        if let Some(i) = self.info.get_mut(&id) {
            i.cwnd = cwnd;
        }
    }

    /// Emits one row per subflow that was live at some point in the bin or
    /// received bytes in it, then starts the next bin.
    pub fn close_bin(&mut self) {
        let start = self.bin.times(self.bin_index);
        let secs = self.bin.as_secs_f64();
        for id in &self.seen {
            let a = self.acc.get(id).copied().unwrap_or_default();
            let Some(info) = self.info.get(id) else {
                continue;
            };
            let srtt_ms = if a.srtt_n > 0 {
                a.srtt_sum_us / a.srtt_n as f64 / 1e3
            } else {
                info.srtt.as_millis_f64()
            };
            self.rows.push(MetricsRow {
                bin_start_s: start.as_secs_f64(),
                subflow_id: id.0,
                rsu_id: info.rsu.0,
                bytes: a.bytes,
                bitrate_mbps: a.bytes as f64 * 8.0 / secs / 1e6,
                srtt_ms,
                cwnd_bytes: info.cwnd,
            });
        }
        self.acc.clear();
        self.seen = self.live.clone();
        self.bin_index += 1;
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<MetricsRow> {
        self.rows
    }
}

/// Longest stretch without in-order delivery while at least one subflow
/// exists.
#[derive(Clone, Debug, Default)]
pub struct GapTracker {
    live: usize,
    last_mark: SimTime,
    idle: SimTime,
    max_gap: SimTime,
    max_gap_end: SimTime,
}

impl GapTracker {
    fn advance(&mut self, now: SimTime) {
        if self.live > 0 {
            self.idle += now - self.last_mark;
            if self.idle > self.max_gap {
                self.max_gap = self.idle;
                self.max_gap_end = now;
            }
        }
        self.last_mark = now;
    }

    pub fn set_live(&mut self, now: SimTime, live: usize) {
        self.advance(now);
        self.live = live;
    }

    pub fn delivered(&mut self, now: SimTime) {
        self.advance(now);
        self.idle = SimTime::ZERO;
    }

    pub fn finish(&mut self, now: SimTime) {
        self.advance(now);
    }

    pub fn max_gap(&self) -> SimTime {
        self.max_gap
    }

    /// When the longest gap ended (or was last extended).
    pub fn max_gap_end(&self) -> SimTime {
        self.max_gap_end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_cover_live_and_late_subflows() {
        let mut m = MetricsRecorder::new(SimTime::from_secs(1));
        m.subflow_added(SubflowId(1), RsuId(1), SimTime::from_millis(20), 14000);
        m.bytes(SubflowId(1), 1_000_000);
        m.srtt_sample(SubflowId(1), SimTime::from_millis(10));
        m.srtt_sample(SubflowId(1), SimTime::from_millis(30));
        m.close_bin();
        m.subflow_removed(SubflowId(1));
        // removed during bin 1: still reported for that bin
        m.close_bin();
        // gone in bin 2 unless it delivered bytes there
        m.close_bin();
        let rows = m.rows();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].bitrate_mbps, 8.0);
        assert_eq!(rows[0].srtt_ms, 20.0);
        assert_eq!(rows[1].bin_start_s, 1.0);
        assert_eq!(rows[1].bytes, 0);
    }

    #[test]
    fn gap_only_counts_live_time() {
        let mut g = GapTracker::default();
        let s = SimTime::from_secs;
        g.set_live(s(0), 1);
        g.delivered(s(1));
        g.set_live(s(2), 0);
        g.set_live(s(10), 1);
        g.delivered(s(11));
        g.finish(s(12));
        // 1..2 live without delivery, 2..10 nothing live, 10..11 live: 1 s + 1 s
        assert_eq!(g.max_gap(), s(2));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![MetricsRow {
            bin_start_s: 3.0,
            subflow_id: 2,
            rsu_id: 2,
            bytes: 1_062_500,
            bitrate_mbps: 8.5,
            srtt_ms: 151.25,
            cwnd_bytes: 140_000,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text
            .starts_with("bin_start_s,subflow_id,rsu_id,bytes,bitrate_mbps,srtt_ms,cwnd_bytes\n"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);

        let events = vec![EventRecord {
            time: SimTime::from_micros(20_001_234),
            kind: EventKind::SubflowAdd,
            subflow: Some(SubflowId(2)),
            detail: "rsu=2 link=2".into(),
        }];
        let mut buf = Vec::new();
        write_events_csv(&events, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "time_s,event,subflow_id,detail\n20.001234,subflow_add,2,rsu=2 link=2\n"
        );
        assert_eq!(read_events_csv(&buf[..]).unwrap(), events);
    }
}
