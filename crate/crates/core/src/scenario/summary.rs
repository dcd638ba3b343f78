//! Per-phase means computed from the metrics rows and the event log.
//!
//! A phase is the stretch between two consecutive subflow add/remove
//! events. The first two seconds of each phase are dropped as ramp-up and
//! only bins lying wholly inside what remains are averaged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{EventKind, EventRecord, MetricsRow};

pub const RAMP_SECS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubflowMean {
    pub subflow_id: u32,
    pub rsu_id: u32,
    pub mean_bitrate_mbps: f64,
    pub mean_srtt_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub start_s: f64,
    pub end_s: f64,
    /// Start of the averaging window (phase start plus ramp, bin aligned).
    pub window_start_s: f64,
    pub subflows: Vec<SubflowMean>,
    pub aggregate_mbps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub duration_s: f64,
    pub metrics_bin_s: f64,
    /// Unique bytes the receiver got over all subflows.
    pub total_bytes: u64,
    /// Subflow additions after the first one plus subflow removals.
    pub handover_count: u32,
    /// Longest time without in-order delivery while a subflow existed.
    /// Not recoverable from the CSV files alone.
    pub max_delivery_gap_s: Option<f64>,
    pub phases: Vec<PhaseSummary>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-6
}

/// Bins `[b, b + bin)` with `start <= b` and `b + bin <= end`.
fn bins_in(start: f64, end: f64, bin: f64) -> Vec<f64> {
    let mut k = (start / bin - 1e-9).ceil().max(0.0) as u64;
    let mut out = Vec::new();
    loop {
        let b = k as f64 * bin;
        if b + bin > end + 1e-9 {
            break;
        }
        out.push(b);
        k += 1;
    }
    out
}

/// Mean bitrate (Mbps) of one subflow over the full bins in `[start, end)`.
/// Bins without a row for the subflow count as zero. `None` if the window
/// holds no full bin.
pub fn window_mean(
    rows: &[MetricsRow],
    subflow_id: u32,
    start: f64,
    end: f64,
    bin: f64,
) -> Option<f64> {
    window_stats(rows, subflow_id, start, end, bin).map(|(r, _)| r)
}

/// Bytes one subflow delivered in the full bins of `[start, end)`.
pub fn window_bytes(rows: &[MetricsRow], subflow_id: u32, start: f64, end: f64, bin: f64) -> u64 {
    let bins = bins_in(start, end, bin);
    rows.iter()
        .filter(|r| r.subflow_id == subflow_id && bins.iter().any(|&b| close(b, r.bin_start_s)))
        .map(|r| r.bytes)
        .sum()
}

fn window_stats(
    rows: &[MetricsRow],
    subflow_id: u32,
    start: f64,
    end: f64,
    bin: f64,
) -> Option<(f64, f64)> {
    let bins = bins_in(start, end, bin);
    if bins.is_empty() {
        return None;
    }
    let mut rate = 0.0;
    let mut srtt = 0.0;
    let mut srtt_n = 0;
    for r in rows.iter().filter(|r| r.subflow_id == subflow_id) {
        if bins.iter().any(|&b| close(b, r.bin_start_s)) {
            rate += r.bitrate_mbps;
            srtt += r.srtt_ms;
            srtt_n += 1;
        }
    }
    let srtt = if srtt_n > 0 {
        srtt / srtt_n as f64
    } else {
        0.0
    };
    Some((rate / bins.len() as f64, srtt))
}

pub fn summarize(
    rows: &[MetricsRow],
    events: &[EventRecord],
    bin: f64,
    duration: f64,
    max_delivery_gap_s: Option<f64>,
) -> RunSummary {
    let mut cuts = vec![0.0];
    let mut adds = 0u32;
    let mut removes = 0u32;
    // subflow -> (rsu, added, removed)
    let mut life: BTreeMap<u32, (u32, f64, f64)> = BTreeMap::new();
    for e in events {
        let t = e.time.as_secs_f64();
        let Some(sf) = e.subflow else { continue };
        match e.kind {
            EventKind::SubflowAdd => {
                adds += 1;
                let rsu = e
                    .detail
                    .split_whitespace()
                    .find_map(|kv| kv.strip_prefix("rsu="))
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0);
                life.insert(sf.0, (rsu, t, f64::INFINITY));
                cuts.push(t);
            }
            EventKind::SubflowRemove => {
                removes += 1;
                if let Some(l) = life.get_mut(&sf.0) {
                    l.2 = t;
                }
                cuts.push(t);
            }
            _ => {}
        }
    }
    cuts.push(duration);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| close(*a, *b));

    let mut phases = Vec::new();
    for w in cuts.windows(2) {
        let (start, end) = (w[0], w[1]);
        let from = start + RAMP_SECS;
        let bins = bins_in(from, end, bin);
        let Some(&first) = bins.first() else { continue };
        let mut subflows = Vec::new();
        for (&id, &(rsu, added, removed)) in &life {
            if added < end && removed > start {
                if let Some((rate, srtt)) = window_stats(rows, id, from, end, bin) {
                    subflows.push(SubflowMean {
                        subflow_id: id,
                        rsu_id: rsu,
                        mean_bitrate_mbps: rate,
                        mean_srtt_ms: srtt,
                    });
                }
            }
        }
        if subflows.is_empty() {
            continue;
        }
        let aggregate_mbps = subflows.iter().map(|s| s.mean_bitrate_mbps).sum();
        phases.push(PhaseSummary {
            start_s: start,
            end_s: end,
            window_start_s: first,
            subflows,
            aggregate_mbps,
        });
    }

    RunSummary {
        duration_s: duration,
        metrics_bin_s: bin,
        total_bytes: rows.iter().map(|r| r.bytes).sum(),
        handover_count: adds.saturating_sub(1) + removes,
        max_delivery_gap_s,
        phases,
    }
}
