//! Linked Increase Algorithm (RFC 6356) coupled congestion control plus
//! the classic slow start and multiplicative decrease around it.
//!
//! Windows are tracked in bytes as `f64` so fractional per-ACK increases
//! accumulate without a separate counter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CongestionPolicy {
    #[default]
    Lia,
    /// Every subflow runs its own Reno-style avoidance.
    Uncoupled,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CongestionError {
    #[error("coupling snapshot has no subflows")]
    EmptySnapshot,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathWindow {
    /// Congestion window, bytes.
    pub cwnd: f64,
    /// Smoothed RTT, seconds.
    pub srtt: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CouplingSnapshot {
    pub paths: Vec<PathWindow>,
}

impl CouplingSnapshot {
    pub fn new(paths: Vec<PathWindow>) -> Self {
        CouplingSnapshot { paths }
    }

    pub fn cwnd_total(&self) -> f64 {
        self.paths.iter().map(|p| p.cwnd).sum()
    }
}

/// `alpha = cwnd_total * max_i(cwnd_i / rtt_i^2) / (sum_i cwnd_i / rtt_i)^2`
pub fn alpha(snapshot: &CouplingSnapshot) -> Result<f64, CongestionError> {
    if snapshot.paths.is_empty() {
        return Err(CongestionError::EmptySnapshot);
    }
    let total = snapshot.cwnd_total();
    let best = snapshot
        .paths
        .iter()
        .map(|p| p.cwnd / (p.srtt * p.srtt))
        .fold(f64::MIN, f64::max);
    let denom: f64 = snapshot.paths.iter().map(|p| p.cwnd / p.srtt).sum();
    Ok(total * best / (denom * denom))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossCause {
    FastRetransmit,
    Timeout,
}

/// Window growth on an ACK for `bytes_acked` new bytes. `own` is this
/// subflow's window; `snapshot` must include it.
pub fn on_ack_increase(
    policy: CongestionPolicy,
    own_cwnd: f64,
    ssthresh: f64,
    bytes_acked: u64,
    mss: u32,
    snapshot: &CouplingSnapshot,
) -> f64 {
    let acked = bytes_acked as f64;
    let mss = f64::from(mss);
    if own_cwnd < ssthresh {
        return own_cwnd + acked;
    }
    let uncoupled = acked * mss / own_cwnd;
    match policy {
        CongestionPolicy::Uncoupled => own_cwnd + uncoupled,
        CongestionPolicy::Lia => {
            let coupled = match alpha(snapshot) {
                Ok(a) => a * acked * mss / snapshot.cwnd_total(),
                Err(_) => uncoupled,
            };
            own_cwnd + coupled.min(uncoupled)
        }
    }
}

/// Returns the new `(cwnd, ssthresh)`.
pub fn on_decrease(cwnd: f64, mss: u32, cause: LossCause) -> (f64, f64) {
    let floor = 2.0 * f64::from(mss);
    let ssthresh = (cwnd / 2.0).max(floor);
    match cause {
        LossCause::FastRetransmit => (ssthresh, ssthresh),
        LossCause::Timeout => (floor, ssthresh),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MSS: u32 = 1400;

    fn snap(p: &[(f64, f64)]) -> CouplingSnapshot {
        CouplingSnapshot::new(
            p.iter()
                .map(|&(cwnd, srtt)| PathWindow { cwnd, srtt })
                .collect(),
        )
    }

    #[test]
    fn single_path_alpha_is_one() {
        for &(w, r) in &[(2800.0, 0.001), (14000.0, 0.02), (140000.0, 0.9)] {
            assert!((alpha(&snap(&[(w, r)])).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_paths_alpha_is_reciprocal() {
        for n in 1..=5 {
            let paths = vec![(28000.0, 0.05); n];
            let a = alpha(&snap(&paths)).unwrap();
            assert!((a - 1.0 / n as f64).abs() < 1e-12, "n={n} a={a}");
        }
    }

    #[test]
    fn empty_snapshot_errors() {
        assert_eq!(
            alpha(&CouplingSnapshot::default()),
            Err(CongestionError::EmptySnapshot)
        );
    }

    #[test]
    fn slow_start_adds_acked_bytes() {
        let s = snap(&[(14000.0, 0.02)]);
        let w = on_ack_increase(CongestionPolicy::Lia, 14000.0, f64::INFINITY, 1400, MSS, &s);
        assert_eq!(w, 15400.0);
    }

    #[test]
    fn single_path_avoidance_matches_reno() {
        let s = snap(&[(28000.0, 0.02)]);
        let lia = on_ack_increase(CongestionPolicy::Lia, 28000.0, 14000.0, 1400, MSS, &s);
        let reno = on_ack_increase(CongestionPolicy::Uncoupled, 28000.0, 14000.0, 1400, MSS, &s);
        assert!((lia - reno).abs() < 1e-9);
        assert!((lia - 28000.0 - 1400.0 * 1400.0 / 28000.0).abs() < 1e-9);
    }

    #[test]
    fn two_symmetric_paths_grow_at_half_rate() {
        let s = snap(&[(28000.0, 0.02), (28000.0, 0.02)]);
        let coupled = on_ack_increase(CongestionPolicy::Lia, 28000.0, 1.0, 1400, MSS, &s) - 28000.0;
        let single = 1400.0 * 1400.0 / 28000.0;
        // alpha = 1/2 over twice the window: a quarter of the Reno increment
        assert!((coupled - single / 4.0).abs() < 1e-9);
    }

    /// Drives the per-ACK rule with ACK arrivals at `cwnd / rtt` per path for
    /// 30 s and compares against the fluid single-path slope of 1 MSS/RTT.
    #[test]
    fn symmetric_pair_aggregate_grows_at_half_single_path_rate() {
        let rtt = 0.05;
        let dt = 0.001;
        let steps = (30.0 / dt) as usize;
        let mss = f64::from(MSS);
        let mut pair = [20.0 * mss; 2];
        let mut single = 20.0 * mss;
        for _ in 0..steps {
            let s = snap(&[(pair[0], rtt), (pair[1], rtt)]);
            let mut next = pair;
            for (i, w) in pair.iter().enumerate() {
                let acks = w / mss / rtt * dt;
                let per_ack =
                    on_ack_increase(CongestionPolicy::Lia, *w, 0.0, MSS as u64, MSS, &s) - w;
                next[i] = w + acks * per_ack;
            }
            pair = next;
            let acks = single / mss / rtt * dt;
            let s1 = snap(&[(single, rtt)]);
            single += acks
                * (on_ack_increase(CongestionPolicy::Lia, single, 0.0, MSS as u64, MSS, &s1)
                    - single);
        }
        let single_growth = single - 20.0 * mss;
        let fluid_single = 30.0 / rtt * mss;
        assert!((single_growth / fluid_single - 1.0).abs() < 1e-6);
        let pair_growth = pair[0] + pair[1] - 40.0 * mss;
        assert!((pair_growth / single_growth - 0.5).abs() < 1e-6);
        assert!(((pair[0] - 20.0 * mss) / single_growth - 0.25).abs() < 1e-6);
    }

    #[test]
    fn coupled_increase_is_capped() {
        // one short path and one very long one: alpha > 1 but min() caps it
        let s = snap(&[(28000.0, 0.02), (2800.0, 0.42)]);
        let a = alpha(&s).unwrap();
        assert!(a > 1.0);
        let w = on_ack_increase(CongestionPolicy::Lia, 2800.0, 2800.0, 1400, MSS, &s);
        assert!(w - 2800.0 <= 1400.0 * 1400.0 / 2800.0 + 1e-9);
    }

    #[test]
    fn decrease_rules() {
        assert_eq!(
            on_decrease(28000.0, MSS, LossCause::FastRetransmit),
            (14000.0, 14000.0)
        );
        assert_eq!(
            on_decrease(3000.0, MSS, LossCause::FastRetransmit),
            (2800.0, 2800.0)
        );
        assert_eq!(
            on_decrease(28000.0, MSS, LossCause::Timeout),
            (2800.0, 14000.0)
        );
    }
}
