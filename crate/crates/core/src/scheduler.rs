//! Packet scheduling across subflows.
//!
//! `MinRtt` fills the lowest-RTT subflow's congestion window first and only
//! then moves on to the next one. `RoundRobin` exists for differential runs.

use serde::{Deserialize, Serialize};

use crate::engine::SubflowId;
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerPolicy {
    #[default]
    #[serde(alias = "minrtt")]
    MinRtt,
    #[serde(alias = "roundrobin")]
    RoundRobin,
}

/// One subflow as seen at a scheduling instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub id: SubflowId,
    pub srtt: SimTime,
    /// `cwnd - inflight`, bytes.
    pub space: u64,
}

impl Candidate {
    fn fits(&self, need: u64) -> bool {
        self.space >= need
    }
}

/// Lowest SRTT among candidates whose window can take `need` bytes; ties
/// go to the lowest subflow id.
pub fn min_rtt(candidates: &[Candidate], need: u64) -> Option<SubflowId> {
    candidates
        .iter()
        .filter(|c| c.fits(need))
        .min_by_key(|c| (c.srtt, c.id))
        .map(|c| c.id)
}

#[derive(Clone, Debug)]
pub struct PacketScheduler {
    policy: SchedulerPolicy,
    rr_last: Option<SubflowId>,
}

impl PacketScheduler {
    pub fn new(policy: SchedulerPolicy) -> Self {
        PacketScheduler {
            policy,
            rr_last: None,
        }
    }

    pub fn policy(&self) -> SchedulerPolicy {
        self.policy
    }

    pub fn select_subflow(&mut self, candidates: &[Candidate], need: u64) -> Option<SubflowId> {
        match self.policy {
            SchedulerPolicy::MinRtt => min_rtt(candidates, need),
            SchedulerPolicy::RoundRobin => {
                let mut ready: Vec<SubflowId> = candidates
                    .iter()
                    .filter(|c| c.fits(need))
                    .map(|c| c.id)
                    .collect();
                ready.sort();
                let pick = match self.rr_last {
                    Some(last) => ready.iter().find(|&&id| id > last).or(ready.first()),
                    None => ready.first(),
                }
                .copied();
                if pick.is_some() {
                    self.rr_last = pick;
                }
                pick
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MSS: u64 = 1400;

    fn c(id: u32, srtt_ms: u64, space: u64) -> Candidate {
        Candidate {
            id: SubflowId(id),
            srtt: SimTime::from_millis(srtt_ms),
            space,
        }
    }

    #[test]
    fn prefers_lower_rtt() {
        let mut s = PacketScheduler::new(SchedulerPolicy::MinRtt);
        let got = s.select_subflow(&[c(1, 20, MSS * 4), c(2, 420, MSS * 4)], MSS);
        assert_eq!(got, Some(SubflowId(1)));
    }

    #[test]
    fn falls_through_when_window_full() {
        let mut s = PacketScheduler::new(SchedulerPolicy::MinRtt);
        let got = s.select_subflow(&[c(1, 20, MSS - 1), c(2, 420, MSS)], MSS);
        assert_eq!(got, Some(SubflowId(2)));
    }

    #[test]
    fn tie_goes_to_lowest_id() {
        let mut s = PacketScheduler::new(SchedulerPolicy::MinRtt);
        assert_eq!(
            s.select_subflow(&[c(2, 20, MSS), c(1, 20, MSS)], MSS),
            Some(SubflowId(1))
        );
    }

    #[test]
    fn none_when_all_full() {
        let mut s = PacketScheduler::new(SchedulerPolicy::MinRtt);
        assert_eq!(s.select_subflow(&[c(1, 20, 0), c(2, 30, 10)], MSS), None);
        assert_eq!(s.select_subflow(&[], MSS), None);
    }

    #[test]
    fn round_robin_cycles() {
        let mut s = PacketScheduler::new(SchedulerPolicy::RoundRobin);
        let cands = [c(1, 20, MSS), c(2, 420, MSS), c(3, 5, MSS)];
        let picks: Vec<u32> = (0..5)
            .map(|_| s.select_subflow(&cands, MSS).unwrap().0)
            .collect();
        assert_eq!(picks, vec![1, 2, 3, 1, 2]);
        // skips a full one
        let cands = [c(1, 20, MSS), c(2, 420, 0), c(3, 5, MSS)];
        assert_eq!(s.select_subflow(&cands, MSS), Some(SubflowId(3)));
    }

    proptest! {
        #[test]
        fn min_rtt_dominance(
            raw in proptest::collection::vec((1u64..1000, 0u64..5 * MSS), 0..6)
        ) {
            let cands: Vec<Candidate> = raw
                .iter()
                .enumerate()
                .map(|(i, &(rtt, space))| c(i as u32 + 1, rtt, space))
                .collect();
            let mut s = PacketScheduler::new(SchedulerPolicy::MinRtt);
            match s.select_subflow(&cands, MSS) {
                Some(id) => {
                    let chosen = cands.iter().find(|x| x.id == id).unwrap();
                    prop_assert!(chosen.space >= MSS);
                    for other in cands.iter().filter(|x| x.space >= MSS) {
                        prop_assert!(chosen.srtt <= other.srtt);
                    }
                }
                None => prop_assert!(cands.iter().all(|x| x.space < MSS)),
            }
        }

        #[test]
        fn round_robin_never_picks_full(
            spaces in proptest::collection::vec(0u64..3 * MSS, 1..6),
            rounds in 1usize..20,
        ) {
            let cands: Vec<Candidate> = spaces
                .iter()
                .enumerate()
                .map(|(i, &space)| c(i as u32 + 1, 10, space))
                .collect();
            let mut s = PacketScheduler::new(SchedulerPolicy::RoundRobin);
            for _ in 0..rounds {
                if let Some(id) = s.select_subflow(&cands, MSS) {
                    prop_assert!(cands.iter().any(|x| x.id == id && x.space >= MSS));
                }
            }
        }
    }
}
