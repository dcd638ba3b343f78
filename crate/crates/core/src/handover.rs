//! Handover connection manager.
//!
//! MPTCP does not notice that the vehicle moved into or out of an RSU's
//! range, so this component does it on its behalf: the first beacon from an
//! RSU brings up a tunnel and then a subflow over it; when beacons stop for
//! `loss_timeout`, the subflow is removed and then the tunnel torn down.
//! Reachability is beacon receipt; signal strength is carried but unused.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::RsuId;
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmParams {
    /// Seconds between beacons from an RSU in range.
    pub beacon_period: f64,
    /// Seconds without a beacon before an RSU is declared gone.
    pub loss_timeout: f64,
    /// Upper bound of the uniform random delay added to each beacon, seconds.
    pub beacon_jitter: f64,
}

impl Default for CmParams {
    fn default() -> Self {
        CmParams {
            beacon_period: 1.0,
            loss_timeout: 3.0,
            beacon_jitter: 0.005,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CmError {
    #[error("invalid cm params: {0}")]
    InvalidParams(String),
    #[error("range schedule: {0}")]
    InvalidSchedule(String),
}

impl CmParams {
    pub fn validate(&self) -> Result<(), CmError> {
        if !(self.beacon_period > 0.0 && self.beacon_period.is_finite()) {
            return Err(CmError::InvalidParams(format!(
                "cm.beacon_period: must be > 0, got {}",
                self.beacon_period
            )));
        }
        if !(self.loss_timeout >= self.beacon_period && self.loss_timeout.is_finite()) {
            return Err(CmError::InvalidParams(format!(
                "cm.loss_timeout: must be >= beacon_period ({}), got {}",
                self.beacon_period, self.loss_timeout
            )));
        }
        if !(0.0..self.beacon_period).contains(&self.beacon_jitter) {
            return Err(CmError::InvalidParams(format!(
                "cm.beacon_jitter: must be in [0, beacon_period), got {}",
                self.beacon_jitter
            )));
        }
        Ok(())
    }
}

/// Cooperative awareness message from an RSU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Beacon {
    pub rsu: RsuId,
    pub sent_at: SimTime,
    /// Meters.
    pub position: (f64, f64),
    /// dBm.
    pub signal_strength: f64,
}

/// Intervals `[start, end)` during which an RSU's beacons reach the OBU.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RangeSchedule {
    intervals: Vec<(SimTime, SimTime)>,
}

impl RangeSchedule {
    pub fn new(intervals: Vec<(SimTime, SimTime)>) -> Result<Self, CmError> {
        for (i, &(s, e)) in intervals.iter().enumerate() {
            if e <= s {
                return Err(CmError::InvalidSchedule(format!(
                    "interval {i} [{s}, {e}) is empty"
                )));
            }
            if i > 0 && s < intervals[i - 1].1 {
                return Err(CmError::InvalidSchedule(format!(
                    "interval {i} starts at {s}, before the previous one ends"
                )));
            }
        }
        Ok(RangeSchedule { intervals })
    }

    pub fn intervals(&self) -> &[(SimTime, SimTime)] {
        &self.intervals
    }

    pub fn contains(&self, t: SimTime) -> bool {
        self.intervals.iter().any(|&(s, e)| s <= t && t < e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmAction {
    AttachLink(RsuId),
    AddSubflow(RsuId),
    /// (Re)arm the liveness timer; any previous deadline is void.
    ArmLiveness {
        rsu: RsuId,
        deadline: SimTime,
    },
    RemoveSubflow(RsuId),
    DetachLink(RsuId),
}

#[derive(Clone, Copy, Debug)]
struct Live {
    last_beacon: SimTime,
    deadline: SimTime,
}

#[derive(Debug)]
pub struct HandoverCm {
    params: CmParams,
    loss_timeout: SimTime,
    live: BTreeMap<RsuId, Live>,
}

impl HandoverCm {
    pub fn new(params: CmParams) -> Result<Self, CmError> {
        params.validate()?;
        Ok(HandoverCm {
            loss_timeout: SimTime::from_secs_f64(params.loss_timeout),
            params,
            live: BTreeMap::new(),
        })
    }

    pub fn params(&self) -> &CmParams {
        &self.params
    }

    pub fn is_live(&self, rsu: RsuId) -> bool {
        self.live.contains_key(&rsu)
    }

    pub fn live_rsus(&self) -> impl Iterator<Item = RsuId> + '_ {
        self.live.keys().copied()
    }

    pub fn last_beacon(&self, rsu: RsuId) -> Option<SimTime> {
        self.live.get(&rsu).map(|l| l.last_beacon)
    }

    pub fn on_beacon(&mut self, beacon: &Beacon, now: SimTime) -> Vec<CmAction> {
        let deadline = now + self.loss_timeout;
        let mut actions = Vec::new();
        match self.live.get_mut(&beacon.rsu) {
            Some(l) => {
                l.last_beacon = now;
                l.deadline = deadline;
            }
            None => {
                self.live.insert(
                    beacon.rsu,
                    Live {
                        last_beacon: now,
                        deadline,
                    },
                );
                // the tunnel has to exist before a subflow can use it
                actions.push(CmAction::AttachLink(beacon.rsu));
                actions.push(CmAction::AddSubflow(beacon.rsu));
            }
        }
        actions.push(CmAction::ArmLiveness {
            rsu: beacon.rsu,
            deadline,
        });
        actions
    }

    /// Timer expiry. Stale timers (refreshed since they were armed) are
    /// ignored.
    pub fn on_liveness_timeout(&mut self, rsu: RsuId, now: SimTime) -> Vec<CmAction> {
        match self.live.get(&rsu) {
            Some(l) if l.deadline <= now => {
                self.live.remove(&rsu);
                vec![CmAction::RemoveSubflow(rsu), CmAction::DetachLink(rsu)]
            }
            _ => Vec::new(),
        }
    }
}
