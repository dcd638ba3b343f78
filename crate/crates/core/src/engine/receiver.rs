//! Server side of the connection: per-subflow cumulative ACKs, the
//! connection-level reorder buffer and the application sink.

use std::collections::BTreeMap;

use super::ranges::RangeSet;
use super::{AckInfo, Segment, SubflowId};

#[derive(Debug, Default)]
struct SubflowRecv {
    cum: u64,
    ooo: RangeSet,
}

/// Where in-order bytes end up. Keeps a log of delivered chunks so the
/// exactly-once property can be checked from outside.
#[derive(Debug, Default)]
pub struct AppSink {
    delivered: u64,
    log: Vec<(u64, u64)>,
}

impl AppSink {
    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn log(&self) -> &[(u64, u64)] {
        &self.log
    }

    fn accept(&mut self, start: u64, end: u64) {
        debug_assert_eq!(start, self.delivered);
        self.log.push((start, end));
        self.delivered = end;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecvOutcome {
    pub ack: AckInfo,
    /// Bytes this segment added to what the receiver holds.
    pub new_bytes: u64,
    /// Bytes released to the application by this segment.
    pub delivered: u64,
}

#[derive(Debug, Default)]
pub struct Receiver {
    data_ack: u64,
    ooo: RangeSet,
    subflows: BTreeMap<SubflowId, SubflowRecv>,
    sink: AppSink,
    unique_bytes: u64,
}

impl Receiver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn data_ack(&self) -> u64 {
        self.data_ack
    }

    pub fn sink(&self) -> &AppSink {
        &self.sink
    }

    /// Every distinct byte ever received, in order or not.
    pub fn unique_bytes(&self) -> u64 {
        self.unique_bytes
    }

    /// Bytes held beyond a hole.
    pub fn buffered(&self) -> u64 {
        self.ooo.len_bytes()
    }

    pub fn on_segment(&mut self, seg: &Segment) -> RecvOutcome {
        let len = u64::from(seg.len);

        let sf = self.subflows.entry(seg.subflow).or_default();
        let ssn_end = seg.ssn + len;
        if ssn_end > sf.cum {
            sf.ooo.insert(seg.ssn.max(sf.cum), ssn_end);
            while let Some(end) = sf.ooo.pop_contiguous(sf.cum) {
                sf.cum = end;
            }
        }
        let ack_ssn = sf.cum;

        let dsn_end = seg.dsn + len;
        let mut new_bytes = 0;
        if dsn_end > self.data_ack {
            new_bytes = self.ooo.insert(seg.dsn.max(self.data_ack), dsn_end);
        }
        self.unique_bytes += new_bytes;
        let before = self.data_ack;
        while let Some(end) = self.ooo.pop_contiguous(self.data_ack) {
            self.sink.accept(self.data_ack, end);
            self.data_ack = end;
        }

        RecvOutcome {
            ack: AckInfo {
                subflow: seg.subflow,
                ack_ssn,
                data_ack: self.data_ack,
                ts_echo: seg.sent_at,
            },
            new_bytes,
            delivered: self.data_ack - before,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::LinkId;
    use crate::sim::SimTime;

    fn seg(sf: u32, ssn: u64, dsn: u64, len: u32) -> Segment {
        Segment {
            subflow: SubflowId(sf),
            link: LinkId(sf),
            ssn,
            dsn,
            len,
            sent_at: SimTime::ZERO,
            retransmission: false,
        }
    }

    #[test]
    fn in_order_advances() {
        let mut r = Receiver::new();
        let o = r.on_segment(&seg(1, 0, 0, 1400));
        assert_eq!(o.ack.data_ack, 1400);
        assert_eq!(o.ack.ack_ssn, 1400);
        assert_eq!(o.delivered, 1400);
    }

    #[test]
    fn hole_then_fill_jumps() {
        let mut r = Receiver::new();
        let o = r.on_segment(&seg(1, 1400, 1400, 1400));
        assert_eq!(o.ack.data_ack, 0);
        assert_eq!(o.ack.ack_ssn, 0, "dup ack");
        assert_eq!(o.new_bytes, 1400);
        let o = r.on_segment(&seg(1, 0, 0, 1400));
        assert_eq!(o.ack.data_ack, 2800);
        assert_eq!(o.ack.ack_ssn, 2800);
        assert_eq!(o.delivered, 2800);
    }

    #[test]
    fn duplicate_via_other_subflow_delivered_once() {
        let mut r = Receiver::new();
        // reinjected copy arrives on subflow 2 first
        r.on_segment(&seg(2, 0, 0, 1400));
        let o = r.on_segment(&seg(1, 0, 0, 1400));
        assert_eq!(o.new_bytes, 0);
        assert_eq!(o.delivered, 0);
        // subflow 1 still acks its own sequence space
        assert_eq!(o.ack.ack_ssn, 1400);
        assert_eq!(r.sink().delivered(), 1400);
        assert_eq!(r.sink().log(), &[(0, 1400)]);
        assert_eq!(r.unique_bytes(), 1400);
    }
}
