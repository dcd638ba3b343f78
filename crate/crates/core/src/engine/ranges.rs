use std::collections::BTreeMap;

/// Disjoint, non-adjacent half-open byte ranges.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RangeSet {
    ranges: BTreeMap<u64, u64>,
}

impl RangeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn len_bytes(&self) -> u64 {
        self.ranges.iter().map(|(s, e)| e - s).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.ranges.iter().map(|(&s, &e)| (s, e))
    }

    /// Adds `[start, end)` and returns how many bytes were not already present.
    pub fn insert(&mut self, start: u64, end: u64) -> u64 {
        if start >= end {
            return 0;
        }
        let mut new_start = start;
        let mut new_end = end;
        let mut covered = 0;
        // the range that starts at or before `start` may overlap or touch it
        if let Some((&s, &e)) = self.ranges.range(..=start).next_back() {
            if e >= start {
                covered += e.min(end).saturating_sub(start);
                new_start = s;
                new_end = new_end.max(e);
                self.ranges.remove(&s);
            }
        }
        let later: Vec<(u64, u64)> = self
            .ranges
            .range(start..=end)
            .map(|(&s, &e)| (s, e))
            .collect();
        for (s, e) in later {
            covered += e.min(end) - s.min(end);
            new_end = new_end.max(e);
            self.ranges.remove(&s);
        }
        self.ranges.insert(new_start, new_end);
        (end - start) - covered
    }

    /// Drops everything below `at`.
    pub fn trim_below(&mut self, at: u64) {
        while let Some((&s, &e)) = self.ranges.iter().next() {
            if s >= at {
                break;
            }
            self.ranges.remove(&s);
            if e > at {
                self.ranges.insert(at, e);
                break;
            }
        }
    }

    /// If a range starts at or before `at` and extends past it, removes it and
    /// returns its end.
    pub fn pop_contiguous(&mut self, at: u64) -> Option<u64> {
        let (&s, &e) = self.ranges.iter().next()?;
        if s <= at {
            self.ranges.remove(&s);
            (e > at).then_some(e)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn merge_and_count() {
        let mut r = RangeSet::new();
        assert_eq!(r.insert(10, 20), 10);
        assert_eq!(r.insert(30, 40), 10);
        assert_eq!(r.insert(15, 35), 10);
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![(10, 40)]);
        assert_eq!(r.insert(10, 40), 0);
        assert_eq!(r.insert(40, 41), 1);
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![(10, 41)]);
        assert_eq!(r.pop_contiguous(5), None);
        assert_eq!(r.pop_contiguous(10), Some(41));
        assert!(r.is_empty());
    }

    proptest! {
        #[test]
        fn matches_bitmap_oracle(ops in proptest::collection::vec((0u64..200, 1u64..30), 1..40)) {
            let mut r = RangeSet::new();
            let mut bits = vec![false; 256];
            for (s, len) in ops {
                let e = s + len;
                let fresh = (s..e).filter(|&i| !bits[i as usize]).count() as u64;
                for i in s..e {
                    bits[i as usize] = true;
                }
                prop_assert_eq!(r.insert(s, e), fresh);
            }
            prop_assert_eq!(r.len_bytes(), bits.iter().filter(|&&b| b).count() as u64);
            let spans: Vec<(u64, u64)> = r.iter().collect();
            for w in spans.windows(2) {
                prop_assert!(w[0].1 < w[1].0, "disjoint and non-adjacent");
            }
        }
    }
}
