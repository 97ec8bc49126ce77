//! Core data types shared by every stage: behaviors, behavior sequences,
//! candidates, training samples and time-interval buckets.

use std::fmt;
use std::ops::{Deref, Range};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// One timestamped user interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Behavior {
    pub item_id: u32,
    pub category_id: u32,
    /// Seconds since epoch.
    pub timestamp: u64,
}

impl Behavior {
    pub fn new(item_id: u32, category_id: u32, timestamp: u64) -> Self {
        Self {
            item_id,
            category_id,
            timestamp,
        }
    }
}

/// An immutable, chronologically ordered run of behaviors.
///
/// The backing storage is shared, so slicing (for example into short and
/// long parts) never copies behaviors.
#[derive(Clone)]
pub struct BehaviorSequence {
    data: Arc<[Behavior]>,
    range: Range<usize>,
}

impl BehaviorSequence {
    pub fn empty() -> Self {
        Self {
            data: Arc::from(Vec::new()),
            range: 0..0,
        }
    }

    /// Builds a sequence from behaviors in any order. Sorting is stable, so
    /// behaviors sharing a timestamp keep their input order.
    pub fn from_unsorted(mut behaviors: Vec<Behavior>) -> Self {
        behaviors.sort_by_key(|b| b.timestamp);
        Self::from_sorted_unchecked(behaviors)
    }

    /// Builds a sequence from behaviors already in non-decreasing time order.
    pub fn from_sorted(behaviors: Vec<Behavior>) -> Result<Self> {
        if let Some(w) = behaviors.windows(2).find(|w| w[1].timestamp < w[0].timestamp) {
            return Err(SimError::InputOrder {
                behavior: w[0].timestamp,
                request: w[1].timestamp,
            });
        }
        Ok(Self::from_sorted_unchecked(behaviors))
    }

    pub(crate) fn from_sorted_unchecked(behaviors: Vec<Behavior>) -> Self {
        let len = behaviors.len();
        Self {
            data: Arc::from(behaviors),
            range: 0..len,
        }
    }

    pub fn as_slice(&self) -> &[Behavior] {
        &self.data[self.range.clone()]
    }

    /// A sub-view over `range` (relative to this sequence).
    pub fn slice(&self, range: Range<usize>) -> Self {
        assert!(range.start <= range.end && range.end <= self.len());
        Self {
            data: Arc::clone(&self.data),
            range: self.range.start + range.start..self.range.start + range.end,
        }
    }

    /// The prefix of behaviors strictly earlier than `time`.
    pub fn before(&self, time: u64) -> Self {
        let n = self.as_slice().partition_point(|b| b.timestamp < time);
        self.slice(0..n)
    }

    /// Splits into `(long, short)`: `short` holds the most recent
    /// `short_len` behaviors and `long` everything earlier.
    pub fn split_short_long(&self, short_len: usize) -> (Self, Self) {
        let cut = self.len().saturating_sub(short_len);
        (self.slice(0..cut), self.slice(cut..self.len()))
    }

    pub fn to_vec(&self) -> Vec<Behavior> {
        self.as_slice().to_vec()
    }
}

impl Deref for BehaviorSequence {
    type Target = [Behavior];

    fn deref(&self) -> &[Behavior] {
        self.as_slice()
    }
}

impl PartialEq for BehaviorSequence {
    fn eq(&self, other: &Self) -> bool {
        self.as_slice() == other.as_slice()
    }
}

impl fmt::Debug for BehaviorSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl Default for BehaviorSequence {
    fn default() -> Self {
        Self::empty()
    }
}

impl From<Vec<Behavior>> for BehaviorSequence {
    fn from(v: Vec<Behavior>) -> Self {
        Self::from_unsorted(v)
    }
}

/// Splits `seq` into `(long, short)` parts; see [`BehaviorSequence::split_short_long`].
pub fn split_short_long(seq: &BehaviorSequence, short_len: usize) -> (BehaviorSequence, BehaviorSequence) {
    seq.split_short_long(short_len)
}

/// The item being scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateItem {
    pub item_id: u32,
    pub category_id: u32,
    pub request_time: u64,
}

impl CandidateItem {
    pub fn new(item_id: u32, category_id: u32, request_time: u64) -> Self {
        Self {
            item_id,
            category_id,
            request_time,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub user_id: u64,
    pub candidate: CandidateItem,
    pub label: bool,
    pub short_seq: BehaviorSequence,
    pub long_seq: BehaviorSequence,
}

impl TrainingSample {
    /// Builds a sample from the user's full history; only behaviors strictly
    /// before the request time are kept.
    pub fn from_history(
        user_id: u64,
        candidate: CandidateItem,
        label: bool,
        history: &BehaviorSequence,
        short_len: usize,
    ) -> Self {
        let visible = history.before(candidate.request_time);
        let (long_seq, short_seq) = visible.split_short_long(short_len);
        Self {
            user_id,
            candidate,
            label,
            short_seq,
            long_seq,
        }
    }

    /// Checks that no behavior is at or after the request time.
    pub fn check_no_leak(&self) -> Result<()> {
        let t = self.candidate.request_time;
        for b in self.long_seq.iter().chain(self.short_seq.iter()) {
            if b.timestamp >= t {
                return Err(SimError::InputOrder {
                    behavior: b.timestamp,
                    request: t,
                });
            }
        }
        Ok(())
    }

    /// Long part followed by short part, as one chronological list.
    pub fn full_history(&self) -> Vec<Behavior> {
        let mut v = self.long_seq.to_vec();
        v.extend_from_slice(&self.short_seq);
        v
    }
}

/// Days elapsed between a behavior and the request.
pub fn time_delta_days(b: &Behavior, cand: &CandidateItem) -> Result<f64> {
    if b.timestamp > cand.request_time {
        return Err(SimError::InputOrder {
            behavior: b.timestamp,
            request: cand.request_time,
        });
    }
    Ok((cand.request_time - b.timestamp) as f64 / SECONDS_PER_DAY)
}

/// Day-valued thresholds discretizing time intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeDeltaBuckets {
    boundaries: Vec<f64>,
}

impl TimeDeltaBuckets {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(SimError::Config("time buckets need at least one boundary".into()));
        }
        if !(boundaries[0] > 0.0) {
            return Err(SimError::Config("first time bucket boundary must be positive".into()));
        }
        if boundaries.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SimError::Config("time bucket boundaries must be strictly increasing".into()));
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Number of buckets including the overflow bucket.
    pub fn len(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the first boundary exceeding `delta_days`; the overflow
    /// bucket for anything past the last boundary.
    pub fn bucketize(&self, delta_days: f64) -> usize {
        self.boundaries.partition_point(|&b| b <= delta_days)
    }
}

impl Default for TimeDeltaBuckets {
    /// Powers of two from 1 to 256 days, plus overflow.
    fn default() -> Self {
        Self {
            boundaries: (0..9).map(|i| f64::from(1u32 << i)).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for TimeDeltaBuckets {
    type Error = SimError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimeDeltaBuckets> for Vec<f64> {
    fn from(b: TimeDeltaBuckets) -> Self {
        b.boundaries
    }
}

pub fn bucketize_delta(delta_days: f64, buckets: &TimeDeltaBuckets) -> usize {
    buckets.bucketize(delta_days)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq_of(n: usize) -> BehaviorSequence {
        BehaviorSequence::from_sorted((0..n).map(|i| Behavior::new(i as u32, 0, i as u64)).collect()).unwrap()
    }

    #[test]
    fn split_lengths() {
        for (n, short, long_len, short_len) in [(100, 10, 90, 10), (3, 10, 0, 3), (500, 100, 400, 100)] {
            let (l, s) = seq_of(n).split_short_long(short);
            assert_eq!((l.len(), s.len()), (long_len, short_len));
        }
        let (l, s) = seq_of(100).split_short_long(10);
        assert_eq!(s[0].timestamp, 90);
        assert_eq!(l.last().unwrap().timestamp, 89);
    }

    #[test]
    fn delta_days() {
        let c = CandidateItem::new(1, 1, 1_000_000);
        assert_eq!(time_delta_days(&Behavior::new(0, 0, 1_000_000), &c).unwrap(), 0.0);
        assert_eq!(time_delta_days(&Behavior::new(0, 0, 1_000_000 - 432_000), &c).unwrap(), 5.0);
        assert!(matches!(
            time_delta_days(&Behavior::new(0, 0, 1_000_001), &c),
            Err(SimError::InputOrder { .. })
        ));
    }

    #[test]
    fn bucket_examples() {
        let b = TimeDeltaBuckets::default();
        assert_eq!(b.len(), 10);
        assert_eq!(b.bucketize(0.0), 0);
        assert_eq!(b.bucketize(5.0), 3);
        assert_eq!(b.bucketize(10_000.0), 9);
        assert!(TimeDeltaBuckets::new(vec![]).is_err());
        assert!(TimeDeltaBuckets::new(vec![0.0, 1.0]).is_err());
        assert!(TimeDeltaBuckets::new(vec![2.0, 2.0]).is_err());
    }

    #[test]
    fn from_sorted_rejects_regression() {
        let v = vec![Behavior::new(0, 0, 5), Behavior::new(1, 0, 4)];
        assert!(BehaviorSequence::from_sorted(v).is_err());
    }

    #[test]
    fn before_excludes_equal_time() {
        let s = seq_of(10);
        assert_eq!(s.before(5).len(), 5);
    }

    proptest! {
        #[test]
        fn split_is_partition(n in 0usize..300, short in 0usize..400) {
            let s = seq_of(n);
            let (l, sh) = s.split_short_long(short);
            prop_assert_eq!(l.len() + sh.len(), n);
            let joined: Vec<_> = l.iter().chain(sh.iter()).copied().collect();
            prop_assert_eq!(joined, s.to_vec());
        }

        #[test]
        fn bucketize_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            let bk = TimeDeltaBuckets::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bk.bucketize(lo) <= bk.bucketize(hi));
            prop_assert!(bk.bucketize(hi) < bk.len());
        }
    }
}
