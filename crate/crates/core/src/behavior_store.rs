//! The user behavior tree: a Key-Key-Value index
//! `user_id -> category_id -> behaviors (most recent first)`.
//!
//! Trees are immutable snapshots. [`UserBehaviorTree::insert`] returns a new
//! snapshot that shares every untouched user node with the old one, so
//! readers holding the old snapshot are never disturbed.

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fs;
use std::hash::Hasher;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use fnv::FnvHasher;
use serde::Serialize;

use crate::domain::{Behavior, BehaviorSequence};
use crate::error::{Result, SimError};

pub const UBT_MAGIC: &[u8; 8] = b"SIMUBT1\0";
pub const UBT_VERSION: u32 = 1;

/// Default SBS truncation applied at serving time.
pub const DEFAULT_QUERY_LEN: usize = 200;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UserNode {
    /// Per-category lists, most recent first.
    categories: BTreeMap<u32, Vec<Behavior>>,
    total: usize,
}

impl UserNode {
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category(&self, category_id: u32) -> &[Behavior] {
        self.categories.get(&category_id).map_or(&[], Vec::as_slice)
    }

    pub fn categories(&self) -> impl Iterator<Item = (u32, &[Behavior])> {
        self.categories.iter().map(|(&c, v)| (c, v.as_slice()))
    }

    /// Returns false when the behavior was a duplicate.
    fn insert(&mut self, b: Behavior) -> bool {
        let list = self.categories.entry(b.category_id).or_default();
        let lo = list.partition_point(|x| x.timestamp > b.timestamp);
        let hi = list.partition_point(|x| x.timestamp >= b.timestamp);
        if list[lo..hi].iter().any(|x| x.item_id == b.item_id) {
            return false;
        }
        list.insert(hi, b);
        self.total += 1;
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StoreStats {
    pub users: usize,
    pub max_seq_len: usize,
    pub mean_seq_len: f64,
    pub categories_per_user_p99: usize,
}

#[derive(Clone, Debug, Default)]
pub struct UserBehaviorTree {
    users: HashMap<u64, Arc<UserNode>>,
    build_timestamp: u64,
}

impl UserBehaviorTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a tree from `(user_id, behavior)` records in any order.
    /// Duplicate `(item_id, timestamp)` pairs within a category are dropped.
    pub fn build<I>(log: I) -> Self
    where
        I: IntoIterator<Item = (u64, Behavior)>,
    {
        let mut grouped: HashMap<u64, BTreeMap<u32, Vec<Behavior>>> = HashMap::new();
        let mut build_timestamp = 0;
        for (user, b) in log {
            build_timestamp = build_timestamp.max(b.timestamp);
            grouped.entry(user).or_default().entry(b.category_id).or_default().push(b);
        }
        let users = grouped
            .into_iter()
            .map(|(user, mut categories)| {
                let mut total = 0;
                for list in categories.values_mut() {
                    // stable: ties keep arrival order, matching `insert`
                    list.sort_by(|a, b| b.timestamp.cmp(&a.timestamp));
                    dedup_equal_time(list);
                    total += list.len();
                }
                (user, Arc::new(UserNode { categories, total }))
            })
            .collect();
        Self { users, build_timestamp }
    }

    /// Reads a tab-separated behavior log (`user item category timestamp`,
    /// optional trailing label column ignored) and builds the tree.
    pub fn build_from_file(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut records = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = crate::datagen::parse_log_line(&line).map_err(|message| SimError::Ingest {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            })?;
            records.push((rec.user_id, rec.behavior));
        }
        Ok(Self::build(records))
    }

    /// Returns a new snapshot containing `b`; `self` is unchanged.
    pub fn insert(&self, user_id: u64, b: Behavior) -> Self {
        let mut next = self.clone();
        next.insert_in_place(user_id, b);
        next
    }

    pub(crate) fn insert_in_place(&mut self, user_id: u64, b: Behavior) -> bool {
        self.build_timestamp = self.build_timestamp.max(b.timestamp);
        let node = self.users.entry(user_id).or_default();
        Arc::make_mut(node).insert(b)
    }

    pub fn build_timestamp(&self) -> u64 {
        self.build_timestamp
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, user_id: u64) -> Option<&UserNode> {
        self.users.get(&user_id).map(Arc::as_ref)
    }

    pub fn user_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.users.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// The `k` most recent behaviors of `user_id` in `category_id`, in
    /// ascending time order. Unknown keys yield an empty sequence.
    pub fn query(&self, user_id: u64, category_id: u32, k: usize) -> BehaviorSequence {
        self.query_skip(user_id, category_id, 0, k)
    }

    /// Like [`query`](Self::query) but first skips the `skip` most recent
    /// entries of the list.
    pub fn query_skip(&self, user_id: u64, category_id: u32, skip: usize, k: usize) -> BehaviorSequence {
        let Some(node) = self.users.get(&user_id) else {
            return BehaviorSequence::empty();
        };
        let list = node.category(category_id);
        let start = skip.min(list.len());
        let end = (start + k).min(list.len());
        let out: Vec<Behavior> = list[start..end].iter().rev().copied().collect();
        BehaviorSequence::from_sorted_unchecked(out)
    }

    /// The user's `n` most recent behaviors across all categories, in
    /// ascending time order, together with how many were taken from each
    /// category. Cost is bounded by `n` and the user's category count.
    pub fn recent(&self, user_id: u64, n: usize) -> (BehaviorSequence, BTreeMap<u32, usize>) {
        let mut taken = BTreeMap::new();
        let Some(node) = self.users.get(&user_id) else {
            return (BehaviorSequence::empty(), taken);
        };
        // max-heap on (timestamp, category); ties resolve toward the larger category id
        let mut heap: BinaryHeap<(u64, u32, usize)> = node
            .categories
            .iter()
            .filter_map(|(&c, list)| list.first().map(|b| (b.timestamp, c, 0)))
            .collect();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let Some((_, c, pos)) = heap.pop() else { break };
            let list = &node.categories[&c];
            out.push(list[pos]);
            *taken.entry(c).or_insert(0) += 1;
            if let Some(next) = list.get(pos + 1) {
                heap.push((next.timestamp, c, pos + 1));
            }
        }
        out.reverse();
        (BehaviorSequence::from_sorted_unchecked(out), taken)
    }

    pub fn stats(&self) -> StoreStats {
        let users = self.users.len();
        let max_seq_len = self.users.values().map(|u| u.total).max().unwrap_or(0);
        let total: usize = self.users.values().map(|u| u.total).sum();
        let mean_seq_len = if users == 0 { 0.0 } else { total as f64 / users as f64 };
        let mut cats: Vec<usize> = self.users.values().map(|u| u.categories.len()).collect();
        cats.sort_unstable();
        let categories_per_user_p99 = if cats.is_empty() {
            0
        } else {
            // nearest-rank percentile
            let rank = ((0.99 * cats.len() as f64).ceil() as usize).clamp(1, cats.len());
            cats[rank - 1]
        };
        StoreStats {
            users,
            max_seq_len,
            mean_seq_len,
            categories_per_user_p99,
        }
    }

    /// Checks the structural invariants of every user node.
    pub fn validate(&self) -> Result<()> {
        for (&user, node) in &self.users {
            let mut sum = 0;
            for (&cat, list) in &node.categories {
                if list.is_empty() {
                    return Err(SimError::Corrupt(format!("user {user} category {cat}: empty list")));
                }
                if list.iter().any(|b| b.category_id != cat) {
                    return Err(SimError::Corrupt(format!("user {user} category {cat}: foreign behavior")));
                }
                if list.windows(2).any(|w| w[1].timestamp > w[0].timestamp) {
                    return Err(SimError::Corrupt(format!("user {user} category {cat}: not recency ordered")));
                }
                sum += list.len();
            }
            if sum != node.total {
                return Err(SimError::Corrupt(format!(
                    "user {user}: total {} != sum of lists {sum}",
                    node.total
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(UBT_MAGIC);
        buf.extend_from_slice(&UBT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.build_timestamp.to_le_bytes());
        buf.extend_from_slice(&(self.users.len() as u64).to_le_bytes());
        for user in self.user_ids() {
            let node = &self.users[&user];
            buf.extend_from_slice(&user.to_le_bytes());
            buf.extend_from_slice(&(node.total as u64).to_le_bytes());
            buf.extend_from_slice(&(node.categories.len() as u32).to_le_bytes());
            for (&cat, list) in &node.categories {
                buf.extend_from_slice(&cat.to_le_bytes());
                buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
                for b in list {
                    buf.extend_from_slice(&b.item_id.to_le_bytes());
                    buf.extend_from_slice(&b.timestamp.to_le_bytes());
                }
            }
        }
        let sum = checksum(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header_len = UBT_MAGIC.len() + 4;
        if bytes.len() >= UBT_MAGIC.len() && &bytes[..UBT_MAGIC.len()] != UBT_MAGIC {
            return Err(SimError::BadMagic { expected: "SIMUBT1\\0" });
        }
        if bytes.len() >= header_len {
            let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
            if found != UBT_VERSION {
                return Err(SimError::VersionMismatch {
                    expected: UBT_VERSION,
                    found,
                });
            }
        }
        let body = verify_checksum(bytes, header_len)?;
        let mut r = ByteReader::new(&body[header_len..]);
        let build_timestamp = r.u64()?;
        let n_users = r.u64()?;
        let mut users = HashMap::with_capacity(n_users.min(1 << 24) as usize);
        for _ in 0..n_users {
            let user = r.u64()?;
            let total = r.u64()? as usize;
            let n_cats = r.u32()?;
            let mut categories = BTreeMap::new();
            for _ in 0..n_cats {
                let cat = r.u32()?;
                let len = r.u32()? as usize;
                let mut list = Vec::with_capacity(len.min(r.remaining() / 12));
                for _ in 0..len {
                    let item = r.u32()?;
                    let ts = r.u64()?;
                    list.push(Behavior::new(item, cat, ts));
                }
                categories.insert(cat, list);
            }
            users.insert(user, Arc::new(UserNode { categories, total }));
        }
        if r.remaining() != 0 {
            return Err(SimError::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        let tree = Self { users, build_timestamp };
        tree.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn dedup_equal_time(list: &mut Vec<Behavior>) {
    let mut out: Vec<Behavior> = Vec::with_capacity(list.len());
    let mut run_start = 0;
    for &b in list.iter() {
        if out.last().is_none_or(|l| l.timestamp != b.timestamp) {
            run_start = out.len();
        }
        if !out[run_start..].iter().any(|x| x.item_id == b.item_id) {
            out.push(b);
        }
    }
    *list = out;
}

pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Splits off and checks the trailing 64-bit checksum, returning the body.
pub(crate) fn verify_checksum(bytes: &[u8], min_body: usize) -> Result<&[u8]> {
    if bytes.len() < min_body + 8 {
        return Err(SimError::Checksum {
            stored: 0,
            computed: checksum(bytes),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = checksum(body);
    if stored != computed {
        return Err(SimError::Checksum { stored, computed });
    }
    Ok(body)
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(SimError::Corrupt(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(item: u32, cat: u32, ts: u64) -> Behavior {
        Behavior::new(item, cat, ts)
    }

    #[test]
    fn build_groups_users_and_categories() {
        let t = UserBehaviorTree::build(vec![(1, b(1, 1, 10)), (2, b(2, 1, 11)), (1, b(3, 2, 12))]);
        assert_eq!(t.num_users(), 2);
        let t = UserBehaviorTree::build(vec![(7, b(1, 1, 1)), (7, b(2, 1, 2)), (7, b(3, 2, 3))]);
        let u = t.user(7).unwrap();
        assert_eq!(u.num_categories(), 2);
        assert_eq!(u.category(1).len(), 2);
        assert_eq!(u.category(2).len(), 1);
        assert_eq!(u.total(), 3);
    }

    #[test]
    fn build_is_idempotent_for_duplicates() {
        let t = UserBehaviorTree::build(vec![(1, b(1, 1, 10)), (1, b(1, 1, 10)), (1, b(2, 1, 10))]);
        assert_eq!(t.user(1).unwrap().total(), 2);
    }

    #[test]
    fn query_truncates_and_orders_ascending() {
        let log: Vec<_> = (0..300).map(|i| (1, b(i, 5, 1000 + u64::from(i)))).collect();
        let t = UserBehaviorTree::build(log);
        let q = t.query(1, 5, 200);
        assert_eq!(q.len(), 200);
        assert_eq!(q[0].timestamp, 1100);
        assert_eq!(q[199].timestamp, 1299);
        assert!(t.query(2, 5, 200).is_empty());
        assert!(t.query(1, 6, 200).is_empty());

        let t = UserBehaviorTree::build((0..5).map(|i| (1, b(i, 5, 100 - u64::from(i)))));
        let q = t.query(1, 5, 200);
        assert_eq!(q.iter().map(|x| x.timestamp).collect::<Vec<_>>(), vec![96, 97, 98, 99, 100]);
    }

    #[test]
    fn insert_positions_and_snapshots() {
        let empty = UserBehaviorTree::new();
        let t1 = empty.insert(1, b(1, 1, 100));
        assert_eq!(empty.num_users(), 0);
        assert_eq!(t1.stats().users, 1);

        let t2 = t1.insert(1, b(2, 1, 50));
        assert_eq!(t2.user(1).unwrap().category(1)[1].item_id, 2);
        assert_eq!(t1.user(1).unwrap().total(), 1);

        let t3 = t2.insert(1, b(3, 1, 200));
        assert_eq!(t3.query(1, 1, 1)[0].item_id, 3);

        // duplicate dropped
        let t4 = t3.insert(1, b(3, 1, 200));
        assert_eq!(t4.user(1).unwrap().total(), 3);
    }

    #[test]
    fn recent_merges_categories() {
        let t = UserBehaviorTree::build(vec![
            (1, b(1, 1, 1)),
            (1, b(2, 2, 2)),
            (1, b(3, 1, 3)),
            (1, b(4, 3, 4)),
            (1, b(5, 2, 5)),
        ]);
        let (seq, taken) = t.recent(1, 3);
        assert_eq!(seq.iter().map(|x| x.item_id).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(taken.get(&1), Some(&1));
        assert_eq!(taken.get(&2), Some(&1));
        assert_eq!(taken.get(&3), Some(&1));
        // skipping the short-window entries leaves the older ones
        assert_eq!(t.query_skip(1, 1, 1, 10).iter().map(|x| x.item_id).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn stats_and_bytes_round_trip() {
        let t = UserBehaviorTree::build(vec![(1, b(1, 1, 10)), (2, b(2, 1, 11)), (1, b(3, 2, 12))]);
        let s = t.stats();
        assert_eq!(s.users, 2);
        assert_eq!(s.max_seq_len, 2);
        assert!((s.mean_seq_len - 1.5).abs() < 1e-12);
        assert_eq!(s.categories_per_user_p99, 2);
        let back = UserBehaviorTree::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.stats(), s);
        assert_eq!(back.build_timestamp(), 12);
        for u in [1, 2, 3] {
            for c in [1, 2] {
                assert_eq!(back.query(u, c, 10), t.query(u, c, 10));
            }
        }
    }

    #[test]
    fn load_errors_are_distinct() {
        let t = UserBehaviorTree::build(vec![(1, b(1, 1, 10))]);
        let bytes = t.to_bytes();
        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(UserBehaviorTree::from_bytes(truncated), Err(SimError::Checksum { .. })));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(UserBehaviorTree::from_bytes(&bad_magic), Err(SimError::BadMagic { .. })));

        let mut v2 = bytes[..bytes.len() - 8].to_vec();
        v2[8..12].copy_from_slice(&2u32.to_le_bytes());
        let sum = checksum(&v2);
        v2.extend_from_slice(&sum.to_le_bytes());
        assert!(matches!(
            UserBehaviorTree::from_bytes(&v2),
            Err(SimError::VersionMismatch { found: 2, .. })
        ));

        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(matches!(UserBehaviorTree::from_bytes(&flipped), Err(SimError::Checksum { .. })));
    }
}
