//! Asymmetric LSH for maximum inner product search.
//!
//! Data vectors are scaled so the largest norm becomes `U < 1` and then
//! extended with their even powers of the norm,
//! `P(x) = [x; ‖x‖²; ‖x‖⁴; …; ‖x‖^(2^m)]`, while queries are normalised and
//! padded with `1/2`, `Q(q) = [q/‖q‖; 1/2; …; 1/2]`. Then
//! `‖P(x) − Q(q)‖² = 1 + m/4 − 2 x·q/‖q‖ + ‖x‖^(2^(m+1))`, so nearest
//! neighbours under L2 are (up to a vanishing term) maximum inner product
//! matches. Buckets come from concatenated `floor((a·v + b) / r)` hashes;
//! each table is probed at its home bucket and at the nearest perturbed
//! buckets, and every candidate is rescored exactly.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::nn::dot;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlshConfig {
    /// Number of appended norm powers.
    pub m: usize,
    /// Largest data norm after scaling.
    pub u: f64,
    /// Bucket width of each hash function.
    pub r: f64,
    pub tables: usize,
    /// Hash functions concatenated into one table key.
    pub hashes_per_table: usize,
    /// Buckets probed per table, home bucket included.
    pub probes_per_table: usize,
    /// Corpora at or below this size are scanned exactly.
    pub exact_threshold: usize,
    pub seed: u64,
}

impl Default for AlshConfig {
    fn default() -> Self {
        Self {
            m: 3,
            u: 0.83,
            r: 2.5,
            tables: 32,
            hashes_per_table: 12,
            probes_per_table: 24,
            exact_threshold: 128,
            seed: 0x5eed,
        }
    }
}

impl AlshConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.u < 1.0) {
            return Err(SimError::Config("ALSH scaling U must lie in (0, 1)".into()));
        }
        if self.m == 0 || self.tables == 0 || self.hashes_per_table == 0 || self.probes_per_table == 0 {
            return Err(SimError::Config("ALSH m, tables, hashes and probes must be positive".into()));
        }
        if !(self.r > 0.0) {
            return Err(SimError::Config("ALSH bucket width must be positive".into()));
        }
        Ok(())
    }
}

/// One hash table: `hashes_per_table` projections of the transformed space.
#[derive(Clone, Debug)]
struct HashTable {
    /// Row-major `hashes × (dim + m)`.
    projections: Vec<f64>,
    offsets: Vec<f64>,
    buckets: HashMap<u64, Vec<u32>>,
}

#[derive(Clone, Debug)]
pub struct AlshIndex {
    cfg: AlshConfig,
    dim: usize,
    ids: Vec<u64>,
    /// Original vectors, for exact rescoring.
    vectors: Vec<f64>,
    max_norm: f64,
    tables: Vec<HashTable>,
}

/// Result of one query with the size of the rescored candidate pool.
#[derive(Clone, Debug, PartialEq)]
pub struct AlshHits {
    pub hits: Vec<(u64, f64)>,
    pub candidates: usize,
}

fn bucket_key(h: &[i64]) -> u64 {
    let mut hasher = FnvHasher::default();
    for v in h {
        hasher.write_i64(*v);
    }
    hasher.finish()
}

impl AlshIndex {
    pub fn build(vectors: &[(u64, Vec<f64>)], cfg: &AlshConfig) -> Result<Self> {
        cfg.validate()?;
        let Some(first) = vectors.first() else {
            return Err(SimError::Config("ALSH corpus is empty".into()));
        };
        let dim = first.1.len();
        if let Some((_, bad)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(SimError::Dimension {
                expected: dim,
                actual: bad.len(),
            });
        }
        let max_norm = vectors.iter().map(|(_, v)| dot(v, v).sqrt()).fold(0.0, f64::max);
        if !(max_norm > 0.0) {
            return Err(SimError::Config("ALSH corpus has zero maximum norm".into()));
        }
        let mut index = Self {
            cfg: cfg.clone(),
            dim,
            ids: vectors.iter().map(|(id, _)| *id).collect(),
            vectors: vectors.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
            max_norm,
            tables: Vec::new(),
        };
        if vectors.len() <= cfg.exact_threshold {
            return Ok(index);
        }

        let tdim = dim + cfg.m;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        index.tables = (0..cfg.tables)
            .map(|_| HashTable {
                projections: (0..cfg.hashes_per_table * tdim).map(|_| rng.sample(StandardNormal)).collect(),
                offsets: (0..cfg.hashes_per_table).map(|_| rng.random_range(0.0..cfg.r)).collect(),
                buckets: HashMap::new(),
            })
            .collect();
        let mut scratch = vec![0.0; cfg.hashes_per_table];
        let mut h = vec![0i64; cfg.hashes_per_table];
        for pos in 0..index.ids.len() {
            let p = index.transform_data(index.vector(pos));
            for t in 0..index.tables.len() {
                index.raw_hash(t, &p, &mut scratch);
                for (hv, s) in h.iter_mut().zip(&scratch) {
                    *hv = s.floor() as i64;
                }
                index.tables[t].buckets.entry(bucket_key(&h)).or_default().push(pos as u32);
            }
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &AlshConfig {
        &self.cfg
    }

    /// True when queries scan the corpus instead of probing buckets.
    pub fn is_exact(&self) -> bool {
        self.tables.is_empty()
    }

    fn vector(&self, pos: usize) -> &[f64] {
        &self.vectors[pos * self.dim..(pos + 1) * self.dim]
    }

    /// `P(x)`: scaled vector followed by its norm powers.
    pub fn transform_data(&self, x: &[f64]) -> Vec<f64> {
        let s = self.cfg.u / self.max_norm;
        let mut out: Vec<f64> = x.iter().map(|v| v * s).collect();
        let mut pow = dot(&out, &out);
        for _ in 0..self.cfg.m {
            out.push(pow);
            pow *= pow;
        }
        out
    }

    /// `Q(q)`: unit query padded with halves.
    pub fn transform_query(&self, q: &[f64]) -> Vec<f64> {
        let n = dot(q, q).sqrt();
        let mut out: Vec<f64> = q.iter().map(|v| v / n).collect();
        out.extend(std::iter::repeat_n(0.5, self.cfg.m));
        out
    }

    /// `(a·v + b) / r` for every hash of table `t`.
    fn raw_hash(&self, t: usize, v: &[f64], out: &mut [f64]) {
        let table = &self.tables[t];
        let tdim = v.len();
        for (j, o) in out.iter_mut().enumerate() {
            let a = &table.projections[j * tdim..(j + 1) * tdim];
            *o = (dot(a, v) + table.offsets[j]) / self.cfg.r;
        }
    }

    /// Exact inner-product scan.
    pub fn exact(&self, q: &[f64], k: usize) -> Vec<(u64, f64)> {
        let scores: Vec<f64> = (0..self.len()).map(|p| dot(self.vector(p), q)).collect();
        self.top(scores.into_iter().enumerate(), k)
    }

    fn top(&self, scored: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<(u64, f64)> {
        let mut v: Vec<(usize, f64)> = scored.collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k < v.len() {
            v.select_nth_unstable_by(k, cmp);
            v.truncate(k);
        }
        v.sort_unstable_by(cmp);
        v.into_iter().map(|(p, s)| (self.ids[p], s)).collect()
    }

    /// Approximate top-`k` by inner product, sorted by descending score.
    pub fn query(&self, q: &[f64], k: usize) -> Vec<(u64, f64)> {
        self.query_with_stats(q, k).hits
    }

    pub fn query_with_stats(&self, q: &[f64], k: usize) -> AlshHits {
        assert_eq!(q.len(), self.dim, "query dimension");
        let qn = dot(q, q).sqrt();
        if self.is_exact() || !(qn > 0.0) {
            return AlshHits {
                hits: self.exact(q, k),
                candidates: self.len(),
            };
        }
        let qt = self.transform_query(q);
        let hashes = self.cfg.hashes_per_table;
        let mut seen = vec![false; self.len()];
        let mut pool = Vec::new();
        let mut raw = vec![0.0; hashes];
        let mut home = vec![0i64; hashes];
        let mut probe = vec![0i64; hashes];
        for t in 0..self.tables.len() {
            self.raw_hash(t, &qt, &mut raw);
            for (h, r) in home.iter_mut().zip(&raw) {
                *h = r.floor() as i64;
            }
            for perturbation in ProbeSequence::new(&raw).take(self.cfg.probes_per_table) {
                probe.copy_from_slice(&home);
                for &(j, delta) in &perturbation {
                    probe[j] += delta;
                }
                if let Some(bucket) = self.tables[t].buckets.get(&bucket_key(&probe)) {
                    for &pos in bucket {
                        let pos = pos as usize;
                        if !seen[pos] {
                            seen[pos] = true;
                            pool.push(pos);
                        }
                    }
                }
            }
        }
        let candidates = pool.len();
        let hits = self.top(pool.into_iter().map(|p| (p, dot(self.vector(p), q))), k);
        AlshHits { hits, candidates }
    }
}

/// Query-directed probe generation: perturbation sets in increasing order
/// of their squared distance to the query's bucket boundaries. The first
/// item is the empty set (the home bucket).
struct ProbeSequence {
    /// `(score, hash index, ±1)` sorted by score.
    steps: Vec<(f64, usize, i64)>,
    heap: BinaryHeap<Reverse<Candidate>>,
    started: bool,
}

#[derive(Clone, Debug)]
struct Candidate {
    score: f64,
    /// Sorted positions into `steps`.
    set: Vec<usize>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| self.set.cmp(&other.set))
    }
}

impl ProbeSequence {
    fn new(raw: &[f64]) -> Self {
        let mut steps = Vec::with_capacity(raw.len() * 2);
        for (j, &f) in raw.iter().enumerate() {
            let frac = f - f.floor();
            steps.push((frac * frac, j, -1));
            steps.push(((1.0 - frac) * (1.0 - frac), j, 1));
        }
        steps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut heap = BinaryHeap::new();
        if !steps.is_empty() {
            heap.push(Reverse(Candidate {
                score: steps[0].0,
                set: vec![0],
            }));
        }
        Self {
            steps,
            heap,
            started: false,
        }
    }

    fn valid(&self, set: &[usize]) -> bool {
        let mut used: Vec<usize> = set.iter().map(|&i| self.steps[i].1).collect();
        used.sort_unstable();
        used.windows(2).all(|w| w[0] != w[1])
    }
}

impl Iterator for ProbeSequence {
    type Item = Vec<(usize, i64)>;

    fn next(&mut self) -> Option<Self::Item> {
        if !self.started {
            self.started = true;
            return Some(Vec::new());
        }
        while let Some(Reverse(c)) = self.heap.pop() {
            let last = *c.set.last().expect("nonempty set");
            if last + 1 < self.steps.len() {
                let mut shifted = c.set.clone();
                *shifted.last_mut().unwrap() = last + 1;
                let shift_score = c.score - self.steps[last].0 + self.steps[last + 1].0;
                self.heap.push(Reverse(Candidate {
                    score: shift_score,
                    set: shifted,
                }));
                let mut expanded = c.set.clone();
                expanded.push(last + 1);
                self.heap.push(Reverse(Candidate {
                    score: c.score + self.steps[last + 1].0,
                    set: expanded,
                }));
            }
            if self.valid(&c.set) {
                return Some(c.set.iter().map(|&i| (self.steps[i].1, self.steps[i].2)).collect());
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_corpus(n: usize, d: usize, seed: u64) -> Vec<(u64, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| (i as u64, (0..d).map(|_| rng.sample(StandardNormal)).collect()))
            .collect()
    }

    #[test]
    fn single_vector_corpus() {
        let idx = AlshIndex::build(&[(7, vec![1.0, 2.0])], &AlshConfig::default()).unwrap();
        assert_eq!(idx.query(&[-3.0, 0.5], 5), vec![(7, -2.0)]);
    }

    #[test]
    fn rejects_bad_corpora() {
        let cfg = AlshConfig::default();
        assert!(AlshIndex::build(&[], &cfg).is_err());
        assert!(AlshIndex::build(&[(0, vec![0.0, 0.0])], &cfg).is_err());
        assert!(matches!(
            AlshIndex::build(&[(0, vec![1.0]), (1, vec![1.0, 2.0])], &cfg),
            Err(SimError::Dimension { .. })
        ));
        let bad = AlshConfig { u: 1.0, ..cfg };
        assert!(AlshIndex::build(&[(0, vec![1.0])], &bad).is_err());
    }

    #[test]
    fn small_corpus_uses_exact_fallback() {
        let corpus = random_corpus(10, 4, 1);
        let idx = AlshIndex::build(&corpus, &AlshConfig::default()).unwrap();
        assert!(idx.is_exact());
        let q = [0.3, -0.2, 0.9, 0.1];
        let mut brute: Vec<(u64, f64)> = corpus.iter().map(|(i, v)| (*i, dot(v, &q))).collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1));
        brute.truncate(3);
        assert_eq!(idx.query(&q, 3), brute);
    }

    #[test]
    fn transformed_norms_are_bounded() {
        let corpus = random_corpus(10_000, 16, 2);
        let cfg = AlshConfig::default();
        let idx = AlshIndex::build(&corpus, &cfg).unwrap();
        let bound: f64 = (0..=cfg.m).map(|i| cfg.u.powi(1 << (i + 1))).sum();
        for (_, v) in &corpus {
            let p = idx.transform_data(v);
            assert_eq!(p.len(), 16 + cfg.m);
            assert!(dot(&p[..16], &p[..16]).sqrt() <= cfg.u + 1e-12);
            assert!(dot(&p, &p) <= bound + 1e-12);
        }
    }

    #[test]
    fn dominant_vector_ranks_first() {
        let mut corpus = random_corpus(5_000, 8, 3);
        corpus[1234].1 = vec![10.0; 8];
        let idx = AlshIndex::build(&corpus, &AlshConfig::default()).unwrap();
        let hits = idx.query(&vec![10.0; 8], 10);
        assert_eq!(hits[0].0, 1234);
    }

    #[test]
    fn probe_sequence_is_sorted_and_valid() {
        let raw = [0.1, 1.7, 2.45, -0.3];
        let probes: Vec<_> = ProbeSequence::new(&raw).take(40).collect();
        assert!(probes[0].is_empty());
        let score = |p: &Vec<(usize, i64)>| -> f64 {
            p.iter()
                .map(|&(j, d)| {
                    let f = raw[j] - raw[j].floor();
                    if d < 0 {
                        f * f
                    } else {
                        (1.0 - f) * (1.0 - f)
                    }
                })
                .sum()
        };
        for w in probes.windows(2) {
            assert!(score(&w[0]) <= score(&w[1]) + 1e-12);
        }
        for p in &probes {
            let mut js: Vec<_> = p.iter().map(|x| x.0).collect();
            js.sort();
            js.dedup();
            assert_eq!(js.len(), p.len());
        }
        let mut uniq = probes.clone();
        uniq.iter_mut().for_each(|p| p.sort());
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), probes.len());
    }

    #[test]
    fn rescored_hits_never_exceed_true_max() {
        let corpus = random_corpus(2_000, 16, 4);
        let idx = AlshIndex::build(&corpus, &AlshConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let q: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
            let best = corpus.iter().map(|(_, v)| dot(v, &q)).fold(f64::NEG_INFINITY, f64::max);
            let hits = idx.query(&q, 10);
            assert!(hits.iter().all(|h| h.1 <= best));
            assert!(hits.windows(2).all(|w| w[0].1 >= w[1].1));
        }
    }
}
