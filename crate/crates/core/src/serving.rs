//! Online scoring: hard search against a behavior-tree snapshot followed
//! by the exact search unit, plus a closed-loop latency benchmark.
//!
//! Wire format is one JSON object per line:
//!
//! ```text
//! {"user_id": 7, "request_time": 1700000000, "candidates": [{"item_id": 3, "category_id": 1}]}
//! {"scores": [0.42], "sbs_lengths": [17], "latency_us": 950}
//! ```
//!
//! The short-term window is the user's most recent behaviors across all
//! categories. The searched sub-sequence for a category skips the entries
//! already in that window, so serving sees the same split as training.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior_store::UserBehaviorTree;
use crate::domain::{Behavior, BehaviorSequence, CandidateItem};
use crate::error::{Result, SimError};
use crate::esu::esu_forward;
use crate::model::{LongTermEncoder, ModelConfig, SearchMode, SimModel};

pub const MAX_CANDIDATES: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub item_id: u32,
    pub category_id: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub user_id: u64,
    pub request_time: u64,
    pub candidates: Vec<CandidateSpec>,
}

impl ScoreRequest {
    pub fn parse(line: &str) -> Result<Self> {
        let req: Self = serde_json::from_str(line).map_err(|e| SimError::Protocol(e.to_string()))?;
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() || self.candidates.len() > MAX_CANDIDATES {
            return Err(SimError::Protocol(format!(
                "candidate count {} outside 1..={MAX_CANDIDATES}",
                self.candidates.len()
            )));
        }
        Ok(())
    }

    fn candidate(&self, c: &CandidateSpec) -> CandidateItem {
        CandidateItem::new(c.item_id, c.category_id, self.request_time)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
    pub sbs_lengths: Vec<usize>,
    pub latency_us: u64,
}

/// A response together with the number of behavior-tree lookups it cost.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOutcome {
    pub response: ScoreResponse,
    pub lookups: usize,
}

/// Scores every candidate of `req` against one tree snapshot.
pub fn score(req: &ScoreRequest, tree: &UserBehaviorTree, model: &SimModel) -> Result<ScoreOutcome> {
    let start = Instant::now();
    req.validate()?;
    let cfg = &model.config;
    let (short, taken) = tree.recent(req.user_id, cfg.short_len);
    let mut sbs_by_category: HashMap<u32, BehaviorSequence> = HashMap::new();
    let mut scores = Vec::with_capacity(req.candidates.len());
    let mut lengths = Vec::with_capacity(req.candidates.len());
    for c in &req.candidates {
        let sbs = sbs_by_category.entry(c.category_id).or_insert_with(|| {
            let skip = taken.get(&c.category_id).copied().unwrap_or(0);
            tree.query_skip(req.user_id, c.category_id, skip, cfg.sbs_len)
        });
        scores.push(esu_forward(model, sbs, &short, &req.candidate(c)));
        lengths.push(sbs.len());
    }
    Ok(ScoreOutcome {
        lookups: sbs_by_category.len(),
        response: ScoreResponse {
            scores,
            sbs_lengths: lengths,
            latency_us: start.elapsed().as_micros() as u64,
        },
    })
}

/// A scoring service over a swappable tree snapshot and a fixed model.
pub struct Service {
    model: Arc<SimModel>,
    tree: ArcSwap<UserBehaviorTree>,
}

impl Service {
    pub fn new(model: SimModel, tree: UserBehaviorTree) -> Result<Self> {
        let cfg = &model.config;
        if cfg.mode != SearchMode::Hard || cfg.encoder != LongTermEncoder::Attention {
            return Err(SimError::Config("serving needs a hard-search attention model".into()));
        }
        tree.validate()?;
        Ok(Self {
            model: Arc::new(model),
            tree: ArcSwap::from_pointee(tree),
        })
    }

    pub fn model(&self) -> &SimModel {
        &self.model
    }

    /// The snapshot current at the time of the call.
    pub fn snapshot(&self) -> Arc<UserBehaviorTree> {
        self.tree.load_full()
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<ScoreOutcome> {
        let tree = self.tree.load();
        score(req, &tree, &self.model)
    }

    /// Installs `next` as the current snapshot. Trees that fail validation
    /// or are older than the current one are rejected and the current
    /// snapshot stays in place. Requests already running keep the snapshot
    /// they started with.
    pub fn snapshot_swap(&self, next: UserBehaviorTree) -> Result<()> {
        next.validate().map_err(|e| SimError::SnapshotRejected(e.to_string()))?;
        let current = self.tree.load();
        if next.build_timestamp() < current.build_timestamp() {
            return Err(SimError::SnapshotRejected(format!(
                "build timestamp {} is older than the current {}",
                next.build_timestamp(),
                current.build_timestamp()
            )));
        }
        self.tree.store(Arc::new(next));
        log::info!("event=snapshot_swap users={} build_timestamp={}", self.tree.load().num_users(), self.tree.load().build_timestamp());
        Ok(())
    }

    /// Handles one protocol line, returning the response line.
    pub fn handle_line(&self, line: &str) -> String {
        let result = ScoreRequest::parse(line).and_then(|req| self.score(&req));
        match result {
            Ok(out) => serde_json::to_string(&out.response).expect("response serializes"),
            Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
        }
    }
}

fn handle_connection(service: &Service, stream: TcpStream) -> std::io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writer.write_all(service.handle_line(&line).as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// A bound TCP listener speaking the line protocol.
pub struct Server {
    listener: TcpListener,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> Result<std::net::SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections forever, one thread each.
    pub fn run(self, service: Arc<Service>) -> Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let service = Arc::clone(&service);
            thread::spawn(move || {
                if let Err(e) = handle_connection(&service, stream) {
                    log::warn!("event=connection_error error={e}");
                }
            });
        }
        Ok(())
    }
}

/// Answers every request line of `input`, writing response lines to `output`.
pub fn score_batch_file(service: &Service, input: &Path, output: &Path) -> Result<usize> {
    let reader = BufReader::new(fs::File::open(input)?);
    let mut writer = BufWriter::new(fs::File::create(output)?);
    let mut n = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(writer, "{}", service.handle_line(&line))?;
        n += 1;
    }
    writer.flush()?;
    Ok(n)
}

/// Workload for [`bench`]: one user group per history length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seq_lens: Vec<usize>,
    pub users_per_profile: usize,
    /// Categories each user's history is spread over.
    pub categories_per_user: usize,
    pub n_categories: usize,
    pub n_items: usize,
    pub candidates_per_request: usize,
    /// Request rates to drive, in requests per second; 0 sends a single request.
    pub rates: Vec<f64>,
    pub requests_per_level: usize,
    pub warmup_requests: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seq_lens: vec![1_000, 50_000],
            users_per_profile: 8,
            categories_per_user: 4,
            n_categories: 100,
            n_items: 50_000,
            candidates_per_request: 100,
            rates: vec![50.0, 200.0],
            requests_per_level: 200,
            warmup_requests: 20,
            seed: 7,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if self.seq_lens.is_empty() || self.seq_lens.contains(&0) {
            return bad("seq_lens must be nonempty and positive");
        }
        if self.users_per_profile == 0 || self.requests_per_level == 0 {
            return bad("users_per_profile and requests_per_level must be positive");
        }
        if self.categories_per_user == 0 || self.categories_per_user > self.n_categories || self.n_categories > self.n_items {
            return bad("need 0 < categories_per_user <= n_categories <= n_items");
        }
        if self.candidates_per_request == 0 || self.candidates_per_request > MAX_CANDIDATES {
            return bad("candidates_per_request outside 1..=500");
        }
        if self.rates.iter().any(|r| !(*r >= 0.0)) {
            return bad("rates must be non-negative");
        }
        Ok(())
    }

    /// A hard-search model sized for this workload.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::hard(self.n_items, self.n_categories)
    }
}

/// Behavior tree, per-profile users and the request time for a workload.
#[derive(Clone, Debug)]
pub struct BenchCorpus {
    pub tree: UserBehaviorTree,
    /// `(seq_len, users)` per profile.
    pub profiles: Vec<(usize, Vec<u64>)>,
    /// Categories each user's history lives in.
    pub user_categories: BTreeMap<u64, Vec<u32>>,
    pub request_time: u64,
}

const BENCH_BASE_TIME: u64 = 1_600_000_000;

pub fn bench_corpus(cfg: &BenchConfig) -> Result<BenchCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let mut profiles = Vec::new();
    let mut user_categories = BTreeMap::new();
    let span = 180 * 86_400;
    let mut next_user = 0u64;
    for &t in &cfg.seq_lens {
        let mut users = Vec::new();
        for _ in 0..cfg.users_per_profile {
            let user = next_user;
            next_user += 1;
            let cats: Vec<u32> = rand::seq::index::sample(&mut rng, cfg.n_categories, cfg.categories_per_user)
                .into_iter()
                .map(|c| c as u32)
                .collect();
            for j in 0..t {
                let c = cats[j % cats.len()];
                let per_cat = (cfg.n_items - c as usize).div_ceil(cfg.n_categories);
                let item = c as usize + cfg.n_categories * rng.random_range(0..per_cat);
                log.push((user, Behavior::new(item as u32, c, BENCH_BASE_TIME + rng.random_range(0..span))));
            }
            user_categories.insert(user, cats);
            users.push(user);
        }
        profiles.push((t, users));
    }
    Ok(BenchCorpus {
        tree: UserBehaviorTree::build(log),
        profiles,
        user_categories,
        request_time: BENCH_BASE_TIME + span + 3_600,
    })
}

/// Workload over an existing tree: for each history length, the users whose
/// totals are closest to it, querying their largest categories.
pub fn bench_corpus_from_tree(tree: UserBehaviorTree, cfg: &BenchConfig) -> Result<BenchCorpus> {
    cfg.validate()?;
    let mut used = std::collections::BTreeSet::new();
    let mut profiles = Vec::new();
    let mut user_categories = BTreeMap::new();
    for &t in &cfg.seq_lens {
        let mut ranked: Vec<(usize, u64)> = tree
            .user_ids()
            .into_iter()
            .filter(|u| !used.contains(u))
            .map(|u| (tree.user(u).map_or(0, |n| n.total()).abs_diff(t), u))
            .collect();
        ranked.sort_unstable();
        let users: Vec<u64> = ranked.iter().take(cfg.users_per_profile).map(|&(_, u)| u).collect();
        if users.is_empty() {
            return Err(SimError::Config(format!("no users left for history length {t}")));
        }
        for &u in &users {
            let node = tree.user(u).expect("listed user exists");
            let mut cats: Vec<(usize, u32)> = node.categories().map(|(c, l)| (l.len(), c)).collect();
            cats.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let top: Vec<u32> = cats.iter().take(cfg.categories_per_user).map(|&(_, c)| c).collect();
            user_categories.insert(u, top);
            used.insert(u);
        }
        profiles.push((t, users));
    }
    let request_time = tree.build_timestamp() + 3_600;
    Ok(BenchCorpus {
        tree,
        profiles,
        user_categories,
        request_time,
    })
}

/// Deterministic request stream over a profile's users.
pub fn bench_request(corpus: &BenchCorpus, cfg: &BenchConfig, users: &[u64], index: usize) -> ScoreRequest {
    let user = users[index % users.len()];
    let cats = &corpus.user_categories[&user];
    let candidates = (0..cfg.candidates_per_request)
        .map(|j| {
            let c = cats[j % cats.len()];
            let per_cat = cfg.n_items.saturating_sub(c as usize).div_ceil(cfg.n_categories).max(1);
            CandidateSpec {
                item_id: (c as usize + cfg.n_categories * ((j / cats.len()) % per_cat)) as u32,
                category_id: c,
            }
        })
        .collect();
    ScoreRequest {
        user_id: user,
        request_time: corpus.request_time,
        candidates,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchResult {
    /// History length of the users in this workload.
    pub seq_len: usize,
    pub target_rps: f64,
    pub throughput_rps: f64,
    pub requests: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub mean_sbs_len: f64,
    /// The requested rate could not be sustained.
    pub saturated: bool,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Drives each rate level with a paced closed loop that alternates between
/// the profiles, so every profile sees the same machine conditions.
pub fn bench(service: &Service, corpus: &BenchCorpus, cfg: &BenchConfig) -> Result<Vec<BenchResult>> {
    for i in 0..cfg.warmup_requests {
        for (_, users) in &corpus.profiles {
            service.score(&bench_request(corpus, cfg, users, i))?;
        }
    }
    let mut results = Vec::new();
    for &rate in &cfg.rates {
        let n = if rate == 0.0 { 1 } else { cfg.requests_per_level };
        let n_profiles = corpus.profiles.len();
        let interval = (rate > 0.0).then(|| Duration::from_secs_f64(1.0 / rate));
        let mut latencies: Vec<Vec<f64>> = vec![Vec::with_capacity(n); n_profiles];
        let mut sbs_total = vec![0usize; n_profiles];
        let start = Instant::now();
        let mut next_send = start;
        for i in 0..n {
            for (p, (_, users)) in corpus.profiles.iter().enumerate() {
                if let Some(iv) = interval {
                    let now = Instant::now();
                    if next_send > now {
                        thread::sleep(next_send - now);
                    }
                    next_send += iv;
                }
                let req = bench_request(corpus, cfg, users, i);
                let t0 = Instant::now();
                let out = service.score(&req)?;
                latencies[p].push(t0.elapsed().as_secs_f64() * 1e3);
                sbs_total[p] += out.response.sbs_lengths.iter().sum::<usize>();
            }
        }
        let wall = start.elapsed().as_secs_f64();
        let achieved = (n * n_profiles) as f64 / wall.max(1e-9);
        for (p, (seq_len, _)) in corpus.profiles.iter().enumerate() {
            let mut l = std::mem::take(&mut latencies[p]);
            l.sort_by(f64::total_cmp);
            let r = BenchResult {
                seq_len: *seq_len,
                target_rps: rate,
                throughput_rps: achieved / n_profiles as f64,
                requests: n,
                p50_ms: percentile(&l, 50.0),
                p95_ms: percentile(&l, 95.0),
                p99_ms: percentile(&l, 99.0),
                mean_sbs_len: sbs_total[p] as f64 / (n * cfg.candidates_per_request) as f64,
                saturated: rate > 0.0 && achieved < 0.9 * rate,
            };
            log::info!(
                "event=bench seq_len={} target_rps={} throughput_rps={:.1} p50_ms={:.3} p95_ms={:.3} p99_ms={:.3} saturated={}",
                r.seq_len,
                r.target_rps,
                r.throughput_rps,
                r.p50_ms,
                r.p95_ms,
                r.p99_ms,
                r.saturated
            );
            results.push(r);
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn service() -> Service {
        let log = vec![
            (1, Behavior::new(0, 0, 100)),
            (1, Behavior::new(3, 1, 200)),
            (1, Behavior::new(6, 0, 300)),
            (2, Behavior::new(4, 2, 50)),
        ];
        let model = SimModel::new(ModelConfig::hard(10, 3), 3).unwrap();
        Service::new(model, UserBehaviorTree::build(log)).unwrap()
    }

    fn request(user: u64, cats: &[u32]) -> ScoreRequest {
        ScoreRequest {
            user_id: user,
            request_time: 1_000,
            candidates: cats.iter().map(|&c| CandidateSpec { item_id: c, category_id: c }).collect(),
        }
    }

    #[test]
    fn lookups_are_deduplicated_by_category() {
        let s = service();
        let cats: Vec<u32> = (0..100).map(|i| i % 5).collect();
        let out = s.score(&request(1, &cats)).unwrap();
        assert_eq!(out.lookups, 5);
        assert_eq!(out.response.scores.len(), 100);
    }

    #[test]
    fn cold_user_gets_valid_scores() {
        let out = service().score(&request(99, &[0, 1])).unwrap();
        assert!(out.response.scores.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(out.response.sbs_lengths, vec![0, 0]);
    }

    #[test]
    fn protocol_errors() {
        assert!(matches!(ScoreRequest::parse("{"), Err(SimError::Protocol(_))));
        assert!(matches!(
            ScoreRequest::parse(r#"{"user_id":1,"request_time":2,"candidates":[]}"#),
            Err(SimError::Protocol(_))
        ));
        let line = service().handle_line("not json");
        assert!(line.contains("error"));
    }

    #[test]
    fn swap_rejects_stale_snapshot() {
        let s = service();
        let old = UserBehaviorTree::build(vec![(1, Behavior::new(0, 0, 10))]);
        assert!(matches!(s.snapshot_swap(old), Err(SimError::SnapshotRejected(_))));
        assert_eq!(s.snapshot().build_timestamp(), 300);
        let newer = s.snapshot().insert(1, Behavior::new(9, 0, 400));
        s.snapshot_swap(newer).unwrap();
        assert_eq!(s.snapshot().query(1, 0, 1)[0].item_id, 9);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[4.0], 99.0), 4.0);
    }
}
