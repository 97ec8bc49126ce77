//! Synthetic data with a planted long-term interest signal, the on-disk
//! dataset layout, and ingestion of external interaction logs.
//!
//! A dataset directory holds three files:
//!
//! * `behaviors.tsv`: `user_id  item_id  category_id  timestamp`
//! * `samples.tsv`: `user_id  item_id  category_id  request_time  label`
//! * `meta.json`: vocabulary sizes and the short-window length.
//!
//! A sample's history is every behavior of its user strictly before the
//! request time, split into short and long parts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{Behavior, BehaviorSequence, CandidateItem, TrainingSample};
use crate::error::{Result, SimError};
use crate::nn::sigmoid;

pub const BEHAVIORS_FILE: &str = "behaviors.tsv";
pub const SAMPLES_FILE: &str = "samples.tsv";
pub const META_FILE: &str = "meta.json";

/// Longest per-user history the generator will produce.
pub const MAX_GENERATED_SEQ_LEN: usize = 54_000;

const BASE_TIME: u64 = 1_600_000_000;

/// One parsed line of a behavior or sample log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LogRecord {
    pub user_id: u64,
    pub behavior: Behavior,
    pub label: Option<bool>,
}

pub fn parse_log_line(line: &str) -> std::result::Result<LogRecord, String> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
    if fields.len() != 4 && fields.len() != 5 {
        return Err(format!("expected 4 or 5 tab-separated fields, found {}", fields.len()));
    }
    fn num<T: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
        s.trim().parse().map_err(|_| format!("invalid {what} {s:?}"))
    }
    let label = match fields.get(4).map(|s| s.trim()) {
        None => None,
        Some("0") => Some(false),
        Some("1") => Some(true),
        Some(other) => return Err(format!("invalid label {other:?}")),
    };
    Ok(LogRecord {
        user_id: num(fields[0], "user_id")?,
        behavior: Behavior::new(num(fields[1], "item_id")?, num(fields[2], "category_id")?, num(fields[3], "timestamp")?),
        label,
    })
}

pub fn format_log_line(user_id: u64, b: &Behavior, label: Option<bool>) -> String {
    match label {
        None => format!("{user_id}\t{}\t{}\t{}", b.item_id, b.category_id, b.timestamp),
        Some(l) => format!("{user_id}\t{}\t{}\t{}\t{}", b.item_id, b.category_id, b.timestamp, u8::from(l)),
    }
}

fn read_records(path: &Path) -> Result<Vec<LogRecord>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_log_line(&line).map_err(|message| SimError::Ingest {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        })?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub behaviors: usize,
    pub samples: usize,
    pub short_len: usize,
}

/// Per-user histories plus the labelled samples drawn from them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub n_items: usize,
    pub n_categories: usize,
    pub short_len: usize,
    pub histories: BTreeMap<u64, BehaviorSequence>,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    /// Every `(user_id, behavior)` pair, users ascending, time ascending.
    pub fn behavior_log(&self) -> impl Iterator<Item = (u64, Behavior)> + '_ {
        self.histories
            .iter()
            .flat_map(|(&u, seq)| seq.iter().map(move |b| (u, *b)))
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            users: self.histories.len(),
            items: self.n_items,
            categories: self.n_categories,
            behaviors: self.histories.values().map(|s| s.len()).sum(),
            samples: self.samples.len(),
            short_len: self.short_len,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut behaviors = String::new();
        for (u, b) in self.behavior_log() {
            behaviors.push_str(&format_log_line(u, &b, None));
            behaviors.push('\n');
        }
        fs::write(dir.join(BEHAVIORS_FILE), behaviors)?;
        let mut samples = String::new();
        for s in &self.samples {
            let c = &s.candidate;
            let b = Behavior::new(c.item_id, c.category_id, c.request_time);
            samples.push_str(&format_log_line(s.user_id, &b, Some(s.label)));
            samples.push('\n');
        }
        fs::write(dir.join(SAMPLES_FILE), samples)?;
        let meta = serde_json::to_string_pretty(&self.meta()).expect("meta serializes");
        fs::write(dir.join(META_FILE), meta + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| SimError::Ingest {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut per_user: BTreeMap<u64, Vec<Behavior>> = BTreeMap::new();
        for rec in read_records(&dir.join(BEHAVIORS_FILE))? {
            per_user.entry(rec.user_id).or_default().push(rec.behavior);
        }
        let histories: BTreeMap<u64, BehaviorSequence> = per_user
            .into_iter()
            .map(|(u, v)| (u, BehaviorSequence::from_unsorted(v)))
            .collect();
        let samples_path = dir.join(SAMPLES_FILE);
        let empty = BehaviorSequence::empty();
        let samples = read_records(&samples_path)?
            .into_iter()
            .enumerate()
            .map(|(i, rec)| {
                let label = rec.label.ok_or_else(|| SimError::Ingest {
                    path: samples_path.clone(),
                    line: i + 1,
                    message: "sample line lacks a label".into(),
                })?;
                let b = rec.behavior;
                let cand = CandidateItem::new(b.item_id, b.category_id, b.timestamp);
                let history = histories.get(&rec.user_id).unwrap_or(&empty);
                Ok(TrainingSample::from_history(rec.user_id, cand, label, history, meta.short_len))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_items: meta.items,
            n_categories: meta.categories,
            short_len: meta.short_len,
            histories,
            samples,
        })
    }

    /// Deterministic split by user: roughly `test_fraction` of users go to
    /// the second set.
    pub fn split_by_user(&self, test_fraction: f64, seed: u64) -> (Vec<TrainingSample>, Vec<TrainingSample>) {
        let mut users: Vec<u64> = self.histories.keys().copied().collect();
        users.extend(self.samples.iter().map(|s| s.user_id));
        users.sort_unstable();
        users.dedup();
        users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (users.len() as f64 * test_fraction).round() as usize;
        let test: BTreeSet<u64> = users[..n_test].iter().copied().collect();
        self.samples.iter().cloned().partition(|s| !test.contains(&s.user_id))
    }

    /// Checks every sample for future leakage.
    pub fn check_no_leak(&self) -> Result<()> {
        self.samples.iter().try_for_each(TrainingSample::check_no_leak)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    /// Median of the log-normal history length.
    pub seq_len_median: f64,
    pub seq_len_sigma: f64,
    pub min_seq_len: usize,
    pub max_seq_len: usize,
    /// Hidden interest categories per user.
    pub affinity_categories: usize,
    /// Probability that a behavior falls in one of the user's affinity categories.
    pub affinity_prob: f64,
    pub samples_per_user: usize,
    /// Probability that a candidate is drawn from the user's affinity categories.
    pub candidate_affinity_prob: f64,
    /// Label logit is `weight · n_match + bias`.
    pub weight: f64,
    pub bias: f64,
    /// Probability of flipping a label.
    pub label_noise: f64,
    pub horizon_days: u64,
    pub short_len: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            users: 10_000,
            items: 50_000,
            categories: 100,
            seq_len_median: 100.0,
            seq_len_sigma: 0.8,
            min_seq_len: 20,
            max_seq_len: 2_000,
            affinity_categories: 4,
            affinity_prob: 0.7,
            samples_per_user: 5,
            candidate_affinity_prob: 0.15,
            weight: 1.5,
            bias: -2.0,
            label_noise: 0.1,
            horizon_days: 180,
            short_len: 10,
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SimError::Config(m));
        if self.users == 0 || self.items == 0 || self.categories == 0 {
            return fail("users, items and categories must be positive".into());
        }
        if self.categories > self.items {
            return fail(format!("{} categories exceed {} items", self.categories, self.items));
        }
        if self.categories > u32::MAX as usize || self.items > u32::MAX as usize {
            return fail("ids must fit in 32 bits".into());
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return fail(format!("label noise {} outside [0, 0.5)", self.label_noise));
        }
        if self.affinity_categories == 0 || self.affinity_categories > self.categories {
            return fail("affinity_categories must be in 1..=categories".into());
        }
        if !(0.0..=1.0).contains(&self.affinity_prob) || !(0.0..=1.0).contains(&self.candidate_affinity_prob) {
            return fail("probabilities must lie in [0, 1]".into());
        }
        if self.min_seq_len > self.max_seq_len || self.max_seq_len > MAX_GENERATED_SEQ_LEN {
            return fail(format!("need min_seq_len <= max_seq_len <= {MAX_GENERATED_SEQ_LEN}"));
        }
        if !(self.seq_len_median > 0.0) || !(self.seq_len_sigma >= 0.0) {
            return fail("sequence length distribution parameters are invalid".into());
        }
        if self.horizon_days == 0 {
            return fail("horizon_days must be positive".into());
        }
        Ok(())
    }

    pub fn request_time(&self, sample_index: usize) -> u64 {
        BASE_TIME + self.horizon_days * 86_400 + (sample_index as u64 + 1) * 3_600
    }
}

/// Items of category `c` are `c, c + C, c + 2C, …` below the item count.
pub fn item_category(item_id: u32, categories: usize) -> u32 {
    (item_id as usize % categories) as u32
}

fn random_item_in<R: Rng>(rng: &mut R, category: u32, cfg: &GenConfig) -> u32 {
    let c = category as usize;
    let count = (cfg.items - c).div_ceil(cfg.categories);
    (c + cfg.categories * rng.random_range(0..count)) as u32
}

fn user_rng(seed: u64, user: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user);
    rng
}

/// Number of long-term behaviors sharing the candidate's category.
pub fn category_matches(sample: &TrainingSample) -> usize {
    sample
        .long_seq
        .iter()
        .filter(|b| b.category_id == sample.candidate.category_id)
        .count()
}

/// Generates a dataset whose labels depend on how often the user
/// interacted with the candidate's category in the long-term history.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let lengths = LogNormal::new(cfg.seq_len_median.ln(), cfg.seq_len_sigma)
        .map_err(|e| SimError::Config(format!("sequence length distribution: {e}")))?;
    let horizon = cfg.horizon_days * 86_400;
    let mut histories = BTreeMap::new();
    let mut samples = Vec::with_capacity(cfg.users * cfg.samples_per_user);
    let all_categories: Vec<u32> = (0..cfg.categories as u32).collect();
    for user in 0..cfg.users as u64 {
        let mut rng = user_rng(cfg.seed, user);
        let affinity: Vec<u32> = all_categories
            .choose_multiple(&mut rng, cfg.affinity_categories)
            .copied()
            .collect();
        let len = (lengths.sample(&mut rng).round() as usize).clamp(cfg.min_seq_len, cfg.max_seq_len);
        let mut behaviors = Vec::with_capacity(len);
        for _ in 0..len {
            let cat = if rng.random_bool(cfg.affinity_prob) {
                affinity[rng.random_range(0..affinity.len())]
            } else {
                rng.random_range(0..cfg.categories as u32)
            };
            let item = random_item_in(&mut rng, cat, cfg);
            behaviors.push(Behavior::new(item, cat, BASE_TIME + rng.random_range(0..horizon)));
        }
        let history = BehaviorSequence::from_unsorted(behaviors);
        for s in 0..cfg.samples_per_user {
            let cat = if rng.random_bool(cfg.candidate_affinity_prob) {
                affinity[rng.random_range(0..affinity.len())]
            } else {
                rng.random_range(0..cfg.categories as u32)
            };
            let cand = CandidateItem::new(random_item_in(&mut rng, cat, cfg), cat, cfg.request_time(s));
            let mut sample = TrainingSample::from_history(user, cand, false, &history, cfg.short_len);
            let n_match = category_matches(&sample) as f64;
            let mut label = rng.random_bool(sigmoid(cfg.weight * n_match + cfg.bias));
            if rng.random_bool(cfg.label_noise) {
                label = !label;
            }
            sample.label = label;
            samples.push(sample);
        }
        histories.insert(user, history);
    }
    let ds = Dataset {
        n_items: cfg.items,
        n_categories: cfg.categories,
        short_len: cfg.short_len,
        histories,
        samples,
    };
    ds.check_no_leak()?;
    Ok(ds)
}

/// Layout of an external interaction log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestSchema {
    /// Every line is one behavior; each user's last behavior becomes a
    /// positive sample paired with one sampled negative.
    Reviews,
    /// Labelled lines are impressions (clicked ones are also behaviors);
    /// unlabelled lines are plain behaviors.
    Clicks,
}

impl std::str::FromStr for IngestSchema {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reviews" => Ok(Self::Reviews),
            "clicks" => Ok(Self::Clicks),
            other => Err(SimError::Config(format!("unknown ingest schema {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub behaviors: usize,
    pub samples: usize,
    /// Records dropped for a negative timestamp.
    pub rejected: usize,
}

struct RawRecord {
    user: String,
    item: String,
    category: String,
    timestamp: u64,
    label: Option<bool>,
}

/// Dense ids assigned in sorted key order, so the mapping does not depend
/// on input line order.
fn dictionary<'a>(keys: impl Iterator<Item = &'a str>) -> HashMap<&'a str, u32> {
    let sorted: BTreeSet<&str> = keys.collect();
    sorted.into_iter().enumerate().map(|(i, k)| (k, i as u32)).collect()
}

/// Reads a tab-separated log with string ids
/// (`user  item  category  timestamp  [label]`) and builds a dataset.
pub fn ingest(path: &Path, schema: IngestSchema, short_len: usize, seed: u64) -> Result<(Dataset, IngestReport)> {
    let file = fs::File::open(path)?;
    let mut raw = Vec::new();
    let mut report = IngestReport::default();
    let err = |line: usize, message: String| SimError::Ingest {
        path: PathBuf::from(path),
        line,
        message,
    };
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 4 && f.len() != 5 {
            return Err(err(idx + 1, format!("expected 4 or 5 tab-separated fields, found {}", f.len())));
        }
        let ts: i64 = f[3].parse().map_err(|_| err(idx + 1, format!("invalid timestamp {:?}", f[3])))?;
        let label = match f.get(4) {
            None => None,
            Some(&"0") => Some(false),
            Some(&"1") => Some(true),
            Some(other) => return Err(err(idx + 1, format!("invalid label {other:?}"))),
        };
        if f[..3].iter().any(|s| s.is_empty()) {
            return Err(err(idx + 1, "empty id field".into()));
        }
        if ts < 0 {
            report.rejected += 1;
            continue;
        }
        raw.push(RawRecord {
            user: f[0].to_string(),
            item: f[1].to_string(),
            category: f[2].to_string(),
            timestamp: ts as u64,
            label,
        });
    }

    let users = dictionary(raw.iter().map(|r| r.user.as_str()));
    let items = dictionary(raw.iter().map(|r| r.item.as_str()));
    let cats = dictionary(raw.iter().map(|r| r.category.as_str()));

    let mut per_user: BTreeMap<u64, Vec<Behavior>> = BTreeMap::new();
    let mut impressions: Vec<(u64, Behavior, bool)> = Vec::new();
    for r in &raw {
        let u = u64::from(users[r.user.as_str()]);
        let b = Behavior::new(items[r.item.as_str()], cats[r.category.as_str()], r.timestamp);
        match (schema, r.label) {
            (IngestSchema::Clicks, Some(label)) => {
                impressions.push((u, b, label));
                if label {
                    per_user.entry(u).or_default().push(b);
                }
            }
            _ => per_user.entry(u).or_default().push(b),
        }
    }
    let histories: BTreeMap<u64, BehaviorSequence> = per_user
        .into_iter()
        .map(|(u, mut v)| {
            v.sort_by_key(|b| (b.timestamp, b.item_id, b.category_id));
            v.dedup();
            (u, BehaviorSequence::from_sorted_unchecked(v))
        })
        .collect();

    let empty = BehaviorSequence::empty();
    let mut samples = Vec::new();
    match schema {
        IngestSchema::Clicks => {
            impressions.sort_by_key(|&(u, b, l)| (u, b.timestamp, b.item_id, b.category_id, l));
            impressions.dedup();
            for (u, b, label) in impressions {
                let cand = CandidateItem::new(b.item_id, b.category_id, b.timestamp);
                let history = histories.get(&u).unwrap_or(&empty);
                samples.push(TrainingSample::from_history(u, cand, label, history, short_len));
            }
        }
        IngestSchema::Reviews => {
            // category of each item: the one on its earliest record
            let mut item_cat: BTreeMap<u32, (u64, u32)> = BTreeMap::new();
            for b in histories.values().flat_map(|s| s.iter()) {
                let e = item_cat.entry(b.item_id).or_insert((b.timestamp, b.category_id));
                if (b.timestamp, b.category_id) < *e {
                    *e = (b.timestamp, b.category_id);
                }
            }
            let n_items = items.len() as u32;
            for (&u, history) in &histories {
                let Some(last) = history.last() else { continue };
                if history.before(last.timestamp).is_empty() || n_items < 2 {
                    continue;
                }
                let pos = CandidateItem::new(last.item_id, last.category_id, last.timestamp);
                samples.push(TrainingSample::from_history(u, pos, true, history, short_len));
                let mut rng = user_rng(seed, u);
                let neg_item = loop {
                    let i = rng.random_range(0..n_items);
                    if i != last.item_id {
                        break i;
                    }
                };
                let neg = CandidateItem::new(neg_item, item_cat[&neg_item].1, last.timestamp);
                samples.push(TrainingSample::from_history(u, neg, false, history, short_len));
            }
        }
    }

    report.users = users.len();
    report.items = items.len();
    report.categories = cats.len();
    report.behaviors = histories.values().map(|s| s.len()).sum();
    report.samples = samples.len();
    let ds = Dataset {
        n_items: items.len(),
        n_categories: cats.len(),
        short_len,
        histories,
        samples,
    };
    ds.check_no_leak()?;
    Ok((ds, report))
}

/// Formats a report as `key=value` lines.
pub fn key_values<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_value(value).expect("report serializes");
    let mut out = String::new();
    if let serde_json::Value::Object(map) = json {
        for (k, v) in map {
            let _ = writeln!(out, "{k}={v}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GenConfig {
        GenConfig {
            users: 50,
            items: 500,
            categories: 20,
            seq_len_median: 60.0,
            max_seq_len: 300,
            samples_per_user: 3,
            ..GenConfig::default()
        }
    }

    #[test]
    fn parse_and_format_lines() {
        let rec = parse_log_line("3\t4\t5\t6\t1").unwrap();
        assert_eq!(rec.user_id, 3);
        assert_eq!(rec.behavior, Behavior::new(4, 5, 6));
        assert_eq!(rec.label, Some(true));
        assert_eq!(format_log_line(3, &rec.behavior, rec.label), "3\t4\t5\t6\t1");
        assert!(parse_log_line("1\t2\t3").is_err());
        assert!(parse_log_line("1\tx\t3\t4").is_err());
        assert!(parse_log_line("1\t2\t3\t4\t7").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(small_cfg().validate().is_ok());
        assert!(GenConfig { categories: 600, ..small_cfg() }.validate().is_err());
        assert!(GenConfig { label_noise: 0.5, ..small_cfg() }.validate().is_err());
        assert!(GenConfig { max_seq_len: 60_000, ..small_cfg() }.validate().is_err());
    }

    #[test]
    fn generation_respects_bounds_and_is_deterministic() {
        let cfg = small_cfg();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.histories, b.histories);
        assert_eq!(a.samples.len(), 150);
        for h in a.histories.values() {
            assert!(h.len() >= cfg.min_seq_len && h.len() <= cfg.max_seq_len);
            assert!(h.iter().all(|b| (b.item_id as usize) < cfg.items && item_category(b.item_id, cfg.categories) == b.category_id));
        }
        for s in &a.samples {
            s.check_no_leak().unwrap();
            assert!(s.short_seq.len() <= cfg.short_len);
        }
    }

    #[test]
    fn deterministic_limit_labels() {
        let cfg = GenConfig {
            weight: 1e6,
            bias: -0.5e6,
            label_noise: 0.0,
            ..small_cfg()
        };
        let ds = generate(&cfg).unwrap();
        for s in &ds.samples {
            assert_eq!(s.label, category_matches(s) > 0);
        }
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let ds = generate(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.samples, ds.samples);
        assert_eq!(back.meta(), ds.meta());
    }

    #[test]
    fn ingest_sorts_and_remaps() {
        let dir = tempfile::tempdir().unwrap();
        let ordered = "alice\tbook\tstationery\t100\nalice\tpen\tink\t200\n";
        let shuffled = "alice\tpen\tink\t200\nalice\tbook\tstationery\t100\n";
        let p1 = dir.path().join("a.tsv");
        let p2 = dir.path().join("b.tsv");
        fs::write(&p1, ordered).unwrap();
        fs::write(&p2, shuffled).unwrap();
        let (a, ra) = ingest(&p1, IngestSchema::Reviews, 10, 1).unwrap();
        let (b, _) = ingest(&p2, IngestSchema::Reviews, 10, 1).unwrap();
        assert_eq!(a.histories, b.histories);
        assert_eq!(a.samples, b.samples);
        let h = &a.histories[&0];
        assert_eq!(h.len(), 2);
        assert!(h[0].timestamp < h[1].timestamp);
        assert_eq!((ra.users, ra.items, ra.categories), (1, 2, 2));
        // last review is the positive target, plus one negative
        assert_eq!(a.samples.len(), 2);
        assert!(a.samples[0].label && !a.samples[1].label);
        assert_eq!(a.samples[0].long_seq.len() + a.samples[0].short_seq.len(), 1);
    }

    #[test]
    fn ingest_reports_bad_lines_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tsv");
        fs::write(&p, "u\ti\tc\t10\t1\nu\ti\tc\tnot-a-time\n").unwrap();
        match ingest(&p, IngestSchema::Clicks, 10, 0) {
            Err(SimError::Ingest { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected ingest error, got {other:?}"),
        }
        fs::write(&p, "u\ti\tc\t10\t1\nu\tj\tc\t-5\t0\nu\tj\tc\t20\t0\n").unwrap();
        let (ds, report) = ingest(&p, IngestSchema::Clicks, 10, 0).unwrap();
        assert_eq!(report.rejected, 1);
        assert_eq!(ds.samples.len(), 2);
        assert_eq!(report.behaviors, 1);
        // the click at t=10 is history for the impression at t=20
        assert_eq!(ds.samples[1].short_seq.len(), 1);
    }
}
