//! Command-line front end shared by the `sim` binary and the tests.
//!
//! Every subcommand resolves an [`AppConfig`] (flag, then config file, then
//! default), validates it before doing any work and writes the resolved
//! copy next to its outputs. Logs go to standard error as `key=value` lines.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::behavior_store::UserBehaviorTree;
use crate::datagen::{generate, ingest, key_values, Dataset, GenConfig, IngestSchema, BEHAVIORS_FILE};
use crate::domain::TrainingSample;
use crate::error::{Result, SimError};
use crate::esu::esu_forward_with_attention;
use crate::eval::{compare_reports, evaluate};
use crate::gsu::{hard_search, hard_soft_coverage, hard_search_seq, soft_search_exact, AlshConfig, AlshIndex, SoftSearchIndex};
use crate::model::{LongTermEncoder, ModelConfig, SearchMode, SimModel};
use crate::serving::{bench, bench_corpus, bench_corpus_from_tree, percentile, score_batch_file, BenchConfig, Server, Service};
use crate::trainer::{select_sbs, train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    /// Fraction of users held out for evaluation.
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 3,
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub short_len: usize,
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self { short_len: 10 }
    }
}

/// Everything a run can be configured with. Sections a subcommand does not
/// use are still validated and echoed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub datagen: GenConfig,
    pub ingest: IngestSettings,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub alsh: AlshConfig,
    pub bench: BenchConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            datagen: GenConfig::default(),
            ingest: IngestSettings::default(),
            model: ModelConfig::default(),
            train: TrainSettings::default(),
            alsh: AlshConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| SimError::Config(format!("{}: {}", path.display(), e.message())))
    }

    /// Propagates the run seed into every section.
    fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.datagen.seed = seed;
        self.alsh.seed = seed;
        self.bench.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.datagen.validate()?;
        self.model.validate()?;
        self.alsh.validate()?;
        self.bench.validate()?;
        let t = &self.train;
        if !(0.0..1.0).contains(&t.test_fraction) {
            return Err(SimError::Config(format!("test_fraction {} outside [0, 1)", t.test_fraction)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Parser, Debug)]
#[command(name = "sim", version, about = "Two-stage search CTR model over lifelong behavior sequences")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Attention,
    Avgpool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GsuModeArg {
    Hard,
    Soft,
    Alsh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemaArg {
    Reviews,
    Clicks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Tsv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Test,
    Train,
    All,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with a planted long-term signal.
    Datagen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        users: Option<usize>,
    },
    /// Convert an external tab-separated interaction log into a dataset.
    Ingest {
        #[arg(long, value_enum, default_value = "tsv")]
        format: FormatArg,
        #[arg(long, value_enum, default_value = "reviews")]
        schema: SchemaArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        short_len: Option<usize>,
    },
    /// Build the persistent user behavior tree from a behavior log.
    BuildIndex {
        /// A behavior log file or a dataset directory.
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        encoder: Option<EncoderArg>,
        #[arg(long)]
        time_embedding: Option<bool>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Second checkpoint to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Write per-head attention weights of the first samples as JSON lines.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Serve scores over TCP, or answer a file of requests.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, requires = "batch_out")]
        batch_in: Option<PathBuf>,
        #[arg(long, requires = "batch_in")]
        batch_out: Option<PathBuf>,
    },
    /// Closed-loop latency benchmark across history lengths.
    Bench {
        /// Existing behavior tree; a synthetic workload is built when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Hard-search checkpoint; a freshly initialised model when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// TOML file with the workload (same keys as the `bench` section).
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Recall and latency of the search stage.
    GsuBench {
        #[arg(long, value_enum)]
        mode: GsuModeArg,
        /// Dataset directory, or `random` for a Gaussian vector corpus.
        #[arg(long)]
        corpus: String,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        /// Size and width of the `random` corpus.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} target={} {}",
                record.level().as_str().to_ascii_lowercase(),
                record.target(),
                record.args()
            )
        })
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("event=failed error={:?}", e.to_string());
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn resolve(cli: &Cli) -> Result<AppConfig> {
    let base = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    let seed = cli.seed.unwrap_or(base.seed);
    Ok(base.with_seed(seed))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_config(path: &Path, cfg: &AppConfig) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, cfg.to_toml())?;
    Ok(())
}

fn split_samples(ds: &Dataset, cfg: &AppConfig, which: SplitArg) -> Vec<TrainingSample> {
    let (train, test) = ds.split_by_user(cfg.train.test_fraction, cfg.train.split_seed);
    match which {
        SplitArg::Train => train,
        SplitArg::Test => test,
        SplitArg::All => ds.samples.clone(),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli)?;
    match cli.command {
        Command::Datagen { out, users } => {
            if let Some(u) = users {
                cfg.datagen.users = u;
            }
            cfg.validate()?;
            let ds = generate(&cfg.datagen)?;
            ds.write(&out)?;
            write_config(&out.join("config.toml"), &cfg)?;
            print!("{}", key_values(&ds.meta()));
        }
        Command::Ingest {
            format: FormatArg::Tsv,
            schema,
            input,
            out,
            short_len,
        } => {
            if let Some(s) = short_len {
                cfg.ingest.short_len = s;
            }
            cfg.validate()?;
            let schema = match schema {
                SchemaArg::Reviews => IngestSchema::Reviews,
                SchemaArg::Clicks => IngestSchema::Clicks,
            };
            let (ds, report) = ingest(&input, schema, cfg.ingest.short_len, cfg.seed)?;
            ds.write(&out)?;
            write_json(&out.join("ingest_report.json"), &report)?;
            write_config(&out.join("config.toml"), &cfg)?;
            print!("{}", key_values(&report));
        }
        Command::BuildIndex { logs, out } => {
            cfg.validate()?;
            let file = if logs.is_dir() { logs.join(BEHAVIORS_FILE) } else { logs };
            let tree = UserBehaviorTree::build_from_file(&file)?;
            tree.save(&out)?;
            write_config(&sibling(&out, ".config.toml"), &cfg)?;
            print!("{}", key_values(&tree.stats()));
        }
        Command::Train {
            data,
            mode,
            encoder,
            time_embedding,
            epochs,
            learning_rate,
            out,
        } => {
            let ds = Dataset::load(&data)?;
            if let Some(m) = mode {
                cfg.model = cfg.model.with_mode(match m {
                    ModeArg::Hard => SearchMode::Hard,
                    ModeArg::Soft => SearchMode::Soft,
                });
            }
            if let Some(e) = encoder {
                cfg.model.encoder = match e {
                    EncoderArg::Attention => LongTermEncoder::Attention,
                    EncoderArg::Avgpool => LongTermEncoder::AvgPool,
                };
            }
            if let Some(t) = time_embedding {
                cfg.model.use_time_embedding = t;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.model.learning_rate = lr;
            }
            cfg.model.n_items = ds.n_items;
            cfg.model.n_categories = ds.n_categories;
            cfg.model.short_len = ds.short_len;
            cfg.validate()?;
            let (train_set, test_set) = ds.split_by_user(cfg.train.test_fraction, cfg.train.split_seed);
            let mut model = SimModel::new(cfg.model.clone(), cfg.seed)?;
            let report = train(&mut model, &train_set, &test_set, cfg.train.epochs, cfg.seed)?;
            model.save(&out)?;
            write_json(&sibling(&out, ".report.json"), &report)?;
            write_config(&sibling(&out, ".config.toml"), &cfg)?;
            if let Some(last) = report.epochs.last() {
                print!("{}", key_values(last));
            }
        }
        Command::Eval {
            data,
            ckpt,
            report,
            compare,
            split,
            dump_attention,
        } => {
            cfg.validate()?;
            let ds = Dataset::load(&data)?;
            let samples = split_samples(&ds, &cfg, split);
            let model = SimModel::load(&ckpt)?;
            cfg.model = model.config.clone();
            let rep = evaluate(&model, &samples)?;
            let body = match compare {
                Some(other) => {
                    let other = SimModel::load(&other)?;
                    serde_json::to_value(compare_reports(rep.clone(), evaluate(&other, &samples)?))
                }
                None => serde_json::to_value(&rep),
            }
            .expect("report serializes");
            let mut obj = body.as_object().cloned().unwrap_or_default();
            obj.insert("config".into(), serde_json::to_value(&cfg).expect("config serializes"));
            write_json(&report, &obj)?;
            write_config(&sibling(&report, ".config.toml"), &cfg)?;
            if let Some(path) = dump_attention {
                let mut text = String::new();
                for s in samples.iter().take(10) {
                    let (p, trace) = esu_forward_with_attention(&model, &select_sbs(&model, s), &s.short_seq, &s.candidate);
                    let line = serde_json::json!({ "user_id": s.user_id, "p": p, "attention": trace });
                    text.push_str(&line.to_string());
                    text.push('\n');
                }
                fs::write(path, text)?;
            }
            let summary = serde_json::json!({
                "auc": rep.auc,
                "mean_d_category": rep.mean_d_category,
                "p_d_gt_neg1": rep.p_d_gt_neg1,
                "samples": rep.samples,
            });
            print!("{}", key_values(&summary));
        }
        Command::Serve {
            ckpt,
            index,
            port,
            batch_in,
            batch_out,
        } => {
            let model = SimModel::load(&ckpt)?;
            cfg.model = model.config.clone();
            cfg.validate()?;
            let service = Service::new(model, UserBehaviorTree::load(&index)?)?;
            match (batch_in, batch_out) {
                (Some(input), Some(output)) => {
                    let n = score_batch_file(&service, &input, &output)?;
                    log::info!("event=batch_done requests={n}");
                }
                _ => {
                    let server = Server::bind(("127.0.0.1", port))?;
                    log::info!("event=listening addr={}", server.local_addr()?);
                    server.run(Arc::new(service))?;
                }
            }
        }
        Command::Bench {
            index,
            ckpt,
            profile,
            report,
        } => {
            if let Some(p) = profile {
                let text = fs::read_to_string(&p)?;
                cfg.bench = toml::from_str(&text).map_err(|e| SimError::Config(format!("{}: {}", p.display(), e.message())))?;
                cfg.bench.seed = cfg.seed;
            }
            let model = match ckpt {
                Some(p) => SimModel::load(&p)?,
                None => SimModel::new(cfg.bench.model_config(), cfg.seed)?,
            };
            cfg.model = model.config.clone();
            cfg.validate()?;
            let corpus = match index {
                Some(p) => bench_corpus_from_tree(UserBehaviorTree::load(&p)?, &cfg.bench)?,
                None => bench_corpus(&cfg.bench)?,
            };
            let service = Service::new(model, corpus.tree.clone())?;
            let results = bench(&service, &corpus, &cfg.bench)?;
            for r in &results {
                println!(
                    "seq_len={} target_rps={} throughput_rps={:.2} p50_ms={:.4} p95_ms={:.4} p99_ms={:.4} saturated={}",
                    r.seq_len, r.target_rps, r.throughput_rps, r.p50_ms, r.p95_ms, r.p99_ms, r.saturated
                );
            }
            if let Some(path) = report {
                write_json(&path, &serde_json::json!({ "results": results, "config": cfg }))?;
                write_config(&sibling(&path, ".config.toml"), &cfg)?;
            }
        }
        Command::GsuBench {
            mode,
            corpus,
            k,
            queries,
            n,
            dim,
            ckpt,
            report,
        } => {
            cfg.validate()?;
            if k == 0 || queries == 0 {
                return Err(SimError::Config("k and queries must be positive".into()));
            }
            let result = gsu_bench(&cfg, mode, &corpus, k, queries, n, dim, ckpt.as_deref())?;
            print!("{}", key_values(&result));
            if let Some(path) = report {
                write_json(&path, &serde_json::json!({ "result": result, "config": cfg }))?;
                write_config(&sibling(&path, ".config.toml"), &cfg)?;
            }
        }
    }
    Ok(())
}

/// Outcome of a search-stage benchmark.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GsuBenchResult {
    pub mode: String,
    pub k: usize,
    pub queries: usize,
    /// Mean recall@k against the exact answer.
    pub recall: f64,
    pub mean_result_len: f64,
    /// Fraction of the corpus rescored per query (approximate search only).
    pub scanned_fraction: Option<f64>,
    /// Hard-search coverage of the exact soft result (soft mode only).
    pub coverage_vs_hard: Option<f64>,
    pub mean_us: f64,
    pub p99_us: f64,
}

fn timing(mut us: Vec<f64>) -> (f64, f64) {
    us.sort_by(f64::total_cmp);
    (us.iter().sum::<f64>() / us.len().max(1) as f64, percentile(&us, 99.0))
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Mean recall@k of an approximate MIPS index against exact search on a
/// Gaussian corpus.
pub fn alsh_random_recall(cfg: &AlshConfig, n: usize, dim: usize, queries: usize, k: usize, seed: u64) -> Result<GsuBenchResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus: Vec<(u64, Vec<f64>)> = (0..n as u64).map(|i| (i, gaussian(&mut rng, dim))).collect();
    let index = AlshIndex::build(&corpus, cfg)?;
    let mut recall = 0.0;
    let mut scanned = 0.0;
    let mut times = Vec::with_capacity(queries);
    let mut returned = 0usize;
    for _ in 0..queries {
        let q = gaussian(&mut rng, dim);
        let t0 = Instant::now();
        let hits = index.query_with_stats(&q, k);
        times.push(t0.elapsed().as_secs_f64() * 1e6);
        let truth: std::collections::HashSet<u64> = index.exact(&q, k).into_iter().map(|(id, _)| id).collect();
        recall += hits.hits.iter().filter(|(id, _)| truth.contains(id)).count() as f64 / truth.len() as f64;
        scanned += hits.candidates as f64 / n as f64;
        returned += hits.hits.len();
    }
    let (mean_us, p99_us) = timing(times);
    Ok(GsuBenchResult {
        mode: "alsh".into(),
        k,
        queries,
        recall: recall / queries as f64,
        mean_result_len: returned as f64 / queries as f64,
        scanned_fraction: Some(scanned / queries as f64),
        coverage_vs_hard: None,
        mean_us,
        p99_us,
    })
}

#[allow(clippy::too_many_arguments)]
fn gsu_bench(
    cfg: &AppConfig,
    mode: GsuModeArg,
    corpus: &str,
    k: usize,
    queries: usize,
    n: usize,
    dim: usize,
    ckpt: Option<&Path>,
) -> Result<GsuBenchResult> {
    if corpus == "random" {
        if mode != GsuModeArg::Alsh {
            return Err(SimError::Config("the random corpus is only meaningful for --mode alsh".into()));
        }
        return alsh_random_recall(&cfg.alsh, n, dim, queries, k, cfg.seed);
    }
    let ds = Dataset::load(Path::new(corpus))?;
    let model = match ckpt {
        Some(p) => SimModel::load(p)?,
        None => SimModel::new(
            ModelConfig::soft(ds.n_items, ds.n_categories),
            cfg.seed,
        )?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks: Vec<&TrainingSample> = (0..queries).map(|_| &ds.samples[rng.random_range(0..ds.samples.len())]).collect();
    if picks.is_empty() {
        return Err(SimError::Config("dataset has no samples".into()));
    }
    let mut times = Vec::with_capacity(picks.len());
    let mut recall = 0.0;
    let mut total_len = 0usize;
    let mut coverage = None;
    match mode {
        GsuModeArg::Hard => {
            let tree = UserBehaviorTree::build(ds.behavior_log());
            for s in &picks {
                let t0 = Instant::now();
                let got = hard_search(&tree, s.user_id, &s.candidate, k);
                times.push(t0.elapsed().as_secs_f64() * 1e6);
                // the tree holds the full history, so compare against it
                let full = &ds.histories[&s.user_id];
                let want = hard_search_seq(full, s.candidate.category_id, k);
                recall += if want.is_empty() { 1.0 } else { overlap(&got, &want) };
                total_len += got.len();
            }
        }
        GsuModeArg::Soft => {
            for s in &picks {
                let t0 = Instant::now();
                let got = soft_search_exact(&s.long_seq, &s.candidate, &model, k);
                times.push(t0.elapsed().as_secs_f64() * 1e6);
                recall += 1.0;
                total_len += got.len();
            }
            let owned: Vec<TrainingSample> = picks.iter().map(|s| (*s).clone()).collect();
            coverage = hard_soft_coverage(&owned, &model, k).ok();
        }
        GsuModeArg::Alsh => {
            for s in &picks {
                let want = soft_search_exact(&s.long_seq, &s.candidate, &model, k);
                let index = SoftSearchIndex::build(&s.long_seq, &model, &cfg.alsh)?;
                let t0 = Instant::now();
                let got = index.search(&s.candidate, &model, k);
                times.push(t0.elapsed().as_secs_f64() * 1e6);
                recall += if want.is_empty() { 1.0 } else { overlap(&got, &want) };
                total_len += got.len();
            }
        }
    }
    let (mean_us, p99_us) = timing(times);
    Ok(GsuBenchResult {
        mode: format!("{mode:?}").to_lowercase(),
        k,
        queries: picks.len(),
        recall: recall / picks.len() as f64,
        mean_result_len: total_len as f64 / picks.len() as f64,
        scanned_fraction: None,
        coverage_vs_hard: coverage,
        mean_us,
        p99_us,
    })
}

fn overlap(got: &[crate::domain::Behavior], want: &[crate::domain::Behavior]) -> f64 {
    let want: std::collections::HashSet<_> = want.iter().collect();
    got.iter().filter(|b| want.contains(b)).count() as f64 / want.len() as f64
}
