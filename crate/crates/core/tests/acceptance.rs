//! End-to-end acceptance checks. Runs without the libtest harness so the
//! criteria execute one after another (the latency check must not share
//! the machine with training runs) and each prints a single PASS/FAIL line.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use sim_core::datagen::{generate, GenConfig};
use sim_core::domain::{Behavior, BehaviorSequence, CandidateItem, TrainingSample};
use sim_core::esu::{esu_forward, esu_forward_with_attention};
use sim_core::eval::{auc, d_category};
use sim_core::gsu::{hard_search_seq, hard_soft_coverage, soft_search_exact, AlshConfig, AlshIndex};
use sim_core::model::{LongTermEncoder, ModelConfig, SearchMode, SimModel};
use sim_core::serving::{bench, bench_corpus, BenchConfig, Service};
use sim_core::trainer::{finite_difference_check, heldout_auc, train};

type Outcome = Result<String, String>;

const DAY: u64 = 86_400;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_history(rng: &mut ChaCha8Rng, len: usize, items: u32, cats: u32, now: u64) -> BehaviorSequence {
    let v = (0..len)
        .map(|_| {
            let c = rng.random_range(0..cats);
            let item = c + cats * rng.random_range(0..items / cats);
            Behavior::new(item, c, now - rng.random_range(1..120 * DAY))
        })
        .collect();
    BehaviorSequence::from_unsorted(v)
}

fn random_sample(rng: &mut ChaCha8Rng, max_len: usize, short_len: usize) -> TrainingSample {
    let now = 1_000 * DAY;
    let len = rng.random_range(0..=max_len);
    let hist = random_history(rng, len, 20, 4, now);
    let c = rng.random_range(0..4);
    let cand = CandidateItem::new(c + 4 * rng.random_range(0..5), c, now);
    TrainingSample::from_history(7, cand, rng.random_bool(0.5), &hist, short_len)
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut samples: Vec<TrainingSample> = (0..6).map(|_| random_sample(&mut rng, 12, 2)).collect();
    // exercise the learned placeholders for empty long and short parts
    let cand = CandidateItem::new(3, 3, 1_000 * DAY);
    samples.push(TrainingSample::from_history(1, cand, true, &BehaviorSequence::empty(), 2));
    let base = ModelConfig {
        hidden: vec![16, 8],
        sbs_len: 8,
        aux_sample_len: 8,
        short_len: 2,
        heads: 2,
        ..ModelConfig::soft(20, 4)
    };
    let configs = [
        base.clone(),
        ModelConfig {
            encoder: LongTermEncoder::AvgPool,
            use_time_embedding: false,
            ..base.clone().with_mode(SearchMode::Hard)
        },
    ];
    let mut worst = 0.0f64;
    let mut tensors = 0;
    for (i, cfg) in configs.into_iter().enumerate() {
        let model = SimModel::new(cfg, 500 + i as u64).map_err(|e| e.to_string())?;
        let report = finite_difference_check(&model, &samples, 1e-4, 1e-3).map_err(|e| e.to_string())?;
        for t in &report.tensors {
            if t.checked == 0 {
                return Err(format!("tensor {} had no checkable coordinate", t.tensor));
            }
        }
        worst = worst.max(report.max_rel_error());
        tensors += report.tensors.len();
    }
    check(worst <= 1e-4, format!("max relative error {worst:.2e} over {tensors} tensors"))
}

fn mips() -> Outcome {
    let (n, dim, k, queries) = (10_000, 16, 50, 1_000);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.sample(StandardNormal)).collect() };
    let corpus: Vec<(u64, Vec<f64>)> = (0..n as u64).map(|i| (i, gauss(&mut rng))).collect();
    let index = AlshIndex::build(&corpus, &AlshConfig::default()).map_err(|e| e.to_string())?;
    let mut recall = 0.0;
    for _ in 0..queries {
        let q = gauss(&mut rng);
        let mut scored: Vec<(f64, u64)> = corpus.iter().map(|(id, v)| (v.iter().zip(&q).map(|(a, b)| a * b).sum(), *id)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let truth: HashSet<u64> = scored[..k].iter().map(|&(_, id)| id).collect();
        recall += index.query(&q, k).iter().filter(|(id, _)| truth.contains(id)).count() as f64 / k as f64;
    }
    recall /= queries as f64;
    check(recall >= 0.9, format!("mean recall@{k} = {recall:.4}"))
}

fn ordering() -> Outcome {
    let mut sums = [0.0f64; 3];
    for seed in 1..=3u64 {
        let ds = generate(&GenConfig {
            seed,
            ..GenConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let (train_set, test_set) = ds.split_by_user(0.2, 0);
        let hard = ModelConfig::hard(ds.n_items, ds.n_categories);
        let variants = [
            ModelConfig {
                use_time_embedding: false,
                ..hard.clone()
            },
            hard.clone(),
            ModelConfig::avg_pool(ds.n_items, ds.n_categories),
        ];
        for (slot, cfg) in variants.into_iter().enumerate() {
            let mut model = SimModel::new(cfg, seed).map_err(|e| e.to_string())?;
            train(&mut model, &train_set, &[], 3, seed).map_err(|e| e.to_string())?;
            sums[slot] += heldout_auc(&model, &test_set).ok_or("undefined auc")?;
        }
    }
    let [hard, hard_time, avg] = sums.map(|s| s / 3.0);
    check(
        hard >= avg + 0.02 && hard_time >= hard - 0.005,
        format!("mean auc: hard {hard:.4}, hard+time {hard_time:.4}, avg-pool {avg:.4}"),
    )
}

fn equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let soft = SimModel::new(ModelConfig::soft(20, 4), 9).map_err(|e| e.to_string())?;
    let hard = SimModel::new(ModelConfig::hard(20, 4), 9).map_err(|e| e.to_string())?;
    let mut cases = 0;
    for _ in 0..200 {
        let s = random_sample(&mut rng, 20, 0);
        let k = rng.random_range(s.long_seq.len().max(1)..=25);
        let sbs = soft_search_exact(&s.long_seq, &s.candidate, &soft, k);
        if esu_forward(&soft, &sbs, &[], &s.candidate) != esu_forward(&soft, &s.long_seq, &[], &s.candidate) {
            return Err("soft search with K >= T changed the score".into());
        }
        // single-category history: hard search filters nothing either
        let c = s.candidate.category_id;
        let same: Vec<Behavior> = s.long_seq.iter().map(|b| Behavior::new(b.item_id - b.category_id + c, c, b.timestamp)).collect();
        let same = BehaviorSequence::from_unsorted(same);
        let sbs = hard_search_seq(&same, c, k);
        if esu_forward(&hard, &sbs, &[], &s.candidate) != esu_forward(&hard, &same, &[], &s.candidate) {
            return Err("hard search with K >= T changed the score".into());
        }
        cases += 2;
    }
    check(true, format!("{cases} instances bit-identical"))
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = rng.random_range(2..=1000);
        // coarse scores on half of the instances to force ties
        let levels = if i % 2 == 0 { 10.0 } else { 1e9 };
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * levels).floor() / levels).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for a in 0..n {
            for b in 0..n {
                if labels[a] && !labels[b] {
                    pairs += 1.0;
                    wins += if scores[a] > scores[b] {
                        1.0
                    } else if scores[a] == scores[b] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((got - wins / pairs).abs());
    }
    check(worst <= 1e-12, format!("max |rank - pairwise| = {worst:.1e} over 100 instances"))
}

fn d_category_oracle() -> Outcome {
    let ds = generate(&GenConfig {
        users: 600,
        categories: 40,
        items: 400,
        samples_per_user: 10,
        seed: 606,
        ..GenConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut clicks: Vec<TrainingSample> = ds.samples.iter().filter(|s| s.label).take(1000).cloned().collect();
    // a click one hour after a same-category behavior, to pin the 0-day case
    let h = BehaviorSequence::from_unsorted(vec![Behavior::new(1, 1, 10 * DAY - 3_600)]);
    clicks.push(TrainingSample::from_history(0, CandidateItem::new(1, 1, 10 * DAY), true, &h, 1));
    let (mut neg, mut zero) = (0, 0);
    for s in &clicks {
        let t = s.candidate.request_time;
        let latest = s
            .full_history()
            .iter()
            .filter(|b| b.category_id == s.candidate.category_id && b.timestamp < t)
            .map(|b| b.timestamp)
            .max();
        let want = latest.map_or(-1, |ts| ((t - ts) / DAY) as i64);
        let got = d_category(s);
        if got != want {
            return Err(format!("user {}: got {got}, scan says {want}", s.user_id));
        }
        neg += usize::from(want == -1);
        zero += usize::from(want == 0);
    }
    check(
        clicks.len() > 1000 && neg > 0 && zero > 0,
        format!("{} clicks agree ({neg} at -1, {zero} at 0)", clicks.len()),
    )
}

fn latency() -> Outcome {
    let cfg = BenchConfig {
        rates: vec![100.0],
        requests_per_level: 300,
        ..BenchConfig::default()
    };
    let corpus = bench_corpus(&cfg).map_err(|e| e.to_string())?;
    let model = SimModel::new(cfg.model_config(), cfg.seed).map_err(|e| e.to_string())?;
    let service = Service::new(model, corpus.tree.clone()).map_err(|e| e.to_string())?;
    let r = bench(&service, &corpus, &cfg).map_err(|e| e.to_string())?;
    let (short, long) = (&r[0], &r[1]);
    let detail = format!(
        "p99 {:.3} ms at T={} vs {:.3} ms at T={} (K=200, {:.0} rps each, saturated={})",
        long.p99_ms,
        long.seq_len,
        short.p99_ms,
        short.seq_len,
        short.throughput_rps,
        short.saturated || long.saturated
    );
    check(!short.saturated && !long.saturated && long.p99_ms <= 2.0 * short.p99_ms, detail)
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let models: Vec<SimModel> = (0..4)
        .map(|i| SimModel::new(ModelConfig::hard(20, 4), i).expect("model"))
        .collect();
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let s = random_sample(&mut rng, 40, 3);
        let model = &models[i % models.len()];
        let sbs = hard_search_seq(&s.long_seq, s.candidate.category_id, model.config.sbs_len);
        let (_, att) = esu_forward_with_attention(model, &sbs, &s.short_seq, &s.candidate);
        for head in &att.scores {
            worst = worst.max((head.iter().sum::<f64>() - 1.0).abs());
        }
    }
    check(worst <= 1e-6, format!("max |sum - 1| = {worst:.1e} over 10000 passes"))
}

fn coverage() -> Outcome {
    let mut values = Vec::new();
    for seed in 1..=3u64 {
        let ds = generate(&GenConfig {
            users: 3_000,
            items: 4,
            categories: 4,
            affinity_categories: 1,
            seed,
            ..GenConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let (train_set, test_set) = ds.split_by_user(0.2, 0);
        let cfg = ModelConfig {
            learning_rate: 0.005,
            ..ModelConfig::soft(ds.n_items, ds.n_categories)
        };
        let mut model = SimModel::new(cfg, seed).map_err(|e| e.to_string())?;
        train(&mut model, &train_set, &[], 3, seed).map_err(|e| e.to_string())?;
        values.push(hard_soft_coverage(&test_set, &model, 200).map_err(|e| e.to_string())?);
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    check(min >= 0.95, format!("coverage per seed {values:.4?}"))
}

fn sim(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("sim {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

/// Timing fields legitimately differ between runs.
fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["mean_us", "p99_us", "p50_ms", "p95_ms", "p99_ms", "throughput_rps", "saturated"] {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn run_pipeline(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let seed = ["--seed", "11"];
    let with = |rest: &[&str]| -> Vec<String> { seed.iter().chain(rest).map(|s| s.to_string()).collect() };
    let steps: Vec<Vec<String>> = vec![
        with(&["datagen", "--out", &p("data"), "--users", "300"]),
        with(&["build-index", "--logs", &p("data"), "--out", &p("ubt.bin")]),
        with(&["train", "--data", &p("data"), "--mode", "soft", "--epochs", "2", "--out", &p("soft.ckpt")]),
        with(&["train", "--data", &p("data"), "--out", &p("hard.ckpt")]),
        with(&["eval", "--data", &p("data"), "--ckpt", &p("hard.ckpt"), "--compare", &p("soft.ckpt"), "--report", &p("eval.json")]),
        with(&["gsu-bench", "--mode", "alsh", "--corpus", "random", "--n", "2000", "--queries", "50", "--report", &p("alsh.json")]),
        with(&["gsu-bench", "--mode", "soft", "--corpus", &p("data"), "--ckpt", &p("soft.ckpt"), "--queries", "50", "--report", &p("soft.json")]),
    ];
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        sim(&args)?;
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            if path.extension().is_some_and(|e| e == "json") {
                let mut v: Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
                strip_timing(&mut v);
                bytes = serde_json::to_vec(&v).expect("json");
            }
            files.push((path.strip_prefix(dir).expect("inside").to_path_buf(), bytes));
        }
    }
    files.sort();
    Ok(files)
}

fn reproducibility() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fa = run_pipeline(a.path())?;
    let fb = run_pipeline(b.path())?;
    if fa.len() != fb.len() {
        return Err(format!("{} vs {} output files", fa.len(), fb.len()));
    }
    for ((pa, ba), (_, bb)) in fa.iter().zip(&fb) {
        if ba != bb {
            return Err(format!("{} differs between runs", pa.display()));
        }
    }
    check(true, format!("{} output files byte-identical across two runs", fa.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient check", gradients),
        ("mips recall", mips),
        ("ordering", ordering),
        ("two-stage equivalence", equivalence),
        ("auc oracle", auc_oracle),
        ("d_category oracle", d_category_oracle),
        ("latency decoupling", latency),
        ("attention normalization", normalization),
        ("coverage", coverage),
        ("reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = f();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d}) [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
