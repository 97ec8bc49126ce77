//! Exact search unit: time-aware behavior encoding, multi-head target
//! attention over the searched sub-sequence, and the CTR head.
//!
//! Head `i` scores behavior `j` with `(W_bi z_j) · (W_ai e_a) / sqrt(d_z)`,
//! normalises the scores with a softmax across behaviors and pools the raw
//! `z_j` with those weights. The pooled heads are concatenated into the
//! long-term interest vector.

use serde::Serialize;

use crate::domain::{time_delta_days, Behavior, CandidateItem};
use crate::error::{Result, SimError};
use crate::model::{Gradients, LongTermEncoder, ModelConfig, Params, SimModel};
use crate::nn::{axpy, dot, softmax_in_place, MlpTrace};

pub const PROB_CLAMP: f64 = 1e-7;

/// Per-head attention weights and pooled outputs for one candidate.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AttentionTrace {
    pub scores: Vec<Vec<f64>>,
    pub heads: Vec<Vec<f64>>,
}

/// Embedding rows that make up one behavior's `z` vector.
#[derive(Clone, Copy, Debug)]
struct BehaviorRows {
    item: usize,
    category: usize,
    time: usize,
}

fn behavior_rows(params: &Params, cfg: &ModelConfig, b: &Behavior, request_time: u64) -> BehaviorRows {
    let days = request_time.saturating_sub(b.timestamp) as f64 / crate::domain::SECONDS_PER_DAY;
    BehaviorRows {
        item: params.items.row_index(b.item_id),
        category: params.categories.row_index(b.category_id),
        time: params.time.row_index(cfg.time_buckets.bucketize(days) as u32),
    }
}

/// Behavior embedding `e* = item + category` written into `out`.
#[inline]
pub(crate) fn behavior_embedding_into(params: &Params, item_row: usize, cat_row: usize, out: &mut [f64]) {
    let it = params.items.row(item_row);
    let ct = params.categories.row(cat_row);
    for ((o, a), b) in out.iter_mut().zip(it).zip(ct) {
        *o = a + b;
    }
}

/// Candidate representation `concat(item, category)`.
pub fn candidate_embedding(params: &Params, cand: &CandidateItem) -> Vec<f64> {
    let mut v = params.items.lookup(cand.item_id).to_vec();
    v.extend_from_slice(params.categories.lookup(cand.category_id));
    v
}

fn write_z(params: &Params, cfg: &ModelConfig, rows: &BehaviorRows, out: &mut [f64]) {
    let d = cfg.d();
    behavior_embedding_into(params, rows.item, rows.category, &mut out[..d]);
    if cfg.use_time_embedding {
        out[d..].copy_from_slice(params.time.row(rows.time));
    } else {
        out[d..].fill(0.0);
    }
}

/// `z_j = concat(e*_j, e^t_j)` for every behavior of the sub-sequence.
pub fn encode_sbs(sbs: &[Behavior], cand: &CandidateItem, model: &SimModel) -> Result<Vec<Vec<f64>>> {
    let cfg = &model.config;
    sbs.iter()
        .map(|b| {
            time_delta_days(b, cand)?;
            let rows = behavior_rows(&model.params, cfg, b, cand.request_time);
            let mut z = vec![0.0; cfg.d_z()];
            write_z(&model.params, cfg, &rows, &mut z);
            Ok(z)
        })
        .collect()
}

/// Intermediate values of one attention pass.
#[derive(Clone, Debug, Default)]
struct AttentionCache {
    /// `W_ai e_a` per head.
    query: Vec<Vec<f64>>,
    /// `W_biᵀ W_ai e_a` per head; logits are `scale · z_j · key`.
    key: Vec<Vec<f64>>,
    scores: Vec<Vec<f64>>,
}

fn attention_forward(params: &Params, d_z: usize, z: &[f64], ea: &[f64], out: &mut [f64]) -> AttentionCache {
    let k = z.len() / d_z;
    let scale = 1.0 / (d_z as f64).sqrt();
    let heads = params.esu.w_b.len();
    let mut cache = AttentionCache {
        query: Vec::with_capacity(heads),
        key: Vec::with_capacity(heads),
        scores: Vec::with_capacity(heads),
    };
    for h in 0..heads {
        let query = params.esu.w_a[h].matvec(ea);
        let key = params.esu.w_b[h].matvec_t(&query);
        let mut scores: Vec<f64> = z.chunks_exact(d_z).map(|zj| scale * dot(zj, &key)).collect();
        softmax_in_place(&mut scores);
        let head = &mut out[h * d_z..(h + 1) * d_z];
        head.fill(0.0);
        for (zj, &s) in z.chunks_exact(d_z).zip(&scores) {
            axpy(s, zj, head);
        }
        debug_assert_eq!(scores.len(), k);
        cache.query.push(query);
        cache.key.push(key);
        cache.scores.push(scores);
    }
    cache
}

/// Multi-head attention of the encoded sub-sequence `z` against the
/// candidate representation `ea`. Returns `U_lt` (length `heads · d_z`).
pub fn multi_head_attention(z: &[Vec<f64>], ea: &[f64], model: &SimModel) -> Result<(Vec<f64>, AttentionTrace)> {
    let cfg = &model.config;
    let d_z = cfg.d_z();
    if z.is_empty() {
        return Err(SimError::Config("attention needs at least one behavior".into()));
    }
    if ea.len() != cfg.candidate_dim() {
        return Err(SimError::Dimension {
            expected: cfg.candidate_dim(),
            actual: ea.len(),
        });
    }
    if let Some(bad) = z.iter().find(|v| v.len() != d_z) {
        return Err(SimError::Dimension {
            expected: d_z,
            actual: bad.len(),
        });
    }
    let flat: Vec<f64> = z.iter().flatten().copied().collect();
    let mut u_lt = vec![0.0; cfg.heads * d_z];
    let cache = attention_forward(&model.params, d_z, &flat, ea, &mut u_lt);
    let heads = u_lt.chunks_exact(d_z).map(<[f64]>::to_vec).collect();
    Ok((
        u_lt,
        AttentionTrace {
            scores: cache.scores,
            heads,
        },
    ))
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub(crate) struct EsuTrace {
    long_rows: Vec<BehaviorRows>,
    z: Vec<f64>,
    attention: AttentionCache,
    short_rows: Vec<(usize, usize)>,
    cand_rows: (usize, usize),
    ea: Vec<f64>,
    mlp: MlpTrace,
    pub(crate) p: f64,
}

impl EsuTrace {
    pub(crate) fn attention_trace(&self, d_z: usize, heads: usize) -> AttentionTrace {
        let mut out = AttentionTrace {
            scores: self.attention.scores.clone(),
            heads: Vec::with_capacity(heads),
        };
        let u_lt = &self.mlp_input()[..heads * d_z];
        out.heads = u_lt.chunks_exact(d_z).map(<[f64]>::to_vec).collect();
        out
    }

    fn mlp_input(&self) -> &[f64] {
        self.mlp.input()
    }

    pub(crate) fn mlp(&self) -> &MlpTrace {
        &self.mlp
    }
}

/// Probability of the positive class from the two-way output.
#[inline]
pub(crate) fn two_way_probability(out: &[f64]) -> f64 {
    crate::nn::sigmoid(out[1] - out[0])
}

/// Forward pass of the exact search unit.
///
/// `long_term` is the searched sub-sequence for the attention encoder, or
/// the whole long-term sequence for the mean-pooling baseline.
pub(crate) fn esu_forward_traced(
    model: &SimModel,
    long_term: &[Behavior],
    short: &[Behavior],
    cand: &CandidateItem,
) -> EsuTrace {
    let cfg = &model.config;
    let params = &model.params;
    let d = cfg.d();
    let d_z = cfg.d_z();
    let ea = candidate_embedding(params, cand);
    let cand_rows = (
        params.items.row_index(cand.item_id),
        params.categories.row_index(cand.category_id),
    );

    let mut input = vec![0.0; cfg.esu_input_dim()];
    let long_dim = cfg.long_term_dim();
    let long_rows: Vec<BehaviorRows> = long_term
        .iter()
        .map(|b| behavior_rows(params, cfg, b, cand.request_time))
        .collect();
    let mut z = Vec::new();
    let mut attention = AttentionCache::default();
    match cfg.encoder {
        LongTermEncoder::Attention => {
            if long_rows.is_empty() {
                z = params.esu.no_history.clone();
            } else {
                z = vec![0.0; long_rows.len() * d_z];
                for (rows, out) in long_rows.iter().zip(z.chunks_exact_mut(d_z)) {
                    write_z(params, cfg, rows, out);
                }
            }
            attention = attention_forward(params, d_z, &z, &ea, &mut input[..long_dim]);
        }
        LongTermEncoder::AvgPool => {
            let pooled = &mut input[..long_dim];
            if long_rows.is_empty() {
                pooled.copy_from_slice(&params.esu.no_history);
            } else {
                let mut e = vec![0.0; d];
                let w = 1.0 / long_rows.len() as f64;
                for rows in &long_rows {
                    behavior_embedding_into(params, rows.item, rows.category, &mut e);
                    axpy(w, &e, pooled);
                }
            }
        }
    }

    let short_rows: Vec<(usize, usize)> = short
        .iter()
        .map(|b| (params.items.row_index(b.item_id), params.categories.row_index(b.category_id)))
        .collect();
    {
        let s = &mut input[long_dim..long_dim + d];
        if short_rows.is_empty() {
            s.copy_from_slice(&params.esu.no_short);
        } else {
            let mut e = vec![0.0; d];
            for &(i, c) in &short_rows {
                behavior_embedding_into(params, i, c, &mut e);
                axpy(1.0, &e, s);
            }
        }
    }
    input[long_dim + d..].copy_from_slice(&ea);

    let mlp = params.esu.mlp.forward(input);
    let p = two_way_probability(mlp.output());
    EsuTrace {
        long_rows,
        z,
        attention,
        short_rows,
        cand_rows,
        ea,
        mlp,
        p,
    }
}

/// Backpropagates `d_out` (gradient w.r.t. the two-way output) through the
/// exact search unit, accumulating into `grads`.
pub(crate) fn esu_backward(model: &SimModel, trace: &EsuTrace, d_out: &[f64], grads: &mut Gradients) {
    let cfg = &model.config;
    let params = &model.params;
    let d = cfg.d();
    let d_z = cfg.d_z();
    let long_dim = cfg.long_term_dim();
    let d_input = params.esu.mlp.backward(&trace.mlp, d_out, &mut grads.params.esu.mlp);

    let mut d_ea = d_input[long_dim + d..].to_vec();

    let d_short = &d_input[long_dim..long_dim + d];
    if trace.short_rows.is_empty() {
        axpy(1.0, d_short, &mut grads.params.esu.no_short);
    } else {
        for &(i, c) in &trace.short_rows {
            grads.add_item_row(i, d_short, 1.0);
            grads.add_category_row(c, d_short, 1.0);
        }
    }

    let d_long = &d_input[..long_dim];
    match cfg.encoder {
        LongTermEncoder::Attention => {
            let k = trace.z.len() / d_z;
            let scale = 1.0 / (d_z as f64).sqrt();
            let mut dz = vec![0.0; trace.z.len()];
            let mut ds = vec![0.0; k];
            for h in 0..cfg.heads {
                let d_head = &d_long[h * d_z..(h + 1) * d_z];
                let scores = &trace.attention.scores[h];
                for (j, zj) in trace.z.chunks_exact(d_z).enumerate() {
                    ds[j] = dot(zj, d_head);
                }
                let mean: f64 = scores.iter().zip(&ds).map(|(s, g)| s * g).sum();
                let key = &trace.attention.key[h];
                let mut d_key = vec![0.0; d_z];
                for (j, (zj, dzj)) in trace.z.chunks_exact(d_z).zip(dz.chunks_exact_mut(d_z)).enumerate() {
                    let s = scores[j];
                    let d_logit = s * (ds[j] - mean) * scale;
                    axpy(s, d_head, dzj);
                    axpy(d_logit, key, dzj);
                    axpy(d_logit, zj, &mut d_key);
                }
                // key = W_bᵀ query
                let query = &trace.attention.query[h];
                grads.params.esu.w_b[h].add_outer(1.0, query, &d_key);
                let d_query = params.esu.w_b[h].matvec(&d_key);
                // query = W_a ea
                grads.params.esu.w_a[h].add_outer(1.0, &d_query, &trace.ea);
                params.esu.w_a[h].matvec_t_acc(&d_query, &mut d_ea);
            }
            if trace.long_rows.is_empty() {
                axpy(1.0, &dz, &mut grads.params.esu.no_history);
            } else {
                for (rows, g) in trace.long_rows.iter().zip(dz.chunks_exact(d_z)) {
                    grads.add_item_row(rows.item, &g[..d], 1.0);
                    grads.add_category_row(rows.category, &g[..d], 1.0);
                    if cfg.use_time_embedding {
                        grads.add_time_row(rows.time, &g[d..], 1.0);
                    }
                }
            }
        }
        LongTermEncoder::AvgPool => {
            if trace.long_rows.is_empty() {
                axpy(1.0, d_long, &mut grads.params.esu.no_history);
            } else {
                let w = 1.0 / trace.long_rows.len() as f64;
                for rows in &trace.long_rows {
                    grads.add_item_row(rows.item, d_long, w);
                    grads.add_category_row(rows.category, d_long, w);
                }
            }
        }
    }

    grads.add_item_row(trace.cand_rows.0, &d_ea[..d], 1.0);
    grads.add_category_row(trace.cand_rows.1, &d_ea[d..], 1.0);
}

/// Click probability from the exact search unit.
pub fn esu_forward(model: &SimModel, long_term: &[Behavior], short: &[Behavior], cand: &CandidateItem) -> f64 {
    esu_forward_traced(model, long_term, short, cand).p
}

/// Like [`esu_forward`] but also returns the attention weights.
pub fn esu_forward_with_attention(
    model: &SimModel,
    long_term: &[Behavior],
    short: &[Behavior],
    cand: &CandidateItem,
) -> (f64, AttentionTrace) {
    let t = esu_forward_traced(model, long_term, short, cand);
    let att = t.attention_trace(model.config.d_z(), model.config.heads);
    (t.p, att)
}

/// Binary cross-entropy; `p` is clamped to `[1e-7, 1 - 1e-7]`.
pub fn cross_entropy(p: f64, label: bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SimError::NumericDomain(p));
    }
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(if label { -p.ln() } else { -(1.0 - p).ln() })
}

/// Gradient of the cross-entropy with respect to a two-way softmax output.
#[inline]
pub(crate) fn cross_entropy_grad(p: f64, label: bool, weight: f64) -> [f64; 2] {
    let g = p - f64::from(u8::from(label));
    [-g * weight, g * weight]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SimModel {
        SimModel::new(ModelConfig::hard(50, 10), 11).unwrap()
    }

    fn rand_z(k: usize, d_z: usize, salt: u64) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(salt);
        (0..k).map(|_| (0..d_z).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    /// Straightforward per-head loop written without the key trick.
    fn oracle(z: &[Vec<f64>], ea: &[f64], m: &SimModel) -> Vec<f64> {
        let d_z = m.config.d_z();
        let mut out = Vec::new();
        for h in 0..m.config.heads {
            let wa = &m.params.esu.w_a[h];
            let wb = &m.params.esu.w_b[h];
            let q: Vec<f64> = (0..wa.rows()).map(|r| (0..wa.cols()).map(|c| wa.get(r, c) * ea[c]).sum()).collect();
            let logits: Vec<f64> = z
                .iter()
                .map(|zj| {
                    let kj: Vec<f64> = (0..wb.rows()).map(|r| (0..wb.cols()).map(|c| wb.get(r, c) * zj[c]).sum()).collect();
                    kj.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (d_z as f64).sqrt()
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..d_z {
                out.push(z.iter().zip(&e).map(|(zj, w)| zj[c] * w / s).sum());
            }
        }
        out
    }

    #[test]
    fn matches_oracle() {
        let m = model();
        let z = rand_z(8, m.config.d_z(), 1);
        let ea = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.0, 0.7];
        let (u, trace) = multi_head_attention(&z, &ea, &m).unwrap();
        for (a, b) in u.iter().zip(oracle(&z, &ea, &m)) {
            assert!((a - b).abs() < 1e-12);
        }
        for s in &trace.scores {
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_behavior_passes_through() {
        let m = model();
        let z = rand_z(1, m.config.d_z(), 2);
        let (u, trace) = multi_head_attention(&z, &[0.1; 8], &m).unwrap();
        for h in 0..m.config.heads {
            assert_eq!(trace.scores[h], vec![1.0]);
            assert_eq!(&u[h * 8..(h + 1) * 8], &z[0][..]);
        }
    }

    #[test]
    fn identical_behaviors_get_uniform_weights() {
        let m = model();
        let z = vec![rand_z(1, 8, 3)[0].clone(); 5];
        let (_, trace) = multi_head_attention(&z, &[0.2; 8], &m).unwrap();
        for s in trace.scores.iter().flatten() {
            assert!((s - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_invariant_and_scale_sensitive() {
        let m = model();
        let ea = [0.5, 0.1, -0.3, 0.2, 0.9, -0.1, 0.4, 0.0];
        let z = rand_z(6, 8, 4);
        let (u, _) = multi_head_attention(&z, &ea, &m).unwrap();
        let mut rev = z.clone();
        rev.reverse();
        let (u2, _) = multi_head_attention(&rev, &ea, &m).unwrap();
        for (a, b) in u.iter().zip(&u2) {
            assert!((a - b).abs() < 1e-12);
        }
        let doubled: Vec<Vec<f64>> = z.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect();
        let (u3, _) = multi_head_attention(&doubled, &ea, &m).unwrap();
        assert!(u.iter().zip(&u3).any(|(a, b)| (2.0 * a - b).abs() > 1e-9));
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = model();
        assert!(multi_head_attention(&[], &[0.0; 8], &m).is_err());
        assert!(multi_head_attention(&rand_z(2, 8, 5), &[0.0; 7], &m).is_err());
        assert!(multi_head_attention(&rand_z(2, 7, 5), &[0.0; 8], &m).is_err());
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let m = model();
        let day = 86_400;
        let long: Vec<Behavior> = (0..30).map(|i| Behavior::new(i % 50, i % 10, 1_000 * day + i as u64 * day)).collect();
        let short = [Behavior::new(3, 3, 1_040 * day)];
        let cand = CandidateItem::new(7, 7, 1_050 * day);
        let p = esu_forward(&m, &long, &short, &cand);
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(p, esu_forward(&m, &long, &short, &cand));
        let (p2, att) = esu_forward_with_attention(&m, &long, &short, &cand);
        assert_eq!(p, p2);
        assert_eq!(att.scores.len(), m.config.heads);
        let empty = esu_forward(&m, &[], &[], &cand);
        assert!(empty > 0.0 && empty < 1.0);
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(0.5, true).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((cross_entropy(0.9, false).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(0.0, true).unwrap() - 1e-7f64.ln().abs()).abs() < 1e-9);
        assert!(cross_entropy(1.5, true).is_err());
        assert!(cross_entropy(f64::NAN, true).is_err());
    }
}
