//! General search unit: cuts a lifelong behavior sequence down to the
//! sub-sequence relevant to one candidate.
//!
//! * hard search keeps behaviors of the candidate's category;
//! * soft search ranks behaviors by `r_i = (W_b e_i) · (W_a e_a)` and keeps
//!   the top K, exactly or through an [`AlshIndex`].
//!
//! Soft-search parameters are trained through an auxiliary CTR head fed
//! with `U_r = Σ r_i e_i`.

pub mod alsh;

use std::collections::HashSet;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use alsh::{AlshConfig, AlshIndex};

use crate::behavior_store::UserBehaviorTree;
use crate::domain::{Behavior, BehaviorSequence, CandidateItem, TrainingSample};
use crate::error::{Result, SimError};
use crate::esu::{behavior_embedding_into, two_way_probability};
use crate::model::{Gradients, GsuParams, Params, SimModel};
use crate::nn::{axpy, dot, Matrix, MlpTrace};

/// Hard search against the behavior index: the `k` most recent behaviors
/// of the user in the candidate's category.
pub fn hard_search(tree: &UserBehaviorTree, user_id: u64, cand: &CandidateItem, k: usize) -> BehaviorSequence {
    tree.query(user_id, cand.category_id, k)
}

/// Hard search over an in-memory sequence; same result as querying a tree
/// built from `seq`.
pub fn hard_search_seq(seq: &BehaviorSequence, category_id: u32, k: usize) -> BehaviorSequence {
    let mut picked: Vec<Behavior> = seq
        .iter()
        .rev()
        .filter(|b| b.category_id == category_id)
        .take(k)
        .copied()
        .collect();
    picked.reverse();
    BehaviorSequence::from_sorted_unchecked(picked)
}

/// Soft-search relevance `(W_b e_i) · (W_a e_a)`.
pub fn soft_relevance(e_i: &[f64], e_a: &[f64], p: &GsuParams) -> Result<f64> {
    let d = p.w_b.cols();
    for v in [e_i, e_a] {
        if v.len() != d {
            return Err(SimError::Dimension {
                expected: d,
                actual: v.len(),
            });
        }
    }
    Ok(dot(&p.w_b.matvec(e_i), &p.w_a.matvec(e_a)))
}

/// Soft-search candidate representation `item + category` (width d).
pub fn gsu_candidate_embedding(params: &Params, cand: &CandidateItem) -> Vec<f64> {
    let mut v = vec![0.0; params.items.dim()];
    behavior_embedding_into(
        params,
        params.items.row_index(cand.item_id),
        params.categories.row_index(cand.category_id),
        &mut v,
    );
    v
}

/// Behavior representation `item + category` (width d).
pub fn gsu_behavior_embedding(params: &Params, b: &Behavior) -> Vec<f64> {
    let mut v = vec![0.0; params.items.dim()];
    behavior_embedding_into(
        params,
        params.items.row_index(b.item_id),
        params.categories.row_index(b.category_id),
        &mut v,
    );
    v
}

/// `W_bᵀ W_a e_a`: relevance of behavior `i` is then `e_i · key`.
fn relevance_key(params: &Params, ea: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let query = params.gsu.w_a.matvec(ea);
    let key = params.gsu.w_b.matvec_t(&query);
    (query, key)
}

/// Relevance score of every behavior of `seq` for `cand`.
pub fn soft_scores(seq: &[Behavior], cand: &CandidateItem, model: &SimModel) -> Vec<f64> {
    let params = &model.params;
    let ea = gsu_candidate_embedding(params, cand);
    let (_, key) = relevance_key(params, &ea);
    let mut e = vec![0.0; params.items.dim()];
    seq.iter()
        .map(|b| {
            behavior_embedding_into(
                params,
                params.items.row_index(b.item_id),
                params.categories.row_index(b.category_id),
                &mut e,
            );
            dot(&e, &key)
        })
        .collect()
}

/// Indices of the `k` largest scores, ties going to the later position,
/// returned in ascending position order.
pub(crate) fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        let better = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(b.cmp(a));
        idx.select_nth_unstable_by(k, better);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Exact soft search: the `k` most relevant behaviors in chronological order.
pub fn soft_search_exact(long_seq: &BehaviorSequence, cand: &CandidateItem, model: &SimModel, k: usize) -> BehaviorSequence {
    if k >= long_seq.len() {
        return long_seq.clone();
    }
    let scores = soft_scores(long_seq, cand, model);
    let picked = top_k_indices(&scores, k).into_iter().map(|i| long_seq[i]).collect();
    BehaviorSequence::from_sorted_unchecked(picked)
}

/// Per-user soft-search index over precomputed projections `W_b e_i`.
pub struct SoftSearchIndex {
    seq: BehaviorSequence,
    index: AlshIndex,
}

impl SoftSearchIndex {
    pub fn build(seq: &BehaviorSequence, model: &SimModel, cfg: &AlshConfig) -> Result<Self> {
        let params = &model.params;
        let vectors: Vec<(u64, Vec<f64>)> = seq
            .iter()
            .enumerate()
            .map(|(i, b)| (i as u64, params.gsu.w_b.matvec(&gsu_behavior_embedding(params, b))))
            .collect();
        Ok(Self {
            seq: seq.clone(),
            index: AlshIndex::build(&vectors, cfg)?,
        })
    }

    /// Approximate top-`k` behaviors in chronological order.
    pub fn search(&self, cand: &CandidateItem, model: &SimModel, k: usize) -> BehaviorSequence {
        let ea = gsu_candidate_embedding(&model.params, cand);
        let query = model.params.gsu.w_a.matvec(&ea);
        let mut positions: Vec<usize> = self.index.query(&query, k).into_iter().map(|(id, _)| id as usize).collect();
        positions.sort_unstable();
        BehaviorSequence::from_sorted_unchecked(positions.into_iter().map(|i| self.seq[i]).collect())
    }

    pub fn index(&self) -> &AlshIndex {
        &self.index
    }
}

/// Uniformly chosen contiguous window of at most `max_len` behaviors.
pub fn sample_subsequence(long_seq: &BehaviorSequence, max_len: usize, seed: u64) -> BehaviorSequence {
    assert!(max_len > 0, "max_len must be positive");
    let t = long_seq.len();
    if t <= max_len {
        return long_seq.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=t - max_len);
    long_seq.slice(start..start + max_len)
}

/// Mean over samples of `|hard ∩ soft| / |soft|`, skipping samples whose
/// soft set is empty.
pub fn coverage_stat<T: Eq + Hash>(hard_sets: &[HashSet<T>], soft_sets: &[HashSet<T>]) -> Result<f64> {
    if hard_sets.len() != soft_sets.len() {
        return Err(SimError::Dimension {
            expected: hard_sets.len(),
            actual: soft_sets.len(),
        });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for (h, s) in hard_sets.iter().zip(soft_sets) {
        if s.is_empty() {
            continue;
        }
        total += s.iter().filter(|x| h.contains(*x)).count() as f64 / s.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(SimError::UndefinedMetric("coverage needs at least one nonempty soft set"));
    }
    Ok(total / counted as f64)
}

/// Coverage of hard search by soft search over a sample set.
///
/// For each sample with a nonempty hard result, soft search keeps as many
/// behaviors as hard search returned; the statistic is then
/// [`coverage_stat`] over those pairs.
pub fn hard_soft_coverage(samples: &[TrainingSample], model: &SimModel, k: usize) -> Result<f64> {
    let mut hard_sets = Vec::new();
    let mut soft_sets = Vec::new();
    for s in samples {
        let hard = hard_search_seq(&s.long_seq, s.candidate.category_id, k);
        if hard.is_empty() {
            continue;
        }
        let soft = soft_search_exact(&s.long_seq, &s.candidate, model, hard.len());
        hard_sets.push(hard.iter().copied().collect::<HashSet<Behavior>>());
        soft_sets.push(soft.iter().copied().collect::<HashSet<Behavior>>());
    }
    coverage_stat(&hard_sets, &soft_sets)
}

/// Forward state of the auxiliary soft-search head.
#[derive(Clone, Debug)]
pub(crate) struct GsuAuxTrace {
    rows: Vec<(usize, usize)>,
    /// `e_i` per behavior, flattened.
    e: Vec<f64>,
    r: Vec<f64>,
    query: Vec<f64>,
    key: Vec<f64>,
    cand_rows: (usize, usize),
    ea: Vec<f64>,
    mlp: MlpTrace,
    pub(crate) u_r: Vec<f64>,
    pub(crate) p: f64,
}

impl GsuAuxTrace {
    pub(crate) fn mlp(&self) -> &MlpTrace {
        &self.mlp
    }
}

pub(crate) fn gsu_aux_forward_traced(model: &SimModel, seq: &[Behavior], cand: &CandidateItem) -> GsuAuxTrace {
    let params = &model.params;
    let d = params.items.dim();
    let cand_rows = (
        params.items.row_index(cand.item_id),
        params.categories.row_index(cand.category_id),
    );
    let ea = gsu_candidate_embedding(params, cand);
    let (query, key) = relevance_key(params, &ea);
    let rows: Vec<(usize, usize)> = seq
        .iter()
        .map(|b| (params.items.row_index(b.item_id), params.categories.row_index(b.category_id)))
        .collect();
    let mut e = vec![0.0; rows.len() * d];
    let mut r = Vec::with_capacity(rows.len());
    let mut u_r = vec![0.0; d];
    for (&(i, c), ei) in rows.iter().zip(e.chunks_exact_mut(d)) {
        behavior_embedding_into(params, i, c, ei);
        let ri = dot(ei, &key);
        axpy(ri, ei, &mut u_r);
        r.push(ri);
    }
    let mut input = u_r.clone();
    input.extend_from_slice(&ea);
    let mlp = params.gsu.aux_mlp.forward(input);
    let p = two_way_probability(mlp.output());
    GsuAuxTrace {
        rows,
        e,
        r,
        query,
        key,
        cand_rows,
        ea,
        mlp,
        u_r,
        p,
    }
}

pub(crate) fn gsu_aux_backward(model: &SimModel, trace: &GsuAuxTrace, d_out: &[f64], grads: &mut Gradients) {
    let params = &model.params;
    let d = params.items.dim();
    let d_input = params.gsu.aux_mlp.backward(&trace.mlp, d_out, &mut grads.params.gsu.aux_mlp);
    let d_ur = &d_input[..d];
    let mut d_ea = d_input[d..].to_vec();
    let mut d_key = vec![0.0; d];
    let mut d_e = vec![0.0; d];
    for ((&(i, c), ei), &ri) in trace.rows.iter().zip(trace.e.chunks_exact(d)).zip(&trace.r) {
        let d_r = dot(ei, d_ur);
        d_e.iter_mut().zip(d_ur).zip(&trace.key).for_each(|((o, g), k)| *o = ri * g + d_r * k);
        axpy(d_r, ei, &mut d_key);
        grads.add_item_row(i, &d_e, 1.0);
        grads.add_category_row(c, &d_e, 1.0);
    }
    grads.params.gsu.w_b.add_outer(1.0, &trace.query, &d_key);
    let d_query = params.gsu.w_b.matvec(&d_key);
    grads.params.gsu.w_a.add_outer(1.0, &d_query, &trace.ea);
    params.gsu.w_a.matvec_t_acc(&d_query, &mut d_ea);
    grads.add_item_row(trace.cand_rows.0, &d_ea, 1.0);
    grads.add_category_row(trace.cand_rows.1, &d_ea, 1.0);
}

/// Auxiliary soft-search CTR head: returns `U_r = Σ r_i e_i` and the
/// predicted click probability.
pub fn gsu_aux_forward(long_seq: &[Behavior], cand: &CandidateItem, model: &SimModel) -> (Vec<f64>, f64) {
    let t = gsu_aux_forward_traced(model, long_seq, cand);
    (t.u_r, t.p)
}

/// `U_r` for explicit relevance weights; used to check the pooling.
pub fn weighted_behavior_sum(embeddings: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let d = embeddings.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (e, &w) in embeddings.iter().zip(weights) {
        axpy(w, e, &mut out);
    }
    out
}

/// Identity-initialised projection pair, handy in examples and tests.
pub fn identity_gsu(d: usize, aux_mlp: crate::nn::Mlp) -> GsuParams {
    GsuParams {
        w_b: Matrix::identity(d),
        w_a: Matrix::identity(d),
        aux_mlp,
    }
}
