//! Joint training of the search and scoring units.
//!
//! The loss for one sample is `alpha · CE(aux head) + beta · CE(ESU)`.
//! Gradients are computed by hand and applied with Adam; embedding tables
//! are updated lazily, only on rows a batch actually touched.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{BehaviorSequence, TrainingSample};
use crate::error::{Result, SimError};
use crate::esu::{cross_entropy, cross_entropy_grad, esu_backward, esu_forward_traced};
use crate::eval::auc;
use crate::gsu::{gsu_aux_backward, gsu_aux_forward_traced, hard_search_seq, sample_subsequence, soft_search_exact};
use crate::model::{Gradients, LongTermEncoder, Params, SearchMode, SimModel, CATEGORY_TENSOR, ITEM_TENSOR, TIME_TENSOR};

/// The sub-sequence the scoring unit attends over for `sample`.
///
/// Hard mode filters the long-term part by the candidate's category, soft
/// mode keeps the top-K by learned relevance, and the pooling baseline
/// uses the whole long-term part.
pub fn select_sbs(model: &SimModel, sample: &TrainingSample) -> BehaviorSequence {
    let cfg = &model.config;
    match (cfg.encoder, cfg.mode) {
        (LongTermEncoder::AvgPool, _) => sample.long_seq.clone(),
        (LongTermEncoder::Attention, SearchMode::Hard) => {
            hard_search_seq(&sample.long_seq, sample.candidate.category_id, cfg.sbs_len)
        }
        (LongTermEncoder::Attention, SearchMode::Soft) => {
            soft_search_exact(&sample.long_seq, &sample.candidate, model, cfg.sbs_len)
        }
    }
}

/// A sample with its searched sub-sequence and auxiliary-task sequence
/// resolved against a particular parameter state.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub sample: TrainingSample,
    pub sbs: BehaviorSequence,
    pub aux: BehaviorSequence,
}

impl PreparedSample {
    pub fn new(model: &SimModel, sample: &TrainingSample, aux_seed: u64) -> Self {
        let aux = if model.config.alpha > 0.0 {
            sample_subsequence(&sample.long_seq, model.config.aux_sample_len, aux_seed)
        } else {
            BehaviorSequence::empty()
        };
        Self {
            sbs: select_sbs(model, sample),
            aux,
            sample: sample.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossComponents {
    pub total: f64,
    pub gsu: f64,
    pub esu: f64,
}

/// Combined loss of one sample without gradients.
pub fn combined_loss(sample: &TrainingSample, model: &SimModel) -> Result<LossComponents> {
    prepared_loss(&PreparedSample::new(model, sample, 0), model)
}

fn prepared_loss(s: &PreparedSample, model: &SimModel) -> Result<LossComponents> {
    let cfg = &model.config;
    let cand = &s.sample.candidate;
    let p = esu_forward_traced(model, &s.sbs, &s.sample.short_seq, cand).p;
    let esu = cross_entropy(p, s.sample.label)?;
    let gsu = if cfg.alpha > 0.0 {
        cross_entropy(gsu_aux_forward_traced(model, &s.aux, cand).p, s.sample.label)?
    } else {
        0.0
    };
    Ok(LossComponents {
        total: cfg.alpha * gsu + cfg.beta * esu,
        gsu,
        esu,
    })
}

/// Adds `weight ×` the gradient of the combined loss of `s` into `grads`.
fn accumulate(s: &PreparedSample, model: &SimModel, weight: f64, grads: &mut Gradients) -> Result<LossComponents> {
    let cfg = &model.config;
    let cand = &s.sample.candidate;
    let label = s.sample.label;
    let esu_trace = esu_forward_traced(model, &s.sbs, &s.sample.short_seq, cand);
    let esu = cross_entropy(esu_trace.p, label)?;
    esu_backward(model, &esu_trace, &cross_entropy_grad(esu_trace.p, label, cfg.beta * weight), grads);
    let mut gsu = 0.0;
    if cfg.alpha > 0.0 {
        let aux_trace = gsu_aux_forward_traced(model, &s.aux, cand);
        gsu = cross_entropy(aux_trace.p, label)?;
        gsu_aux_backward(model, &aux_trace, &cross_entropy_grad(aux_trace.p, label, cfg.alpha * weight), grads);
    }
    Ok(LossComponents {
        total: cfg.alpha * gsu + cfg.beta * esu,
        gsu,
        esu,
    })
}

fn ensure_finite(grads: &Gradients) -> Result<()> {
    match grads.first_non_finite() {
        Some(name) => Err(SimError::NonFinite(name)),
        None => Ok(()),
    }
}

/// Loss and exact gradient of one sample.
pub fn backward(sample: &TrainingSample, model: &SimModel) -> Result<(LossComponents, Gradients)> {
    let mut grads = Gradients::new(model);
    let loss = accumulate(&PreparedSample::new(model, sample, 0), model, 1.0, &mut grads)?;
    ensure_finite(&grads)?;
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of `param` in place; `t` is the 1-based step number.
pub fn adam_update(cfg: &AdamConfig, t: u64, lr: f64, param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
    }
}

/// First and second moments for every parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Params,
    v: Params,
}

impl AdamState {
    pub fn new(model: &SimModel) -> Self {
        Self {
            config: AdamConfig::default(),
            step: 0,
            m: model.params.zeros_like(),
            v: model.params.zeros_like(),
        }
    }
}

/// Applies one Adam step. Dense tensors are updated in full; embedding
/// tables only on the rows present in `grads`. Parameters are kept at
/// single precision so checkpoints store them exactly.
pub fn adam_step(state: &mut AdamState, model: &mut SimModel, grads: &Gradients, lr: f64) -> Result<()> {
    ensure_finite(grads)?;
    state.step += 1;
    let (t, cfg) = (state.step, state.config);
    let params = &mut model.params;
    for (table, dst, g, m, v) in [
        (ITEM_TENSOR, &mut params.items, &grads.params.items, &mut state.m.items, &mut state.v.items),
        (CATEGORY_TENSOR, &mut params.categories, &grads.params.categories, &mut state.m.categories, &mut state.v.categories),
        (TIME_TENSOR, &mut params.time, &grads.params.time, &mut state.m.time, &mut state.v.time),
    ] {
        for &r in grads.touched_rows(table) {
            adam_update(&cfg, t, lr, dst.row_mut(r), g.row(r), m.row_mut(r), v.row_mut(r));
            dst.row_mut(r).iter_mut().for_each(|x| *x = crate::nn::round_f32(*x));
        }
    }
    let grad_tensors = grads.params.tensors();
    let mut ms = state.m.tensors_mut();
    let mut vs = state.v.tensors_mut();
    for (i, p) in params.tensors_mut().into_iter().enumerate().skip(TIME_TENSOR + 1) {
        adam_update(&cfg, t, lr, p, grad_tensors[i], ms[i], vs[i]);
        p.iter_mut().for_each(|x| *x = crate::nn::round_f32(*x));
    }
    Ok(())
}

/// Learning rate for a zero-based epoch: `lr0 · decay^epoch`.
pub fn lr_schedule(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub mean_gsu_loss: f64,
    pub mean_esu_loss: f64,
    /// `None` when the held-out set is empty or has a single class.
    pub heldout_auc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
}

fn check_vocab(model: &SimModel, samples: &[TrainingSample]) -> Result<()> {
    let (n_items, n_cats) = (model.config.n_items, model.config.n_categories);
    for s in samples {
        let c = &s.candidate;
        let ids = s.short_seq.iter().chain(s.long_seq.iter()).map(|b| (b.item_id, b.category_id));
        for (item, cat) in ids.chain(std::iter::once((c.item_id, c.category_id))) {
            if item as usize >= n_items {
                return Err(SimError::Dimension {
                    expected: n_items,
                    actual: item as usize + 1,
                });
            }
            if cat as usize >= n_cats {
                return Err(SimError::Dimension {
                    expected: n_cats,
                    actual: cat as usize + 1,
                });
            }
        }
    }
    Ok(())
}

fn aux_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Click probabilities for `samples` under the model's own search mode.
pub fn predict(model: &SimModel, samples: &[TrainingSample]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| crate::esu::esu_forward(model, &select_sbs(model, s), &s.short_seq, &s.candidate))
        .collect()
}

/// Held-out AUC, or `None` if it is undefined for `samples`.
pub fn heldout_auc(model: &SimModel, samples: &[TrainingSample]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    auc(&predict(model, samples), &labels).ok()
}

/// Trains `model` in place with mini-batch Adam.
///
/// The searched sub-sequences are recomputed at the start of every epoch
/// from the current parameters. Results are bit-reproducible for a fixed
/// seed.
pub fn train(
    model: &mut SimModel,
    train_set: &[TrainingSample],
    heldout: &[TrainingSample],
    epochs: usize,
    seed: u64,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(SimError::Config("training set is empty".into()));
    }
    model.config.validate()?;
    check_vocab(model, train_set)?;
    check_vocab(model, heldout)?;
    let mut adam = AdamState::new(model);
    let mut grads = Gradients::new(model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..epochs {
        let lr = lr_schedule(model.config.learning_rate, model.config.lr_decay, epoch);
        let prepared: Vec<PreparedSample> = train_set
            .iter()
            .enumerate()
            .map(|(i, s)| PreparedSample::new(model, s, aux_seed(seed, epoch, i)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut sum = LossComponents::default();
        for batch in order.chunks(model.config.batch_size) {
            grads.clear();
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let l = accumulate(&prepared[i], model, w, &mut grads)?;
                sum.total += l.total;
                sum.gsu += l.gsu;
                sum.esu += l.esu;
            }
            adam_step(&mut adam, model, &grads, lr)?;
        }
        let n = train_set.len() as f64;
        let metrics = EpochMetrics {
            epoch,
            learning_rate: lr,
            mean_loss: sum.total / n,
            mean_gsu_loss: sum.gsu / n,
            mean_esu_loss: sum.esu / n,
            heldout_auc: heldout_auc(model, heldout),
        };
        log::info!(
            "event=epoch epoch={} lr={:.6} loss={:.6} gsu_loss={:.6} esu_loss={:.6} heldout_auc={}",
            epoch,
            lr,
            metrics.mean_loss,
            metrics.mean_gsu_loss,
            metrics.mean_esu_loss,
            metrics.heldout_auc.map_or("na".to_string(), |a| format!("{a:.6}")),
        );
        report.epochs.push(metrics);
    }
    Ok(report)
}

/// Worst agreement between analytic and numerical gradients for one tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub tensor: String,
    pub checked: usize,
    /// Coordinates whose perturbation flipped a ReLU unit.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// Relative error with a floor so that near-zero gradients compare absolutely.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn loss_and_pattern(model: &SimModel, prepared: &[PreparedSample]) -> Result<(f64, Vec<bool>)> {
    let cfg = &model.config;
    let mut loss = 0.0;
    let mut pattern = Vec::new();
    for s in prepared {
        let cand = &s.sample.candidate;
        let t = esu_forward_traced(model, &s.sbs, &s.sample.short_seq, cand);
        loss += cfg.beta * cross_entropy(t.p, s.sample.label)?;
        pattern.extend(t.mlp().active_units());
        if cfg.alpha > 0.0 {
            let a = gsu_aux_forward_traced(model, &s.aux, cand);
            loss += cfg.alpha * cross_entropy(a.p, s.sample.label)?;
            pattern.extend(a.mlp().active_units());
        }
    }
    Ok((loss, pattern))
}

/// Compares the analytic gradient of the summed loss over `samples`
/// against central differences with step `h`, on every parameter.
///
/// The searched sub-sequences are fixed at the unperturbed parameters.
/// Coordinates whose perturbation changes which ReLU units are active are
/// skipped, since the loss is not differentiable across that boundary.
pub fn finite_difference_check(model: &SimModel, samples: &[TrainingSample], h: f64, floor: f64) -> Result<GradCheckReport> {
    let prepared: Vec<PreparedSample> = samples.iter().map(|s| PreparedSample::new(model, s, 0)).collect();
    let mut grads = Gradients::new(model);
    for s in &prepared {
        accumulate(s, model, 1.0, &mut grads)?;
    }
    ensure_finite(&grads)?;
    let (_, base_pattern) = loss_and_pattern(model, &prepared)?;
    let names = model.params.tensor_names();
    let analytic: Vec<Vec<f64>> = grads.params.tensors().into_iter().map(<[f64]>::to_vec).collect();
    let mut probe = model.clone();
    let mut report = GradCheckReport::default();
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].len();
        let mut check = TensorCheck {
            tensor: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            max_abs_analytic: 0.0,
        };
        for k in 0..len {
            let original = probe.params.tensors_mut()[ti][k];
            probe.params.tensors_mut()[ti][k] = original + h;
            let (plus, pat_plus) = loss_and_pattern(&probe, &prepared)?;
            probe.params.tensors_mut()[ti][k] = original - h;
            let (minus, pat_minus) = loss_and_pattern(&probe, &prepared)?;
            probe.params.tensors_mut()[ti][k] = original;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ti][k];
            check.checked += 1;
            check.max_abs_analytic = check.max_abs_analytic.max(a.abs());
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric, floor));
        }
        report.tensors.push(check);
    }
    Ok(report)
}

/// Embedding rows read by a sample's forward pass, per table.
pub fn rows_read(model: &SimModel, sample: &TrainingSample) -> [BTreeSet<usize>; 3] {
    let p = &model.params;
    let prepared = PreparedSample::new(model, sample, 0);
    let mut out: [BTreeSet<usize>; 3] = Default::default();
    let c = &sample.candidate;
    let all = prepared.sbs.iter().chain(prepared.aux.iter()).chain(sample.short_seq.iter());
    for b in all.chain(std::iter::once(&crate::domain::Behavior::new(c.item_id, c.category_id, c.request_time))) {
        out[ITEM_TENSOR].insert(p.items.row_index(b.item_id));
        out[CATEGORY_TENSOR].insert(p.categories.row_index(b.category_id));
    }
    out
}
