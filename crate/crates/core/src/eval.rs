//! Offline metrics: AUC, days since the last same-category behavior
//! (`d_category`) and side-by-side model reports.

use serde::Serialize;

use crate::domain::{TrainingSample, SECONDS_PER_DAY};
use crate::error::{Result, SimError};
use crate::model::SimModel;
use crate::trainer::predict;

/// Area under the ROC curve via the rank-sum statistic, ties scored ½.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(SimError::Dimension {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(SimError::NonFinite(format!("score {bad}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SimError::UndefinedMetric("auc needs both classes"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        pos_rank_sum += mean_rank * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Whole days from the user's latest earlier behavior in the candidate's
/// category to the request, or −1 if there is none.
pub fn d_category(click: &TrainingSample) -> i64 {
    let cat = click.candidate.category_id;
    let request = click.candidate.request_time;
    click
        .short_seq
        .iter()
        .rev()
        .chain(click.long_seq.iter().rev())
        .find(|b| b.category_id == cat && b.timestamp < request)
        .map_or(-1, |b| ((request - b.timestamp) as f64 / SECONDS_PER_DAY).floor() as i64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HistogramBin {
    /// Human-readable day range, e.g. `[4,6)`, or `-1`.
    pub label: String,
    pub count: usize,
}

/// Bin edges used by [`d_category_distribution`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DistributionBins {
    pub short_bucket_days: i64,
    pub long_bucket_days: i64,
    pub boundary: i64,
}

impl Default for DistributionBins {
    fn default() -> Self {
        Self {
            short_bucket_days: 2,
            long_bucket_days: 20,
            boundary: 14,
        }
    }
}

impl DistributionBins {
    fn n_short(&self) -> usize {
        (self.boundary / self.short_bucket_days + 1) as usize
    }

    /// Bin index of `d`; 0 is the −1 bin.
    pub fn index(&self, d: i64) -> usize {
        if d < 0 {
            0
        } else if d <= self.boundary {
            1 + (d / self.short_bucket_days) as usize
        } else {
            1 + self.n_short() + ((d - self.boundary - 1) / self.long_bucket_days) as usize
        }
    }

    pub fn label(&self, index: usize) -> String {
        if index == 0 {
            return "-1".into();
        }
        let k = (index - 1) as i64;
        if (k as usize) < self.n_short() {
            let lo = k * self.short_bucket_days;
            let hi = (lo + self.short_bucket_days).min(self.boundary + 1);
            format!("[{lo},{hi})")
        } else {
            let j = k - self.n_short() as i64;
            let lo = self.boundary + 1 + j * self.long_bucket_days;
            format!("[{lo},{})", lo + self.long_bucket_days)
        }
    }
}

/// Histogram of `d_category` values: −1 in its own bin, short gaps at a
/// fine width and long gaps at a coarse one. Bins run up to the largest
/// observed value; counts sum to the number of inputs.
pub fn d_category_distribution(values: &[i64], bins: DistributionBins) -> Vec<HistogramBin> {
    let n_bins = values.iter().map(|&d| bins.index(d) + 1).max().unwrap_or(1);
    let mut counts = vec![0usize; n_bins];
    for &d in values {
        counts[bins.index(d)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            label: bins.label(i),
            count,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub auc: Option<f64>,
    /// Clicked samples among the top-scored decile.
    pub top_decile_clicks: usize,
    /// Mean over those clicks, excluding −1 values.
    pub mean_d_category: Option<f64>,
    pub p_d_gt_neg1: Option<f64>,
    pub histogram: Vec<HistogramBin>,
}

/// Report over precomputed scores.
pub fn evaluate_scores(samples: &[TrainingSample], scores: &[f64]) -> Result<EvalReport> {
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    let auc = match auc(scores, &labels) {
        Ok(a) => Some(a),
        Err(SimError::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let top = samples.len().div_ceil(10);
    let d: Vec<i64> = order[..top]
        .iter()
        .filter(|&&i| samples[i].label)
        .map(|&i| d_category(&samples[i]))
        .collect();
    let seen: Vec<f64> = d.iter().filter(|&&x| x >= 0).map(|&x| x as f64).collect();
    Ok(EvalReport {
        samples: samples.len(),
        auc,
        top_decile_clicks: d.len(),
        mean_d_category: (!seen.is_empty()).then(|| seen.iter().sum::<f64>() / seen.len() as f64),
        p_d_gt_neg1: (!d.is_empty()).then(|| seen.len() as f64 / d.len() as f64),
        histogram: d_category_distribution(&d, DistributionBins::default()),
    })
}

pub fn evaluate(model: &SimModel, samples: &[TrainingSample]) -> Result<EvalReport> {
    evaluate_scores(samples, &predict(model, samples))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub a: EvalReport,
    pub b: EvalReport,
    /// `b − a` for each headline figure, when both sides are defined.
    pub delta_auc: Option<f64>,
    pub delta_mean_d_category: Option<f64>,
    pub delta_p_d_gt_neg1: Option<f64>,
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

pub fn compare_reports(a: EvalReport, b: EvalReport) -> Comparison {
    Comparison {
        delta_auc: delta(a.auc, b.auc),
        delta_mean_d_category: delta(a.mean_d_category, b.mean_d_category),
        delta_p_d_gt_neg1: delta(a.p_d_gt_neg1, b.p_d_gt_neg1),
        a,
        b,
    }
}

pub fn compare_models(samples: &[TrainingSample], a: &SimModel, b: &SimModel) -> Result<Comparison> {
    Ok(compare_reports(evaluate(a, samples)?, evaluate(b, samples)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Behavior, CandidateItem};

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(SimError::UndefinedMetric(_))));
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    fn click(history: Vec<Behavior>, cat: u32, request: u64) -> TrainingSample {
        TrainingSample::from_history(1, CandidateItem::new(0, cat, request), true, &history.into(), 2)
    }

    #[test]
    fn d_category_examples() {
        let day = 86_400;
        let r = 100 * day;
        let h = vec![Behavior::new(1, 7, r - 5 * day), Behavior::new(2, 3, r - day), Behavior::new(2, 3, r - 10)];
        assert_eq!(d_category(&click(h.clone(), 7, r)), 5);
        assert_eq!(d_category(&click(h.clone(), 9, r)), -1);
        assert_eq!(d_category(&click(h, 3, r)), 0);
    }

    #[test]
    fn histogram_bins() {
        let b = DistributionBins::default();
        let h = d_category_distribution(&[-1, -1], b);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].count, 2);
        assert_eq!(b.label(b.index(5)), "[4,6)");
        assert_eq!(b.label(b.index(14)), "[14,15)");
        assert_eq!(b.label(b.index(30)), "[15,35)");
        assert_eq!(b.index(30), 1 + b.n_short());
        let values = [-1, 0, 3, 14, 15, 34, 35, 400];
        let h = d_category_distribution(&values, b);
        assert_eq!(h.iter().map(|x| x.count).sum::<usize>(), values.len());
    }
}
