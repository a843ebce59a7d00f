//! Utility and attack metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::Empty("no samples".into()));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), labels.len())?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn mse(pred: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), labels.len())?;
    Ok(pred.iter().zip(labels).map(|(p, l)| (p - l).powi(2)).sum::<f64>() / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
    /// Classes with no true and no predicted members; scored as 0.
    pub empty_classes: Vec<usize>,
}

/// Macro-averaged F1 over classes `0..num_classes`.
pub fn f1_macro(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<F1Report> {
    check_lengths(pred.len(), labels.len())?;
    if let Some(&bad) = pred.iter().chain(labels).find(|&&c| c >= num_classes) {
        return Err(Error::InvalidArgument(format!("class {bad} out of range for {num_classes} classes")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &l) in pred.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let mut per_class = Vec::with_capacity(num_classes);
    let mut empty_classes = Vec::new();
    for c in 0..num_classes {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom == 0 {
            empty_classes.push(c);
            per_class.push(0.0);
        } else {
            per_class.push(2.0 * tp[c] as f64 / denom as f64);
        }
    }
    Ok(F1Report {
        macro_f1: per_class.iter().sum::<f64>() / num_classes as f64,
        per_class,
        empty_classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub count: usize,
    /// Mean confidence of the bin (0 when empty).
    pub confidence: f64,
    /// Accuracy of the bin (0 when empty).
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub num_bins: usize,
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

/// Index of the bin `((m-1)/M, m/M]` holding `c`; `c = 0` goes to the first bin.
pub fn calibration_bin(c: f64, num_bins: usize) -> usize {
    let m = num_bins as f64;
    let mut b = (c * m).ceil().clamp(1.0, m) as usize;
    // Correct for rounding in c * M at the bin edges.
    while b > 1 && c <= (b - 1) as f64 / m {
        b -= 1;
    }
    while b < num_bins && c > b as f64 / m {
        b += 1;
    }
    b - 1
}

/// Expected calibration error with `num_bins` equal-width bins.
pub fn ece(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<CalibrationReport> {
    check_lengths(confidences.len(), correct.len())?;
    if num_bins == 0 {
        return Err(Error::InvalidArgument("num_bins must be >= 1".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidArgument(format!("confidence {c} outside [0, 1]")));
    }
    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut hit_sum = vec![0usize; num_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = calibration_bin(c, num_bins);
        count[b] += 1;
        conf_sum[b] += c;
        hit_sum[b] += ok as usize;
    }
    let n = confidences.len() as f64;
    let mut ece = 0.0;
    let bins = (0..num_bins)
        .map(|b| {
            if count[b] == 0 {
                return CalibrationBin {
                    count: 0,
                    confidence: 0.0,
                    accuracy: 0.0,
                };
            }
            // |B|/n * |acc - conf| = |hits - sum conf| / n
            ece += (hit_sum[b] as f64 - conf_sum[b]).abs() / n;
            CalibrationBin {
                count: count[b],
                confidence: conf_sum[b] / count[b] as f64,
                accuracy: hit_sum[b] as f64 / count[b] as f64,
            }
        })
        .collect();
    Ok(CalibrationReport {
        num_bins,
        bins,
        ece: ece.min(1.0),
    })
}

/// Area under the ROC curve for binary labels via the Mann-Whitney statistic
/// with midranks for ties. `None` without both positives and negatives.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocReport {
    pub macro_auroc: f64,
    /// `None` for classes without positives or without negatives.
    pub per_class: Vec<Option<f64>>,
    pub skipped_classes: Vec<usize>,
}

/// One-vs-rest AUROC per class, macro-averaged over the classes that have
/// both positives and negatives.
pub fn auroc_ovr_macro(scores: &[Vec<f64>], labels: &[usize]) -> Result<AurocReport> {
    check_lengths(scores.len(), labels.len())?;
    let k = scores[0].len();
    if scores.iter().any(|s| s.len() != k) {
        return Err(Error::DimensionMismatch("score vectors differ in length".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} scores")));
    }
    let mut present = vec![false; k];
    for &l in labels {
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InvalidArgument("AUROC needs at least two classes present".into()));
    }
    let mut per_class = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    for c in 0..k {
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let a = auroc_binary(&col, &pos);
        if a.is_none() {
            skipped.push(c);
        }
        per_class.push(a);
    }
    let vals: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(AurocReport {
        macro_auroc: vals.iter().sum::<f64>() / vals.len() as f64,
        per_class,
        skipped_classes: skipped,
    })
}

/// Minimum and mean Euclidean distance from `recon` to each reference row.
pub fn l2_feature_distance(recon: &[f64], references: &[Vec<f64>]) -> Result<(f64, f64)> {
    l2_feature_distance_with(recon, references, |v| v.to_vec())
}

/// As [`l2_feature_distance`], measured after mapping every vector through
/// `embed` (e.g. a learned feature extractor).
pub fn l2_feature_distance_with(
    recon: &[f64],
    references: &[Vec<f64>],
    embed: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<(f64, f64)> {
    if references.is_empty() {
        return Err(Error::Empty("reference set".into()));
    }
    let r = embed(recon);
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for row in references {
        let e = embed(row);
        if e.len() != r.len() {
            return Err(Error::DimensionMismatch(format!("{} vs {}", e.len(), r.len())));
        }
        let d = r.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        min = min.min(d);
        sum += d;
    }
    Ok((min, sum / references.len() as f64))
}
