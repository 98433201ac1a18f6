//! Calibration and ranking statistics: ECE, reliability bins, top-k accuracy,
//! Spearman's rho and Kendall's tau-b.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "scope", content = "class")]
pub enum BinScope {
    Overall,
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    /// Zero for empty bins.
    pub mean_confidence: f64,
    /// Zero for empty bins.
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub scope: BinScope,
    pub bins: Vec<Bin>,
}

impl ReliabilityBins {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Count-weighted mean of `|accuracy - confidence|` over nonempty bins.
    pub fn ece(&self) -> f64 {
        let n = self.total() as f64;
        if n == 0.0 {
            return 0.0;
        }
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs())
            .sum()
    }
}

/// Equal-width bin of a confidence in `[0, 1]`. Values on an interior edge
/// go to the higher bin; 1.0 goes to the last bin.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64).floor() as usize).min(bins - 1)
}

fn build_bins(confidences: &[f64], hits: impl Iterator<Item = bool>, bins: usize, scope: BinScope) -> ReliabilityBins {
    let mut sum_conf = vec![0.0; bins];
    let mut sum_hit = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&c, hit) in confidences.iter().zip(hits) {
        let b = bin_index(c, bins);
        sum_conf[b] += c;
        sum_hit[b] += usize::from(hit);
        count[b] += 1;
    }
    let width = 1.0 / bins as f64;
    let bins = (0..bins)
        .map(|b| {
            let n = count[b];
            Bin {
                low: b as f64 * width,
                high: if b + 1 == bins { 1.0 } else { (b + 1) as f64 * width },
                mean_confidence: if n > 0 { sum_conf[b] / n as f64 } else { 0.0 },
                accuracy: if n > 0 { sum_hit[b] as f64 / n as f64 } else { 0.0 },
                count: n,
            }
        })
        .collect();
    ReliabilityBins { scope, bins }
}

fn check_confidences(confidences: &[f64]) -> Result<()> {
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::invalid("confidence", format!("{c} not in [0, 1]")));
    }
    Ok(())
}

/// Expected calibration error with `bins` equal-width bins, plus the bins.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<(f64, ReliabilityBins)> {
    if confidences.is_empty() {
        return Err(Error::Empty("confidences".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::LengthMismatch {
            what: "correctness",
            expected: confidences.len(),
            found: correct.len(),
        });
    }
    if bins == 0 {
        return Err(Error::invalid("bins", "need at least one bin"));
    }
    check_confidences(confidences)?;
    let rb = build_bins(confidences, correct.iter().copied(), bins, BinScope::Overall);
    Ok((rb.ece(), rb))
}

/// One reliability diagram per class: `p_k` against the indicator `label == k`.
pub fn classwise_reliability(probabilities: &[Vec<f64>], labels: &[usize], bins: usize) -> Result<Vec<ReliabilityBins>> {
    if probabilities.is_empty() {
        return Err(Error::Empty("probabilities".into()));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: probabilities.len(),
            found: labels.len(),
        });
    }
    if bins == 0 {
        return Err(Error::invalid("bins", "need at least one bin"));
    }
    let classes = probabilities[0].len();
    for (row, p) in probabilities.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.len() != classes || (sum - 1.0).abs() > 1e-9 || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::NotProbabilities { row, sum });
        }
    }
    for &y in labels {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
    }
    Ok((0..classes)
        .map(|k| {
            let conf: Vec<f64> = probabilities.iter().map(|p| p[k]).collect();
            build_bins(&conf, labels.iter().map(|&y| y == k), bins, BinScope::Class(k))
        })
        .collect())
}

/// Fraction of rows whose label ranks within the top `k` scores. Ties rank
/// the lower class index first.
pub fn top_k_accuracy(scores: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("scores".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    let classes = scores[0].len();
    if k == 0 || k > classes {
        return Err(Error::invalid("k", format!("{k} not in [1, {classes}]")));
    }
    let mut hits = 0usize;
    for (row, &y) in scores.iter().zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let sy = row[y];
        let ahead = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > sy || (v == sy && j < y))
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Spearman,
    KendallTauB,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub coefficient: f64,
    /// Two-sided, from the large-sample normal approximation.
    pub p_value: f64,
    pub n: usize,
    pub method: CorrelationMethod,
}

fn two_sided_normal_p(z: f64) -> f64 {
    if z.is_finite() {
        erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Empty("correlation input".into()));
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "second vector",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input".into()));
    }
    if a.iter().all(|&v| v == a[0]) {
        return Err(Error::ConstantInput("first vector"));
    }
    if b.iter().all(|&v| v == b[0]) {
        return Err(Error::ConstantInput("second vector"));
    }
    Ok(())
}

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<CorrelationResult> {
    check_pair(a, b)?;
    let rho = pearson(&average_ranks(a), &average_ranks(b));
    let n = a.len();
    let p_value = if n > 1 {
        two_sided_normal_p(rho * ((n - 1) as f64).sqrt())
    } else {
        1.0
    };
    Ok(CorrelationResult {
        coefficient: rho,
        p_value,
        n,
        method: CorrelationMethod::Spearman,
    })
}

/// Sum over tie groups of `f(group size)` for a sorted slice.
fn tie_sum(sorted: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        total += f((end - start) as f64);
        start = end;
    }
    total
}

/// Merge sort counting inversions (strictly decreasing pairs).
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        sort_count_swaps(l, bl) + sort_count_swaps(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's tau-b with tie corrections, in `O(n log n)`.
pub fn kendall(a: &[f64], b: &[f64]) -> Result<CorrelationResult> {
    check_pair(a, b)?;
    let n = a.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));
    let sa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
    let mut sb: Vec<f64> = idx.iter().map(|&i| b[i]).collect();

    let pairs = |t: f64| t * (t - 1.0) / 2.0;
    let ties_a = tie_sum(&sa, pairs);
    // Pairs tied in both coordinates.
    let mut ties_ab = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sa[end] == sa[start] && sb[end] == sb[start] {
            end += 1;
        }
        ties_ab += pairs((end - start) as f64);
        start = end;
    }
    let mut buf = vec![0.0; n];
    let swaps = sort_count_swaps(&mut sb, &mut buf) as f64;
    let ties_b = tie_sum(&sb, pairs);

    let total = pairs(n as f64);
    let s = total - ties_a - ties_b + ties_ab - 2.0 * swaps;
    let tau = (s / ((total - ties_a) * (total - ties_b)).sqrt()).clamp(-1.0, 1.0);

    let nf = n as f64;
    let mut sa_sorted = sa.clone();
    sa_sorted.sort_by(f64::total_cmp);
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = tie_sum(&sa_sorted, |t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = tie_sum(&sb, |u| u * (u - 1.0) * (2.0 * u + 5.0));
    let t1 = tie_sum(&sa_sorted, |t| t * (t - 1.0));
    let u1 = tie_sum(&sb, |u| u * (u - 1.0));
    let t2 = tie_sum(&sa_sorted, |t| t * (t - 1.0) * (t - 2.0));
    let u2 = tie_sum(&sb, |u| u * (u - 1.0) * (u - 2.0));
    let mut var = (v0 - vt - vu) / 18.0;
    if n > 1 {
        var += t1 * u1 / (2.0 * nf * (nf - 1.0));
    }
    if n > 2 {
        var += t2 * u2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    let p_value = if var > 0.0 { two_sided_normal_p(s / var.sqrt()) } else { 1.0 };
    Ok(CorrelationResult {
        coefficient: tau,
        p_value,
        n,
        method: CorrelationMethod::KendallTauB,
    })
}
