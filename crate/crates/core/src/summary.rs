//! Empirical summaries of draw sets: interpolated quantiles, histograms and
//! the histogram overlap coefficient.

use serde::Serialize;

const MAX_BINS: usize = 200;

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Fixed-edge histogram. Bin `i` covers `[edges[i], edges[i+1])`, the last
/// bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Freedman–Diaconis binning over the pooled range of `samples`, falling
    /// back to Sturges' rule when the interquartile range is zero.
    pub fn freedman_diaconis(samples: &[&[f64]]) -> Vec<f64> {
        let pooled: Vec<f64> = samples.iter().flat_map(|s| s.iter().copied()).filter(|x| x.is_finite()).collect();
        if pooled.is_empty() {
            return vec![0.0, 1.0];
        }
        let sorted = sorted_copy(&pooled);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        if lo == hi {
            return vec![lo - 0.5, hi + 0.5];
        }
        let n = sorted.len() as f64;
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let bins = if iqr > 0.0 {
            let width = 2.0 * iqr / n.cbrt();
            ((hi - lo) / width).ceil() as usize
        } else {
            n.log2().ceil() as usize + 1
        }
        .clamp(1, MAX_BINS);
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
        edges.push(hi);
        edges
    }

    pub fn with_edges(values: &[f64], edges: Vec<f64>) -> Self {
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        for &x in values {
            if let Some(b) = bin_of(&edges, x) {
                counts[b] += 1;
            }
        }
        Self { edges, counts }
    }

    pub fn new(values: &[f64]) -> Self {
        Self::with_edges(values, Self::freedman_diaconis(&[values]))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    let last = edges.len() - 1;
    if !(x >= edges[0] && x <= edges[last]) {
        return None;
    }
    let b = edges.partition_point(|&e| e <= x);
    Some(b.saturating_sub(1).min(last - 1))
}

/// Overlap coefficient `Σ min(p_a, p_b)` of two samples binned on a shared
/// Freedman–Diaconis grid over their pooled range.
pub fn overlap_coefficient(a: &[f64], b: &[f64]) -> f64 {
    let edges = Histogram::freedman_diaconis(&[a, b]);
    let ha = Histogram::with_edges(a, edges.clone());
    let hb = Histogram::with_edges(b, edges);
    let (na, nb) = (ha.total() as f64, hb.total() as f64);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ha.counts.iter().zip(&hb.counts).map(|(&x, &y)| (x as f64 / na).min(y as f64 / nb)).sum::<f64>().clamp(0.0, 1.0)
}
