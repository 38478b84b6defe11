use super::Volume;
use crate::scalar::Scalar;

/// Equal-width histogram over `[min, max]` of the binned values.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Set when every value was identical; the histogram then has one bin.
    pub degenerate: bool,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn non_empty_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Counts averaged over a centred window of `width` bins (edges truncated).
    pub fn smoothed(&self, width: usize) -> Vec<f64> {
        let half = width / 2;
        let n = self.counts.len();
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(n - 1);
                let s: u64 = self.counts[lo..=hi].iter().sum();
                s as f64 / (hi - lo + 1) as f64
            })
            .collect()
    }

    /// Bin indices of local maxima of the 3-bin smoothed counts. Plateaus
    /// report their first bin. Peaks lower than `min_fraction` of the
    /// tallest bin are ignored.
    pub fn peaks(&self, min_fraction: f64) -> Vec<usize> {
        let s = self.smoothed(3);
        let top = s.iter().cloned().fold(0.0, f64::max);
        let mut out = Vec::new();
        let mut i = 0;
        while i < s.len() {
            let mut j = i;
            while j + 1 < s.len() && s[j + 1] == s[i] {
                j += 1;
            }
            let rises = i == 0 || s[i - 1] < s[i];
            let falls = j + 1 == s.len() || s[j + 1] < s[i];
            if rises && falls && s[i] > 0.0 && s[i] >= min_fraction * top {
                out.push(i);
            }
            i = j + 1;
        }
        out
    }
}

/// Histogram of an arbitrary value stream. Panics if `n_bins < 2`.
pub fn histogram_of(values: impl Iterator<Item = f64> + Clone, n_bins: usize) -> Histogram {
    assert!(n_bins >= 2, "histogram needs at least two bins");
    let (lo, hi) = values
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        let n = values.count() as u64;
        let lo = if lo.is_finite() { lo } else { 0.0 };
        return Histogram {
            edges: vec![lo, lo],
            counts: vec![n],
            degenerate: true,
        };
    }
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..n_bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);
    let mut counts = vec![0u64; n_bins];
    for v in values {
        let b = (((v - lo) / width).floor() as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    Histogram {
        edges,
        counts,
        degenerate: false,
    }
}

pub fn histogram<T: Scalar>(v: &Volume<T>, n_bins: usize) -> Histogram {
    histogram_of(v.data().iter().map(|x| x.as_f64()), n_bins)
}
