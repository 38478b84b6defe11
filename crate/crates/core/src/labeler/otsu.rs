use crate::error::{Error, Result};
use crate::volgrid::Histogram;

/// Bin edge maximizing the between-class variance `w0 * w1 * (mu0 - mu1)^2`,
/// with bins strictly below the edge forming the lower class. Ties resolve to
/// the smallest edge.
pub fn otsu_threshold(h: &Histogram) -> Result<f64> {
    if h.degenerate || h.non_empty_bins() < 2 {
        return Err(Error::degenerate("Otsu needs at least two non-empty bins"));
    }
    let centers = h.centers();
    let total: f64 = h.counts.iter().map(|&c| c as f64).sum();
    let total_moment: f64 = h
        .counts
        .iter()
        .zip(&centers)
        .map(|(&c, &m)| c as f64 * m)
        .sum();

    let mut w0 = 0.0;
    let mut m0 = 0.0;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 1..h.counts.len() {
        w0 += h.counts[k - 1] as f64;
        m0 += h.counts[k - 1] as f64 * centers[k - 1];
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = m0 / w0;
        let mu1 = (total_moment - m0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best.0 {
            best = (var, k);
        }
    }
    Ok(h.edges[best.1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::histogram_of;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn two_level_cut_is_interior() {
        let data = [0.0, 0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0];
        let h = histogram_of(data.iter().copied(), 256);
        let t = otsu_threshold(&h).unwrap();
        assert!(t > 0.0 && t <= 10.0);
        assert!(data.iter().filter(|&&v| v < t).count() == 4);
    }

    #[test]
    fn constant_samples_error() {
        let h = histogram_of([3.0; 5].iter().copied(), 256);
        assert!(otsu_threshold(&h).is_err());
    }

    /// Exhaustive oracle: class statistics recomputed from scratch per edge.
    fn brute_force(h: &Histogram) -> f64 {
        let centers = h.centers();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 1..h.counts.len() {
            let (mut w0, mut s0, mut w1, mut s1) = (0.0, 0.0, 0.0, 0.0);
            for (i, &c) in h.counts.iter().enumerate() {
                if i < k {
                    w0 += c as f64;
                    s0 += c as f64 * centers[i];
                } else {
                    w1 += c as f64;
                    s1 += c as f64 * centers[i];
                }
            }
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let between = w0 * w1 * (s0 / w0 - s1 / w1).powi(2);
            if between > best.0 * (1.0 + 1e-12) {
                best = (between, h.edges[k]);
            }
        }
        best.1
    }

    #[test]
    fn matches_exhaustive_search_on_bimodal_draws() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lo = Normal::new(0.0, 0.15).unwrap();
            let hi = Normal::new(1.0, 0.2).unwrap();
            let data: Vec<f64> = (0..200)
                .map(|_| if rng.random_bool(0.4) { lo.sample(&mut rng) } else { hi.sample(&mut rng) })
                .collect();
            let h = histogram_of(data.iter().copied(), 256);
            assert_eq!(otsu_threshold(&h).unwrap(), brute_force(&h), "seed {seed}");
        }
    }
}
