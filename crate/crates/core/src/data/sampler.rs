//! Temperature-style domain sampling over per-domain batch counts.

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Rng;

/// `q_i = p_i^α / Σ_j p_j^α` with `p_i = n_i / Σ_k n_k`. Domains with
/// `n_i = 0` get `q_i = 0` for every α.
pub fn sampling_probabilities(counts: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::invalid("sampler", "no domains"));
    }
    if let Some(c) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::invalid("sampler", format!("batch count {c} must be finite and >= 0")));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid("sampler", format!("alpha {alpha} must be finite and >= 0")));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("sampler", "all batch counts are zero"));
    }
    let tempered: Vec<f64> = counts
        .iter()
        .map(|&n| if n > 0.0 { (n / total).powf(alpha) } else { 0.0 })
        .collect();
    let z: f64 = tempered.iter().sum();
    Ok(tempered.into_iter().map(|t| t / z).collect())
}

/// Draws one domain per training step, with replacement, from the
/// tempered batch distribution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplerState {
    counts: Vec<f64>,
    alpha: f64,
    q: Vec<f64>,
    rng: Rng,
}

impl SamplerState {
    pub fn new(counts: Vec<f64>, alpha: f64, seed: u64) -> Result<Self> {
        let q = sampling_probabilities(&counts, alpha)?;
        Ok(SamplerState {
            counts,
            alpha,
            q,
            rng: Rng::seed_from_u64(seed),
        })
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Untempered shares `p_i`.
    pub fn p(&self) -> Vec<f64> {
        let total: f64 = self.counts.iter().sum();
        self.counts.iter().map(|n| n / total).collect()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn sample(&mut self) -> usize {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &q) in self.q.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            last = i;
            acc += q;
            if u < acc {
                return i;
            }
        }
        last
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_counts_are_uniform() {
        for alpha in [0.1, 0.7, 1.0, 3.0] {
            let q = sampling_probabilities(&[1.0; 4], alpha).unwrap();
            assert!(q.iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn alpha_one_is_proportional() {
        let q = sampling_probabilities(&[1.0, 3.0], 1.0).unwrap();
        assert!((q[0] - 0.25).abs() < 1e-15 && (q[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn negative_and_empty_counts_fail() {
        assert!(SamplerState::new(vec![1.0, -1.0], 0.7, 0).is_err());
        assert!(SamplerState::new(vec![0.0, 0.0], 0.7, 0).is_err());
        assert!(SamplerState::new(vec![], 0.7, 0).is_err());
    }

    #[test]
    fn zero_count_domains_are_never_drawn() {
        let mut s = SamplerState::new(vec![0.0, 5.0, 0.0], 0.0, 1).unwrap();
        assert_eq!(s.q(), &[0.0, 1.0, 0.0]);
        assert!((0..1000).all(|_| s.sample() == 1));
    }

    #[test]
    fn q_tends_to_uniform_as_alpha_vanishes() {
        let q = sampling_probabilities(&[0.59, 0.87, 0.31, 0.53], 1e-9).unwrap();
        assert!(q.iter().all(|v| (v - 0.25).abs() < 1e-9));
    }

    /// High-precision evaluation of the tempered shares for counts
    /// (0.59, 0.87, 0.31, 0.53) at α = 0.7, computed at 40 significant digits.
    const DE_EN_Q: [f64; 4] = [
        0.257_904_898_604_165_222_31,
        0.338_475_049_028_068_265_79,
        0.164_367_658_581_480_580_87,
        0.239_252_393_786_285_931_04,
    ];

    #[test]
    fn de_en_counts_match_pinned_values() {
        let q = sampling_probabilities(&[0.59, 0.87, 0.31, 0.53], 0.7).unwrap();
        for (a, b) in q.iter().zip(DE_EN_Q) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    /// Chi-square goodness of fit at significance 0.001.
    fn chi_square_passes(counts: Vec<f64>, alpha: f64, seed: u64, draws: usize) -> bool {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut s = SamplerState::new(counts, alpha, seed).unwrap();
        let mut hist = vec![0usize; s.q().len()];
        for _ in 0..draws {
            hist[s.sample()] += 1;
        }
        let stat: f64 = hist
            .iter()
            .zip(s.q())
            .map(|(&o, &q)| {
                let e = q * draws as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let dist = ChiSquared::new((hist.len() - 1) as f64).unwrap();
        1.0 - dist.cdf(stat) > 0.001
    }

    #[test]
    fn empirical_frequencies_fit_q() {
        assert!(chi_square_passes(vec![0.59, 0.87, 0.31, 0.53], 0.7, 1, 100_000));
        assert!(chi_square_passes(vec![40.0, 40.0, 10.0, 10.0], 0.5, 2, 100_000));
        assert!(chi_square_passes(vec![1.0, 3.0], 1.0, 3, 100_000));
    }

    proptest::proptest! {
        #[test]
        fn smaller_alpha_flattens(
            counts in proptest::collection::vec(1u32..1000, 2..6),
            pair in proptest::sample::subsequence(vec![0.1, 0.5, 0.7, 1.0], 2),
        ) {
            proptest::prop_assume!(counts.iter().any(|&c| c != counts[0]));
            let c: Vec<f64> = counts.iter().map(|&v| f64::from(v)).collect();
            let (lo, hi) = (pair[0], pair[1]);
            let ql = sampling_probabilities(&c, lo).unwrap();
            let qh = sampling_probabilities(&c, hi).unwrap();
            let max = |q: &[f64]| q.iter().copied().fold(f64::MIN, f64::max);
            let min = |q: &[f64]| q.iter().copied().fold(f64::MAX, f64::min);
            proptest::prop_assert!(max(&ql) < max(&qh));
            proptest::prop_assert!(min(&ql) > min(&qh));
        }
    }
}
