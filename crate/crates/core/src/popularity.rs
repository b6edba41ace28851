//! The Mandelbrot-Zipf (MZipf) popularity law.
//!
//! A library of `M` files ranked `1..=M` is requested with probability
//!
//! ```text
//! P_r(f) = (f + q)^(-γ) / Σ_{j=1..M} (j + q)^(-γ)
//! ```
//!
//! where `γ > 0` is the Zipf factor and `q ≥ 0` the plateau factor. For
//! `q = 0` the law is the ordinary Zipf distribution; larger `q` flattens the
//! head of the distribution over roughly the first `q` ranks.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Terms beyond which [`partial_sum`] switches to compensated accumulation.
const COMPENSATED_THRESHOLD: u64 = 1_000_000;

/// Mandelbrot-Zipf request distribution over ranks `1..=m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MZipfDist {
    gamma: f64,
    q: f64,
    m: usize,
    normalizer: f64,
}

impl MZipfDist {
    pub fn new(gamma: f64, q: f64, m: usize) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::domain(format!("Zipf factor must be positive, got {gamma}")));
        }
        if !(q.is_finite() && q >= 0.0) {
            return Err(Error::domain(format!("plateau factor must be nonnegative, got {q}")));
        }
        if m == 0 {
            return Err(Error::domain("library size must be at least 1"));
        }
        let normalizer = partial_sum(gamma, q, 1, m as u64)?;
        Ok(MZipfDist { gamma, q, m, normalizer })
    }

    /// Plain Zipf law, i.e. `q = 0`.
    pub fn zipf(gamma: f64, m: usize) -> Result<Self> {
        Self::new(gamma, 0.0, m)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Library size `M`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// `H(γ, q, 1, M)`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Request probability of the file at `rank` (1-based).
    pub fn pmf(&self, rank: usize) -> Result<f64> {
        if rank == 0 || rank > self.m {
            return Err(Error::domain(format!(
                "rank {rank} outside 1..={}",
                self.m
            )));
        }
        Ok(self.weight(rank) / self.normalizer)
    }

    /// All request probabilities in rank order.
    pub fn probabilities(&self) -> Vec<f64> {
        (1..=self.m).map(|f| self.weight(f) / self.normalizer).collect()
    }

    #[inline]
    fn weight(&self, rank: usize) -> f64 {
        (rank as f64 + self.q).powf(-self.gamma)
    }

    /// Builds a reusable sampler over the ranks of this distribution.
    pub fn sampler(&self) -> RankSampler {
        RankSampler::from_weights(&self.probabilities())
            .expect("MZipf weights are positive and finite")
    }
}

/// Inverse-CDF sampler over ranks `1..=len`.
///
/// The cumulative table is built once; each draw is a binary search.
#[derive(Debug, Clone)]
pub struct RankSampler {
    index: WeightedIndex<f64>,
}

impl RankSampler {
    /// Weights need not be normalized but must be nonnegative with a positive sum.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let index = WeightedIndex::new(weights)
            .map_err(|e| Error::domain(format!("invalid sampling weights: {e}")))?;
        Ok(RankSampler { index })
    }

    /// Draws a 1-based rank.
    #[inline]
    pub fn sample_rank<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng) + 1
    }
}

/// `H(γ, q, a, b) = Σ_{m=a..b} (m + q)^(-γ)` by direct summation.
///
/// Terms are accumulated from the smallest (largest `m`) upward; above a
/// million terms the accumulation is Neumaier-compensated.
pub fn partial_sum(gamma: f64, q: f64, a: u64, b: u64) -> Result<f64> {
    if a == 0 {
        return Err(Error::domain("partial sums start at index 1"));
    }
    if a > b {
        return Err(Error::domain(format!("empty range: a = {a} > b = {b}")));
    }
    let term = |m: u64| (m as f64 + q).powf(-gamma);
    if b - a <= COMPENSATED_THRESHOLD {
        return Ok((a..=b).rev().map(term).sum());
    }
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for m in (a..=b).rev() {
        let x = term(m);
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    Ok(sum + comp)
}

/// Integral sandwich around a generalized harmonic partial sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialSumBounds {
    pub lower: f64,
    pub upper: f64,
    pub exact: f64,
}

impl PartialSumBounds {
    pub fn holds(&self) -> bool {
        self.lower <= self.exact && self.exact <= self.upper
    }

    /// `(upper - lower) / exact`.
    pub fn relative_gap(&self) -> f64 {
        (self.upper - self.lower) / self.exact
    }
}

/// Lower and upper integral bounds on `H(γ, q, a, b)` for `γ ≠ 1`:
///
/// ```text
/// [(b+q+1)^(1-γ) - (a+q)^(1-γ)] / (1-γ)
///     ≤ H ≤ [(b+q)^(1-γ) - (a+q)^(1-γ)] / (1-γ) + (a+q)^(-γ)
/// ```
pub fn lemma1_bounds(gamma: f64, q: f64, a: u64, b: u64) -> Result<PartialSumBounds> {
    if gamma == 1.0 {
        return Err(Error::domain("integral bounds are undefined in this form for γ = 1"));
    }
    let exact = partial_sum(gamma, q, a, b)?;
    let e = 1.0 - gamma;
    let (a, b) = (a as f64, b as f64);
    let lower = ((b + q + 1.0).powf(e) - (a + q).powf(e)) / e;
    let upper = ((b + q).powf(e) - (a + q).powf(e)) / e + (a + q).powf(-gamma);
    Ok(PartialSumBounds { lower, upper, exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pmf_small_hand_value() {
        let d = MZipfDist::new(1.0, 1.0, 3).unwrap();
        assert!((d.pmf(1).unwrap() - 6.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn q_zero_is_zipf() {
        let d = MZipfDist::new(0.8, 0.0, 50).unwrap();
        let h: f64 = (1..=50).map(|j| (j as f64).powf(-0.8)).sum();
        for f in 1..=50 {
            let zipf = (f as f64).powf(-0.8) / h;
            assert!((d.pmf(f).unwrap() - zipf).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_exponent_is_uniform() {
        let d = MZipfDist::new(1e-12, 7.0, 10).unwrap();
        for f in 1..=10 {
            assert!((d.pmf(f).unwrap() - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_out_of_range() {
        let d = MZipfDist::new(1.0, 0.0, 5).unwrap();
        assert!(matches!(d.pmf(0), Err(Error::Domain(_))));
        assert!(matches!(d.pmf(6), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(MZipfDist::new(0.0, 1.0, 5).is_err());
        assert!(MZipfDist::new(1.0, -1.0, 5).is_err());
        assert!(MZipfDist::new(1.0, 1.0, 0).is_err());
        assert!(MZipfDist::new(f64::NAN, 1.0, 5).is_err());
    }

    #[test]
    fn harmonic_three() {
        assert!((partial_sum(1.0, 0.0, 1, 3).unwrap() - 11.0 / 6.0).abs() < 1e-15);
        assert!(partial_sum(1.0, 0.0, 4, 3).is_err());
    }

    #[test]
    fn partial_sum_matches_naive_oracle() {
        // Left-to-right naive summation, frozen.
        let expected = 54.83492248481015;
        let got = partial_sum(0.5, 20.0, 1, 1000).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-10);
    }

    #[test]
    fn compensated_path_agrees() {
        let got = partial_sum(1.1, 3.0, 1, 2_000_001).unwrap();
        let naive: f64 = (1..=2_000_001u64).map(|m| (m as f64 + 3.0).powf(-1.1)).sum();
        assert!(((got - naive) / got).abs() < 1e-12);
    }

    #[test]
    fn lemma1_closed_forms() {
        let b = lemma1_bounds(0.5, 0.0, 1, 100).unwrap();
        assert!((b.lower - 2.0 * (101f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!((b.upper - (2.0 * (100f64.sqrt() - 1.0) + 1.0)).abs() < 1e-12);
        assert!(b.holds());
        assert!(lemma1_bounds(2.0, 10.0, 1, 50).unwrap().holds());
        let uk = lemma1_bounds(1.36, 50.0, 1, 16823).unwrap();
        assert!(uk.holds());
        assert!(uk.relative_gap() < 0.02);
        assert!(lemma1_bounds(1.0, 0.0, 1, 3).is_err());
    }

    #[test]
    fn single_file_always_rank_one() {
        let s = MZipfDist::new(1.3, 4.0, 1).unwrap().sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| s.sample_rank(&mut rng) == 1));
    }

    #[test]
    fn head_frequency_within_three_sigma() {
        let d = MZipfDist::new(1.16, 22.0, 7345).unwrap();
        let s = d.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| s.sample_rank(&mut rng) == 1).count() as f64;
        let p = d.pmf(1).unwrap();
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - n as f64 * p).abs() < 3.0 * sd, "hits={hits}, expected {}", n as f64 * p);
    }

    #[test]
    fn empirical_kl_small() {
        let d = MZipfDist::new(0.6, 20.0, 1000).unwrap();
        let s = d.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 1_000_000;
        let mut counts = vec![0u64; 1000];
        for _ in 0..n {
            counts[s.sample_rank(&mut rng) - 1] += 1;
        }
        let probs = d.probabilities();
        let kl: f64 = counts
            .iter()
            .zip(&probs)
            .filter(|(&c, _)| c > 0)
            .map(|(&c, &p)| {
                let e = c as f64 / n as f64;
                e * (e / p).ln()
            })
            .sum();
        assert!(kl < 1e-3, "kl = {kl}");
    }
}
