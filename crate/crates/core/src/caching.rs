//! Hit-rate-optimal random caching for clustered D2D networks.
//!
//! Every device draws its `S` cache entries independently from a caching
//! distribution `P_c`. A request for file `f` is served inside the cluster
//! when at least one of the other `g_c − 1` devices holds it, so the hit
//! probability is
//!
//! ```text
//! P_u^c = Σ_f P_r(f) · (1 − (1 − P_c(f))^(S(g_c − 1)))
//! ```
//!
//! This is concave in `P_c` and its maximizer over the simplex has the
//! water-filling form `P_c(f) = [1 − ν / z_f]^+` with
//! `z_f = P_r(f)^(1 / (S(g_c − 1) − 1))`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::popularity::MZipfDist;
use crate::{Error, Result};

/// Number of other-device cache slots a request can hit: `S(g_c − 1)`.
fn hit_exponent(slots: u32, cluster_size: usize) -> Result<u64> {
    if slots == 0 {
        return Err(Error::domain("devices need at least one cache slot"));
    }
    if cluster_size < 2 {
        return Err(Error::domain("cluster too small for policy exponent: g_c must be at least 2"));
    }
    let e = slots as u64 * (cluster_size as u64 - 1);
    if e < 2 {
        return Err(Error::domain(format!(
            "cluster too small for policy exponent: S(g_c-1) = {e} < 2"
        )));
    }
    Ok(e)
}

/// `1 − (1 − p)^e`, accurate for small `p`.
#[inline]
pub(crate) fn hit_given_cached_prob(p: f64, exponent: f64) -> f64 {
    -(exponent * (-p).ln_1p()).exp_m1()
}

/// Optimal caching distribution produced by [`waterfill`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachingPolicy {
    probs: Vec<f64>,
    nu: f64,
    m_star: usize,
    exponent_denom: f64,
    slots: u32,
    cluster_size: usize,
}

impl CachingPolicy {
    /// Per-rank caching probabilities `P_c(f)`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Water level `ν`.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Number of files with positive caching probability.
    pub fn m_star(&self) -> usize {
        self.m_star
    }

    /// `S(g_c − 1) − 1`.
    pub fn exponent_denom(&self) -> f64 {
        self.exponent_denom
    }

    pub fn slots(&self) -> u32 {
        self.slots
    }

    pub fn cluster_size(&self) -> usize {
        self.cluster_size
    }

    /// Exact hit probability of this policy against `dist`.
    pub fn hit_probability(&self, dist: &MZipfDist) -> Result<f64> {
        hit_probability(dist, &self.probs, self.slots, self.cluster_size)
    }

    /// Writes `# {"nu":..,"m_star":..,"exponent_denom":..}` followed by
    /// `rank,p_c` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# {{\"nu\":{},\"m_star\":{},\"exponent_denom\":{}}}",
            self.nu, self.m_star, self.exponent_denom
        )?;
        writeln!(w, "rank,p_c")?;
        for (i, p) in self.probs.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, p)?;
        }
        Ok(())
    }
}

/// Computes the caching distribution maximizing the in-cluster hit
/// probability for `slots` cache entries per device and clusters of
/// `cluster_size` devices.
///
/// The cutoff `m*` is the first `m` with `m = M` or `z_{m+1} ≤ ν_m`, where
/// `ν_m = (m − 1) / Σ_{f ≤ m} 1/z_f`; a single pass with a running sum finds it.
pub fn waterfill(dist: &MZipfDist, slots: u32, cluster_size: usize) -> Result<CachingPolicy> {
    let e = hit_exponent(slots, cluster_size)?;
    let exponent_denom = (e - 1) as f64;
    let inv_denom = 1.0 / exponent_denom;
    let z: Vec<f64> = dist.probabilities().into_iter().map(|p| p.powf(inv_denom)).collect();
    let m = z.len();

    let mut inv_sum = 0.0;
    let mut nu = 0.0;
    for k in 1..=m {
        inv_sum += 1.0 / z[k - 1];
        nu = (k - 1) as f64 / inv_sum;
        if k == m || z[k] <= nu {
            break;
        }
    }

    let probs: Vec<f64> = z.iter().map(|&zf| (1.0 - nu / zf).max(0.0)).collect();
    let m_star = probs.iter().take_while(|&&p| p > 0.0).count().max(1);
    Ok(CachingPolicy { probs, nu, m_star, exponent_denom, slots, cluster_size })
}

/// Exact hit probability `Σ_f P_r(f)(1 − (1 − P_c(f))^(S(g_c−1)))` of an
/// arbitrary caching distribution.
pub fn hit_probability(
    dist: &MZipfDist,
    probs: &[f64],
    slots: u32,
    cluster_size: usize,
) -> Result<f64> {
    if probs.len() != dist.m() {
        return Err(Error::Dimension { expected: dist.m(), actual: probs.len() });
    }
    let e = hit_exponent(slots, cluster_size)? as f64;
    Ok(dist
        .probabilities()
        .iter()
        .zip(probs)
        .map(|(&pr, &pc)| pr * hit_given_cached_prob(pc, e))
        .sum())
}

/// Solves `c₁ = 1 + c₂ ln(1 + c₁/c₂)` for the root `c₁ ≥ 1`.
///
/// The residual `c − 1 − c₂ ln(1 + c/c₂)` is convex, negative at `c = 1`
/// and unbounded above, so bisection on a bracket grown by doubling is
/// exact to the absolute tolerance `1e-12`.
pub fn solve_c1(c2: f64) -> f64 {
    assert!(c2 >= 0.0 && c2.is_finite(), "c2 must be a nonnegative finite number");
    if c2 == 0.0 {
        return 1.0;
    }
    let residual = |c: f64| c - 1.0 - c2 * (c / c2).ln_1p();
    let mut lo = 1.0;
    let mut hi = 2.0 + c2 * (2.0 / c2).ln_1p();
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        if hi - lo <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Scaling quantities of the optimal policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConstants {
    /// `a' = γ / (S(g_c − 1) − 1)`.
    pub a_prime: f64,
    pub c1: f64,
    /// `c₂ = q·a'`.
    pub c2: f64,
    /// Leading-order cutoff `min(c₁·S·g_c/γ, M)`.
    pub m_star_asym: f64,
}

impl AsymptoticConstants {
    /// Same as [`asymptotic_constants`] but for a real-valued cluster size,
    /// as needed when sweeping theory curves.
    pub fn from_parts(gamma: f64, q: f64, m: usize, slots: f64, cluster_size: f64) -> Result<Self> {
        let denom = slots * (cluster_size - 1.0) - 1.0;
        if !(denom >= 1.0) {
            return Err(Error::domain(format!(
                "cluster too small for policy exponent: S(g_c-1) - 1 = {denom} < 1"
            )));
        }
        let a_prime = gamma / denom;
        let c2 = q * a_prime;
        let c1 = solve_c1(c2);
        let m_star_asym = (c1 * slots * cluster_size / gamma).min(m as f64);
        Ok(AsymptoticConstants { a_prime, c1, c2, m_star_asym })
    }
}

pub fn asymptotic_constants(
    dist: &MZipfDist,
    slots: u32,
    cluster_size: usize,
) -> Result<AsymptoticConstants> {
    hit_exponent(slots, cluster_size)?;
    AsymptoticConstants::from_parts(
        dist.gamma(),
        dist.q(),
        dist.m(),
        slots as f64,
        cluster_size as f64,
    )
}
