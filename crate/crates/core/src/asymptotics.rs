//! Closed-form hit probabilities and leading-order throughput–outage
//! tradeoffs.
//!
//! All formulas here drop their little-o terms. They are meant to be read
//! next to the exact finite-size quantities from [`crate::caching`]; see
//! [`exact_sum_point`]. Order conditions such as `q = O(S·g_c/γ)` cannot be
//! checked at a single point, so they are replaced by explicit factor-10
//! proxies ([`ORDER_PROXY`]) that are reported back by [`classify_regime`].

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::caching::{waterfill, AsymptoticConstants};
use crate::popularity::MZipfDist;
use crate::{Error, Result};

/// Factor used to render `O(·)`, `o(·)` and `ω(·)` conditions at finite size.
pub const ORDER_PROXY: f64 = 10.0;

/// Parameters of one point in the theory: popularity `(γ, q, M)`, cache
/// slots `S`, cluster size `g_c`, reuse factor `K` and link rate `C`.
///
/// Derived quantities are computed on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub gamma: f64,
    pub q: f64,
    pub m: usize,
    pub s: u32,
    pub g_c: f64,
    pub k: u32,
    pub c_rate: f64,
}

impl RegimeParams {
    pub fn new(gamma: f64, q: f64, m: usize, s: u32, g_c: f64, k: u32, c_rate: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(q >= 0.0) || m == 0 || s == 0 || k == 0 || !(c_rate > 0.0) {
            return Err(Error::domain(
                "regime parameters must be positive (q nonnegative)",
            ));
        }
        if !(g_c > 0.0) {
            return Err(Error::domain(format!("cluster size must be positive, got {g_c}")));
        }
        Ok(RegimeParams { gamma, q, m, s, g_c, k, c_rate })
    }

    fn mf(&self) -> f64 {
        self.m as f64
    }

    fn sf(&self) -> f64 {
        self.s as f64
    }

    /// Per-cluster rate share `C/K`.
    pub fn rate_share(&self) -> f64 {
        self.c_rate / self.k as f64
    }

    /// `α = (1 − γ)/(2 − γ)`; only defined for `γ < 1`.
    pub fn alpha(&self) -> Result<f64> {
        if self.gamma >= 1.0 {
            return Err(Error::domain(format!(
                "α is only defined for γ < 1, got γ = {}",
                self.gamma
            )));
        }
        Ok((1.0 - self.gamma) / (2.0 - self.gamma))
    }

    pub fn constants(&self) -> Result<AsymptoticConstants> {
        AsymptoticConstants::from_parts(self.gamma, self.q, self.m, self.sf(), self.g_c)
    }

    pub fn c1(&self) -> Result<f64> {
        Ok(self.constants()?.c1)
    }

    /// `c₃ = g_c / M^α`.
    pub fn c3(&self) -> Result<f64> {
        Ok(self.g_c / self.mf().powf(self.alpha()?))
    }

    /// `c₄ = q / M^α`.
    pub fn c4(&self) -> Result<f64> {
        Ok(self.q / self.mf().powf(self.alpha()?))
    }

    /// `c₅ = q / g_c`.
    pub fn c5(&self) -> f64 {
        self.q / self.g_c
    }

    /// `c₆ = q / g_c` (the γ > 1 counterpart of `c₅`).
    pub fn c6(&self) -> f64 {
        self.q / self.g_c
    }

    /// `ρ = c₁·S·g_c / M`.
    pub fn rho(&self) -> Result<f64> {
        Ok(self.c1()? * self.sf() * self.g_c / self.mf())
    }

    /// `D = q / M`.
    pub fn d(&self) -> f64 {
        self.q / self.mf()
    }

    /// Aggregate cluster memory in units of `γ`: `S·g_c/γ`.
    fn memory_scale(&self) -> f64 {
        self.sf() * self.g_c / self.gamma
    }

    /// Corollary-1 regime threshold `γM/(c₁S)`.
    fn full_library_threshold(&self) -> Result<f64> {
        Ok(self.gamma * self.mf() / (self.c1()? * self.sf()))
    }

    fn with_cluster_size(&self, g_c: f64) -> Self {
        RegimeParams { g_c, ..*self }
    }
}

/// A formula value together with a flag telling whether it had to be
/// clamped into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamped {
    pub value: f64,
    pub clamped: bool,
}

impl Clamped {
    fn unit(raw: f64) -> Self {
        if raw.is_nan() {
            return Clamped { value: raw, clamped: false };
        }
        let value = raw.clamp(0.0, 1.0);
        Clamped { value, clamped: value != raw }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    Corollary1ExactForm,
    Corollary2Bound,
    Theorem2R1,
    Theorem2R2,
    Theorem2R3,
    Theorem4,
    ExactSum,
    Simulated,
}

impl PointSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointSource::Corollary1ExactForm => "corollary1_exact_form",
            PointSource::Corollary2Bound => "corollary2_bound",
            PointSource::Theorem2R1 => "theorem2_r1",
            PointSource::Theorem2R2 => "theorem2_r2",
            PointSource::Theorem2R3 => "theorem2_r3",
            PointSource::Theorem4 => "theorem4",
            PointSource::ExactSum => "exact_sum",
            PointSource::Simulated => "simulated",
        }
    }
}

impl fmt::Display for PointSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (outage, minimum per-user average throughput) operating point.
///
/// Throughput is in units of the link rate `C` (with the `1/K` reuse applied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub outage: f64,
    pub throughput: f64,
    pub g_c: f64,
    pub source: PointSource,
    /// Number of clusters, when the point belongs to a concrete network.
    pub n_clusters: Option<usize>,
    pub outage_stderr: Option<f64>,
    pub throughput_stderr: Option<f64>,
    pub clamped: bool,
}

impl TradeoffPoint {
    fn analytic(source: PointSource, g_c: f64, outage: Clamped, throughput: f64) -> Self {
        TradeoffPoint {
            outage: outage.value,
            throughput: throughput.max(0.0),
            g_c,
            source,
            n_clusters: None,
            outage_stderr: None,
            throughput_stderr: None,
            clamped: outage.clamped || throughput < 0.0,
        }
    }
}

/// Writes `g_c,outage,throughput,source,clamped` rows.
pub fn write_curve_csv<W: Write>(mut w: W, points: &[TradeoffPoint]) -> Result<()> {
    writeln!(w, "g_c,outage,throughput,source,clamped")?;
    for p in points {
        writeln!(w, "{},{},{},{},{}", p.g_c, p.outage, p.throughput, p.source, p.clamped)?;
    }
    Ok(())
}

/// Closed-form hit probability below the full-library threshold
/// `g_c < γM/(c₁S)`:
///
/// ```text
/// P_u^c = [ (x + q)^(1−γ) − (1−γ)(x + q)^(−γ)·x − (q + 1)^(1−γ) ]
///         / [ (M + q)^(1−γ) − (q + 1)^(1−γ) ],   x = c₁·S·g_c/γ
/// ```
pub fn corollary1_puc(p: &RegimeParams) -> Result<Clamped> {
    if p.gamma == 1.0 {
        return Err(Error::domain("closed form is singular at γ = 1"));
    }
    let k = p.constants()?;
    let threshold = p.full_library_threshold()?;
    if p.g_c >= threshold {
        return Err(Error::regime(format!(
            "g_c = {} is at or above γM/(c1·S) = {threshold:.3}; use corollary2_puc_lower",
            p.g_c
        )));
    }
    let (g, q, m) = (p.gamma, p.q, p.mf());
    let e = 1.0 - g;
    let x = k.c1 * p.sf() * p.g_c / g;
    let denom = (m + q).powf(e) - (q + 1.0).powf(e);
    let num = (x + q).powf(e) - e * (x + q).powf(-g) * x - (q + 1.0).powf(e);
    Ok(Clamped::unit(num / denom))
}

/// Lower bound on the hit probability at and above the full-library
/// threshold, `g_c = ρM/(c₁S)` with `ρ ≥ γ`:
///
/// ```text
/// 1 − (1−γ)e^(−(ρ/c₁−γ)) / [(1+D)^(1−γ) − D^(1−γ)]
///       · [(1+D)^(γ/φ+1) − D^(γ/φ+1)]^(−φ),   φ = S(g_c−1) − 1,  D = q/M
/// ```
pub fn corollary2_puc_lower(p: &RegimeParams, rho: f64) -> Result<Clamped> {
    Ok(Clamped::unit(1.0 - corollary2_outage_raw(p, rho)?))
}

fn corollary2_outage_raw(p: &RegimeParams, rho: f64) -> Result<f64> {
    if rho < p.gamma {
        return Err(Error::domain(format!("ρ = {rho} must be at least γ = {}", p.gamma)));
    }
    if p.gamma == 1.0 {
        return Err(Error::domain("bound is singular at γ = 1"));
    }
    let k = p.constants()?;
    let g = p.gamma;
    let phi = p.sf() * (p.g_c - 1.0) - 1.0;
    let d = p.d();
    let e = 1.0 - g;
    let head = e * (-(rho / k.c1 - g)).exp() / ((1.0 + d).powf(e) - d.powf(e));
    let t = g / phi + 1.0;
    let bracket = (1.0 + d).powf(t) - d.powf(t);
    Ok(head * (-phi * bracket.ln()).exp())
}

/// Real cluster size solving `g_c = ρM/(c₁(g_c)·S)`; `c₁` depends on `g_c`
/// through `a'`, so this is a short fixed-point iteration.
pub fn cluster_size_for_rho(gamma: f64, q: f64, m: usize, s: u32, rho: f64) -> Result<f64> {
    let mut g_c = rho * m as f64 / s as f64;
    for _ in 0..200 {
        let c1 = AsymptoticConstants::from_parts(gamma, q, m, s as f64, g_c)?.c1;
        let next = rho * m as f64 / (c1 * s as f64);
        if (next - g_c).abs() <= 1e-12 * g_c {
            return Ok(next);
        }
        g_c = next;
    }
    Ok(g_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem2Regime {
    /// `g_c = c₃·M^α`; knob is `c₃`.
    R1,
    /// `M^α ≪ g_c < γM/(c₁S)`; knob is `g_c`.
    R2,
    /// `g_c = ρM/(c₁S)`, `ρ ≥ γ`; knob is `ρ`.
    R3,
}

/// Leading-order tradeoff for `γ < 1` in one of three cluster-size regimes.
///
/// The knob overrides the cluster size in `p`: it is `c₃` for
/// [`Theorem2Regime::R1`], `g_c` for [`Theorem2Regime::R2`] and `ρ` for
/// [`Theorem2Regime::R3`].
pub fn theorem2_tradeoff(p: &RegimeParams, regime: Theorem2Regime, knob: f64) -> Result<TradeoffPoint> {
    if p.gamma >= 1.0 {
        return Err(Error::regime(format!(
            "γ = {} ≥ 1 is covered by theorem4_tradeoff",
            p.gamma
        )));
    }
    let alpha = p.alpha()?;
    let (g, s, m) = (p.gamma, p.sf(), p.mf());
    let m_alpha = m.powf(alpha);

    let point = match regime {
        Theorem2Regime::R1 => {
            let c3 = knob;
            let pp = p.with_cluster_size(c3 * m_alpha);
            check_plateau_order(&pp)?;
            let c1 = pp.c1()?;
            let c4 = pp.q / m_alpha;
            let b = (s * c1 * c3 / g + c4).powf(-g) * (s * c1 * c3 + c4) - c4.powf(1.0 - g);
            let throughput = pp.rate_share() * m.powf(-alpha) / c3 * (1.0 - (-c3 / 2.0 * b).exp());
            let outage = Clamped::unit(1.0 - m.powf(-alpha) * b);
            TradeoffPoint::analytic(PointSource::Theorem2R1, pp.g_c, outage, throughput)
        }
        Theorem2Regime::R2 => {
            let pp = p.with_cluster_size(knob);
            check_plateau_order(&pp)?;
            let c1 = pp.c1()?;
            let gc = pp.g_c;
            let c5 = pp.c5();
            let bracket = (s * c1 / g + c5).powf(-g) * (s * c1 + c5) - c5.powf(1.0 - g);
            let denom = (m + c5 * gc).powf(1.0 - g) - (c5 * gc + 1.0).powf(1.0 - g);
            let outage = Clamped::unit(1.0 - gc.powf(1.0 - g) / denom * bracket);
            TradeoffPoint::analytic(PointSource::Theorem2R2, gc, outage, pp.rate_share() / gc)
        }
        Theorem2Regime::R3 => {
            let rho = knob;
            if rho < g {
                return Err(Error::domain(format!("ρ = {rho} must be at least γ = {g}")));
            }
            let gc = cluster_size_for_rho(g, p.q, p.m, p.s, rho)?;
            let pp = p.with_cluster_size(gc);
            check_plateau_order(&pp)?;
            let c1 = pp.c1()?;
            let outage = Clamped::unit(corollary2_outage_raw(&pp, rho)?);
            let throughput = pp.rate_share() * s * c1 / (rho * m);
            TradeoffPoint::analytic(PointSource::Theorem2R3, gc, outage, throughput)
        }
    };
    Ok(point)
}

fn check_plateau_order(p: &RegimeParams) -> Result<()> {
    let bound = ORDER_PROXY * p.memory_scale();
    if p.q > bound {
        return Err(Error::regime(format!(
            "q = {} exceeds {ORDER_PROXY}·S·g_c/γ = {bound:.3}; outage collapses to 1 in this regime",
            p.q
        )));
    }
    Ok(())
}

/// Result of [`theorem4_tradeoff`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem4Point {
    pub point: TradeoffPoint,
    /// `q ≤ S·g_c/(10γ)`: the vanishing-outage specialization applies.
    pub corollary3: bool,
}

/// Leading-order tradeoff for `γ > 1` with `g_c ≪ M`:
/// `T = (C/K)/g_c` and `P_o = c₆^(γ−1)(S·c₁ + c₆)/(S·c₁/γ + c₆)^γ`.
pub fn theorem4_tradeoff(p: &RegimeParams) -> Result<Theorem4Point> {
    if p.gamma <= 1.0 {
        return Err(Error::regime(format!(
            "γ = {} ≤ 1; use theorem2_tradeoff",
            p.gamma
        )));
    }
    if p.g_c > p.mf() / ORDER_PROXY {
        return Err(Error::regime(format!(
            "g_c = {} exceeds M/{ORDER_PROXY} = {}; the g_c = o(M) condition fails",
            p.g_c,
            p.mf() / ORDER_PROXY
        )));
    }
    let (g, s) = (p.gamma, p.sf());
    let c1 = p.c1()?;
    let c6 = p.c6();
    let outage = Clamped::unit(c6.powf(g - 1.0) * (s * c1 + c6) / (s * c1 / g + c6).powf(g));
    let point = TradeoffPoint::analytic(PointSource::Theorem4, p.g_c, outage, p.rate_share() / p.g_c);
    let corollary3 = p.q <= p.memory_scale() / ORDER_PROXY;
    Ok(Theorem4Point { point, corollary3 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Theorem2R1,
    Theorem2R2,
    Theorem2R3,
    Theorem3Collapse,
    Theorem4,
    /// `γ = 1` sits between the two families of results.
    Unclassified,
}

/// Finite-size proxies behind a regime label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeProxies {
    /// `q / (S·g_c/γ)`; compared against `10` and `1/10`.
    pub plateau_to_memory: f64,
    /// `g_c / (γM/(c₁S))`; at least 1 means the whole library is cached.
    pub cluster_to_full_library: f64,
    /// `c₃ = g_c / M^α` (γ < 1 only); at most 10 counts as `Θ(M^α)`.
    pub c3: Option<f64>,
    /// `g_c / M`; at most 1/10 counts as `o(M)`.
    pub cluster_to_library: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub label: RegimeLabel,
    pub corollary3: bool,
    pub proxies: RegimeProxies,
    pub warnings: Vec<String>,
}

/// Labels a parameter point with the result that describes it.
pub fn classify_regime(p: &RegimeParams) -> RegimeReport {
    let plateau_to_memory = p.q / p.memory_scale();
    let cluster_to_full_library = p.full_library_threshold().map_or(f64::NAN, |t| p.g_c / t);
    let c3 = p.c3().ok();
    let proxies = RegimeProxies {
        plateau_to_memory,
        cluster_to_full_library,
        c3,
        cluster_to_library: p.g_c / p.mf(),
    };
    let mut warnings = Vec::new();
    let mut corollary3 = false;

    let label = if p.gamma < 1.0 {
        if plateau_to_memory > ORDER_PROXY {
            warnings.push(format!(
                "q/(S·g_c/γ) = {plateau_to_memory:.3} > {ORDER_PROXY}: aggregate memory is below the plateau, outage tends to 1"
            ));
            RegimeLabel::Theorem3Collapse
        } else if cluster_to_full_library >= 1.0 {
            RegimeLabel::Theorem2R3
        } else if c3.is_some_and(|c| c <= ORDER_PROXY) {
            RegimeLabel::Theorem2R1
        } else {
            RegimeLabel::Theorem2R2
        }
    } else if p.gamma > 1.0 {
        corollary3 = plateau_to_memory <= 1.0 / ORDER_PROXY;
        if plateau_to_memory > ORDER_PROXY {
            warnings.push(format!(
                "q/(S·g_c/γ) = {plateau_to_memory:.3} > {ORDER_PROXY}: c6 is large and outage tends to 1"
            ));
        }
        if proxies.cluster_to_library > 1.0 / ORDER_PROXY {
            warnings.push(format!(
                "g_c/M = {:.3} > 1/{ORDER_PROXY}: the g_c = o(M) condition is not met",
                proxies.cluster_to_library
            ));
        }
        RegimeLabel::Theorem4
    } else {
        warnings.push("γ = 1 is not covered by the closed-form results".to_string());
        RegimeLabel::Unclassified
    };

    RegimeReport { label, corollary3, proxies, warnings }
}

/// The exact finite-size operating point for an integer cluster size:
/// outage `1 − P_u^c` of the water-filling policy, and throughput equal to
/// the good-cluster lower bound `(C/K)(1/g_c)(1 − e^(−g_c·P_u^c/2))`.
pub fn exact_sum_point(dist: &MZipfDist, s: u32, g_c: usize, k: u32, c_rate: f64) -> Result<TradeoffPoint> {
    let policy = waterfill(dist, s, g_c)?;
    let hit = policy.hit_probability(dist)?;
    let g = g_c as f64;
    let throughput = c_rate / k as f64 / g * (1.0 - (-g * hit / 2.0).exp());
    Ok(TradeoffPoint::analytic(
        PointSource::ExactSum,
        g,
        Clamped::unit(1.0 - hit),
        throughput,
    ))
}

/// Every leading-order point that applies at this cluster size, in a fixed
/// order: the Corollary-1 form (below the full-library threshold) or the
/// Corollary-2 bound (at or above it), followed by the labeled regime's
/// tradeoff when it can be evaluated.
pub fn formula_points(p: &RegimeParams) -> Vec<TradeoffPoint> {
    let mut out = Vec::new();
    let share = p.rate_share() / p.g_c;
    if let Ok(v) = corollary1_puc(p) {
        let outage = Clamped { value: 1.0 - v.value, clamped: v.clamped };
        out.push(TradeoffPoint::analytic(PointSource::Corollary1ExactForm, p.g_c, outage, share));
    } else if p.gamma < 1.0 {
        if let Ok(rho) = p.rho() {
            if let Ok(v) = corollary2_puc_lower(p, rho) {
                let outage = Clamped { value: 1.0 - v.value, clamped: v.clamped };
                out.push(TradeoffPoint::analytic(PointSource::Corollary2Bound, p.g_c, outage, share));
            }
        }
    }
    let report = classify_regime(p);
    let theory = match report.label {
        RegimeLabel::Theorem2R1 => p.c3().and_then(|c3| theorem2_tradeoff(p, Theorem2Regime::R1, c3)),
        RegimeLabel::Theorem2R2 => theorem2_tradeoff(p, Theorem2Regime::R2, p.g_c),
        RegimeLabel::Theorem2R3 => p.rho().and_then(|rho| theorem2_tradeoff(p, Theorem2Regime::R3, rho)),
        RegimeLabel::Theorem4 => theorem4_tradeoff(p).map(|t| t.point),
        RegimeLabel::Theorem3Collapse | RegimeLabel::Unclassified => {
            Err(Error::regime("no leading-order tradeoff"))
        }
    };
    if let Ok(point) = theory {
        out.push(point);
    }
    out
}
