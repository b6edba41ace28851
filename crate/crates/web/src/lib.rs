//! Browser bindings: popularity curves, the water-filling policy, and a
//! small throughput-outage sweep.
//!
//! Every export is a thin wrapper over a plain function so the numerics can
//! be tested natively.

use d2dcache::asymptotics::{exact_sum_point, formula_points, PointSource, RegimeParams};
use d2dcache::caching::{asymptotic_constants, waterfill};
use d2dcache::popularity::MZipfDist;
use d2dcache::simulator::{monte_carlo, NetworkConfig, SimOptions};
use wasm_bindgen::prelude::*;

fn js(e: d2dcache::Error) -> JsError {
    JsError::new(&e.to_string())
}

pub fn popularity_curve(gamma: f64, q: f64, m: usize) -> d2dcache::Result<Vec<f64>> {
    Ok(MZipfDist::new(gamma, q, m)?.probabilities())
}

/// Request probabilities of ranks `1..=m`.
#[wasm_bindgen]
pub fn popularity(gamma: f64, q: f64, m: usize) -> Result<Vec<f64>, JsError> {
    popularity_curve(gamma, q, m).map_err(js)
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct PolicyView {
    probs: Vec<f64>,
    request: Vec<f64>,
    nu: f64,
    m_star: usize,
    hit: f64,
    m_star_asym: f64,
    c1: f64,
}

#[wasm_bindgen]
impl PolicyView {
    #[wasm_bindgen(getter)]
    pub fn probs(&self) -> Vec<f64> {
        self.probs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn request(&self) -> Vec<f64> {
        self.request.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn nu(&self) -> f64 {
        self.nu
    }

    #[wasm_bindgen(getter)]
    pub fn m_star(&self) -> usize {
        self.m_star
    }

    #[wasm_bindgen(getter)]
    pub fn hit(&self) -> f64 {
        self.hit
    }

    #[wasm_bindgen(getter)]
    pub fn m_star_asym(&self) -> f64 {
        self.m_star_asym
    }

    #[wasm_bindgen(getter)]
    pub fn c1(&self) -> f64 {
        self.c1
    }
}

pub fn policy_view(gamma: f64, q: f64, m: usize, s: u32, g_c: usize) -> d2dcache::Result<PolicyView> {
    let d = MZipfDist::new(gamma, q, m)?;
    let p = waterfill(&d, s, g_c)?;
    let k = asymptotic_constants(&d, s, g_c)?;
    Ok(PolicyView {
        hit: p.hit_probability(&d)?,
        probs: p.probs().to_vec(),
        request: d.probabilities(),
        nu: p.nu(),
        m_star: p.m_star(),
        m_star_asym: k.m_star_asym,
        c1: k.c1,
    })
}

#[wasm_bindgen]
pub fn policy(gamma: f64, q: f64, m: usize, s: u32, g_c: usize) -> Result<PolicyView, JsError> {
    policy_view(gamma, q, m, s, g_c).map_err(js)
}

/// Parallel arrays over the valid cluster counts; `NaN` marks a missing value.
#[wasm_bindgen]
#[derive(Debug, Clone, Default)]
pub struct TradeoffView {
    g_c: Vec<f64>,
    exact_outage: Vec<f64>,
    exact_throughput: Vec<f64>,
    formula_outage: Vec<f64>,
    sim_outage: Vec<f64>,
    sim_stderr: Vec<f64>,
    sim_throughput: Vec<f64>,
}

#[wasm_bindgen]
impl TradeoffView {
    #[wasm_bindgen(getter)]
    pub fn g_c(&self) -> Vec<f64> {
        self.g_c.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn exact_outage(&self) -> Vec<f64> {
        self.exact_outage.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn exact_throughput(&self) -> Vec<f64> {
        self.exact_throughput.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn formula_outage(&self) -> Vec<f64> {
        self.formula_outage.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sim_outage(&self) -> Vec<f64> {
        self.sim_outage.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sim_stderr(&self) -> Vec<f64> {
        self.sim_stderr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sim_throughput(&self) -> Vec<f64> {
        self.sim_throughput.clone()
    }
}

/// Perfect-square cluster counts that tile an `n`-user grid with at least
/// `min_size` users per cluster, largest clusters first.
pub fn tiling_counts(n: usize, min_size: usize) -> Vec<usize> {
    (1..)
        .map(|r: usize| r * r)
        .take_while(|&c| c <= n)
        .filter(|&c| NetworkConfig::new(n, c, 1, 1, 1.0).is_ok() && n / c >= min_size)
        .collect()
}

/// Exact-sum and closed-form points at every cluster count, plus a
/// simulation when `trials ≥ 2`.
#[allow(clippy::too_many_arguments)]
pub fn tradeoff_curve(
    gamma: f64,
    q: f64,
    m: usize,
    n: usize,
    s: u32,
    k: u32,
    trials: usize,
    seed: u64,
) -> d2dcache::Result<TradeoffView> {
    let d = MZipfDist::new(gamma, q, m)?;
    let mut v = TradeoffView::default();
    let min_size = if s >= 2 { 2 } else { 3 };
    for nc in tiling_counts(n, min_size) {
        let cfg = NetworkConfig::new(n, nc, s, k, 1.0)?;
        let g_c = cfg.g_c();
        let exact = exact_sum_point(&d, s, g_c, k, 1.0)?;
        let params = RegimeParams::new(gamma, q, m, s, g_c as f64, k, 1.0)?;
        let formula = formula_points(&params)
            .into_iter()
            .find(|p| matches!(p.source, PointSource::Corollary1ExactForm | PointSource::Corollary2Bound))
            .map_or(f64::NAN, |p| p.outage);
        v.g_c.push(g_c as f64);
        v.exact_outage.push(exact.outage);
        v.exact_throughput.push(exact.throughput);
        v.formula_outage.push(formula);
        if trials >= 2 {
            let policy = waterfill(&d, s, g_c)?;
            let r = monte_carlo(&cfg, &d, &policy, &SimOptions::new(trials, seed).workers(1))?;
            v.sim_outage.push(r.outage_mean);
            v.sim_stderr.push(r.outage_stderr);
            v.sim_throughput.push(r.throughput_min_mean);
        } else {
            v.sim_outage.push(f64::NAN);
            v.sim_stderr.push(f64::NAN);
            v.sim_throughput.push(f64::NAN);
        }
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn tradeoff(
    gamma: f64,
    q: f64,
    m: usize,
    n: usize,
    s: u32,
    k: u32,
    trials: usize,
    seed: u64,
) -> Result<TradeoffView, JsError> {
    tradeoff_curve(gamma, q, m, n, s, k, trials, seed).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn popularity_sums_to_one() {
        let p = popularity_curve(0.8, 5.0, 200).unwrap();
        assert_eq!(p.len(), 200);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(popularity_curve(-1.0, 0.0, 10).is_err());
    }

    #[test]
    fn policy_hand_example() {
        let v = policy_view(1.0, 0.0, 3, 1, 3).unwrap();
        assert_eq!(v.m_star, 2);
        assert!((v.hit - 7.0 / 11.0).abs() < 1e-12);
        assert!((v.probs[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(policy_view(1.0, 0.0, 3, 1, 2).is_err());
    }

    #[test]
    fn counts_tile_the_grid() {
        assert_eq!(tiling_counts(10_000, 3), vec![1, 4, 16, 25, 100, 400, 625, 2500]);
        assert_eq!(tiling_counts(16, 2), vec![1, 4]);
    }

    #[test]
    fn tradeoff_arrays_line_up() {
        let v = tradeoff_curve(0.6, 20.0, 1000, 10_000, 1, 4, 4, 7).unwrap();
        let n = v.g_c.len();
        assert_eq!(n, 8);
        for arr in [&v.exact_outage, &v.exact_throughput, &v.formula_outage, &v.sim_outage, &v.sim_stderr] {
            assert_eq!(arr.len(), n);
        }
        assert!(v.sim_outage.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(v.exact_outage.windows(2).all(|w| w[0] <= w[1]));

        let quick = tradeoff_curve(0.6, 20.0, 1000, 10_000, 1, 4, 0, 7).unwrap();
        assert!(quick.sim_outage.iter().all(|x| x.is_nan()));
        assert_eq!(quick.exact_outage, v.exact_outage);
    }
}
