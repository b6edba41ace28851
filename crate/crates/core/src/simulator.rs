//! Monte Carlo simulation of the clustered grid D2D network.
//!
//! `N` users sit on a `√N × √N` grid that is tiled into equal square
//! clusters. Inside a cluster any two devices communicate at the constant
//! rate `C`; across clusters they do not communicate at all. Clusters are
//! colored with `K` colors (TDMA reuse), and within an active cluster one
//! potential link is served at a time, round robin.
//!
//! Each trial draws `S` cache entries per user (i.i.d. from the caching
//! distribution, with replacement) and one request per user from the
//! popularity law, then counts the users whose request is held by another
//! device of their cluster.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{exact_sum_point, formula_points, PointSource, RegimeParams, TradeoffPoint};
use crate::caching::{waterfill, CachingPolicy};
use crate::popularity::{MZipfDist, RankSampler};
use crate::{Error, Result};

fn exact_sqrt(x: usize) -> Option<usize> {
    let r = (x as f64).sqrt().round() as usize;
    (r * r == x).then_some(r)
}

/// Grid network parameters. Construction validates the tiling.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    n: usize,
    n_clusters: usize,
    s: u32,
    k: u32,
    c_rate: f64,
    include_self_cache: bool,
    members: Vec<Vec<u32>>,
}

impl NetworkConfig {
    pub fn new(n: usize, n_clusters: usize, s: u32, k: u32, c_rate: f64) -> Result<Self> {
        let side = exact_sqrt(n)
            .filter(|&s| s > 0)
            .ok_or_else(|| Error::config(format!("user count {n} is not a positive perfect square")))?;
        let tiles = exact_sqrt(n_clusters)
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::config(format!("cluster count {n_clusters} is not a positive perfect square")))?;
        if n % n_clusters != 0 || side % tiles != 0 {
            return Err(Error::config(format!(
                "cluster count {n_clusters} does not divide user count {n}"
            )));
        }
        let g_c = n / n_clusters;
        if g_c < 2 {
            return Err(Error::config(format!("cluster size {g_c} is below 2")));
        }
        if s == 0 || (s as usize) * (g_c - 1) < 2 {
            return Err(Error::config(format!(
                "cluster too small for policy exponent: S(g_c-1) = {} < 2",
                s as usize * (g_c - 1)
            )));
        }
        if k == 0 {
            return Err(Error::config("reuse factor must be at least 1"));
        }
        if !(c_rate > 0.0 && c_rate.is_finite()) {
            return Err(Error::config(format!("link rate must be positive, got {c_rate}")));
        }

        let tile = side / tiles;
        let mut members = vec![Vec::with_capacity(g_c); n_clusters];
        for u in 0..n {
            let (row, col) = (u / side, u % side);
            members[(row / tile) * tiles + col / tile].push(u as u32);
        }
        Ok(NetworkConfig { n, n_clusters, s, k, c_rate, include_self_cache: false, members })
    }

    /// Counts a user's own cache as a hit source (off by default, matching the
    /// `S(g_c − 1)` exponent of the analysis).
    pub fn with_self_cache(mut self, include: bool) -> Self {
        self.include_self_cache = include;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn c_rate(&self) -> f64 {
        self.c_rate
    }

    pub fn include_self_cache(&self) -> bool {
        self.include_self_cache
    }

    /// Users per cluster.
    pub fn g_c(&self) -> usize {
        self.n / self.n_clusters
    }

    /// Cluster index of `user` under the grid tiling.
    pub fn cluster_of(&self, user: usize) -> usize {
        let side = exact_sqrt(self.n).unwrap();
        let tiles = exact_sqrt(self.n_clusters).unwrap();
        let tile = side / tiles;
        (user / side / tile) * tiles + (user % side) / tile
    }

    pub fn members(&self, cluster: usize) -> &[u32] {
        &self.members[cluster]
    }
}

/// One draw of caches and requests with the resulting potential links.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    /// `caches[u·S .. (u+1)·S]` holds user `u`'s cached ranks (1-based).
    pub caches: Vec<u32>,
    /// Requested rank per user (1-based).
    pub requests: Vec<u32>,
    /// Whether each user has a potential link.
    pub linked: Vec<bool>,
    /// Number of users with a potential link, per cluster.
    pub potential_links: Vec<u32>,
    pub good_clusters: usize,
}

impl Realization {
    /// Resolves potential links for given caches (`S` ranks per user, flat)
    /// and requests. Ranks are 1-based and at most `library`.
    pub fn resolve(config: &NetworkConfig, library: usize, caches: Vec<u32>, requests: Vec<u32>) -> Self {
        let s = config.s as usize;
        assert_eq!(caches.len(), config.n * s, "caches must hold S entries per user");
        assert_eq!(requests.len(), config.n, "one request per user");

        // holders[f] = number of cluster members with f in their cache.
        let mut holders = vec![0u32; library + 1];
        let mut linked = vec![false; config.n];
        let mut potential_links = vec![0u32; config.n_clusters];
        let mut good_clusters = 0;
        for (c, members) in config.members.iter().enumerate() {
            for &u in members {
                let cache = &caches[u as usize * s..(u as usize + 1) * s];
                for (i, &f) in cache.iter().enumerate() {
                    if !cache[..i].contains(&f) {
                        holders[f as usize] += 1;
                    }
                }
            }
            let mut links = 0;
            for &u in members {
                let u = u as usize;
                let want = requests[u];
                let own = caches[u * s..(u + 1) * s].contains(&want);
                let others = holders[want as usize] - own as u32;
                let hit = others > 0 || (config.include_self_cache && own);
                linked[u] = hit;
                links += hit as u32;
            }
            potential_links[c] = links;
            good_clusters += (links > 0) as usize;
            for &u in members {
                for &f in &caches[u as usize * s..(u as usize + 1) * s] {
                    holders[f as usize] = 0;
                }
            }
        }
        Realization { caches, requests, linked, potential_links, good_clusters }
    }

    pub fn cache_of(&self, user: usize, s: u32) -> &[u32] {
        let s = s as usize;
        &self.caches[user * s..(user + 1) * s]
    }

    pub fn users_in_outage(&self) -> usize {
        self.linked.iter().filter(|&&l| !l).count()
    }
}

/// Throughput bookkeeping for one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    /// `C · (good clusters) / K`.
    pub t_sum: f64,
    /// `t_sum / N`.
    pub t_min: f64,
    pub outage_fraction: f64,
}

pub fn throughput_accounting(r: &Realization, config: &NetworkConfig) -> Accounting {
    let t_sum = config.c_rate * r.good_clusters as f64 / config.k as f64;
    Accounting {
        t_sum,
        t_min: t_sum / config.n as f64,
        outage_fraction: r.users_in_outage() as f64 / config.n as f64,
    }
}

/// Long-run share of each user: `C/(K·L)` for a linked user in a cluster with
/// `L` potential links, zero otherwise.
pub fn per_user_throughput(r: &Realization, config: &NetworkConfig) -> Vec<f64> {
    let share = config.c_rate / config.k as f64;
    let mut out = vec![0.0; config.n];
    for (c, members) in config.members.iter().enumerate() {
        let links = r.potential_links[c];
        if links == 0 {
            continue;
        }
        let each = share / links as f64;
        for &u in members {
            if r.linked[u as usize] {
                out[u as usize] = each;
            }
        }
    }
    out
}

/// Checks that per-user shares add up to `C · (good clusters)/K`.
pub fn accounting_identity_holds(r: &Realization, config: &NetworkConfig) -> bool {
    let t_sum = throughput_accounting(r, config).t_sum;
    let per_user: f64 = per_user_throughput(r, config).iter().sum();
    (per_user - t_sum).abs() <= 1e-9 * t_sum.max(1.0)
}

/// A network, a popularity law and a caching policy, with samplers built once.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    config: &'a NetworkConfig,
    library: usize,
    requests: RankSampler,
    caching: RankSampler,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &'a NetworkConfig, dist: &MZipfDist, policy: &CachingPolicy) -> Result<Self> {
        if policy.probs().len() != dist.m() {
            return Err(Error::Dimension { expected: dist.m(), actual: policy.probs().len() });
        }
        if policy.slots() != config.s || policy.cluster_size() != config.g_c() {
            return Err(Error::config(format!(
                "policy built for S={}, g_c={} but network has S={}, g_c={}",
                policy.slots(),
                policy.cluster_size(),
                config.s,
                config.g_c()
            )));
        }
        Ok(Simulation {
            config,
            library: dist.m(),
            requests: dist.sampler(),
            caching: RankSampler::from_weights(policy.probs())?,
        })
    }

    /// Draws `S` cache entries then one request for each user in index
    /// order, and resolves potential links cluster by cluster.
    pub fn realize<R: Rng + ?Sized>(&self, rng: &mut R) -> Realization {
        let cfg = self.config;
        let s = cfg.s as usize;
        let mut caches = Vec::with_capacity(cfg.n * s);
        let mut requests = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            for _ in 0..s {
                caches.push(self.caching.sample_rank(rng) as u32);
            }
            requests.push(self.requests.sample_rank(rng) as u32);
        }

        Realization::resolve(cfg, self.library, caches, requests)
    }

    pub fn run(&self, options: &SimOptions) -> Result<SimResult> {
        if options.trials < 2 {
            return Err(Error::domain("Monte Carlo needs at least 2 trials"));
        }
        let run_trial = |trial: usize| {
            let mut rng = trial_rng(options.seed, trial as u64);
            let r = self.realize(&mut rng);
            let acc = throughput_accounting(&r, self.config);
            let identity = accounting_identity_holds(&r, self.config);
            let per_user = options.track_per_user.then(|| per_user_throughput(&r, self.config));
            TrialOutcome { outage: acc.outage_fraction, t_min: acc.t_min, identity, per_user }
        };
        let outcomes: Vec<TrialOutcome> = if options.workers == 1 {
            (0..options.trials).map(run_trial).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(options.workers)
                .build()
                .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
            pool.install(|| (0..options.trials).into_par_iter().map(run_trial).collect())
        };
        Ok(aggregate(&outcomes, options))
    }
}

/// Per-trial generator: the ChaCha stream `trial` under key `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

struct TrialOutcome {
    outage: f64,
    t_min: f64,
    identity: bool,
    per_user: Option<Vec<f64>>,
}

fn mean_and_stderr(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = xs.clone().sum::<f64>() / nf;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

fn aggregate(outcomes: &[TrialOutcome], options: &SimOptions) -> SimResult {
    let n = outcomes.len();
    let (outage_mean, outage_stderr) = mean_and_stderr(outcomes.iter().map(|o| o.outage), n);
    let (throughput_min_mean, throughput_min_stderr) = mean_and_stderr(outcomes.iter().map(|o| o.t_min), n);
    let per_user_throughput = if options.track_per_user {
        let users = outcomes[0].per_user.as_ref().map_or(0, Vec::len);
        let mut acc = vec![0.0; users];
        for o in outcomes {
            for (a, x) in acc.iter_mut().zip(o.per_user.as_deref().unwrap_or(&[])) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        acc
    } else {
        Vec::new()
    };
    SimResult {
        outage_mean,
        outage_stderr,
        throughput_min_mean,
        throughput_min_stderr,
        trials: n,
        seed: options.seed,
        accounting_failures: outcomes.iter().filter(|o| !o.identity).count(),
        per_user_throughput,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; results do not depend on this value.
    pub workers: usize,
    /// Keep the trial-averaged throughput of every user.
    pub track_per_user: bool,
}

impl SimOptions {
    pub fn new(trials: usize, seed: u64) -> Self {
        SimOptions { trials, seed, workers: 0, track_per_user: false }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn track_per_user(mut self, on: bool) -> Self {
        self.track_per_user = on;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub outage_mean: f64,
    pub outage_stderr: f64,
    /// Mean of `t_min` over trials, in units of the link rate.
    pub throughput_min_mean: f64,
    pub throughput_min_stderr: f64,
    pub trials: usize,
    pub seed: u64,
    /// Realizations where per-user shares did not add up to the cluster total.
    pub accounting_failures: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_user_throughput: Vec<f64>,
}

pub fn realize<R: Rng + ?Sized>(
    config: &NetworkConfig,
    dist: &MZipfDist,
    policy: &CachingPolicy,
    rng: &mut R,
) -> Result<Realization> {
    Ok(Simulation::new(config, dist, policy)?.realize(rng))
}

pub fn monte_carlo(
    config: &NetworkConfig,
    dist: &MZipfDist,
    policy: &CachingPolicy,
    options: &SimOptions,
) -> Result<SimResult> {
    Simulation::new(config, dist, policy)?.run(options)
}

/// Network parameters shared by every point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepBase {
    pub n: usize,
    pub s: u32,
    pub k: u32,
    pub c_rate: f64,
    pub include_self_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    /// For every valid cluster count: the simulated point, the exact-sum
    /// point, then the applicable formula points.
    pub points: Vec<TradeoffPoint>,
    /// Cluster counts that were not run, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub accounting_failures: usize,
}

impl SweepOutcome {
    pub fn points_for(&self, n_clusters: usize) -> impl Iterator<Item = &TradeoffPoint> {
        self.points.iter().filter(move |p| p.n_clusters == Some(n_clusters))
    }

    pub fn point(&self, n_clusters: usize, source: PointSource) -> Option<&TradeoffPoint> {
        self.points_for(n_clusters).find(|p| p.source == source)
    }
}

/// Runs [`monte_carlo`] at each cluster count with a freshly water-filled
/// policy and overlays the exact-sum and formula points.
pub fn sweep(
    base: &SweepBase,
    dist: &MZipfDist,
    cluster_counts: &[usize],
    options: &SimOptions,
) -> Result<SweepOutcome> {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    let mut accounting_failures = 0;
    for &count in cluster_counts {
        let config = match NetworkConfig::new(base.n, count, base.s, base.k, base.c_rate) {
            Ok(c) => c.with_self_cache(base.include_self_cache),
            Err(e) => {
                skipped.push((count, e.to_string()));
                continue;
            }
        };
        let g_c = config.g_c();
        let policy = waterfill(dist, base.s, g_c)?;
        let sim = monte_carlo(&config, dist, &policy, options)?;
        accounting_failures += sim.accounting_failures;

        let mut here = vec![TradeoffPoint {
            outage: sim.outage_mean,
            throughput: sim.throughput_min_mean,
            g_c: g_c as f64,
            source: PointSource::Simulated,
            n_clusters: None,
            outage_stderr: Some(sim.outage_stderr),
            throughput_stderr: Some(sim.throughput_min_stderr),
            clamped: false,
        }];
        here.push(exact_sum_point(dist, base.s, g_c, base.k, base.c_rate)?);
        let params = RegimeParams::new(dist.gamma(), dist.q(), dist.m(), base.s, g_c as f64, base.k, base.c_rate)?;
        here.extend(formula_points(&params));
        for p in &mut here {
            p.n_clusters = Some(count);
        }
        points.extend(here);
    }
    Ok(SweepOutcome { points, skipped, accounting_failures })
}

/// Writes `n_clusters,g_c,outage,outage_stderr,throughput,throughput_stderr,source`
/// rows; missing values are left empty.
pub fn write_sweep_csv<W: Write>(mut w: W, points: &[TradeoffPoint]) -> Result<()> {
    fn opt<T: ToString>(v: Option<T>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }
    writeln!(w, "n_clusters,g_c,outage,outage_stderr,throughput,throughput_stderr,source")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            opt(p.n_clusters),
            p.g_c,
            p.outage,
            opt(p.outage_stderr),
            p.throughput,
            opt(p.throughput_stderr),
            p.source
        )?;
    }
    Ok(())
}
