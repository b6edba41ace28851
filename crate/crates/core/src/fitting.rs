//! Access-log ingestion, unique-access popularity and MZipf fitting by
//! KL-distance minimization.
//!
//! A log is a CSV with header `user_id,content_id[,timestamp]`. Every
//! `(user, content)` pair counts once no matter how often it repeats, so the
//! popularity of a file is the number of distinct users who accessed it.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::popularity::MZipfDist;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessRecord {
    pub user_id: String,
    pub content_id: String,
    /// Seconds; carried through for filtering, ignored by the fit.
    pub timestamp: Option<i64>,
}

impl AccessRecord {
    pub fn new(user_id: impl Into<String>, content_id: impl Into<String>) -> Self {
        AccessRecord { user_id: user_id.into(), content_id: content_id.into(), timestamp: None }
    }

    pub fn with_timestamp(mut self, t: i64) -> Self {
        self.timestamp = Some(t);
        self
    }

    fn validate(&self) -> std::result::Result<(), &'static str> {
        if self.user_id.is_empty() {
            return Err("empty user_id");
        }
        if self.content_id.is_empty() {
            return Err("empty content_id");
        }
        Ok(())
    }
}

/// A log line that could not be turned into an [`AccessRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// 1-based line number in the source (0 when unknown).
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

pub type RecordResult = std::result::Result<AccessRecord, RecordError>;

/// Parses an access log. A bad header is a hard error; bad rows are
/// returned in place as [`RecordError`]s so the caller can keep going.
pub fn read_access_log<R: Read>(reader: R) -> Result<Vec<RecordResult>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let with_ts = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["user_id", "content_id"] => false,
        ["user_id", "content_id", "timestamp"] => true,
        _ => {
            return Err(Error::config(format!(
                "expected header user_id,content_id[,timestamp], got {}",
                header.join(",")
            )))
        }
    };

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                if e.is_io_error() {
                    return Err(e.into());
                }
                out.push(Err(RecordError { line, message: e.to_string() }));
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        out.push(parse_row(&row, with_ts).map_err(|message| RecordError { line, message }));
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord, with_ts: bool) -> std::result::Result<AccessRecord, String> {
    let width = if with_ts { 3 } else { 2 };
    if row.len() != width && !(with_ts && row.len() == 2) {
        return Err(format!("expected {width} fields, got {}", row.len()));
    }
    let timestamp = match row.get(2) {
        Some("") | None => None,
        Some(t) => Some(t.parse::<i64>().map_err(|_| format!("bad timestamp {t:?}"))?),
    };
    let rec = AccessRecord { user_id: row[0].to_owned(), content_id: row[1].to_owned(), timestamp };
    rec.validate()?;
    Ok(rec)
}

/// Writes records back out in the same CSV layout `read_access_log` accepts.
pub fn write_access_log<'a, W, I>(w: W, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a AccessRecord>,
{
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["user_id", "content_id", "timestamp"])?;
    for r in records {
        let ts = r.timestamp.map(|t| t.to_string()).unwrap_or_default();
        wtr.write_record([r.user_id.as_str(), r.content_id.as_str(), ts.as_str()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Ranked unique-access counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalPopularity {
    counts: Vec<u64>,
    total: u64,
    distinct_users: u64,
}

impl EmpiricalPopularity {
    /// Counts must be positive and non-increasing.
    pub fn from_counts(counts: Vec<u64>, distinct_users: u64) -> Result<Self> {
        if counts.contains(&0) {
            return Err(Error::domain("unique-access counts must be positive"));
        }
        if counts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::domain("counts must be sorted non-increasing"));
        }
        let total = counts.iter().sum();
        Ok(EmpiricalPopularity { counts, total, distinct_users })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct_users(&self) -> u64 {
        self.distinct_users
    }

    /// Number of distinct files `M`.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// `rank,count,probability`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rank,count,probability")?;
        for (i, (c, p)) in self.counts.iter().zip(self.probabilities()).enumerate() {
            writeln!(w, "{},{},{}", i + 1, c, p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DedupeOutcome {
    pub popularity: EmpiricalPopularity,
    /// Content ids in rank order.
    pub content_order: Vec<String>,
    pub errors: Vec<RecordError>,
}

/// Collapses repeated `(user, content)` pairs and ranks files by the number
/// of distinct users, count descending, ties in first-seen order.
pub fn dedupe_accesses<I>(records: I) -> DedupeOutcome
where
    I: IntoIterator<Item = RecordResult>,
{
    let mut users: HashMap<String, u32> = HashMap::new();
    let mut contents: HashMap<String, u32> = HashMap::new();
    let mut content_ids: Vec<String> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let mut errors = Vec::new();

    for rec in records {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        if let Err(msg) = rec.validate() {
            errors.push(RecordError { line: 0, message: msg.to_string() });
            continue;
        }
        let next_user = users.len() as u32;
        let u = *users.entry(rec.user_id).or_insert(next_user);
        let c = match contents.get(&rec.content_id) {
            Some(&c) => c,
            None => {
                let c = content_ids.len() as u32;
                contents.insert(rec.content_id.clone(), c);
                content_ids.push(rec.content_id);
                counts.push(0);
                c
            }
        };
        if seen.insert((u, c)) {
            counts[c as usize] += 1;
        }
    }

    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
    let ranked: Vec<u64> = order.iter().map(|&i| counts[i]).collect();
    let content_order = order.iter().map(|&i| std::mem::take(&mut content_ids[i])).collect();
    let popularity = EmpiricalPopularity::from_counts(ranked, users.len() as u64)
        .expect("ranked counts are positive and sorted");
    DedupeOutcome { popularity, content_order, errors }
}

/// `Σ_r p_data(r)·ln(p_data(r)/p_model(r))`, rank matched to rank.
pub fn kl_divergence(data: &EmpiricalPopularity, model: &MZipfDist) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("no unique accesses"));
    }
    if model.m() != data.len() {
        return Err(Error::Dimension { expected: data.len(), actual: model.m() });
    }
    let kl: f64 = data
        .probabilities()
        .iter()
        .zip(model.probabilities())
        .map(|(&pd, pm)| pd * (pd / pm).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Search box and effort for [`fit_mzipf`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSearch {
    pub gamma_range: (f64, f64),
    /// `None` means `[0, M]`.
    pub q_range: Option<(f64, f64)>,
    pub coarse_steps: usize,
    pub refine_iters: usize,
    /// First positive `q` cell when the range starts at 0.
    pub q_min_positive: f64,
}

impl Default for FitSearch {
    fn default() -> Self {
        FitSearch {
            gamma_range: (0.1, 3.0),
            q_range: None,
            coarse_steps: 50,
            refine_iters: 6,
            q_min_positive: 0.1,
        }
    }
}

/// Points per axis in one refinement round.
const REFINE_POINTS: usize = 11;
const REFINE_SHRINK: f64 = 5.0;
const MAX_RECENTER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub gamma: f64,
    pub q: f64,
    pub m: usize,
    pub kl: f64,
    pub evaluations: u64,
}

/// Continuous parametrization of the `q` axis: linear on `[0, 1]` from the
/// lower bound to the first positive cell, geometric after that.
#[derive(Debug, Clone, Copy)]
struct QAxis {
    lo: f64,
    first: f64,
    hi: f64,
    cells: usize,
}

impl QAxis {
    fn new(lo: f64, hi: f64, cells: usize, min_positive: f64) -> Self {
        let first = if lo > 0.0 { lo } else { min_positive.min(hi) };
        QAxis { lo, first, hi, cells }
    }

    fn max_u(&self) -> f64 {
        (self.cells - 1) as f64
    }

    fn q(&self, u: f64) -> f64 {
        if self.cells < 2 {
            return self.lo;
        }
        let geo_start = if self.lo > 0.0 { 0.0 } else { 1.0 };
        if u <= geo_start {
            return self.lo + (self.first - self.lo) * u;
        }
        let span = self.max_u() - geo_start;
        if span <= 0.0 {
            return self.hi;
        }
        let t = (u - geo_start) / span;
        (self.first * (self.hi / self.first).powf(t)).min(self.hi)
    }
}

struct KlEvaluator {
    probs: Vec<f64>,
    neg_entropy: f64,
}

impl KlEvaluator {
    fn new(data: &EmpiricalPopularity) -> Self {
        let probs = data.probabilities();
        let neg_entropy = probs.iter().map(|&p| p * p.ln()).sum();
        KlEvaluator { probs, neg_entropy }
    }

    /// `Σ p ln p + γ Σ p ln(r+q) + ln H(γ,q,1,M)`.
    fn kl(&self, gamma: f64, q: f64) -> f64 {
        let mut cross = 0.0;
        let mut h = 0.0;
        for (i, &p) in self.probs.iter().enumerate().rev() {
            let l = ((i + 1) as f64 + q).ln();
            cross += p * l;
            h += (-gamma * l).exp();
        }
        self.neg_entropy + gamma * cross + h.ln()
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    kl: f64,
    gamma: f64,
    u: f64,
}

/// Lowest KL, ties to lowest γ then lowest q.
fn better(a: Cell, b: Cell) -> Cell {
    let ord = a
        .kl
        .total_cmp(&b.kl)
        .then(a.gamma.total_cmp(&b.gamma))
        .then(a.u.total_cmp(&b.u));
    if ord.is_le() {
        a
    } else {
        b
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> + Clone {
    (0..n).map(move |i| match i {
        0 => lo,
        _ if i + 1 == n => hi,
        _ => lo + (hi - lo) * i as f64 / (n - 1) as f64,
    })
}

/// Fits `(γ, q)` with `M` fixed to the number of distinct files.
pub fn fit_mzipf(data: &EmpiricalPopularity, search: &FitSearch) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::domain("no unique accesses"));
    }
    let m = data.len();
    let (g_lo, g_hi) = search.gamma_range;
    let (q_lo, q_hi) = search.q_range.unwrap_or((0.0, m as f64));
    if !(g_lo > 0.0 && g_hi > g_lo && g_hi <= 5.0) {
        return Err(Error::domain(format!("bad gamma range ({g_lo}, {g_hi})")));
    }
    if !(q_lo >= 0.0 && q_hi > q_lo && q_hi <= m as f64) {
        return Err(Error::domain(format!("bad q range ({q_lo}, {q_hi}) for M = {m}")));
    }
    if search.coarse_steps < 2 {
        return Err(Error::domain("coarse grid needs at least 2 steps per axis"));
    }
    if !(search.q_min_positive > 0.0) {
        return Err(Error::domain("smallest positive q cell must be positive"));
    }

    let axis = QAxis::new(q_lo, q_hi, search.coarse_steps, search.q_min_positive);
    let eval = KlEvaluator::new(data);
    let n = search.coarse_steps;
    let cell = |gamma: f64, u: f64| Cell { kl: eval.kl(gamma, axis.q(u)), gamma, u };

    let coarse: Vec<(f64, f64)> = linspace(g_lo, g_hi, n)
        .flat_map(|g| (0..n).map(move |j| (g, j as f64)))
        .collect();
    let mut evaluations = coarse.len() as u64;
    let mut best = coarse
        .par_iter()
        .map(|&(g, u)| cell(g, u))
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(better)
        .expect("grid is nonempty");

    let mut hg = (g_hi - g_lo) / (n - 1) as f64;
    let mut hu = 1.0;
    for _ in 0..search.refine_iters {
        // Slide the window along the valley until the minimum is interior.
        for _ in 0..MAX_RECENTER {
            let (glo, ghi) = ((best.gamma - hg).max(g_lo), (best.gamma + hg).min(g_hi));
            let (ulo, uhi) = ((best.u - hu).max(0.0), (best.u + hu).min(axis.max_u()));
            let local: Vec<(f64, f64)> = linspace(glo, ghi, REFINE_POINTS)
                .flat_map(|g| linspace(ulo, uhi, REFINE_POINTS).map(move |u| (g, u)))
                .collect();
            evaluations += local.len() as u64;
            best = local
                .par_iter()
                .map(|&(g, u)| cell(g, u))
                .collect::<Vec<_>>()
                .into_iter()
                .fold(best, better);
            let on_edge = (best.gamma == glo && glo > g_lo)
                || (best.gamma == ghi && ghi < g_hi)
                || (best.u == ulo && ulo > 0.0)
                || (best.u == uhi && uhi < axis.max_u());
            if !on_edge {
                break;
            }
        }
        hg /= REFINE_SHRINK;
        hu /= REFINE_SHRINK;
    }

    let q = axis.q(best.u);
    let kl = kl_divergence(data, &MZipfDist::new(best.gamma, q, m)?)?;
    Ok(FitResult { gamma: best.gamma, q, m, kl, evaluations })
}

/// Coarse grid used by [`fit_mzipf`], as `(γ, q)` pairs in row-major order.
pub fn coarse_grid(m: usize, search: &FitSearch) -> Vec<(f64, f64)> {
    let (q_lo, q_hi) = search.q_range.unwrap_or((0.0, m as f64));
    let axis = QAxis::new(q_lo, q_hi, search.coarse_steps, search.q_min_positive);
    let (g_lo, g_hi) = search.gamma_range;
    linspace(g_lo, g_hi, search.coarse_steps)
        .flat_map(|g| (0..search.coarse_steps).map(move |j| (g, axis.q(j as f64))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleFit {
    pub n: usize,
    pub gamma: f64,
    pub q: f64,
    pub distinct_files: usize,
}

/// For each `n`, keeps the records of `n` users drawn without replacement
/// and refits.
pub fn subsample_study(
    records: &[AccessRecord],
    n_values: &[usize],
    seed: u64,
    search: &FitSearch,
) -> Result<Vec<SubsampleFit>> {
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut record_user = Vec::with_capacity(records.len());
    for r in records {
        let next = user_index.len();
        record_user.push(*user_index.entry(r.user_id.as_str()).or_insert(next));
    }
    let n_users = user_index.len();
    let too_big: Vec<String> = n_values.iter().filter(|&&n| n > n_users).map(|n| n.to_string()).collect();
    if !too_big.is_empty() {
        return Err(Error::domain(format!(
            "subsample sizes exceed the {n_users} users in the log: {}",
            too_big.join(", ")
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut keep = vec![false; n_users];
        for u in index::sample(&mut rng, n_users, n) {
            keep[u] = true;
        }
        let subset = records
            .iter()
            .zip(&record_user)
            .filter(|(_, &u)| keep[u])
            .map(|(r, _)| Ok(r.clone()));
        let pop = dedupe_accesses(subset).popularity;
        let fit = fit_mzipf(&pop, search)?;
        out.push(SubsampleFit { n, gamma: fit.gamma, q: fit.q, distinct_files: pop.len() });
    }
    Ok(out)
}

/// Generator for logs whose unique accesses follow a known MZipf law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLog {
    pub users: usize,
    pub requests_per_user: usize,
    /// Fraction of extra records that repeat an earlier `(user, content)` pair.
    pub duplicate_fraction: f64,
    pub seed: u64,
}

impl SyntheticLog {
    /// Users are `u{i}`, files `f{rank}`. Each user draws its requests from
    /// `dist`; repeats are then injected at random positions.
    pub fn generate(&self, dist: &MZipfDist) -> Result<Vec<AccessRecord>> {
        if !(0.0..1.0).contains(&self.duplicate_fraction) {
            return Err(Error::domain("duplicate fraction must be in [0, 1)"));
        }
        let sampler = dist.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let base = self.users * self.requests_per_user;
        let mut out = Vec::with_capacity(base);
        let mut ts = 0i64;
        for u in 0..self.users {
            for _ in 0..self.requests_per_user {
                let f = sampler.sample_rank(&mut rng);
                out.push(AccessRecord::new(format!("u{u}"), format!("f{f}")).with_timestamp(ts));
                ts += 1;
            }
        }
        let dups = (base as f64 * self.duplicate_fraction / (1.0 - self.duplicate_fraction)).round() as usize;
        if base == 0 || dups == 0 {
            return Ok(out);
        }
        // Each repeat lands somewhere after its original.
        let mut keyed: Vec<(usize, usize, usize)> = (0..base).map(|i| (i, 0, i)).collect();
        for k in 0..dups {
            let src = rng.gen_range(0..base);
            let at = rng.gen_range(src..base);
            keyed.push((at, k + 1, src));
        }
        keyed.sort_unstable();
        let out = keyed.into_iter().map(|(_, _, src)| out[src].clone()).collect();
        Ok(out)
    }
}
