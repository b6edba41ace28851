mod scenario;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d2dcache::asymptotics::{classify_regime, exact_sum_point, formula_points, PointSource, RegimeParams};
use d2dcache::caching::{asymptotic_constants, waterfill};
use d2dcache::fitting::{dedupe_accesses, fit_mzipf, read_access_log, write_access_log, FitSearch, SyntheticLog};
use d2dcache::popularity::MZipfDist;
use d2dcache::simulator::{monte_carlo, sweep, write_sweep_csv, NetworkConfig, SimOptions, SweepBase};
use serde_json::json;

use scenario::{short_hash, Scenario};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invariant(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl From<d2dcache::Error> for CliError {
    fn from(e: d2dcache::Error) -> Self {
        match &e {
            d2dcache::Error::Io(_) => CliError::Io(e.to_string()),
            d2dcache::Error::Csv(c) if c.is_io_error() => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "d2dcache", version, about = "Caching and throughput-outage analysis for clustered D2D networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct MonteCarlo {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (0 = all cores). Does not change results.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Fit MZipf parameters to an access log.
    Fit {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        gamma_min: f64,
        #[arg(long, default_value_t = 3.0)]
        gamma_max: f64,
        /// Upper end of the q search range (default: number of files).
        #[arg(long)]
        q_max: Option<f64>,
        #[arg(long, default_value_t = 50)]
        coarse_steps: usize,
        #[arg(long, default_value_t = 6)]
        refine_iters: usize,
        /// Keep only records with timestamp >= this.
        #[arg(long)]
        since: Option<i64>,
        /// Keep only records with timestamp < this.
        #[arg(long)]
        until: Option<i64>,
    },
    /// Water-filling policy and scaling constants for one cluster size.
    Policy {
        #[command(flatten)]
        common: Common,
    },
    /// Theory and exact-sum curves over the scenario's cluster counts.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo estimate at one cluster count.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: MonteCarlo,
        /// Also write trial-averaged per-user throughput.
        #[arg(long)]
        per_user: bool,
    },
    /// Full tradeoff sweep: simulation, exact sums and formulas.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: MonteCarlo,
    },
    /// Write a synthetic access log drawn from an MZipf law.
    Synth {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        users: usize,
        #[arg(long, default_value_t = 1)]
        requests_per_user: usize,
        #[arg(long, default_value_t = 0.0)]
        duplicate_fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn meta_line(hash: &str, seed: Option<u64>) -> String {
    let seed = seed.map_or("none".to_string(), |s| s.to_string());
    format!("# tool-version={TOOL_VERSION}, scenario-hash={hash}, seed={seed}")
}

fn meta_json(hash: &str, seed: Option<u64>) -> serde_json::Value {
    json!({ "tool_version": TOOL_VERSION, "scenario_hash": hash, "seed": seed })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| io_err(&path, e))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(&dir.join(name), e))
}

/// Opens a CSV output and writes the metadata line.
fn csv_out(dir: &Path, name: &str, meta: &str) -> Result<BufWriter<File>, CliError> {
    let mut w = create(dir, name)?;
    writeln!(w, "{meta}").map_err(|e| io_err(&dir.join(name), e))?;
    Ok(w)
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| io_err(path, e))
}

fn network(sc: &Scenario, n_clusters: usize) -> Result<NetworkConfig, CliError> {
    let f = &sc.file;
    Ok(NetworkConfig::new(f.n, n_clusters, f.s, f.k, f.c_rate)?.with_self_cache(f.include_self_cache))
}

fn cmd_fit(
    log: &Path,
    out: &Path,
    search: FitSearch,
    since: Option<i64>,
    until: Option<i64>,
) -> Result<(), CliError> {
    let bytes = fs::read(log).map_err(|e| io_err(log, e))?;
    let hash = short_hash(&bytes);
    let rows = read_access_log(BufReader::new(bytes.as_slice()))?;
    let in_range = |t: Option<i64>| match t {
        Some(t) => since.is_none_or(|s| t >= s) && until.is_none_or(|u| t < u),
        None => since.is_none() && until.is_none(),
    };
    let rows = rows.into_iter().filter(|r| r.as_ref().map_or(true, |r| in_range(r.timestamp)));
    let dd = dedupe_accesses(rows);
    if !dd.errors.is_empty() {
        eprintln!("warning: skipped {} malformed records", dd.errors.len());
        for e in dd.errors.iter().take(5) {
            eprintln!("  {e}");
        }
    }
    let pop = dd.popularity;
    if pop.len() == 1 {
        eprintln!("warning: only one distinct file; any (gamma, q) fits exactly and the result is degenerate");
    }
    let search = FitSearch {
        q_range: search.q_range.map(|(lo, hi)| (lo, hi.min(pop.len() as f64))),
        ..search
    };
    let fit = fit_mzipf(&pop, &search)?;

    let mut w = csv_out(out, "popularity.csv", &meta_line(&hash, None))?;
    pop.write_csv(&mut w)?;
    finish(w, &out.join("popularity.csv"))?;
    let mut doc = serde_json::to_value(&fit).expect("fit result serializes");
    doc["meta"] = meta_json(&hash, None);
    write_json(out, "fit.json", &doc)?;
    println!("gamma={:.4} q={:.3} M={} KL={:.3e}", fit.gamma, fit.q, fit.m, fit.kl);
    Ok(())
}

fn cmd_policy(common: &Common) -> Result<(), CliError> {
    let sc = Scenario::load(&common.scenario)?;
    let nc = sc.n_clusters()?;
    let cfg = network(&sc, nc)?;
    let (s, g_c) = (sc.file.s, cfg.g_c());
    let policy = waterfill(&sc.dist, s, g_c)?;
    let hit = policy.hit_probability(&sc.dist)?;
    let consts = asymptotic_constants(&sc.dist, s, g_c)?;

    let mut w = csv_out(&common.out, "policy.csv", &meta_line(&sc.hash, sc.file.seed))?;
    policy.write_csv(&mut w)?;
    finish(w, &common.out.join("policy.csv"))?;
    write_json(
        &common.out,
        "constants.json",
        &json!({
            "meta": meta_json(&sc.hash, sc.file.seed),
            "g_c": g_c,
            "nu": policy.nu(),
            "m_star": policy.m_star(),
            "exponent_denom": policy.exponent_denom(),
            "hit_probability": hit,
            "constants": consts,
            "m_star_over_asymptotic": policy.m_star() as f64 / consts.m_star_asym,
        }),
    )?;
    println!(
        "g_c={g_c} m*={} nu={:.6e} P_hit={hit:.6} c1={:.6} m*_asym={:.2}",
        policy.m_star(),
        policy.nu(),
        consts.c1,
        consts.m_star_asym
    );
    Ok(())
}

fn cmd_analyze(common: &Common) -> Result<(), CliError> {
    let sc = Scenario::load(&common.scenario)?;
    let f = &sc.file;
    let mut points = Vec::new();
    let mut regimes = Vec::new();
    for &nc in sc.cluster_counts()? {
        let cfg = match network(&sc, nc) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("skipping n_clusters={nc}: {e}");
                continue;
            }
        };
        let g_c = cfg.g_c();
        let mut here = vec![exact_sum_point(&sc.dist, f.s, g_c, f.k, f.c_rate)?];
        let p = RegimeParams::new(sc.dist.gamma(), sc.dist.q(), sc.dist.m(), f.s, g_c as f64, f.k, f.c_rate)?;
        here.extend(formula_points(&p));
        for pt in &mut here {
            pt.n_clusters = Some(nc);
        }
        points.extend(here);
        regimes.push(json!({ "n_clusters": nc, "g_c": g_c, "report": classify_regime(&p) }));
    }
    let mut w = csv_out(&common.out, "curves.csv", &meta_line(&sc.hash, f.seed))?;
    write_sweep_csv(&mut w, &points)?;
    finish(w, &common.out.join("curves.csv"))?;
    write_json(&common.out, "regimes.json", &json!({ "meta": meta_json(&sc.hash, f.seed), "points": regimes }))?;
    println!("{} curve points over {} cluster counts", points.len(), regimes.len());
    Ok(())
}

fn cmd_simulate(common: &Common, mc: &MonteCarlo, per_user: bool) -> Result<(), CliError> {
    let sc = Scenario::load(&common.scenario)?;
    let seed = sc.seed(mc.seed)?;
    let trials = sc.trials(mc.trials)?;
    let cfg = network(&sc, sc.n_clusters()?)?;
    let policy = waterfill(&sc.dist, sc.file.s, cfg.g_c())?;
    let exact = 1.0 - policy.hit_probability(&sc.dist)?;
    let opts = SimOptions::new(trials, seed).workers(mc.workers).track_per_user(per_user);
    let res = monte_carlo(&cfg, &sc.dist, &policy, &opts)?;

    if per_user {
        let mut w = csv_out(&common.out, "per_user.csv", &meta_line(&sc.hash, Some(seed)))?;
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "user,cluster,throughput")?;
            for (u, t) in res.per_user_throughput.iter().enumerate() {
                writeln!(w, "{u},{},{t}", cfg.cluster_of(u))?;
            }
            Ok(())
        };
        write(&mut w).map_err(|e| io_err(&common.out.join("per_user.csv"), e))?;
        finish(w, &common.out.join("per_user.csv"))?;
    }
    let mut summary = res.clone();
    summary.per_user_throughput.clear();
    write_json(
        &common.out,
        "simulate.json",
        &json!({
            "meta": meta_json(&sc.hash, Some(seed)),
            "g_c": cfg.g_c(),
            "n_clusters": cfg.n_clusters(),
            "exact_outage": exact,
            "result": summary,
        }),
    )?;
    println!(
        "g_c={} outage={:.5}±{:.5} (exact {exact:.5}) T_min={:.4e}",
        cfg.g_c(),
        res.outage_mean,
        res.outage_stderr,
        res.throughput_min_mean
    );
    if res.accounting_failures > 0 {
        return Err(CliError::Invariant(format!(
            "throughput accounting identity failed in {} realizations",
            res.accounting_failures
        )));
    }
    Ok(())
}

fn cmd_sweep(common: &Common, mc: &MonteCarlo) -> Result<(), CliError> {
    let sc = Scenario::load(&common.scenario)?;
    let seed = sc.seed(mc.seed)?;
    let trials = sc.trials(mc.trials)?;
    let f = &sc.file;
    let base = SweepBase { n: f.n, s: f.s, k: f.k, c_rate: f.c_rate, include_self_cache: f.include_self_cache };
    let opts = SimOptions::new(trials, seed).workers(mc.workers);
    let out = sweep(&base, &sc.dist, sc.cluster_counts()?, &opts)?;
    for (nc, why) in &out.skipped {
        eprintln!("skipped n_clusters={nc}: {why}");
    }

    let mut w = csv_out(&common.out, "sweep.csv", &meta_line(&sc.hash, Some(seed)))?;
    write_sweep_csv(&mut w, &out.points)?;
    finish(w, &common.out.join("sweep.csv"))?;

    let max_gap = f
        .cluster_counts
        .iter()
        .filter_map(|&nc| Some((out.point(nc, PointSource::Simulated)?, out.point(nc, PointSource::ExactSum)?)))
        .map(|(s, e)| (s.outage - e.outage).abs())
        .fold(0.0, f64::max);
    println!(
        "{} points, {} cluster counts skipped, max |simulated - exact| outage = {max_gap:.4}",
        out.points.len(),
        out.skipped.len()
    );
    if out.accounting_failures > 0 {
        return Err(CliError::Invariant(format!(
            "throughput accounting identity failed in {} realizations",
            out.accounting_failures
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    gamma: f64,
    q: f64,
    m: usize,
    users: usize,
    requests_per_user: usize,
    duplicate_fraction: f64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let dist = MZipfDist::new(gamma, q, m)?;
    let log = SyntheticLog { users, requests_per_user, duplicate_fraction, seed }.generate(&dist)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let file = File::create(out).map_err(|e| io_err(out, e))?;
    write_access_log(BufWriter::new(file), &log)?;
    println!("wrote {} records", log.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { log, out, gamma_min, gamma_max, q_max, coarse_steps, refine_iters, since, until } => {
            let search = FitSearch {
                gamma_range: (gamma_min, gamma_max),
                q_range: Some((0.0, q_max.unwrap_or(f64::INFINITY))),
                coarse_steps,
                refine_iters,
                ..FitSearch::default()
            };
            cmd_fit(&log, &out, search, since, until)
        }
        Command::Policy { common } => cmd_policy(&common),
        Command::Analyze { common } => cmd_analyze(&common),
        Command::Simulate { common, mc, per_user } => cmd_simulate(&common, &mc, per_user),
        Command::Sweep { common, mc } => cmd_sweep(&common, &mc),
        Command::Synth { gamma, q, m, users, requests_per_user, duplicate_fraction, seed, out } => {
            cmd_synth(gamma, q, m, users, requests_per_user, duplicate_fraction, seed, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
