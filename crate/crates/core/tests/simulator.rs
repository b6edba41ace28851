use d2dcache::asymptotics::PointSource;
use d2dcache::caching::waterfill;
use d2dcache::popularity::MZipfDist;
use d2dcache::simulator::*;

fn fig3(n_clusters: usize) -> NetworkConfig {
    NetworkConfig::new(10_000, n_clusters, 1, 4, 1.0).unwrap()
}

fn simulate(gamma: f64, q: f64, n_clusters: usize, trials: usize, seed: u64) -> (SimResult, f64) {
    let d = MZipfDist::new(gamma, q, 1000).unwrap();
    let cfg = fig3(n_clusters);
    let policy = waterfill(&d, 1, cfg.g_c()).unwrap();
    let exact = 1.0 - policy.hit_probability(&d).unwrap();
    (monte_carlo(&cfg, &d, &policy, &SimOptions::new(trials, seed)).unwrap(), exact)
}

#[test]
fn outage_is_unbiased() {
    for gamma in [0.2, 0.4, 0.6] {
        let (sim, exact) = simulate(gamma, 20.0, 100, 200, 42);
        let dev = (sim.outage_mean - exact).abs();
        assert!(dev <= 3.0 * sim.outage_stderr, "γ={gamma}: |{} − {exact}| = {dev}, se {}", sim.outage_mean, sim.outage_stderr);
        assert_eq!(sim.accounting_failures, 0);
    }
}

#[test]
fn outage_decreases_with_skew() {
    let outs: Vec<f64> = [0.2, 0.4, 0.6].iter().map(|&g| simulate(g, 20.0, 100, 200, 1).0.outage_mean).collect();
    assert!(outs[0] > outs[1] && outs[1] > outs[2], "{outs:?}");
}

#[test]
fn plateau_raises_outage() {
    let (lo, _) = simulate(0.6, 5.0, 100, 200, 9);
    let (hi, _) = simulate(0.6, 50.0, 100, 200, 9);
    let se = (lo.outage_stderr.powi(2) + hi.outage_stderr.powi(2)).sqrt();
    assert!(hi.outage_mean - lo.outage_mean > 3.0 * se);
}

#[test]
fn worker_count_does_not_change_results() {
    let d = MZipfDist::new(0.6, 20.0, 1000).unwrap();
    let cfg = fig3(100);
    let policy = waterfill(&d, 1, 100).unwrap();
    let one = monte_carlo(&cfg, &d, &policy, &SimOptions::new(24, 5).workers(1).track_per_user(true)).unwrap();
    let many = monte_carlo(&cfg, &d, &policy, &SimOptions::new(24, 5).workers(4).track_per_user(true)).unwrap();
    assert_eq!(one, many);
    assert_eq!(one.outage_mean.to_bits(), many.outage_mean.to_bits());
    let again = monte_carlo(&cfg, &d, &policy, &SimOptions::new(2, 5)).unwrap();
    assert_eq!(again, monte_carlo(&cfg, &d, &policy, &SimOptions::new(2, 5)).unwrap());
}

#[test]
fn per_user_throughput_is_symmetric() {
    let d = MZipfDist::new(0.8, 2.0, 30).unwrap();
    let cfg = NetworkConfig::new(16, 4, 2, 4, 1.0).unwrap();
    let policy = waterfill(&d, 2, 4).unwrap();
    let sim = Simulation::new(&cfg, &d, &policy).unwrap();
    let trials = 4000;
    let mut sum = vec![0.0; 16];
    let mut sq = vec![0.0; 16];
    for t in 0..trials {
        let r = sim.realize(&mut trial_rng(31, t));
        assert!(accounting_identity_holds(&r, &cfg));
        for (u, x) in per_user_throughput(&r, &cfg).into_iter().enumerate() {
            sum[u] += x;
            sq[u] += x * x;
        }
    }
    let n = trials as f64;
    let means: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let grand = means.iter().sum::<f64>() / 16.0;
    for u in 0..16 {
        let var = (sq[u] / n - means[u] * means[u]) * n / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((means[u] - grand).abs() <= 3.0 * se, "user {u}: {} vs {grand} (se {se})", means[u]);
    }

    let tracked = sim.run(&SimOptions::new(trials as usize, 31).track_per_user(true)).unwrap();
    for (a, b) in tracked.per_user_throughput.iter().zip(&means) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn all_good_accounting() {
    let d = MZipfDist::new(1.0, 0.0, 1).unwrap();
    let cfg = fig3(100);
    let policy = waterfill(&d, 1, 100).unwrap();
    let r = realize(&cfg, &d, &policy, &mut trial_rng(0, 0)).unwrap();
    let a = throughput_accounting(&r, &cfg);
    assert_eq!(a.t_sum, 25.0);
    assert_eq!(a.t_min, 2.5e-3);
    assert_eq!(a.outage_fraction, 0.0);
    assert_eq!(r.good_clusters, 100);
}

#[test]
fn certain_miss_accounting() {
    let cfg = NetworkConfig::new(100, 4, 1, 4, 1.0).unwrap();
    let r = Realization::resolve(&cfg, 2, vec![1; 100], vec![2; 100]);
    let a = throughput_accounting(&r, &cfg);
    assert_eq!((a.t_sum, a.outage_fraction, r.good_clusters), (0.0, 1.0, 0));
    assert!(accounting_identity_holds(&r, &cfg));
}

#[test]
fn sweep_skips_and_orders() {
    let d = MZipfDist::new(0.6, 20.0, 1000).unwrap();
    let base = SweepBase { n: 10_000, s: 1, k: 4, c_rate: 1.0, include_self_cache: false };
    let counts = [4, 9, 16, 25, 100, 400, 625];
    let out = sweep(&base, &d, &counts, &SimOptions::new(20, 3)).unwrap();
    assert_eq!(out.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), vec![9]);
    assert_eq!(out.accounting_failures, 0);

    let run: Vec<usize> = counts.iter().copied().filter(|&c| c != 9).collect();
    for &c in &run {
        assert!(out.points_for(c).count() >= 3, "n_clusters {c}");
    }
    let exact: Vec<(f64, f64, f64)> = run
        .iter()
        .map(|&c| {
            let p = out.point(c, PointSource::ExactSum).unwrap();
            (p.g_c, p.outage, p.throughput)
        })
        .collect();
    // More clusters means smaller ones: outage rises, and throughput grows
    // from the large-cluster end to the small-cluster end.
    for w in exact.windows(2) {
        assert!(w[0].0 > w[1].0);
        assert!(w[0].1 <= w[1].1, "{w:?}");
    }
    assert!(exact[0].2 < exact[exact.len() - 1].2);
    for &c in &run {
        let sim = out.point(c, PointSource::Simulated).unwrap();
        assert!(sim.throughput <= 0.25 / sim.g_c + 1e-15);
    }

    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &out.points).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("n_clusters,g_c,outage,outage_stderr,throughput,throughput_stderr,source\n"));
    assert!(text.contains(",simulated\n") && text.contains(",exact_sum\n"));
}
