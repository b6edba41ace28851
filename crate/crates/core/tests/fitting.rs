mod common;

use d2dcache::fitting::*;
use d2dcache::popularity::MZipfDist;
use proptest::prelude::*;

fn exact_pmf_counts(d: &MZipfDist, scale: f64) -> EmpiricalPopularity {
    let counts = d.probabilities().iter().map(|p| (p * scale).round() as u64).collect();
    EmpiricalPopularity::from_counts(counts, 0).unwrap()
}

#[test]
fn dedupe_matches_brute_force_oracle() {
    let d = MZipfDist::new(0.8, 10.0, 2000).unwrap();
    let log = SyntheticLog { users: 20_000, requests_per_user: 4, duplicate_fraction: 0.2, seed: 11 }
        .generate(&d)
        .unwrap();
    assert_eq!(log.len(), 100_000);
    let got = dedupe_accesses(log.iter().cloned().map(Ok));
    assert_eq!(got.popularity.counts(), common::dedupe_oracle(&log).as_slice());
    assert_eq!(got.popularity.distinct_users(), 20_000);
}

#[test]
fn dedupe_is_idempotent_through_csv() {
    let d = MZipfDist::new(1.1, 2.0, 300).unwrap();
    let log = SyntheticLog { users: 400, requests_per_user: 6, duplicate_fraction: 0.3, seed: 5 }
        .generate(&d)
        .unwrap();
    let first = dedupe_accesses(log.iter().cloned().map(Ok)).popularity;

    let mut seen = std::collections::HashSet::new();
    let unique: Vec<AccessRecord> = log
        .into_iter()
        .filter(|r| seen.insert((r.user_id.clone(), r.content_id.clone())))
        .collect();
    let mut buf = Vec::new();
    write_access_log(&mut buf, &unique).unwrap();
    let second = dedupe_accesses(read_access_log(buf.as_slice()).unwrap()).popularity;
    assert_eq!(first, second);
}

#[test]
fn recovers_exact_pmf() {
    let d = MZipfDist::new(1.16, 22.0, 7345).unwrap();
    let f = fit_mzipf(&exact_pmf_counts(&d, 1e12), &FitSearch::default()).unwrap();
    assert!((f.gamma - 1.16).abs() <= 0.01, "gamma {}", f.gamma);
    assert!((f.q - 22.0).abs() <= 0.05 * 22.0, "q {}", f.q);
    assert_eq!(f.m, 7345);
}

#[test]
fn recovers_sampled_parameters() {
    let d = MZipfDist::new(1.36, 50.0, 16823).unwrap();
    let log = SyntheticLog { users: 1_000_000, requests_per_user: 1, duplicate_fraction: 0.0, seed: 3 }
        .generate(&d)
        .unwrap();
    let pop = dedupe_accesses(log.into_iter().map(Ok)).popularity;
    assert_eq!(pop.total(), 1_000_000);
    let f = fit_mzipf(&pop, &FitSearch::default()).unwrap();
    assert!((f.gamma - 1.36).abs() <= 0.05, "gamma {}", f.gamma);
    assert!((f.q - 50.0).abs() <= 0.2 * 50.0, "q {}", f.q);
}

#[test]
fn pure_zipf_fits_without_plateau() {
    let d = MZipfDist::zipf(0.9, 500).unwrap();
    let search = FitSearch::default();
    let f = fit_mzipf(&exact_pmf_counts(&d, 1e12), &search).unwrap();
    assert!(f.q <= search.q_min_positive, "q {}", f.q);
}

#[test]
fn fit_is_deterministic_and_self_consistent() {
    let d = MZipfDist::new(0.7, 8.0, 400).unwrap();
    let log = SyntheticLog { users: 3000, requests_per_user: 3, duplicate_fraction: 0.1, seed: 9 }
        .generate(&d)
        .unwrap();
    let pop = dedupe_accesses(log.into_iter().map(Ok)).popularity;
    let search = FitSearch { gamma_range: (0.2, 2.0), q_range: Some((0.0, 100.0)), ..FitSearch::default() };
    let a = fit_mzipf(&pop, &search).unwrap();
    let b = fit_mzipf(&pop, &search).unwrap();
    assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
    assert_eq!(a.q.to_bits(), b.q.to_bits());
    assert_eq!(a.kl.to_bits(), b.kl.to_bits());
    assert_eq!(a.evaluations, b.evaluations);

    let direct = kl_divergence(&pop, &MZipfDist::new(a.gamma, a.q, a.m).unwrap()).unwrap();
    assert!((a.kl - direct).abs() <= 1e-12);
    assert!((0.2..=2.0).contains(&a.gamma) && (0.0..=100.0).contains(&a.q));
}

#[test]
fn fit_beats_every_coarse_cell() {
    let d = MZipfDist::new(1.2, 15.0, 600).unwrap();
    let log = SyntheticLog { users: 5000, requests_per_user: 2, duplicate_fraction: 0.0, seed: 1 }
        .generate(&d)
        .unwrap();
    let pop = dedupe_accesses(log.into_iter().map(Ok)).popularity;
    let search = FitSearch { coarse_steps: 10, ..FitSearch::default() };
    let f = fit_mzipf(&pop, &search).unwrap();
    let grid = coarse_grid(pop.len(), &search);
    assert_eq!(grid.len(), 100);
    for (g, q) in grid {
        let kl = kl_divergence(&pop, &MZipfDist::new(g, q, pop.len()).unwrap()).unwrap();
        assert!(f.kl <= kl + 1e-12, "cell ({g}, {q}) has {kl} < {}", f.kl);
    }
}

#[test]
fn full_subsample_reproduces_full_fit() {
    let d = MZipfDist::new(1.0, 5.0, 300).unwrap();
    let log = SyntheticLog { users: 500, requests_per_user: 4, duplicate_fraction: 0.1, seed: 2 }
        .generate(&d)
        .unwrap();
    let search = FitSearch { coarse_steps: 20, refine_iters: 3, ..FitSearch::default() };
    let pop = dedupe_accesses(log.iter().cloned().map(Ok)).popularity;
    let full = fit_mzipf(&pop, &search).unwrap();
    let sub = subsample_study(&log, &[500], 77, &search).unwrap();
    assert_eq!((sub[0].gamma, sub[0].q, sub[0].distinct_files), (full.gamma, full.q, pop.len()));
}

#[test]
fn small_subsample_respects_counting_bound() {
    let d = MZipfDist::new(1.0, 5.0, 300).unwrap();
    let per_user = 4;
    let log = SyntheticLog { users: 500, requests_per_user: per_user, duplicate_fraction: 0.1, seed: 8 }
        .generate(&d)
        .unwrap();
    let search = FitSearch { coarse_steps: 10, refine_iters: 2, ..FitSearch::default() };
    let sub = subsample_study(&log, &[10], 3, &search).unwrap();
    assert!(sub[0].distinct_files <= 10 * per_user);
}

#[test]
fn fitted_plateau_grows_with_user_count() {
    let d = MZipfDist::new(1.36, 49.0, 16258).unwrap();
    let ns = [500, 2000, 8000, 20_000];
    let search = FitSearch { coarse_steps: 30, refine_iters: 4, ..FitSearch::default() };
    let mut mean_q = [0.0; 4];
    for seed in 0..10 {
        let log = SyntheticLog { users: 20_000, requests_per_user: 5, duplicate_fraction: 0.1, seed }
            .generate(&d)
            .unwrap();
        for (acc, r) in mean_q.iter_mut().zip(subsample_study(&log, &ns, seed, &search).unwrap()) {
            *acc += r.q / 10.0;
        }
    }
    assert!(mean_q.windows(2).all(|w| w[0] <= w[1]), "{mean_q:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative(
        mut counts in prop::collection::vec(1u64..1000, 1..40),
        gamma in 0.05f64..4.0,
        q in 0.0f64..50.0,
    ) {
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let m = counts.len();
        let data = EmpiricalPopularity::from_counts(counts, 1).unwrap();
        let kl = kl_divergence(&data, &MZipfDist::new(gamma, q, m).unwrap()).unwrap();
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn dedupe_counts_match_oracle(
        pairs in prop::collection::vec((0u8..6, 0u8..12), 0..200),
    ) {
        let recs: Vec<AccessRecord> =
            pairs.iter().map(|(u, c)| AccessRecord::new(format!("u{u}"), format!("c{c}"))).collect();
        let got = dedupe_accesses(recs.iter().cloned().map(Ok));
        let expected = common::dedupe_oracle(&recs);
        prop_assert_eq!(got.popularity.counts(), expected.as_slice());
        prop_assert_eq!(got.popularity.total(), got.popularity.counts().iter().sum::<u64>());
    }
}
