//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use d2dcache::fitting::AccessRecord;
use rand::Rng;

/// `Σ P_r(f)·(1 − (1 − p_f)^e)` written out directly.
pub fn hit_objective(pr: &[f64], p: &[f64], e: u64) -> f64 {
    pr.iter().zip(p).map(|(&r, &x)| r * (1.0 - (1.0 - x).powi(e as i32))).sum()
}

fn gradient(pr: &[f64], p: &[f64], e: u64) -> Vec<f64> {
    pr.iter()
        .zip(p)
        .map(|(&r, &x)| r * e as f64 * (1.0 - x).powi(e as i32 - 1))
        .collect()
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        css += x;
        let t = (css - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projected-gradient ascent with Barzilai-Borwein steps and Armijo
/// backtracking, from the uniform point.
pub fn projected_gradient_max(pr: &[f64], e: u64, iters: usize) -> f64 {
    let m = pr.len();
    projected_gradient_argmax(pr, e, vec![1.0 / m as f64; m], iters).1
}

/// Same ascent from a given start; returns the final point and its value.
pub fn projected_gradient_argmax(pr: &[f64], e: u64, start: Vec<f64>, iters: usize) -> (Vec<f64>, f64) {
    let mut p = start;
    let mut f = hit_objective(pr, &p, e);
    let mut g = gradient(pr, &p, e);
    let mut step = 1.0;
    for _ in 0..iters {
        let mut t = step;
        let (np, nf) = loop {
            let trial: Vec<f64> = p.iter().zip(&g).map(|(&x, &d)| x + t * d).collect();
            let np = project_simplex(&trial);
            let nf = hit_objective(pr, &np, e);
            let lin: f64 = np.iter().zip(&p).zip(&g).map(|((a, b), d)| (a - b) * d).sum();
            if nf >= f + 1e-4 * lin || t < 1e-14 {
                break (np, nf);
            }
            t *= 0.5;
        };
        let ng = gradient(pr, &np, e);
        let s: Vec<f64> = np.iter().zip(&p).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ng.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy < 0.0 { (ss / -sy).clamp(1e-10, 1e10) } else { 1.0 };
        let moved = ss.sqrt();
        p = np;
        f = nf;
        g = ng;
        if moved < 1e-15 {
            break;
        }
    }
    (p, f)
}

/// Uniform point on the simplex (flat Dirichlet).
pub fn random_simplex<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Brute-force unique-access counts: content -> set of users, sorted by size.
pub fn dedupe_oracle(records: &[AccessRecord]) -> Vec<u64> {
    let mut by_content: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        by_content.entry(&r.content_id).or_default().insert(&r.user_id);
    }
    let mut counts: Vec<u64> = by_content.values().map(|s| s.len() as u64).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    counts
}
