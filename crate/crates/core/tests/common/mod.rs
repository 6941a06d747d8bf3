#![allow(dead_code)]

use std::collections::BTreeMap;

use lrperc::kernel::FiniteKernel;
use lrperc::percolation::{run_cluster_observed, Mode, SimConfig};

/// Exact `P(x in C_n)` for the nearest-neighbour kernel `{-1, 0, 1}` with
/// equal weights, by dynamic programming over the full law of the slice.
/// Returns `phi[n]` as a map from site to probability.
pub fn enumerate_nn(p: f64, n_max: usize) -> Vec<BTreeMap<i64, f64>> {
    let q = p / 3.0;
    let mut law: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    law.insert(vec![0], 1.0);
    let mut phi = vec![marginals(&law)];
    for _ in 0..n_max {
        let mut next: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for (set, w) in &law {
            let lo = set[0] - 1;
            let hi = set[set.len() - 1] + 1;
            // each target is occupied independently: 1 - (1-q)^{#parents in reach}
            let probs: Vec<(i64, f64)> = (lo..=hi)
                .map(|z| {
                    let m = set.iter().filter(|y| (z - **y).abs() <= 1).count() as i32;
                    (z, 1.0 - (1.0 - q).powi(m))
                })
                .collect();
            for mask in 0u64..(1 << probs.len()) {
                let mut pr = *w;
                let mut child = Vec::new();
                for (i, (z, pz)) in probs.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        pr *= pz;
                        child.push(*z);
                    } else {
                        pr *= 1.0 - pz;
                    }
                }
                if !child.is_empty() {
                    *next.entry(child).or_insert(0.0) += pr;
                }
            }
        }
        law = next;
        phi.push(marginals(&law));
    }
    phi
}

fn marginals(law: &BTreeMap<Vec<i64>, f64>) -> BTreeMap<i64, f64> {
    let mut m = BTreeMap::new();
    for (set, w) in law {
        for x in set {
            *m.entry(*x).or_insert(0.0) += w;
        }
    }
    m
}

pub fn nn_kernel() -> FiniteKernel {
    FiniteKernel::new(1, vec![([-1, 0, 0, 0], 1.0), ([0, 0, 0, 0], 1.0), ([1, 0, 0, 0], 1.0)]).unwrap()
}

/// Monte Carlo hit counts `hits[n][x + n_max]` over `runs` clusters.
pub fn mc_hits(p: f64, n_max: usize, runs: u64, seed: u64) -> Vec<Vec<u64>> {
    use rayon::prelude::*;
    let k = nn_kernel();
    let cfg = SimConfig::new(p, n_max as u64, Mode::Percolation);
    let width = 2 * n_max + 1;
    let per_run: Vec<Vec<u64>> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut h = vec![0u64; (n_max + 1) * width];
            run_cluster_observed(&cfg, &k, seed, i, |s| {
                for x in &s.sites {
                    h[s.n as usize * width + (x[0] + n_max as i128) as usize] += 1;
                }
            });
            h
        })
        .collect();
    let mut hits = vec![vec![0u64; width]; n_max + 1];
    for h in per_run {
        for (i, c) in h.into_iter().enumerate() {
            hits[i / width][i % width] += c;
        }
    }
    hits
}

/// Largest `|hat - exact| / sigma` over all sites and times with `exact > 0`.
pub fn worst_z(p: f64, n_max: usize, runs: u64, seed: u64) -> f64 {
    let exact = enumerate_nn(p, n_max);
    let hits = mc_hits(p, n_max, runs, seed);
    let mut worst: f64 = 0.0;
    for (n, row) in exact.iter().enumerate() {
        for x in -(n as i64)..=(n as i64) {
            let e = row.get(&x).copied().unwrap_or(0.0);
            let hat = hits[n][(x + n_max as i64) as usize] as f64 / runs as f64;
            if e == 0.0 || e == 1.0 {
                assert_eq!(hat, e, "n {n} x {x}");
                continue;
            }
            let sigma = (e * (1.0 - e) / runs as f64).sqrt();
            worst = worst.max((hat - e).abs() / sigma);
        }
    }
    worst
}
