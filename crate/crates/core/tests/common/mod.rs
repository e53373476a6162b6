//! Oracles and generators shared by the integration tests.

#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rpp::divergence::{GaussianPair, GaussianPrior};
use rpp::gmm::GmmPrior;
use rpp::mixture::Component;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> GaussianPrior {
    GaussianPrior::new(rng.random_range(-10.0..=10.0), rng.random_range(0.1..=10.0)).unwrap()
}

pub fn pair(rng: &mut ChaCha8Rng) -> GaussianPair {
    GaussianPair::new(gaussian(rng), gaussian(rng))
}

/// Uniform on `(1, hi]`.
pub fn order(rng: &mut ChaCha8Rng, hi: f64) -> f64 {
    let a = rng.random_range(1.0..=hi);
    if a > 1.0 {
        a
    } else {
        hi
    }
}

pub fn mixture(rng: &mut ChaCha8Rng, k: usize) -> GmmPrior {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let comps = raw
        .iter()
        .map(|w| Component::new(w / total, rng.random_range(-5.0..=5.0), rng.random_range(0.2..=4.0)))
        .collect();
    GmmPrior::new(comps).unwrap()
}

pub fn normal_samples(rng: &mut ChaCha8Rng, n: usize, mu: f64, sd: f64) -> Vec<f64> {
    let d = Normal::new(mu, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Draws from `sum w_k N(mu_k, sd_k^2)`, choosing the component per draw.
pub fn mixture_samples(rng: &mut ChaCha8Rng, n: usize, parts: &[(f64, f64, f64)]) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mut u: f64 = rng.random();
            let mut pick = parts.len() - 1;
            for (idx, p) in parts.iter().enumerate() {
                if u < p.0 {
                    pick = idx;
                    break;
                }
                u -= p.0;
            }
            let (_, mu, sd) = parts[pick];
            Normal::new(mu, sd).unwrap().sample(rng)
        })
        .collect()
}

/// Minimum transport cost by enumerating every basic solution: each choice
/// of `k + l - 1` cells whose marginal equations have a unique non-negative
/// solution is a vertex of the transport polytope.
pub fn brute_force_ot(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (k, l) = (a.len(), b.len());
    let cells: Vec<(usize, usize)> = (0..k).flat_map(|r| (0..l).map(move |c| (r, c))).collect();
    let m = k + l - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << cells.len()) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let chosen: Vec<(usize, usize)> = (0..cells.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| cells[i])
            .collect();
        // Rows: k supply equations then l demand equations; augmented column last.
        let mut mat = vec![vec![0.0; m + 1]; k + l];
        for (j, &(r, c)) in chosen.iter().enumerate() {
            mat[r][j] = 1.0;
            mat[k + c][j] = 1.0;
        }
        for r in 0..k {
            mat[r][m] = a[r];
        }
        for c in 0..l {
            mat[k + c][m] = b[c];
        }
        if let Some(x) = solve_unique(mat, m) {
            if x.iter().all(|v| *v >= -1e-12) {
                let total: f64 = chosen.iter().zip(&x).map(|(&(r, c), v)| v * cost[r][c]).sum();
                best = best.min(total);
            }
        }
    }
    best
}

/// Gaussian elimination with partial pivoting on an augmented system with
/// `n` unknowns; `None` unless the solution exists and is unique.
fn solve_unique(mut mat: Vec<Vec<f64>>, n: usize) -> Option<Vec<f64>> {
    let rows = mat.len();
    let mut pivot_row = 0;
    let mut pivots = Vec::new();
    for col in 0..n {
        let (best, val) = (pivot_row..rows)
            .map(|r| (r, mat[r][col].abs()))
            .fold((pivot_row, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val < 1e-12 {
            return None;
        }
        mat.swap(pivot_row, best);
        let pivot = mat[pivot_row].clone();
        for (r, row) in mat.iter_mut().enumerate() {
            let f = row[col] / pivot[col];
            if r != pivot_row && f != 0.0 {
                for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                    *x -= f * p;
                }
            }
        }
        pivots.push(col);
        pivot_row += 1;
    }
    if mat[pivot_row..].iter().any(|row| row[n].abs() > 1e-9) {
        return None;
    }
    Some((0..n).map(|i| mat[i][n] / mat[i][i]).collect())
}

pub fn write_file(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
    path
}

/// A two-secret CSV whose released values are mixtures per secret.
pub fn mixture_csv(
    dir: &Path,
    seed: u64,
    n: usize,
    parts_a: &[(f64, f64, f64)],
    parts_b: &[(f64, f64, f64)],
) -> PathBuf {
    let mut r = rng(seed);
    let xa = mixture_samples(&mut r, n, parts_a);
    let xb = mixture_samples(&mut r, n, parts_b);
    let mut body = String::from("group,value\n");
    for (x, y) in xa.iter().zip(&xb) {
        body.push_str(&format!("a,{x}\nb,{y}\n"));
    }
    write_file(dir, "data.csv", &body)
}

pub fn scenario_toml(dir: &Path, csv: &str, released: &str, sensitive: &str, i: &str, j: &str) -> PathBuf {
    let body = format!(
        "dataset_path = {csv:?}\nreleased_column = {released:?}\nsensitive_column = {sensitive:?}\n\
         secret_i = {i:?}\nsecret_j = {j:?}\n"
    );
    write_file(dir, "scenario.toml", &body)
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}
