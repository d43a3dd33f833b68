//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use ablr::basis_net::NetworkConfig;
use ablr::linalg::Matrix;
use ablr::search::SyntheticConfig;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Posterior mean and covariance `K⁻¹` by a dense inverse.
pub fn blr_oracle(phi: &Matrix<f64>, y: &[f64], alpha: f64, beta: f64) -> (DVector<f64>, DMatrix<f64>) {
    let p = to_na(phi);
    let m = p.ncols();
    let k = p.transpose() * &p * beta + DMatrix::identity(m, m) * alpha;
    let k_inv = k.try_inverse().expect("K invertible");
    let mean = &k_inv * p.transpose() * DVector::from_column_slice(y) * beta;
    (mean, k_inv)
}

/// `log N(y; 0, β⁻¹I + α⁻¹ΦΦᵀ)` evaluated directly.
pub fn gaussian_marginal(phi: &Matrix<f64>, y: &[f64], alpha: f64, beta: f64) -> f64 {
    let p = to_na(phi);
    let q = p.nrows();
    let c = DMatrix::identity(q, q) / beta + &p * p.transpose() / alpha;
    let yv = DVector::from_column_slice(y);
    let chol = c.clone().cholesky().expect("C positive definite");
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let quad = yv.dot(&chol.solve(&yv));
    -0.5 * (q as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - 0.5 * quad
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Matrix::from_row_major(rows, cols, data)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[max(Y − y_best − ξ, 0)]` for `Y ~ N(μ, σ²)` by composite Simpson on the
/// standardized variable.
pub fn ei_by_quadrature(mu: f64, sigma: f64, y_best: f64, xi: f64) -> f64 {
    let c = y_best + xi;
    let lo = ((c - mu) / sigma).max(-14.0);
    let hi = 14.0f64.max(lo + 1.0);
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let f = |z: f64| (mu + sigma * z - c).max(0.0) * normal_pdf(z);
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Direct-formula population moments `(mean, std, skewness, excess kurtosis)`
/// in input order.
pub fn direct_moments(x: &[f64]) -> (f64, f64, Option<f64>, Option<f64>) {
    let n = x.len() as f64;
    let mean = x.iter().fold(0.0, |a, v| a + v) / n;
    let central = |k: i32| x.iter().map(|v| (v - mean).powi(k)).fold(0.0, |a, v| a + v) / n;
    let var = central(2);
    if var.sqrt() < 1e-12 * mean.abs().max(1.0) {
        return (mean, var.sqrt(), None, None);
    }
    (mean, var.sqrt(), Some(central(3) / var.powf(1.5)), Some(central(4) / (var * var) - 3.0))
}

/// Miniature network used where the full default would be too slow.
pub fn small_net(seed: u64) -> NetworkConfig {
    NetworkConfig {
        embedding_dim: 8,
        hidden_sizes: vec![64, 32],
        learning_rate: 0.1,
        batch_size: 8,
        epochs: 200,
        seed,
        ..NetworkConfig::default()
    }
}

/// 200 pipelines × 40 datasets, rank-4 latent structure, 30/10 split.
pub fn fig1_fixture(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_pipelines: 200,
        n_datasets: 40,
        latent_dim: 4,
        noise_std: 0.02,
        missing_rate: 0.0,
        seed,
        train_fraction: 0.75,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggRow {
    pub mean_regret: f64,
    pub stderr_regret: f64,
    pub mean_rank: f64,
}

/// Recomputes the aggregate table from a trace CSV: seed-average within each
/// dataset, then mean / standard error / fractional rank across datasets.
/// Truncated traces carry their last regret forward.
pub fn aggregate_from_trace_csv(path: &Path, iterations: usize) -> BTreeMap<(String, usize), AggRow> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    // (policy, dataset, seed) -> iteration -> regret
    let mut runs: BTreeMap<(String, String, u64), BTreeMap<usize, f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let key = (rec[1].to_string(), rec[0].to_string(), rec[2].parse().unwrap());
        let it: usize = rec[3].parse().unwrap();
        let regret: f64 = rec[7].parse().unwrap();
        runs.entry(key).or_default().insert(it, regret);
    }
    let mut per: BTreeMap<(String, String), Vec<Vec<f64>>> = BTreeMap::new();
    for ((policy, dataset, _), steps) in &runs {
        let mut curve = Vec::with_capacity(iterations);
        let mut last = *steps.values().next().unwrap();
        for t in 1..=iterations {
            if let Some(r) = steps.get(&t) {
                last = *r;
            }
            curve.push(last);
        }
        per.entry((policy.clone(), dataset.clone())).or_default().push(curve);
    }
    let mut avg: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for ((policy, dataset), curves) in per {
        let n = curves.len() as f64;
        let mean: Vec<f64> = (0..iterations).map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / n).collect();
        avg.entry(policy).or_default().insert(dataset, mean);
    }
    let policies: Vec<String> = avg.keys().cloned().collect();
    let datasets: Vec<String> = avg[&policies[0]].keys().cloned().collect();
    let mut out = BTreeMap::new();
    for t in 0..iterations {
        let mut rank_sum: BTreeMap<&str, f64> = BTreeMap::new();
        for d in &datasets {
            let vals: Vec<(&str, f64)> = policies.iter().map(|p| (p.as_str(), avg[p][d][t])).collect();
            for &(p, v) in &vals {
                let less = vals.iter().filter(|(_, u)| *u < v).count() as f64;
                let tied = vals.iter().filter(|(_, u)| *u == v).count() as f64;
                *rank_sum.entry(p).or_default() += less + (tied + 1.0) / 2.0;
            }
        }
        for p in &policies {
            let vals: Vec<f64> = datasets.iter().map(|d| avg[p][d][t]).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let se = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            out.insert(
                (p.clone(), t + 1),
                AggRow {
                    mean_regret: mean,
                    stderr_regret: se,
                    mean_rank: rank_sum[p.as_str()] / n,
                },
            );
        }
    }
    out
}

pub fn read_aggregate_csv(path: &Path) -> BTreeMap<(String, usize), AggRow> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (
                (r[0].to_string(), r[1].parse().unwrap()),
                AggRow {
                    mean_regret: r[2].parse().unwrap(),
                    stderr_regret: r[3].parse().unwrap(),
                    mean_rank: r[4].parse().unwrap(),
                },
            )
        })
        .collect()
}
