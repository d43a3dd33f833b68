//! Acquisition over the discrete pipeline set, for maximizing a score.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::meta_store::PipelineId;
use crate::scalar::Scalar;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn std_normal_pdf<T: Scalar>(x: T) -> T {
    let x = x.as_f64();
    T::lit(FRAC_1_SQRT_2PI * (-0.5 * x * x).exp())
}

/// Standard normal distribution function, `erfc(-x/√2)/2`.
pub fn std_normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5 * libm::erfc(-x.as_f64() / std::f64::consts::SQRT_2))
}

/// Expected improvement of `N(mu, sigma²)` over `y_best + xi`:
/// `σ [γ Φ(γ) + φ(γ)]` with `γ = (μ − y_best − ξ)/σ`. Zero when `sigma == 0`.
pub fn expected_improvement<T: Scalar>(mu: T, sigma: T, y_best: T, xi: T) -> T {
    if !(sigma > T::zero()) {
        return T::zero();
    }
    let gamma = (mu - y_best - xi) / sigma;
    let ei = sigma * (gamma * std_normal_cdf(gamma) + std_normal_pdf(gamma));
    ei.max(T::zero())
}

/// `ln EI`, finite wherever EI is mathematically positive even when EI itself
/// underflows; `-inf` when `sigma == 0`.
pub fn log_expected_improvement(mu: f64, sigma: f64, y_best: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let gamma = (mu - y_best - xi) / sigma;
    sigma.ln() + log_ei_unit(gamma)
}

/// `ln(γ Φ(γ) + φ(γ))`.
fn log_ei_unit(gamma: f64) -> f64 {
    if gamma > -5.0 {
        return (gamma * std_normal_cdf(gamma) + std_normal_pdf(gamma)).ln();
    }
    // γΦ(γ) + φ(γ) = φ(γ)(1 − xR(x)) with x = −γ and R the Mills ratio,
    // evaluated by its continued fraction.
    let x = -gamma;
    let mut cf = x;
    for k in (1..=60).rev() {
        cf = x + k as f64 / cf;
    }
    let mills = 1.0 / cf;
    let tail = 1.0 - x * mills;
    (FRAC_1_SQRT_2PI.ln() - 0.5 * x * x) + tail.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    ExpectedImprovement,
    GreedyMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seed")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    /// Uniform among tied candidates, seeded by this value and the number of
    /// evaluated pipelines.
    Seeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub kind: AcquisitionKind,
    pub xi: f64,
    pub tie_break: TieBreak,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            kind: AcquisitionKind::ExpectedImprovement,
            xi: 0.01,
            tie_break: TieBreak::LowestIndex,
        }
    }
}

/// Predictive summary of one candidate pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<T> {
    pub pipeline: PipelineId,
    pub mu: T,
    pub sigma: T,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AcquisitionError {
    #[error("every candidate pipeline has already been evaluated")]
    AllEvaluated,
}

/// Picks the unevaluated candidate maximizing the acquisition. Without an
/// incumbent (`y_best = None`) the candidate with the largest mean is picked.
///
/// Expected improvement is compared through [`log_expected_improvement`], which
/// orders candidates the same way but keeps distinguishing them after EI
/// underflows.
pub fn select_next<T: Scalar>(
    candidates: &[Candidate<T>],
    evaluated: &BTreeSet<PipelineId>,
    y_best: Option<T>,
    config: &AcquisitionConfig,
) -> Result<PipelineId, AcquisitionError> {
    let open = candidates
        .iter()
        .filter(|c| !evaluated.contains(&c.pipeline));
    let scored: Vec<(PipelineId, f64)> = match (config.kind, y_best) {
        (AcquisitionKind::ExpectedImprovement, Some(best)) => open
            .map(|c| {
                let v = log_expected_improvement(
                    c.mu.as_f64(),
                    c.sigma.as_f64(),
                    best.as_f64(),
                    config.xi,
                );
                (c.pipeline, v)
            })
            .collect(),
        _ => open.map(|c| (c.pipeline, c.mu.as_f64())).collect(),
    };
    let top = scored
        .iter()
        .map(|&(_, v)| v)
        .fold(None, |m: Option<f64>, v| {
            Some(match m {
                None => v,
                Some(m) if v > m || m.is_nan() => v,
                Some(m) => m,
            })
        })
        .ok_or(AcquisitionError::AllEvaluated)?;
    let mut tied: Vec<PipelineId> = scored
        .iter()
        .filter(|&&(_, v)| v == top || (v.is_nan() && top.is_nan()))
        .map(|&(p, _)| p)
        .collect();
    tied.sort();
    Ok(match config.tie_break {
        TieBreak::LowestIndex => tied[0],
        TieBreak::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (evaluated.len() as u64).rotate_left(32));
            *tied.choose(&mut rng).expect("at least one tied candidate")
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(p: usize, mu: f64, sigma: f64) -> Candidate<f64> {
        Candidate {
            pipeline: PipelineId(p),
            mu,
            sigma,
        }
    }

    #[test]
    fn normal_basics() {
        assert_eq!(std_normal_cdf(0.0f64), 0.5);
        assert!((std_normal_pdf(0.0f64) - 0.398_942_280_4).abs() < 1e-10);
        for x in [0.1f64, 0.7, 1.9, 3.3, 6.5] {
            assert!((std_normal_cdf(-x) - (1.0 - std_normal_cdf(x))).abs() < 1e-15);
        }
        assert!((std_normal_cdf(1.0f32) - 0.841_344_75).abs() < 1e-6);
    }

    #[test]
    fn ei_closed_forms() {
        assert_eq!(expected_improvement(0.9, 0.0, 0.1, 0.0), 0.0);
        assert_eq!(expected_improvement(0.0, 0.0, 0.1, 0.0), 0.0);
        assert!((expected_improvement(0.5f64, 1.0, 0.5, 0.0) - 0.398_942).abs() < 1e-6);
    }

    #[test]
    fn log_ei_matches_direct_where_representable() {
        for &g in &[-4.9, -5.0, -5.1, -7.0, -12.0, -20.0, -30.0] {
            let direct = expected_improvement(g, 1.0, 0.0, 0.0f64).ln();
            let stable = log_expected_improvement(g, 1.0, 0.0, 0.0);
            assert!((direct - stable).abs() < 1e-8 * direct.abs(), "{g}: {direct} vs {stable}");
        }
        // Far tail: still finite and decreasing.
        let a = log_expected_improvement(-50.0, 1.0, 0.0, 0.0);
        let b = log_expected_improvement(-60.0, 1.0, 0.0, 0.0);
        assert!(a.is_finite() && b.is_finite() && a > b);
        assert_eq!(log_expected_improvement(1.0, 0.0, 0.0, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn cold_start_takes_max_mean() {
        let c = [cand(0, 0.5, 0.1), cand(1, 0.9, 0.1)];
        let cfg = AcquisitionConfig::default();
        assert_eq!(select_next(&c, &BTreeSet::new(), None, &cfg).unwrap(), PipelineId(1));
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let c = [cand(7, 0.6, 0.2), cand(3, 0.6, 0.2), cand(5, 0.1, 0.2)];
        let cfg = AcquisitionConfig::default();
        assert_eq!(select_next(&c, &BTreeSet::new(), Some(0.5), &cfg).unwrap(), PipelineId(3));
        let seeded = AcquisitionConfig {
            tie_break: TieBreak::Seeded(4),
            ..cfg
        };
        let pick = select_next(&c, &BTreeSet::new(), Some(0.5), &seeded).unwrap();
        assert!(pick == PipelineId(3) || pick == PipelineId(7));
    }

    #[test]
    fn all_evaluated_is_an_error() {
        let c = [cand(0, 0.5, 0.1)];
        let done: BTreeSet<_> = [PipelineId(0)].into();
        assert_eq!(
            select_next(&c, &done, Some(0.2), &AcquisitionConfig::default()),
            Err(AcquisitionError::AllEvaluated)
        );
    }

    #[test]
    fn greedy_mean_ignores_sigma() {
        let c = [cand(0, 0.5, 10.0), cand(1, 0.6, 0.0)];
        let cfg = AcquisitionConfig {
            kind: AcquisitionKind::GreedyMean,
            ..Default::default()
        };
        assert_eq!(select_next(&c, &BTreeSet::new(), Some(0.9), &cfg).unwrap(), PipelineId(1));
    }
}
