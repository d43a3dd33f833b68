//! Multi-policy replay over all held-out datasets and its aggregation.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::meta_store::MetaDataset;
use crate::scalar::Scalar;

use super::{run_search, AblrModel, SearchError, SearchPolicy, SearchTrace};

pub const TRACE_HEADER: &str = "dataset,policy,seed,iteration,pipeline_id,observed,best_so_far,regret";
pub const AGGREGATE_HEADER: &str = "policy,iteration,mean_regret,stderr_regret,mean_rank";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_regret: f64,
    /// Standard error of the mean over datasets.
    pub stderr_regret: f64,
    /// Fractional rank among the evaluated policies, averaged over datasets.
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub policies: Vec<SearchPolicy>,
    pub iterations: usize,
    pub n_datasets: usize,
    /// `stats[p][t]` for policy `p` at iteration `t + 1`.
    pub stats: Vec<Vec<IterationStats>>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: AggregateReport,
    /// Ordered by dataset, then policy, then replicate.
    pub traces: Vec<SearchTrace>,
}

/// Fractional ranks (1 = smallest); ties share the mean of their positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let below = values.iter().filter(|&&u| u < v).count() as f64;
            let equal = values.iter().filter(|&&u| u == v).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Runs every policy on every test dataset for `n_seeds` replicates (replicate
/// `r` uses seed `policy.seed + r`). `jobs` caps the worker count.
pub fn evaluate_policies<T: Scalar>(
    md: &MetaDataset,
    model: Option<&AblrModel<T>>,
    policies: &[SearchPolicy],
    iterations: usize,
    n_seeds: usize,
    jobs: Option<usize>,
) -> Result<Evaluation, SearchError> {
    if policies.is_empty() {
        return Err(SearchError::InvalidArgument("no policies to evaluate".into()));
    }
    if n_seeds == 0 {
        return Err(SearchError::InvalidArgument("n_seeds must be at least 1".into()));
    }
    if let Some(p) = policies.iter().find(|p| p.kind.needs_model() && model.is_none()) {
        return Err(SearchError::MissingModel(p.kind));
    }
    let datasets = md.test_datasets();
    let tasks: Vec<(usize, usize, u64)> = (0..datasets.len())
        .flat_map(|d| {
            (0..policies.len()).flat_map(move |p| (0..n_seeds as u64).map(move |r| (d, p, r)))
        })
        .collect();
    let run = |&(d, p, r): &(usize, usize, u64)| {
        let policy = SearchPolicy {
            seed: policies[p].seed.wrapping_add(r),
            ..policies[p]
        };
        run_search(md, model, datasets[d], &policy, iterations)
    };
    let traces: Vec<SearchTrace> = match jobs {
        Some(1) => tasks.iter().map(run).collect::<Result<_, _>>()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SearchError::InvalidArgument(e.to_string()))?
            .install(|| tasks.par_iter().map(run).collect::<Result<_, _>>())?,
        None => tasks.par_iter().map(run).collect::<Result<_, _>>()?,
    };
    let report = aggregate(policies, &traces, datasets.len(), n_seeds, iterations);
    Ok(Evaluation { report, traces })
}

fn aggregate(
    policies: &[SearchPolicy],
    traces: &[SearchTrace],
    n_datasets: usize,
    n_seeds: usize,
    iterations: usize,
) -> AggregateReport {
    let n_pol = policies.len();
    // regret[d][p][t], averaged over replicates first.
    let mut regret = vec![vec![vec![0.0; iterations]; n_pol]; n_datasets];
    for (k, trace) in traces.iter().enumerate() {
        let d = k / (n_pol * n_seeds);
        let p = (k / n_seeds) % n_pol;
        for (acc, r) in regret[d][p].iter_mut().zip(trace.padded_regret(iterations)) {
            *acc += r / n_seeds as f64;
        }
    }
    let mut stats = vec![Vec::with_capacity(iterations); n_pol];
    for t in 0..iterations {
        let mut rank_sum = vec![0.0; n_pol];
        for per_dataset in &regret {
            let at_t: Vec<f64> = per_dataset.iter().map(|r| r[t]).collect();
            for (s, r) in rank_sum.iter_mut().zip(fractional_ranks(&at_t)) {
                *s += r;
            }
        }
        for p in 0..n_pol {
            let vals: Vec<f64> = regret.iter().map(|d| d[p][t]).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let stderr = if vals.len() > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            stats[p].push(IterationStats {
                iteration: t + 1,
                mean_regret: mean,
                stderr_regret: stderr,
                mean_rank: rank_sum[p] / n,
            });
        }
    }
    AggregateReport {
        policies: policies.to_vec(),
        iterations,
        n_datasets,
        stats,
    }
}

fn csv_write(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), SearchError> {
    let file = fs::File::create(path).map_err(|e| SearchError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| SearchError::io(path, e))
}

/// One row per chosen pipeline; both picks of a `random2x` iteration share
/// the iteration's `best_so_far` and `regret`.
pub fn write_trace_csv(path: &Path, md: &MetaDataset, traces: &[SearchTrace]) -> Result<(), SearchError> {
    csv_write(path, |w| {
        writeln!(w, "{TRACE_HEADER}")?;
        for t in traces {
            let name = md.dataset_name(t.dataset);
            for s in &t.steps {
                for (p, o) in s.chosen.iter().zip(&s.observed) {
                    writeln!(
                        w,
                        "{name},{},{},{},{},{o},{},{}",
                        t.policy.kind, t.policy.seed, s.iteration, p.0, s.best_so_far, s.regret
                    )?;
                }
            }
        }
        Ok(())
    })
}

pub fn write_aggregate_csv(path: &Path, report: &AggregateReport) -> Result<(), SearchError> {
    csv_write(path, |w| {
        writeln!(w, "{AGGREGATE_HEADER}")?;
        for (policy, rows) in report.policies.iter().zip(&report.stats) {
            for s in rows {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    policy.kind, s.iteration, s.mean_regret, s.stderr_regret, s.mean_rank
                )?;
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractional_rank_ties() {
        assert_eq!(fractional_ranks(&[0.1, 0.1]), vec![1.5, 1.5]);
        assert_eq!(fractional_ranks(&[0.3, 0.1, 0.2]), vec![3.0, 1.0, 2.0]);
        assert_eq!(fractional_ranks(&[0.0, 0.5, 0.0, 0.0]), vec![2.0, 4.0, 2.0, 2.0]);
        assert_eq!(fractional_ranks(&[0.7]), vec![1.0]);
    }
}
