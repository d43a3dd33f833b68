//! Sequential pipeline search replayed against recorded scores, with random
//! baselines and regret / rank aggregation.

mod model;
mod report;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select_next, AcquisitionConfig, AcquisitionError};
use crate::basis_net::NetError;
use crate::blr::BlrError;
use crate::meta_features::FeatureError;
use crate::meta_store::{DatasetId, MetaDataset, PipelineId, StoreError};
use crate::scalar::Scalar;

pub use model::{fit_ablr, training_triples, AblrModel, FitSummary, MODEL_MAGIC};
pub use report::{
    evaluate_policies, write_aggregate_csv, write_trace_csv, AggregateReport, Evaluation, IterationStats,
    AGGREGATE_HEADER, TRACE_HEADER,
};
pub use synthetic::{generate_synthetic, generate_with_latents, Latents, SyntheticConfig};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Blr(#[from] BlrError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error("model was trained on dataset '{0}', which cannot be used as a test dataset")]
    ModelTrainedOnTestDataset(String),
    #[error("dataset '{0}' is not in the test split")]
    NotATestDataset(String),
    #[error("policy {0} needs a fitted model")]
    MissingModel(PolicyKind),
    #[error("no training triples: training datasets have no scores")]
    EmptyTrainingSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SearchError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Predict once from meta-features; only the incumbent changes.
    AblrStatic,
    /// Condition the regression head on every observed score.
    AblrOnline,
    Random1x,
    /// Two uniform picks per iteration.
    Random2x,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::AblrStatic,
        PolicyKind::AblrOnline,
        PolicyKind::Random1x,
        PolicyKind::Random2x,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::AblrStatic => "ablr_static",
            PolicyKind::AblrOnline => "ablr_online",
            PolicyKind::Random1x => "random1x",
            PolicyKind::Random2x => "random2x",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, PolicyKind::AblrStatic | PolicyKind::AblrOnline)
    }

    pub fn picks_per_iteration(self) -> usize {
        match self {
            PolicyKind::Random2x => 2,
            _ => 1,
        }
    }

    fn code(self) -> u64 {
        match self {
            PolicyKind::AblrStatic => 1,
            PolicyKind::AblrOnline => 2,
            PolicyKind::Random1x => 3,
            PolicyKind::Random2x => 4,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = SearchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SearchError::InvalidArgument(format!("unknown policy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchPolicy {
    pub kind: PolicyKind,
    /// Ignored by the random policies.
    pub acquisition: AcquisitionConfig,
    pub seed: u64,
}

impl SearchPolicy {
    pub fn new(kind: PolicyKind, seed: u64) -> Self {
        Self {
            kind,
            acquisition: AcquisitionConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchStep {
    /// 1-based.
    pub iteration: usize,
    pub chosen: Vec<PipelineId>,
    pub observed: Vec<f64>,
    pub best_so_far: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub dataset: DatasetId,
    pub policy: SearchPolicy,
    pub steps: Vec<SearchStep>,
    /// The candidate pool ran out before the requested number of iterations.
    pub truncated: bool,
}

impl SearchTrace {
    /// Regret after each of `iterations` iterations, carrying the last value
    /// forward past the end of a truncated trace.
    pub fn padded_regret(&self, iterations: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(iterations);
        let mut last = self.steps.first().map_or(f64::NAN, |s| s.regret);
        for t in 0..iterations {
            if let Some(s) = self.steps.get(t) {
                last = s.regret;
            }
            out.push(last);
        }
        out
    }

    /// Checks monotone incumbent, non-negative non-increasing regret, pick
    /// counts and that no pipeline is chosen twice.
    pub fn check_invariants(&self) -> Result<(), String> {
        let per = self.policy.kind.picks_per_iteration();
        let mut seen = BTreeSet::new();
        let mut prev: Option<&SearchStep> = None;
        for (k, s) in self.steps.iter().enumerate() {
            if s.iteration != k + 1 {
                return Err(format!("step {k} has iteration {}", s.iteration));
            }
            let last = k + 1 == self.steps.len();
            if s.chosen.len() != per && !(self.truncated && last && !s.chosen.is_empty()) {
                return Err(format!("iteration {} chose {} pipelines", s.iteration, s.chosen.len()));
            }
            if s.chosen.len() != s.observed.len() {
                return Err(format!("iteration {}: chosen/observed length mismatch", s.iteration));
            }
            for p in &s.chosen {
                if !seen.insert(*p) {
                    return Err(format!("pipeline {p} chosen twice"));
                }
            }
            if s.regret < 0.0 {
                return Err(format!("negative regret {} at iteration {}", s.regret, s.iteration));
            }
            if let Some(p) = prev {
                if s.best_so_far < p.best_so_far {
                    return Err(format!("best_so_far decreased at iteration {}", s.iteration));
                }
                if s.regret > p.regret {
                    return Err(format!("regret increased at iteration {}", s.iteration));
                }
            }
            prev = Some(s);
        }
        Ok(())
    }
}

/// Gatekeeper for the scores of the dataset being searched. A policy only
/// learns a score by calling [`ScoreSource::observe`].
pub trait ScoreSource {
    /// Pipelines that have a recorded score (their values stay hidden).
    fn candidates(&self) -> Vec<PipelineId>;
    /// Reveals one recorded score.
    fn observe(&self, pipeline: PipelineId) -> Option<f64>;
}

/// Replays one column of the performance matrix.
pub struct ReplaySource<'a> {
    column: &'a [Option<f64>],
}

impl<'a> ReplaySource<'a> {
    pub fn new(md: &'a MetaDataset, dataset: DatasetId) -> Self {
        Self {
            column: md.performance().column(dataset),
        }
    }

    pub fn from_column(column: &'a [Option<f64>]) -> Self {
        Self { column }
    }
}

impl ScoreSource for ReplaySource<'_> {
    fn candidates(&self) -> Vec<PipelineId> {
        self.column
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| PipelineId(i))
            .collect()
    }

    fn observe(&self, pipeline: PipelineId) -> Option<f64> {
        self.column.get(pipeline.0).copied().flatten()
    }
}

/// Wraps a source and records every score access in order.
pub struct AccessLog<S> {
    inner: S,
    log: Mutex<Vec<PipelineId>>,
}

impl<S: ScoreSource> AccessLog<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn accesses(&self) -> Vec<PipelineId> {
        self.log.lock().expect("log lock").clone()
    }
}

impl<S: ScoreSource> ScoreSource for AccessLog<S> {
    fn candidates(&self) -> Vec<PipelineId> {
        self.inner.candidates()
    }

    fn observe(&self, pipeline: PipelineId) -> Option<f64> {
        self.log.lock().expect("log lock").push(pipeline);
        self.inner.observe(pipeline)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the private random stream for one `(seed, dataset, policy)` run.
pub fn stream_seed(seed: u64, dataset: DatasetId, kind: PolicyKind) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(dataset.0 as u64).rotate_left(17) ^ kind.code().rotate_left(41))
}

/// What an ABLR policy knows about the dataset: the model and the dataset's
/// raw meta-features.
pub struct ModelView<'a, T> {
    pub model: &'a AblrModel<T>,
    pub raw_features: &'a [f64],
}

/// Runs one policy on one held-out dataset of `md`.
pub fn run_search<T: Scalar>(
    md: &MetaDataset,
    model: Option<&AblrModel<T>>,
    dataset: DatasetId,
    policy: &SearchPolicy,
    iterations: usize,
) -> Result<SearchTrace, SearchError> {
    let name = md.dataset_name(dataset);
    if !md.test_datasets().contains(&dataset) {
        return Err(SearchError::NotATestDataset(name.to_string()));
    }
    if let Some(m) = model {
        if m.train_datasets().iter().any(|t| t == name) {
            return Err(SearchError::ModelTrainedOnTestDataset(name.to_string()));
        }
    }
    let y_star = md.best_score(dataset)?;
    let view = model.map(|m| ModelView {
        model: m,
        raw_features: md.meta_features().row(dataset),
    });
    let source = ReplaySource::new(md, dataset);
    run_search_on(&source, view, dataset, policy, iterations, y_star)
}

/// Search loop over an arbitrary score source. `y_star` is the regret
/// reference and is not visible to the policy.
pub fn run_search_on<T: Scalar, S: ScoreSource>(
    source: &S,
    model: Option<ModelView<'_, T>>,
    dataset: DatasetId,
    policy: &SearchPolicy,
    iterations: usize,
    y_star: f64,
) -> Result<SearchTrace, SearchError> {
    let candidates = source.candidates();
    let mut steps = Vec::with_capacity(iterations);
    let mut best: Option<f64> = None;
    let mut truncated = false;

    let record = |steps: &mut Vec<SearchStep>, chosen: Vec<PipelineId>, observed: Vec<f64>, best: &mut Option<f64>| {
        for &o in &observed {
            *best = Some(best.map_or(o, |b: f64| b.max(o)));
        }
        let b = best.expect("at least one observation per step");
        steps.push(SearchStep {
            iteration: steps.len() + 1,
            chosen,
            observed,
            best_so_far: b,
            regret: (y_star - b).max(0.0),
        });
    };

    match policy.kind {
        PolicyKind::Random1x | PolicyKind::Random2x => {
            let per = policy.kind.picks_per_iteration();
            let mut order = candidates;
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(policy.seed, dataset, policy.kind));
            order.shuffle(&mut rng);
            let mut rest = order.as_slice();
            for _ in 0..iterations {
                if rest.is_empty() {
                    truncated = true;
                    break;
                }
                let take = per.min(rest.len());
                if take < per {
                    truncated = true;
                }
                let (now, later) = rest.split_at(take);
                rest = later;
                let observed = now
                    .iter()
                    .map(|&p| source.observe(p).expect("candidate has a score"))
                    .collect();
                record(&mut steps, now.to_vec(), observed, &mut best);
            }
        }
        PolicyKind::AblrStatic | PolicyKind::AblrOnline => {
            let view = model.ok_or(SearchError::MissingModel(policy.kind))?;
            let m = view.model;
            let input = m.network_input(view.raw_features)?;
            let online = policy.kind == PolicyKind::AblrOnline;
            let mut posterior = m.posterior().clone();
            let mut predictions = m.predict_with(&posterior, &input, &candidates)?;
            let mut evaluated = BTreeSet::new();
            for _ in 0..iterations {
                if evaluated.len() == candidates.len() {
                    truncated = true;
                    break;
                }
                let y_best = best.map(T::lit);
                let pick = select_next(&predictions, &evaluated, y_best, &policy.acquisition)?;
                let y = source.observe(pick).expect("candidate has a score");
                evaluated.insert(pick);
                record(&mut steps, vec![pick], vec![y], &mut best);
                if online && evaluated.len() < candidates.len() {
                    let phi = m.basis(&input, pick)?;
                    posterior = m.observe(&posterior, &phi, T::lit(y))?;
                    predictions = m.predict_with(&posterior, &input, &candidates)?;
                }
            }
        }
    }

    Ok(SearchTrace {
        dataset,
        policy: *policy,
        steps,
        truncated,
    })
}
