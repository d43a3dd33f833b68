//! The fitted surrogate: basis network, regression head and the meta-feature
//! standardization it was trained with, persisted as one `ABLR1` file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::Candidate;
use crate::basis_net::{BasisNetwork, NetworkConfig, TrainingTriple};
use crate::blr::{self, BlrHyperparams, BlrPosterior, SufficientStats};
use crate::meta_features::{standardize, StandardizationStats};
use crate::meta_store::{MetaDataset, MetaFeatureTable, PipelineId};
use crate::scalar::Scalar;

use super::SearchError;

/// First line of every model file.
pub const MODEL_MAGIC: &str = "ABLR1";

/// Outcome of the two fitting phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_triples: usize,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub untrained_pipelines: Vec<PipelineId>,
    pub alpha: f64,
    pub beta: f64,
    pub log_marginal_likelihood: f64,
    pub used_grid_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AblrModel<T> {
    scalar: String,
    net_config: NetworkConfig,
    feature_stats: StandardizationStats,
    /// Names of the datasets whose scores the model has seen.
    train_datasets: Vec<String>,
    network: BasisNetwork<T>,
    posterior: BlrPosterior<T>,
    /// Training-target mean; the head regresses `y - target_offset`.
    target_offset: T,
    include_noise: bool,
    summary: FitSummary,
}

fn scalar_name<T: Scalar>() -> String {
    std::any::type_name::<T>().to_string()
}

impl<T: Scalar> AblrModel<T> {
    pub fn network(&self) -> &BasisNetwork<T> {
        &self.network
    }

    pub fn posterior(&self) -> &BlrPosterior<T> {
        &self.posterior
    }

    pub fn feature_stats(&self) -> &StandardizationStats {
        &self.feature_stats
    }

    pub fn net_config(&self) -> &NetworkConfig {
        &self.net_config
    }

    pub fn train_datasets(&self) -> &[String] {
        &self.train_datasets
    }

    pub fn target_offset(&self) -> T {
        self.target_offset
    }

    /// Conditions `posterior` on a score observed with basis `phi`.
    pub fn observe(&self, posterior: &BlrPosterior<T>, phi: &[T], y: T) -> Result<BlrPosterior<T>, SearchError> {
        Ok(posterior.append_observation(phi, y - self.target_offset)?)
    }

    pub fn summary(&self) -> &FitSummary {
        &self.summary
    }

    pub fn include_noise(&self) -> bool {
        self.include_noise
    }

    /// Adds `1/β` to predictive variances when set.
    pub fn set_include_noise(&mut self, on: bool) {
        self.include_noise = on;
    }

    /// Standardized network input for a dataset's raw meta-features.
    pub fn network_input(&self, raw_features: &[f64]) -> Result<Vec<T>, SearchError> {
        Ok(self
            .feature_stats
            .apply(raw_features)?
            .into_iter()
            .map(T::lit)
            .collect())
    }

    /// Basis vector for a pipeline on a dataset with (standardized) input.
    pub fn basis(&self, input: &[T], pipeline: PipelineId) -> Result<Vec<T>, SearchError> {
        Ok(self.network.forward(input, pipeline)?.1)
    }

    /// Predictive `(μ, σ)` for each listed pipeline under `posterior`.
    pub fn predict_with(
        &self,
        posterior: &BlrPosterior<T>,
        input: &[T],
        pipelines: &[PipelineId],
    ) -> Result<Vec<Candidate<T>>, SearchError> {
        pipelines
            .iter()
            .map(|&p| {
                let phi = self.basis(input, p)?;
                let pred = posterior.predict(&phi, self.include_noise)?;
                Ok(Candidate {
                    pipeline: p,
                    mu: pred.mean + self.target_offset,
                    sigma: pred.variance.max(T::zero()).sqrt(),
                })
            })
            .collect()
    }

    /// Predictive `(μ, σ)` on a dataset given its raw meta-features.
    pub fn predict(&self, raw_features: &[f64], pipelines: &[PipelineId]) -> Result<Vec<Candidate<T>>, SearchError> {
        let input = self.network_input(raw_features)?;
        self.predict_with(&self.posterior, &input, pipelines)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SearchError> {
        let mut out = Vec::new();
        writeln!(out, "{MODEL_MAGIC}").expect("write to Vec");
        serde_json::to_writer(&mut out, self).map_err(|e| SearchError::ModelFormat(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SearchError> {
        let text = std::str::from_utf8(bytes).map_err(|e| SearchError::ModelFormat(e.to_string()))?;
        let (magic, body) = text.split_once('\n').unwrap_or((text, ""));
        if magic.trim_end() != MODEL_MAGIC {
            return Err(SearchError::ModelFormat(format!(
                "bad magic header '{}', expected '{MODEL_MAGIC}'",
                magic.chars().take(16).collect::<String>()
            )));
        }
        let model: Self = serde_json::from_str(body).map_err(|e| SearchError::ModelFormat(e.to_string()))?;
        if model.scalar != scalar_name::<T>() {
            return Err(SearchError::ModelFormat(format!(
                "model stores {} parameters, requested {}",
                model.scalar,
                scalar_name::<T>()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), SearchError> {
        fs::write(path, self.to_bytes()?).map_err(|e| SearchError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, SearchError> {
        let bytes = fs::read(path).map_err(|e| SearchError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Training triples over the training datasets, with standardized features.
pub fn training_triples<T: Scalar>(
    md: &MetaDataset,
    standardized: &MetaFeatureTable,
) -> Vec<TrainingTriple<T>> {
    let mut triples = Vec::new();
    for &d in md.train_datasets() {
        let features: Vec<T> = standardized.row(d).iter().map(|&v| T::lit(v)).collect();
        for (p, score) in md.performance().column(d).iter().enumerate() {
            if let Some(s) = score {
                triples.push(TrainingTriple {
                    dataset_features: features.clone(),
                    pipeline: PipelineId(p),
                    target: T::lit(*s),
                });
            }
        }
    }
    triples
}

/// Two-phase fit on the training datasets only: train the network with squared
/// loss, then set `α`, `β` by maximizing the marginal likelihood of the frozen
/// basis and form the posterior.
pub fn fit_ablr<T: Scalar>(
    md: &MetaDataset,
    net_config: &NetworkConfig,
    blr_init: BlrHyperparams<T>,
) -> Result<AblrModel<T>, SearchError> {
    if md.train_datasets().is_empty() {
        return Err(SearchError::EmptyTrainingSet);
    }
    let table = md.meta_features();
    let train_rows = MetaFeatureTable {
        feature_names: table.feature_names.clone(),
        rows: md.train_datasets().iter().map(|&d| table.row(d).to_vec()).collect(),
    };
    let (_, stats) = standardize(&train_rows, None)?;
    let (standardized, _) = standardize(table, Some(&stats))?;

    let triples = training_triples::<T>(md, &standardized);
    if triples.is_empty() {
        return Err(SearchError::EmptyTrainingSet);
    }
    let mut network = BasisNetwork::init(net_config, md.n_pipelines(), table.n_features())?;
    let report = network.train(&triples, net_config)?;

    let phi = network.basis_matrix(triples.iter().map(|t| (t.dataset_features.as_slice(), t.pipeline)))?;
    let offset = triples.iter().fold(T::zero(), |acc, t| acc + t.target) / T::lit(triples.len() as f64);
    let y: Vec<T> = triples.iter().map(|t| t.target - offset).collect();
    let suff = SufficientStats::new(&phi, &y)?;
    let opt = blr::optimize_hyperparams_from_stats(&suff, blr_init)?;
    let posterior = blr::fit(&phi, &y, opt.hyper)?;

    Ok(AblrModel {
        scalar: scalar_name::<T>(),
        net_config: net_config.clone(),
        feature_stats: stats,
        train_datasets: md
            .train_datasets()
            .iter()
            .map(|&d| md.dataset_name(d).to_string())
            .collect(),
        network,
        posterior,
        target_offset: offset,
        include_noise: false,
        summary: FitSummary {
            n_triples: triples.len(),
            final_loss: report.final_loss,
            epoch_losses: report.epoch_losses,
            untrained_pipelines: report.untrained_pipelines,
            alpha: opt.hyper.alpha.as_f64(),
            beta: opt.hyper.beta.as_f64(),
            log_marginal_likelihood: opt.lml,
            used_grid_fallback: opt.used_grid,
        },
    })
}
