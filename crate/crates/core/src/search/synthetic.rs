//! Seeded low-rank meta-data for end-to-end runs.
//!
//! `score(i, j) = clip(sigmoid(uᵢ·vⱼ/√k + bⱼ) + ε, 0, 1)` with pipeline factors
//! `uᵢ`, dataset factors `vⱼ` and offsets `bⱼ` all standard normal (offsets
//! scaled by ½) and `ε ~ N(0, noise_std²)`. Dataset meta-features are
//! `[vⱼ, bⱼ, vⱼ² + η, sin vⱼ + η]` with `η ~ N(0, 0.05²)`, so they carry the
//! information needed to rank pipelines on an unseen dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::meta_store::{DatasetId, MetaDataset, MetaFeatureTable, PerformanceMatrix, PipelineId, SplitSpec};

use super::SearchError;

const FEATURE_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_pipelines: usize,
    pub n_datasets: usize,
    pub latent_dim: usize,
    pub noise_std: f64,
    pub missing_rate: f64,
    pub seed: u64,
    /// Fraction of datasets in the training split.
    pub train_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_pipelines: 50,
            n_datasets: 20,
            latent_dim: 4,
            noise_std: 0.02,
            missing_rate: 0.0,
            seed: 0,
            train_fraction: 0.7,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Latent factors behind a synthetic meta-dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub pipelines: Vec<Vec<f64>>,
    pub datasets: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

impl Latents {
    /// Noise-free logit `uᵢ·vⱼ/√k + bⱼ`.
    pub fn logit(&self, pipeline: usize, dataset: usize) -> f64 {
        let k = self.datasets[dataset].len() as f64;
        let u = &self.pipelines[pipeline];
        let v = &self.datasets[dataset];
        u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / k.sqrt() + self.offsets[dataset]
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<MetaDataset, SearchError> {
    generate_with_latents(cfg).map(|(md, _)| md)
}

/// Same as [`generate_synthetic`], also returning the latent factors.
pub fn generate_with_latents(cfg: &SyntheticConfig) -> Result<(MetaDataset, Latents), SearchError> {
    if cfg.n_pipelines == 0 || cfg.n_datasets == 0 || cfg.latent_dim == 0 {
        return Err(SearchError::InvalidArgument("synthetic dimensions must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.missing_rate) {
        return Err(SearchError::InvalidArgument("missing_rate must be in [0, 1)".into()));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(SearchError::InvalidArgument("noise_std must be non-negative".into()));
    }
    let k = cfg.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| std_normal.sample(rng)).collect() };

    let pipelines: Vec<Vec<f64>> = (0..cfg.n_pipelines).map(|_| draw(&mut rng, k)).collect();
    let datasets: Vec<Vec<f64>> = (0..cfg.n_datasets).map(|_| draw(&mut rng, k)).collect();
    let offsets: Vec<f64> = (0..cfg.n_datasets).map(|_| 0.5 * draw(&mut rng, 1)[0]).collect();
    let latents = Latents {
        pipelines,
        datasets,
        offsets,
    };

    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut perf = PerformanceMatrix::new(cfg.n_pipelines, cfg.n_datasets);
    for j in 0..cfg.n_datasets {
        for i in 0..cfg.n_pipelines {
            let eps = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let score = (sigmoid(latents.logit(i, j)) + eps).clamp(0.0, 1.0);
            let keep = rng.random::<f64>() >= cfg.missing_rate;
            if keep {
                perf.insert(PipelineId(i), DatasetId(j), score)
                    .expect("fresh cell with clamped score");
            }
        }
    }

    let feat_noise = Normal::new(0.0, FEATURE_NOISE).expect("valid normal");
    let mut feature_names: Vec<String> = (0..k).map(|c| format!("latent_{c}")).collect();
    feature_names.push("offset".into());
    feature_names.extend((0..k).map(|c| format!("latent_sq_{c}")));
    feature_names.extend((0..k).map(|c| format!("latent_sin_{c}")));
    let rows = (0..cfg.n_datasets)
        .map(|j| {
            let v = &latents.datasets[j];
            let mut row = v.clone();
            row.push(latents.offsets[j]);
            row.extend(v.iter().map(|x| x * x + feat_noise.sample(&mut rng)));
            row.extend(v.iter().map(|x| x.sin() + feat_noise.sample(&mut rng)));
            row
        })
        .collect();

    let names: Vec<String> = (0..cfg.n_datasets).map(|j| format!("synth_{j:03}")).collect();
    let md = MetaDataset::new(
        names,
        perf,
        MetaFeatureTable { feature_names, rows },
        &SplitSpec::Seeded {
            seed: cfg.seed,
            train_fraction: cfg.train_fraction,
        },
    )?;
    Ok((md, latents))
}
