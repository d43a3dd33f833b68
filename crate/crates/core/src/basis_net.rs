//! Feed-forward tanh network over `[meta-features; pipeline embedding]`.
//!
//! The last hidden layer is the regression basis. A linear output unit sits on
//! top of it during training with squared loss and is discarded afterwards.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::meta_store::PipelineId;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub embedding_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 20,
            hidden_sizes: vec![500, 200, 100, 50, 50],
            activation: Activation::Tanh,
            learning_rate: 1e-2,
            batch_size: 64,
            epochs: 200,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.embedding_dim == 0 {
            return Err(NetError::InvalidConfig("embedding_dim must be at least 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(NetError::InvalidConfig("hidden_sizes must be non-empty and positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NetError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(NetError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("unknown pipeline {0}")]
    UnknownPipeline(usize),
    #[error("expected {expected} meta-features, got {found}")]
    FeatureDimension { expected: usize, found: usize },
    #[error("loss became non-finite in epoch {epoch}; try a smaller learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("no training data")]
    EmptyTrainingSet,
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}

/// One `(meta-features, pipeline) -> score` example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriple<T> {
    pub dataset_features: Vec<T>,
    pub pipeline: PipelineId,
    pub target: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer<T> {
    /// `out × in`.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisNetwork<T> {
    n_features: usize,
    /// `N × L`, row `i` is pipeline `i`'s embedding.
    embedding: Matrix<T>,
    hidden: Vec<DenseLayer<T>>,
    output_weights: Vec<T>,
    output_bias: T,
}

/// Gradients laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub embedding: Matrix<T>,
    pub hidden: Vec<DenseLayer<T>>,
    pub output_weights: Vec<T>,
    pub output_bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean squared error on the full training data after the last epoch.
    pub final_loss: f64,
    /// Mean of the mini-batch losses seen during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Pipelines with no training triple; their embeddings are untouched.
    pub untrained_pipelines: Vec<PipelineId>,
}

fn glorot_layer<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> DenseLayer<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::lit(rng.random_range(-bound..=bound)))
        .collect();
    DenseLayer {
        weights: Matrix::from_row_major(fan_out, fan_in, data),
        bias: vec![T::zero(); fan_out],
    }
}

impl<T: Scalar> BasisNetwork<T> {
    /// Glorot-uniform weights, zero biases, `N(0, 0.1²)` embeddings, all drawn
    /// from a ChaCha stream seeded by `config.seed`.
    pub fn init(config: &NetworkConfig, n_pipelines: usize, n_features: usize) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let l = config.embedding_dim;
        let mut hidden = Vec::with_capacity(config.hidden_sizes.len());
        let mut fan_in = n_features + l;
        for &h in &config.hidden_sizes {
            hidden.push(glorot_layer(&mut rng, fan_in, h));
            fan_in = h;
        }
        let out = glorot_layer(&mut rng, fan_in, 1);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let emb = (0..n_pipelines * l)
            .map(|_| T::lit(normal.sample(&mut rng)))
            .collect();
        Ok(Self {
            n_features,
            embedding: Matrix::from_row_major(n_pipelines, l, emb),
            hidden,
            output_weights: out.weights.as_slice().to_vec(),
            output_bias: T::zero(),
        })
    }

    /// Assembles a network from explicit parameters.
    pub fn from_parts(
        n_features: usize,
        embedding: Matrix<T>,
        hidden: Vec<DenseLayer<T>>,
        output_weights: Vec<T>,
        output_bias: T,
    ) -> Self {
        assert!(!hidden.is_empty());
        let mut width = n_features + embedding.cols();
        for layer in &hidden {
            assert_eq!(layer.weights.cols(), width, "layer input width");
            assert_eq!(layer.bias.len(), layer.weights.rows());
            width = layer.weights.rows();
        }
        assert_eq!(output_weights.len(), width);
        Self {
            n_features,
            embedding,
            hidden,
            output_weights,
            output_bias,
        }
    }

    pub fn n_pipelines(&self) -> usize {
        self.embedding.rows()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.cols()
    }

    /// Basis dimension `M`.
    pub fn basis_dim(&self) -> usize {
        self.hidden.last().map_or(0, |l| l.weights.rows())
    }

    pub fn embedding(&self) -> &Matrix<T> {
        &self.embedding
    }

    pub fn hidden_layers(&self) -> &[DenseLayer<T>] {
        &self.hidden
    }

    pub fn output_weights(&self) -> &[T] {
        &self.output_weights
    }

    pub fn output_bias(&self) -> T {
        self.output_bias
    }

    fn check(&self, features: &[T], pipeline: PipelineId) -> Result<(), NetError> {
        if pipeline.0 >= self.n_pipelines() {
            return Err(NetError::UnknownPipeline(pipeline.0));
        }
        if features.len() != self.n_features {
            return Err(NetError::FeatureDimension {
                expected: self.n_features,
                found: features.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer: index 0 is the input, the last one the basis.
    fn activations(&self, features: &[T], pipeline: PipelineId) -> Vec<Vec<T>> {
        let mut input = Vec::with_capacity(self.n_features + self.embedding_dim());
        input.extend_from_slice(features);
        input.extend_from_slice(self.embedding.row(pipeline.0));
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(input);
        for layer in &self.hidden {
            let prev = acts.last().expect("input pushed");
            let next = layer
                .weights
                .iter_rows()
                .zip(&layer.bias)
                .map(|(w, &b)| (dot(w, prev) + b).tanh())
                .collect();
            acts.push(next);
        }
        acts
    }

    /// Returns `(prediction, basis)`.
    pub fn forward(&self, features: &[T], pipeline: PipelineId) -> Result<(T, Vec<T>), NetError> {
        self.check(features, pipeline)?;
        let mut acts = self.activations(features, pipeline);
        let basis = acts.pop().expect("at least one hidden layer");
        let pred = dot(&self.output_weights, &basis) + self.output_bias;
        Ok((pred, basis))
    }

    /// Stacks the basis of every input into a `Q × M` design matrix.
    pub fn basis_matrix<'a, I>(&self, inputs: I) -> Result<Matrix<T>, NetError>
    where
        I: IntoIterator<Item = (&'a [T], PipelineId)>,
    {
        let mut phi = Matrix::zeros(0, self.basis_dim());
        for (f, p) in inputs {
            let (_, basis) = self.forward(f, p)?;
            phi.push_row(&basis);
        }
        Ok(phi)
    }

    fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            embedding: Matrix::zeros(self.embedding.rows(), self.embedding.cols()),
            hidden: self
                .hidden
                .iter()
                .map(|l| DenseLayer {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
            output_weights: vec![T::zero(); self.output_weights.len()],
            output_bias: T::zero(),
        }
    }

    /// Adds `scale · ∂(pred − target)²/∂θ` for one example into `grads` and
    /// returns the squared error.
    fn accumulate(&self, triple: &TrainingTriple<T>, scale: T, grads: &mut Gradients<T>) -> T {
        let acts = self.activations(&triple.dataset_features, triple.pipeline);
        let basis = acts.last().expect("basis");
        let pred = dot(&self.output_weights, basis) + self.output_bias;
        let err = pred - triple.target;
        let dpred = scale * (err + err);

        grads.output_bias += dpred;
        for (g, &a) in grads.output_weights.iter_mut().zip(basis) {
            *g += dpred * a;
        }
        // δ for the last hidden layer's pre-activations.
        let mut delta: Vec<T> = self
            .output_weights
            .iter()
            .zip(basis)
            .map(|(&w, &a)| dpred * w * (T::one() - a * a))
            .collect();
        for li in (0..self.hidden.len()).rev() {
            let layer = &self.hidden[li];
            let below = &acts[li];
            let g = &mut grads.hidden[li];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                for (gw, &a) in g.weights.row_mut(o).iter_mut().zip(below) {
                    *gw += d * a;
                }
            }
            // Back-propagate into the layer input.
            let mut back = vec![T::zero(); below.len()];
            for (o, &d) in delta.iter().enumerate() {
                for (b, &w) in back.iter_mut().zip(layer.weights.row(o)) {
                    *b += d * w;
                }
            }
            if li == 0 {
                let emb = grads.embedding.row_mut(triple.pipeline.0);
                for (ge, &b) in emb.iter_mut().zip(&back[self.n_features..]) {
                    *ge += b;
                }
            } else {
                delta = back
                    .into_iter()
                    .zip(below)
                    .map(|(b, &a)| b * (T::one() - a * a))
                    .collect();
            }
        }
        err * err
    }

    /// Mean squared error over `data` and its gradient.
    pub fn loss_and_gradient(&self, data: &[TrainingTriple<T>]) -> Result<(T, Gradients<T>), NetError> {
        if data.is_empty() {
            return Err(NetError::EmptyTrainingSet);
        }
        for t in data {
            self.check(&t.dataset_features, t.pipeline)?;
        }
        let mut grads = self.zero_gradients();
        let scale = T::one() / T::lit(data.len() as f64);
        let sse: T = data.iter().map(|t| self.accumulate(t, scale, &mut grads)).sum();
        Ok((sse * scale, grads))
    }

    /// Mean squared error over `data`.
    pub fn loss(&self, data: &[TrainingTriple<T>]) -> Result<T, NetError> {
        if data.is_empty() {
            return Err(NetError::EmptyTrainingSet);
        }
        let mut sse = T::zero();
        for t in data {
            let (pred, _) = self.forward(&t.dataset_features, t.pipeline)?;
            let e = pred - t.target;
            sse += e * e;
        }
        Ok(sse / T::lit(data.len() as f64))
    }

    /// Mini-batch SGD on mean squared error. Batches are drawn from a
    /// per-epoch shuffle seeded by `config.seed`.
    pub fn train(&mut self, data: &[TrainingTriple<T>], config: &NetworkConfig) -> Result<TrainingReport, NetError> {
        config.validate()?;
        if data.is_empty() {
            return Err(NetError::EmptyTrainingSet);
        }
        for t in data {
            self.check(&t.dataset_features, t.pipeline)?;
        }
        let mut seen = vec![false; self.n_pipelines()];
        for t in data {
            seen[t.pipeline.0] = true;
        }
        let untrained_pipelines = seen
            .iter()
            .enumerate()
            .filter(|(_, &s)| !s)
            .map(|(i, _)| PipelineId(i))
            .collect();

        // Distinct stream from the one used by `init`.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5DEE_CE66_D1CE_5EED);
        let lr = T::lit(config.learning_rate);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grads = self.zero_gradients();
        let mut touched: Vec<usize> = Vec::with_capacity(config.batch_size);
        let mut epoch_losses = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_sse = T::zero();
            for batch in order.chunks(config.batch_size) {
                reset(&mut grads, &touched);
                touched.clear();
                let scale = T::one() / T::lit(batch.len() as f64);
                for &k in batch {
                    epoch_sse += self.accumulate(&data[k], scale, &mut grads);
                    touched.push(data[k].pipeline.0);
                }
                touched.sort_unstable();
                touched.dedup();
                self.step(&grads, &touched, lr);
            }
            let mse = (epoch_sse / T::lit(data.len() as f64)).as_f64();
            if !mse.is_finite() || !self.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch });
            }
            epoch_losses.push(mse);
        }
        let final_loss = self.loss(data)?.as_f64();
        if !final_loss.is_finite() {
            return Err(NetError::NonFiniteLoss {
                epoch: config.epochs,
            });
        }
        Ok(TrainingReport {
            final_loss,
            epoch_losses,
            untrained_pipelines,
        })
    }

    fn step(&mut self, g: &Gradients<T>, touched_rows: &[usize], lr: T) {
        for (layer, gl) in self.hidden.iter_mut().zip(&g.hidden) {
            axpy(layer.weights_mut_slice(), gl.weights.as_slice(), lr);
            axpy(&mut layer.bias, &gl.bias, lr);
        }
        axpy(&mut self.output_weights, &g.output_weights, lr);
        self.output_bias -= lr * g.output_bias;
        for &r in touched_rows {
            axpy(self.embedding.row_mut(r), g.embedding.row(r), lr);
        }
    }

    fn is_finite(&self) -> bool {
        self.parameters().iter().all(|v| v.is_finite())
    }

    /// Flattened parameters: each hidden layer's weights then biases, output
    /// weights, output bias, embedding.
    pub fn parameters(&self) -> Vec<T> {
        let mut p = Vec::new();
        for l in &self.hidden {
            p.extend_from_slice(l.weights.as_slice());
            p.extend_from_slice(&l.bias);
        }
        p.extend_from_slice(&self.output_weights);
        p.push(self.output_bias);
        p.extend_from_slice(self.embedding.as_slice());
        p
    }

    /// Inverse of [`Self::parameters`].
    pub fn set_parameters(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.parameters().len(), "parameter count");
        let mut it = values.iter().copied();
        for l in &mut self.hidden {
            l.weights_mut_slice().iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        self.output_weights.iter_mut().for_each(|w| *w = it.next().unwrap());
        self.output_bias = it.next().unwrap();
        let rows = self.embedding.rows();
        for r in 0..rows {
            self.embedding.row_mut(r).iter_mut().for_each(|e| *e = it.next().unwrap());
        }
    }
}

impl<T: Scalar> DenseLayer<T> {
    fn weights_mut_slice(&mut self) -> &mut [T] {
        self.weights.as_mut_slice()
    }
}

impl<T: Scalar> Gradients<T> {
    /// Flattened in the order of [`BasisNetwork::parameters`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut p = Vec::new();
        for l in &self.hidden {
            p.extend_from_slice(l.weights.as_slice());
            p.extend_from_slice(&l.bias);
        }
        p.extend_from_slice(&self.output_weights);
        p.push(self.output_bias);
        p.extend_from_slice(self.embedding.as_slice());
        p
    }
}

fn axpy<T: Scalar>(x: &mut [T], g: &[T], lr: T) {
    for (v, &d) in x.iter_mut().zip(g) {
        *v -= lr * d;
    }
}

fn reset<T: Scalar>(g: &mut Gradients<T>, touched_rows: &[usize]) {
    for l in &mut g.hidden {
        l.weights_mut_slice().iter_mut().for_each(|w| *w = T::zero());
        l.bias.iter_mut().for_each(|b| *b = T::zero());
    }
    g.output_weights.iter_mut().for_each(|w| *w = T::zero());
    g.output_bias = T::zero();
    for &r in touched_rows {
        g.embedding.row_mut(r).iter_mut().for_each(|e| *e = T::zero());
    }
}
