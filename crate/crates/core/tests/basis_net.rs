use ablr::basis_net::{BasisNetwork, NetError, NetworkConfig, TrainingTriple};
use ablr::PipelineId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(hidden: Vec<usize>, seed: u64) -> NetworkConfig {
    NetworkConfig {
        embedding_dim: 3,
        hidden_sizes: hidden,
        learning_rate: 0.05,
        batch_size: 2,
        epochs: 10,
        seed,
        ..NetworkConfig::default()
    }
}

fn triples(n: usize, n_features: usize, n_pipelines: usize, seed: u64) -> Vec<TrainingTriple<f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| TrainingTriple {
            dataset_features: (0..n_features).map(|_| r.random_range(-1.5..1.5)).collect(),
            pipeline: PipelineId(r.random_range(0..n_pipelines)),
            target: r.random_range(0.0..1.0),
        })
        .collect()
}

fn check_gradient(net: &BasisNetwork<f64>, data: &[TrainingTriple<f64>]) {
    let eps = 1e-5;
    let (_, grads) = net.loss_and_gradient(data).unwrap();
    let analytic = grads.to_flat();
    let theta = net.parameters();
    assert_eq!(analytic.len(), theta.len());
    let mut probe = net.clone();
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + eps;
        probe.set_parameters(&t);
        let up = probe.loss(data).unwrap();
        t[i] = theta[i] - eps;
        probe.set_parameters(&t);
        let down = probe.loss(data).unwrap();
        let fd = (up - down) / (2.0 * eps);
        let g = analytic[i];
        let denom = g.abs().max(fd.abs());
        if denom < 1e-8 {
            // Untouched embedding rows have exactly zero gradient.
            assert!(g.abs() < 1e-10 && fd.abs() < 1e-8, "param {i}: {g} vs {fd}");
            continue;
        }
        assert!((g - fd).abs() / denom < 1e-4, "param {i}: analytic {g} fd {fd}");
    }
}

#[test]
fn backprop_matches_finite_differences_two_hidden_units() {
    let net = BasisNetwork::<f64>::init(&tiny_config(vec![2], 7), 4, 3).unwrap();
    check_gradient(&net, &triples(5, 3, 4, 1));
}

#[test]
fn backprop_matches_finite_differences_deep() {
    let net = BasisNetwork::<f64>::init(&tiny_config(vec![4, 3, 2], 9), 5, 2).unwrap();
    check_gradient(&net, &triples(7, 2, 5, 2));
}

#[test]
fn memorizes_single_triple() {
    let data = triples(1, 3, 2, 4);
    let cfg = NetworkConfig {
        epochs: 2000,
        batch_size: 1,
        learning_rate: 0.05,
        ..tiny_config(vec![4], 3)
    };
    let mut net = BasisNetwork::<f64>::init(&cfg, 2, 3).unwrap();
    let report = net.train(&data, &cfg).unwrap();
    assert!(report.final_loss < 1e-4, "{}", report.final_loss);
}

#[test]
fn zero_epochs_is_identity() {
    let data = triples(6, 3, 4, 4);
    let cfg = NetworkConfig {
        epochs: 0,
        ..tiny_config(vec![4], 3)
    };
    let mut net = BasisNetwork::<f64>::init(&cfg, 4, 3).unwrap();
    let before = net.clone();
    let report = net.train(&data, &cfg).unwrap();
    assert!(report.epoch_losses.is_empty());
    assert_eq!(net, before);
}

#[test]
fn unseen_embeddings_stay_fixed_and_training_helps() {
    let data: Vec<_> = triples(40, 3, 3, 5);
    let cfg = NetworkConfig {
        epochs: 100,
        ..tiny_config(vec![8, 4], 1)
    };
    let mut net = BasisNetwork::<f64>::init(&cfg, 5, 3).unwrap();
    let before = net.clone();
    let loss0 = net.loss(&data).unwrap();
    let report = net.train(&data, &cfg).unwrap();
    assert!(report.final_loss < loss0);
    assert_eq!(report.untrained_pipelines, vec![PipelineId(3), PipelineId(4)]);
    for p in [3, 4] {
        assert_eq!(net.embedding().row(p), before.embedding().row(p));
    }
    assert_ne!(net.embedding().row(0), before.embedding().row(0));
}

#[test]
fn training_is_seed_deterministic() {
    let data = triples(30, 3, 4, 6);
    let cfg = tiny_config(vec![5, 3], 12);
    let run = || {
        let mut n = BasisNetwork::<f64>::init(&cfg, 4, 3).unwrap();
        n.train(&data, &cfg).unwrap();
        n
    };
    assert_eq!(run(), run());
    let other = NetworkConfig { seed: 13, ..cfg.clone() };
    let mut n = BasisNetwork::<f64>::init(&other, 4, 3).unwrap();
    n.train(&data, &other).unwrap();
    assert_ne!(n, run());
}

#[test]
fn divergence_is_reported() {
    let data: Vec<_> = triples(20, 3, 2, 7)
        .into_iter()
        .map(|t| TrainingTriple { target: t.target * 1e6, ..t })
        .collect();
    let cfg = NetworkConfig {
        learning_rate: 10.0,
        ..tiny_config(vec![4], 1)
    };
    let mut net = BasisNetwork::<f64>::init(&cfg, 2, 3).unwrap();
    assert!(matches!(net.train(&data, &cfg), Err(NetError::NonFiniteLoss { .. })));
}

#[test]
fn basis_is_last_hidden_layer() {
    let cfg = tiny_config(vec![4, 3], 2);
    let net = BasisNetwork::<f64>::init(&cfg, 3, 2).unwrap();
    let f = [0.3, -0.8];
    let (pred, basis) = net.forward(&f, PipelineId(1)).unwrap();
    assert_eq!(basis.len(), 3);
    assert!(basis.iter().all(|b| b.abs() < 1.0));
    let lin: f64 = net.output_weights().iter().zip(&basis).map(|(w, b)| w * b).sum::<f64>() + net.output_bias();
    assert!((pred - lin).abs() < 1e-15);
    assert!(matches!(net.forward(&f, PipelineId(3)), Err(NetError::UnknownPipeline(3))));
    assert!(matches!(net.forward(&[1.0], PipelineId(0)), Err(NetError::FeatureDimension { .. })));
}
