mod common;

use ablr::blr::{
    fit, lml_with_gradient, log_marginal_likelihood, optimize_hyperparams, BlrHyperparams, SufficientStats,
};
use ablr::linalg::Matrix;
use common::{blr_oracle, gaussian_marginal, random_matrix, rng};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn posterior_and_lml_match_dense_oracle() {
    let mut r = rng(11);
    for _ in 0..100 {
        let q = r.random_range(1..=10);
        let m = r.random_range(1..=6);
        let phi = random_matrix(&mut r, q, m);
        let y: Vec<f64> = (0..q).map(|_| r.random_range(-1.0..1.0)).collect();
        let alpha = r.random_range(0.1..5.0);
        let beta = r.random_range(0.1..5.0);
        let hp = BlrHyperparams::new(alpha, beta).unwrap();
        let post = fit(&phi, &y, hp).unwrap();
        let (mean, cov) = blr_oracle(&phi, &y, alpha, beta);
        for (a, b) in post.mean().iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let star: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
        let s = nalgebra::DVector::from_column_slice(&star);
        let pred = post.predict(&star, false).unwrap();
        assert!((pred.mean - mean.dot(&s)).abs() < 1e-8);
        assert!((pred.variance - s.dot(&(&cov * &s))).abs() < 1e-8);
        let noisy = post.predict(&star, true).unwrap();
        assert!((noisy.variance - pred.variance - 1.0 / beta).abs() < 1e-12);

        let lml = log_marginal_likelihood(&phi, &y, hp).unwrap();
        let direct = gaussian_marginal(&phi, &y, alpha, beta);
        assert!((lml - direct).abs() < 1e-8, "{lml} vs {direct}");
    }
}

#[test]
fn worked_scalar_case() {
    let phi = Matrix::from_row_major(2, 1, vec![1.0f64, 1.0]);
    let y = [0.0, 1.0];
    let hp = BlrHyperparams::new(1.0, 1.0).unwrap();
    let post = fit(&phi, &y, hp).unwrap();
    assert!((post.mean()[0] - 1.0 / 3.0).abs() < 1e-12);
    let p = post.predict(&[1.0], false).unwrap();
    assert!((p.mean - 1.0 / 3.0).abs() < 1e-12);
    assert!((p.variance - 1.0 / 3.0).abs() < 1e-12);
    let lml = log_marginal_likelihood(&phi, &y, hp).unwrap();
    assert!((lml - -2.72052).abs() < 1e-5, "{lml}");
}

#[test]
fn empty_data_gives_prior_and_zero_lml() {
    let phi = Matrix::<f64>::zeros(0, 3);
    let hp = BlrHyperparams::new(2.0, 5.0).unwrap();
    let post = fit(&phi, &[], hp).unwrap();
    assert_eq!(post.mean(), &[0.0, 0.0, 0.0]);
    let p = post.predict(&[1.0, 1.0, 0.0], false).unwrap();
    assert!((p.variance - 1.0).abs() < 1e-12);
    assert_eq!(log_marginal_likelihood(&phi, &[], hp).unwrap(), 0.0);
}

#[test]
fn lml_gradient_matches_central_differences() {
    let mut r = rng(5);
    let eps = 1e-6;
    for _ in 0..25 {
        let q = r.random_range(2..=10);
        let m = r.random_range(1..=5);
        let phi = random_matrix(&mut r, q, m);
        let y: Vec<f64> = (0..q).map(|_| r.random_range(-1.0..1.0)).collect();
        let stats = SufficientStats::new(&phi, &y).unwrap();
        let x = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let at = |x: [f64; 2]| {
            let hp = BlrHyperparams::new(x[0].exp(), x[1].exp()).unwrap();
            lml_with_gradient(&stats, hp).unwrap()
        };
        let g = at(x).grad_log;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (at(xp).value - at(xm).value) / (2.0 * eps);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-5, "component {i}: analytic {} fd {fd} rel {rel}", g[i]);
        }
    }
}

#[test]
fn recovers_noise_precision() {
    let mut r = rng(3);
    let (alpha, beta) = (1.0, 100.0);
    let (q, m) = (2000, 5);
    let phi = random_matrix(&mut r, q, m);
    let w_dist = Normal::new(0.0, (1.0f64 / alpha).sqrt()).unwrap();
    let n_dist = Normal::new(0.0, (1.0f64 / beta).sqrt()).unwrap();
    let w: Vec<f64> = (0..m).map(|_| w_dist.sample(&mut r)).collect();
    let y: Vec<f64> = phi
        .iter_rows()
        .map(|row| row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + n_dist.sample(&mut r))
        .collect();
    let out = optimize_hyperparams(&phi, &y, BlrHyperparams::default()).unwrap();
    assert!(!out.used_grid);
    let b = out.hyper.beta;
    assert!(b > beta / 2.0 && b < beta * 2.0, "beta {b}");
    let g = lml_with_gradient(&SufficientStats::new(&phi, &y).unwrap(), out.hyper).unwrap();
    assert!(g.grad_log.iter().all(|v| v.abs() < 1e-4), "{:?}", g.grad_log);
}

#[test]
fn large_beta_tends_to_least_squares() {
    let mut r = rng(8);
    let phi = random_matrix(&mut r, 12, 3);
    let y: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
    let post = fit(&phi, &y, BlrHyperparams::new(1e-6, 1e8).unwrap()).unwrap();
    let p = common::to_na(&phi);
    let ls = (p.transpose() * &p)
        .try_inverse()
        .unwrap()
        * p.transpose()
        * nalgebra::DVector::from_column_slice(&y);
    for (a, b) in post.mean().iter().zip(ls.iter()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn f32_posterior_tracks_f64() {
    let mut r = rng(21);
    let phi = random_matrix(&mut r, 8, 3);
    let y: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
    let phi32 = Matrix::from_row_major(8, 3, phi.as_slice().iter().map(|&v| v as f32).collect());
    let y32: Vec<f32> = y.iter().map(|&v| v as f32).collect();
    let a = fit(&phi, &y, BlrHyperparams::new(1.0, 2.0).unwrap()).unwrap();
    let b = fit(&phi32, &y32, BlrHyperparams::new(1.0f32, 2.0).unwrap()).unwrap();
    for (x, z) in a.mean().iter().zip(b.mean()) {
        assert!((x - *z as f64).abs() < 1e-4);
    }
}

fn instance() -> impl Strategy<Value = (Matrix<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
    (1usize..8, 1usize..5).prop_flat_map(|(q, m)| {
        (
            prop::collection::vec(-2.0..2.0f64, q * m),
            prop::collection::vec(-1.0..1.0f64, q),
            prop::collection::vec(-2.0..2.0f64, m),
            0.05..10.0f64,
            0.05..10.0f64,
        )
            .prop_map(move |(data, y, extra, a, b)| (Matrix::from_row_major(q, m, data), y, extra, a, b))
    })
}

proptest! {
    #[test]
    fn append_equals_refit((phi, y, extra, a, b) in instance(), y_new in -1.0..1.0f64) {
        let hp = BlrHyperparams::new(a, b).unwrap();
        let appended = fit(&phi, &y, hp).unwrap().append_observation(&extra, y_new).unwrap();
        let mut phi2 = phi.clone();
        phi2.push_row(&extra);
        let mut y2 = y.clone();
        y2.push(y_new);
        let refit = fit(&phi2, &y2, hp).unwrap();
        for (u, v) in appended.mean().iter().zip(refit.mean()) {
            prop_assert!((u - v).abs() < 1e-8);
        }
        let p1 = appended.predict(&extra, false).unwrap();
        let p2 = refit.predict(&extra, false).unwrap();
        prop_assert!((p1.variance - p2.variance).abs() < 1e-8);
    }

    #[test]
    fn variance_never_grows_with_data((phi, y, extra, a, b) in instance(), probe in prop::collection::vec(-2.0..2.0f64, 5)) {
        let hp = BlrHyperparams::new(a, b).unwrap();
        let before = fit(&phi, &y, hp).unwrap();
        let after = before.append_observation(&extra, 0.3).unwrap();
        let star = &probe[..extra.len()];
        let v0 = before.predict(star, false).unwrap().variance;
        let v1 = after.predict(star, false).unwrap().variance;
        prop_assert!(v1 <= v0 + 1e-12);
        prop_assert!(v1 >= 0.0);
    }

    #[test]
    fn optimizer_never_worse_than_init((phi, y, _extra, a, b) in instance()) {
        let init = BlrHyperparams::new(a, b).unwrap();
        let out = optimize_hyperparams(&phi, &y, init).unwrap();
        let start = log_marginal_likelihood(&phi, &y, init).unwrap();
        prop_assert!(out.lml >= start - 1e-9);
        let (lo, hi) = ablr::blr::LOG_PRECISION_BOUNDS;
        for v in [out.hyper.alpha.ln(), out.hyper.beta.ln()] {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
