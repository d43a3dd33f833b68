//! Conjugate Bayesian linear regression on a fixed basis.
//!
//! With weight prior `w ~ N(0, α⁻¹I)` and noise precision `β`:
//!
//! ```text
//! K  = β ΦᵀΦ + α I
//! m  = β K⁻¹ Φᵀ y
//! μ* = mᵀ φ*            σ²* = φ*ᵀ K⁻¹ φ*   (+ 1/β with `include_noise`)
//! ```
//!
//! and the log marginal likelihood
//! `M/2 ln α + Q/2 ln β − Q/2 ln 2π − β/2 ‖y − Φm‖² − α/2 mᵀm − ½ ln|K|`.
//! Everything is computed from the sufficient statistics `ΦᵀΦ`, `Φᵀy`, `yᵀy`.

use serde::{Deserialize, Serialize};

use crate::linalg::{Cholesky, Matrix};
use crate::scalar::{dot, Scalar};

/// Box for `(ln α, ln β)` during empirical-Bayes optimization.
pub const LOG_PRECISION_BOUNDS: (f64, f64) = (-10.0, 10.0);
const GRID_POINTS: usize = 21;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BlrError {
    #[error("Cholesky factorization failed even with jitter {jitter:e}; the basis is numerically degenerate")]
    CholeskyFailure { jitter: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("hyperparameters must be positive and finite (alpha = {alpha}, beta = {beta})")]
    InvalidHyperparams { alpha: f64, beta: f64 },
    #[error("non-finite value in design matrix or targets")]
    NonFiniteInput,
    #[error("need at least one observation")]
    NoObservations,
}

/// `alpha`: prior precision of the weights; `beta`: noise precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlrHyperparams<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> BlrHyperparams<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self, BlrError> {
        let hp = Self { alpha, beta };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), BlrError> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        if ok(self.alpha) && ok(self.beta) {
            Ok(())
        } else {
            Err(BlrError::InvalidHyperparams {
                alpha: self.alpha.as_f64(),
                beta: self.beta.as_f64(),
            })
        }
    }

    fn from_log(x: [f64; 2]) -> Self {
        Self {
            alpha: T::lit(x[0].exp()),
            beta: T::lit(x[1].exp()),
        }
    }

    fn to_log(self) -> [f64; 2] {
        [self.alpha.as_f64().ln(), self.beta.as_f64().ln()]
    }
}

impl<T: Scalar> Default for BlrHyperparams<T> {
    fn default() -> Self {
        Self {
            alpha: T::one(),
            beta: T::one(),
        }
    }
}

/// `ΦᵀΦ`, `Φᵀy`, `yᵀy` and `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats<T> {
    pub gram: Matrix<T>,
    pub phi_t_y: Vec<T>,
    pub y_t_y: T,
    pub n_obs: usize,
}

impl<T: Scalar> SufficientStats<T> {
    pub fn new(phi: &Matrix<T>, y: &[T]) -> Result<Self, BlrError> {
        if y.len() != phi.rows() {
            return Err(BlrError::DimensionMismatch {
                expected: phi.rows(),
                found: y.len(),
            });
        }
        if !phi.as_slice().iter().chain(y).all(|v| v.is_finite()) {
            return Err(BlrError::NonFiniteInput);
        }
        Ok(Self {
            gram: phi.gram(),
            phi_t_y: phi.transpose_mul_vec(y),
            y_t_y: dot(y, y),
            n_obs: y.len(),
        })
    }

    pub fn basis_dim(&self) -> usize {
        self.phi_t_y.len()
    }
}

/// Posterior over the weights. Immutable; updates return a new value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlrPosterior<T> {
    mean: Vec<T>,
    k_chol: Cholesky<T>,
    hyper: BlrHyperparams<T>,
    n_obs: usize,
    /// `Φᵀy`, kept so observations can be appended without the design matrix.
    phi_t_y: Vec<T>,
}

/// Predictive mean and variance at one basis vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predictive<T> {
    pub mean: T,
    pub variance: T,
}

/// Factorizes `K = β G + α I`, adding diagonal jitter `10⁻¹⁰ … 10⁻⁴ · tr(K)/M`
/// on failure.
fn factor_k<T: Scalar>(gram: &Matrix<T>, hp: &BlrHyperparams<T>) -> Result<Cholesky<T>, BlrError> {
    let m = gram.rows();
    let mut k = gram.clone();
    k.as_mut_slice().iter_mut().for_each(|v| *v *= hp.beta);
    for i in 0..m {
        k[(i, i)] += hp.alpha;
    }
    if let Some(ch) = Cholesky::decompose(&k) {
        return Ok(ch);
    }
    let scale = if m == 0 { 1.0 } else { k.trace().as_f64() / m as f64 };
    let mut rel = 1e-10;
    while rel <= 1e-4 * (1.0 + 1e-9) {
        let mut kj = k.clone();
        for i in 0..m {
            kj[(i, i)] += T::lit(rel * scale);
        }
        if let Some(ch) = Cholesky::decompose(&kj) {
            return Ok(ch);
        }
        rel *= 10.0;
    }
    Err(BlrError::CholeskyFailure {
        jitter: 1e-4 * scale,
    })
}

fn posterior_from_stats<T: Scalar>(stats: &SufficientStats<T>, hp: BlrHyperparams<T>) -> Result<BlrPosterior<T>, BlrError> {
    hp.validate()?;
    let k_chol = factor_k(&stats.gram, &hp)?;
    let rhs: Vec<T> = stats.phi_t_y.iter().map(|&v| v * hp.beta).collect();
    let mean = k_chol.solve(&rhs);
    Ok(BlrPosterior {
        mean,
        k_chol,
        hyper: hp,
        n_obs: stats.n_obs,
        phi_t_y: stats.phi_t_y.clone(),
    })
}

/// Posterior for design matrix `phi` (`Q × M`) and targets `y`. `Q = 0` gives
/// the prior.
pub fn fit<T: Scalar>(phi: &Matrix<T>, y: &[T], hp: BlrHyperparams<T>) -> Result<BlrPosterior<T>, BlrError> {
    posterior_from_stats(&SufficientStats::new(phi, y)?, hp)
}

impl<T: Scalar> BlrPosterior<T> {
    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn k_cholesky(&self) -> &Cholesky<T> {
        &self.k_chol
    }

    pub fn hyperparams(&self) -> BlrHyperparams<T> {
        self.hyper
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn basis_dim(&self) -> usize {
        self.mean.len()
    }

    /// `K` rebuilt from its factor.
    pub fn k(&self) -> Matrix<T> {
        self.k_chol.reconstruct()
    }

    /// Predictive distribution at `phi_star`. The variance is the weight
    /// uncertainty only unless `include_noise` adds `1/β`.
    pub fn predict(&self, phi_star: &[T], include_noise: bool) -> Result<Predictive<T>, BlrError> {
        if phi_star.len() != self.basis_dim() {
            return Err(BlrError::DimensionMismatch {
                expected: self.basis_dim(),
                found: phi_star.len(),
            });
        }
        let mean = dot(&self.mean, phi_star);
        let mut variance = self.k_chol.inv_quad_form(phi_star);
        if include_noise {
            variance += self.hyper.beta.recip();
        }
        Ok(Predictive { mean, variance })
    }

    /// Posterior after one more observation `(phi, y)`, via a rank-one update
    /// of the Cholesky factor of `K`.
    pub fn append_observation(&self, phi: &[T], y: T) -> Result<Self, BlrError> {
        if phi.len() != self.basis_dim() {
            return Err(BlrError::DimensionMismatch {
                expected: self.basis_dim(),
                found: phi.len(),
            });
        }
        if !phi.iter().all(|v| v.is_finite()) || !y.is_finite() {
            return Err(BlrError::NonFiniteInput);
        }
        let mut k_chol = self.k_chol.clone();
        let scaled: Vec<T> = phi.iter().map(|&v| v * self.hyper.beta.sqrt()).collect();
        k_chol.rank_one_update(&scaled);
        let phi_t_y: Vec<T> = self.phi_t_y.iter().zip(phi).map(|(&a, &p)| a + p * y).collect();
        let rhs: Vec<T> = phi_t_y.iter().map(|&v| v * self.hyper.beta).collect();
        let mean = k_chol.solve(&rhs);
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(BlrError::CholeskyFailure { jitter: 0.0 });
        }
        Ok(Self {
            mean,
            k_chol,
            hyper: self.hyper,
            n_obs: self.n_obs + 1,
            phi_t_y,
        })
    }

    /// Rebuilds a posterior from persisted parts.
    pub fn from_parts(
        mean: Vec<T>,
        k_lower: Matrix<T>,
        hyper: BlrHyperparams<T>,
        n_obs: usize,
        phi_t_y: Vec<T>,
    ) -> Result<Self, BlrError> {
        hyper.validate()?;
        let m = mean.len();
        for found in [k_lower.rows(), k_lower.cols(), phi_t_y.len()] {
            if found != m {
                return Err(BlrError::DimensionMismatch { expected: m, found });
            }
        }
        Ok(Self {
            mean,
            k_chol: Cholesky::from_lower(k_lower),
            hyper,
            n_obs,
            phi_t_y,
        })
    }
}

/// Log marginal likelihood and its gradient w.r.t. `(ln α, ln β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmlEval {
    pub value: f64,
    pub grad_log: [f64; 2],
}

/// Evaluates the log marginal likelihood (and gradient) from sufficient
/// statistics.
///
/// Because `m` minimizes `E(w) = β/2‖y − Φw‖² + α/2 wᵀw`, only the explicit
/// dependence of `E` on `α`, `β` enters the gradient; with
/// `∂ ln|K|/∂α = tr K⁻¹` and `∂ ln|K|/∂β = (M − α tr K⁻¹)/β`.
pub fn lml_with_gradient<T: Scalar>(stats: &SufficientStats<T>, hp: BlrHyperparams<T>) -> Result<LmlEval, BlrError> {
    let post = posterior_from_stats(stats, hp)?;
    let m_dim = stats.basis_dim() as f64;
    let q = stats.n_obs as f64;
    if stats.n_obs == 0 {
        // Empty product: every term vanishes, including ½ ln|K| − M/2 ln α.
        return Ok(LmlEval {
            value: 0.0,
            grad_log: [0.0, 0.0],
        });
    }
    let alpha = hp.alpha.as_f64();
    let beta = hp.beta.as_f64();
    let m = &post.mean;
    let mtm = dot(m, m).as_f64();
    let gm = stats.gram.mul_vec(m);
    let resid = (stats.y_t_y - (dot(m, &stats.phi_t_y) + dot(m, &stats.phi_t_y)) + dot(m, &gm))
        .as_f64()
        .max(0.0);
    let log_det = post.k_chol.log_det().as_f64();
    let value = 0.5 * m_dim * alpha.ln() + 0.5 * q * beta.ln()
        - 0.5 * q * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * beta * resid
        - 0.5 * alpha * mtm
        - 0.5 * log_det;
    let tr_inv = post.k_chol.inverse_trace().as_f64();
    let d_alpha = 0.5 * m_dim / alpha - 0.5 * mtm - 0.5 * tr_inv;
    let d_beta = 0.5 * q / beta - 0.5 * resid - 0.5 * (m_dim - alpha * tr_inv) / beta;
    Ok(LmlEval {
        value,
        grad_log: [alpha * d_alpha, beta * d_beta],
    })
}

/// Log marginal likelihood of `y` under the model with basis `phi`.
pub fn log_marginal_likelihood<T: Scalar>(phi: &Matrix<T>, y: &[T], hp: BlrHyperparams<T>) -> Result<f64, BlrError> {
    Ok(lml_with_gradient(&SufficientStats::new(phi, y)?, hp)?.value)
}

/// Result of empirical-Bayes estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperOptimum<T> {
    pub hyper: BlrHyperparams<T>,
    pub lml: f64,
    pub iterations: usize,
    /// True when the quasi-Newton run failed and the grid maximizer was used.
    pub used_grid: bool,
}

/// Maximizes the log marginal likelihood over `(ln α, ln β)` inside
/// [`LOG_PRECISION_BOUNDS`] with a projected BFGS iteration. The result never
/// has a lower likelihood than `init` (clamped into the box). If the iteration
/// produces non-finite values a 21 × 21 grid over the box is searched instead.
pub fn optimize_hyperparams<T: Scalar>(phi: &Matrix<T>, y: &[T], init: BlrHyperparams<T>) -> Result<HyperOptimum<T>, BlrError> {
    let stats = SufficientStats::new(phi, y)?;
    optimize_hyperparams_from_stats(&stats, init)
}

pub fn optimize_hyperparams_from_stats<T: Scalar>(
    stats: &SufficientStats<T>,
    init: BlrHyperparams<T>,
) -> Result<HyperOptimum<T>, BlrError> {
    if stats.n_obs == 0 {
        return Err(BlrError::NoObservations);
    }
    init.validate()?;
    let (lo, hi) = LOG_PRECISION_BOUNDS;
    let x0 = init.to_log().map(|v| v.clamp(lo, hi));
    match projected_bfgs(stats, x0) {
        Some((x, lml, iterations)) => Ok(HyperOptimum {
            hyper: BlrHyperparams::from_log(x),
            lml,
            iterations,
            used_grid: false,
        }),
        None => grid_search(stats),
    }
}

fn eval<T: Scalar>(stats: &SufficientStats<T>, x: [f64; 2]) -> Option<LmlEval> {
    match lml_with_gradient(stats, BlrHyperparams::from_log(x)) {
        Ok(e) if e.value.is_finite() && e.grad_log.iter().all(|g| g.is_finite()) => Some(e),
        _ => None,
    }
}

/// Minimizes `f = −LML` on the box. Returns `None` on divergence.
fn projected_bfgs<T: Scalar>(stats: &SufficientStats<T>, x0: [f64; 2]) -> Option<([f64; 2], f64, usize)> {
    const MAX_ITER: usize = 200;
    let (lo, hi) = LOG_PRECISION_BOUNDS;
    let project = |x: [f64; 2]| x.map(|v| v.clamp(lo, hi));

    let mut x = x0;
    let e = eval(stats, x)?;
    let mut f = -e.value;
    let mut g = e.grad_log.map(|v| -v);
    let mut h = [[1.0, 0.0], [0.0, 1.0]];
    let mut iterations = 0;

    for it in 0..MAX_ITER {
        iterations = it + 1;
        // Coordinates pinned at a bound with the gradient pushing outward.
        let fixed = [0, 1].map(|i| (x[i] <= lo && g[i] > 0.0) || (x[i] >= hi && g[i] < 0.0));
        let pg: Vec<f64> = (0..2).map(|i| if fixed[i] { 0.0 } else { g[i] }).collect();
        if pg.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-9 {
            break;
        }
        let mut d = if fixed.iter().any(|&b| b) {
            [-pg[0], -pg[1]]
        } else {
            [
                -(h[0][0] * g[0] + h[0][1] * g[1]),
                -(h[1][0] * g[0] + h[1][1] * g[1]),
            ]
        };
        if d[0] * g[0] + d[1] * g[1] >= 0.0 {
            d = [-pg[0], -pg[1]];
            h = [[1.0, 0.0], [0.0, 1.0]];
        }
        // Cap the step so one iteration moves at most a few log-units.
        let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if norm > 5.0 {
            d = d.map(|v| v * 5.0 / norm);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn = project([x[0] + t * d[0], x[1] + t * d[1]]);
            let step = [xn[0] - x[0], xn[1] - x[1]];
            match eval(stats, xn) {
                Some(en) => {
                    let fnew = -en.value;
                    if fnew <= f + 1e-4 * (g[0] * step[0] + g[1] * step[1]) {
                        accepted = Some((xn, fnew, en.grad_log.map(|v| -v)));
                        break;
                    }
                }
                None => return None,
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        let s = [xn[0] - x[0], xn[1] - x[1]];
        let yv = [gn[0] - g[0], gn[1] - g[1]];
        let sy = s[0] * yv[0] + s[1] * yv[1];
        if sy > 1e-12 {
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy = [h[0][0] * yv[0] + h[0][1] * yv[1], h[1][0] * yv[0] + h[1][1] * yv[1]];
            let yhy = yv[0] * hy[0] + yv[1] * hy[1];
            let mut hn = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    hn[i][j] = h[i][j] - rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            h = hn;
        }
        let converged = (f - fnew).abs() <= 1e-12 * (1.0 + f.abs());
        x = xn;
        f = fnew;
        g = gn;
        if converged {
            break;
        }
    }
    Some((x, -f, iterations))
}

fn grid_search<T: Scalar>(stats: &SufficientStats<T>) -> Result<HyperOptimum<T>, BlrError> {
    let (lo, hi) = LOG_PRECISION_BOUNDS;
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let mut best: Option<([f64; 2], f64)> = None;
    for i in 0..GRID_POINTS {
        for j in 0..GRID_POINTS {
            let x = [lo + i as f64 * step, lo + j as f64 * step];
            if let Some(e) = eval(stats, x) {
                if best.is_none_or(|(_, v)| e.value > v) {
                    best = Some((x, e.value));
                }
            }
        }
    }
    let (x, lml) = best.ok_or(BlrError::NonFiniteInput)?;
    Ok(HyperOptimum {
        hyper: BlrHyperparams::from_log(x),
        lml,
        iterations: GRID_POINTS * GRID_POINTS,
        used_grid: true,
    })
}
