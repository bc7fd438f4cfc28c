//! The cloaking mechanism.
//!
//! Predictions are a linear map of the private outputs, `y* = C y`. Changing
//! one output by at most `d` moves the prediction by `d·c_i`, so Gaussian noise
//! `N(0, (c(δ)Δ/ε)² M)` with `Δ = d·max_i ‖M^{-1/2} c_i‖` makes the release
//! (ε, δ)-DP. `M = Σ_i λ_i c_i c_iᵀ` is chosen to minimise `ln det M` subject
//! to `c_iᵀ M⁻¹ c_i ≤ 1`, which is done here by ascent on the concave dual
//! `L(λ) = ln det M(λ) − Σ_i λ_i`, whose gradient is `c_jᵀ M⁻¹ c_j − 1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{factorize, factorize_from, Factor};

/// Relative jitter stored on the diagonal of `M`.
pub const M_JITTER: f64 = 1e-10;
/// Projection floor for the weights `λ`.
pub const LAMBDA_MIN: f64 = 1e-10;

/// (ε, δ) and the bound `d` on how far one private output may move.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    /// `f64::INFINITY` disables the noise.
    pub epsilon: f64,
    pub delta: f64,
    pub data_sensitivity: f64,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64, data_sensitivity: f64) -> Result<Self> {
        let spec = Self {
            epsilon,
            delta,
            data_sensitivity,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// No noise at all; useful for the non-private baselines.
    pub fn non_private(data_sensitivity: f64) -> Self {
        Self {
            epsilon: f64::INFINITY,
            delta: 0.5,
            data_sensitivity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(invalid("epsilon", self.epsilon, "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", self.delta, "must lie in (0, 1)"));
        }
        if !(self.data_sensitivity > 0.0 && self.data_sensitivity.is_finite()) {
            return Err(invalid("data_sensitivity", self.data_sensitivity, "must be positive"));
        }
        Ok(())
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_finite()
    }

    /// Same spec with ε and δ divided evenly over `parts` releases.
    pub fn split(&self, parts: usize) -> Self {
        let parts = parts.max(1) as f64;
        Self {
            epsilon: self.epsilon / parts,
            delta: self.delta / parts,
            data_sensitivity: self.data_sensitivity,
        }
    }
}

/// The smallest admissible Gaussian-mechanism constant, `sqrt(2 ln(2/δ))`.
pub fn c_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(invalid("delta", delta, "c(δ) needs 0 < δ ≤ 2"));
    }
    Ok((2.0 * (2.0 / delta).ln()).max(0.0).sqrt())
}

/// `C = K_{*f} K⁻¹`, computed from a factorisation of `K`.
///
/// `k` is the training covariance including any observation noise on its
/// diagonal.
pub fn cloaking_matrix(k_star_f: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::DimensionMismatch {
            context: "training covariance (square)",
            expected: k.nrows(),
            found: k.ncols(),
        });
    }
    if k_star_f.ncols() != k.nrows() {
        return Err(Error::DimensionMismatch {
            context: "cross covariance columns",
            expected: k.nrows(),
            found: k_star_f.ncols(),
        });
    }
    let factor = factorize(k, "training covariance")?;
    Ok(factor.solve(&k_star_f.transpose()).transpose())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AscentMethod {
    /// Fixed-point update `λ_j ← λ_j · c_jᵀ M⁻¹ c_j`, which increases `L(λ)`
    /// monotonically and leaves `Σ λ_j t_j` equal to the rank of `C`.
    Multiplicative,
    /// Fixed-size projected gradient steps, `λ ← max(λ_min, λ + η ∇L)`.
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub iterations: usize,
    pub step_size: f64,
    /// Converged once `max_j c_jᵀ M⁻¹ c_j ≤ 1 + tolerance`.
    pub tolerance: f64,
    pub method: AscentMethod,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            iterations: 200,
            step_size: 0.05,
            tolerance: 1e-2,
            method: AscentMethod::Multiplicative,
        }
    }
}

/// Output of [`optimize_m`].
#[derive(Clone, Debug)]
pub struct MOptimum {
    pub lambda: DVector<f64>,
    /// `Σ λ_j c_j c_jᵀ` plus the stored diagonal jitter.
    pub m: DMatrix<f64>,
    pub iterations: usize,
    /// Max-norm of the projected gradient at return.
    pub gradient_norm: f64,
    /// `max_j c_jᵀ M⁻¹ c_j` at return.
    pub max_trace: f64,
    pub converged: bool,
    factor: Factor,
}

impl MOptimum {
    /// Errors unless the iteration converged.
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                gradient_norm: self.gradient_norm,
            })
        }
    }

    /// `c_jᵀ M⁻¹ c_j` for every column of `c`.
    pub fn traces(&self, c: &DMatrix<f64>) -> DVector<f64> {
        column_quadratic_forms(&self.factor, c)
    }
}

struct Evaluation {
    m: DMatrix<f64>,
    factor: Factor,
    traces: DVector<f64>,
    objective: f64,
}

fn build_m(c: &DMatrix<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
    let p = c.nrows();
    let mut scaled = c.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= lambda[j];
    }
    let mut m = &scaled * c.transpose();
    let jitter = M_JITTER * m.trace().max(0.0) / p as f64;
    let jitter = if jitter > 0.0 { jitter } else { M_JITTER };
    for i in 0..p {
        m[(i, i)] += jitter;
    }
    crate::linalg::symmetrize(&mut m);
    m
}

/// Factorises `m`, folding any extra jitter the factorisation needed back
/// into `m` so that the stored matrix is exactly the one factorised.
fn factor_exact(m: &mut DMatrix<f64>) -> Result<Factor> {
    let factor = factorize_from(m, 0.0, "noise covariance M")?;
    let extra = factor.jitter();
    if extra > 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += extra;
        }
    }
    Ok(factor)
}

fn evaluate(c: &DMatrix<f64>, lambda: &DVector<f64>) -> Result<Evaluation> {
    let mut m = build_m(c, lambda);
    let factor = factor_exact(&mut m)?;
    let traces = column_quadratic_forms(&factor, c);
    let objective = factor.ln_determinant() - lambda.sum();
    Ok(Evaluation {
        m,
        factor,
        traces,
        objective,
    })
}

fn column_quadratic_forms(factor: &Factor, c: &DMatrix<f64>) -> DVector<f64> {
    let v = factor.whiten(c);
    DVector::from_iterator(c.ncols(), v.column_iter().map(|col| col.norm_squared()))
}

/// Ascent direction `∇L = c_jᵀ M⁻¹ c_j − 1`; the negative of the derivative
/// stated for the noise objective.
fn gradient(traces: &DVector<f64>) -> DVector<f64> {
    traces.map(|t| t - 1.0)
}

fn projected_gradient_norm(lambda: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    lambda
        .iter()
        .zip(grad.iter())
        .map(|(&l, &g)| if l > LAMBDA_MIN { g.abs() } else { g.max(0.0) })
        .fold(0.0, f64::max)
}

fn project(v: DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(LAMBDA_MIN))
}

/// Optimises the noise covariance `M = Σ λ_j c_j c_jᵀ` for cloaking matrix `c`.
pub fn optimize_m(c: &DMatrix<f64>, options: &OptimizeOptions) -> Result<MOptimum> {
    let n = c.ncols();
    if n == 0 || c.nrows() == 0 || c.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroCloakingMatrix);
    }
    crate::linalg::check_finite_matrix(c, "cloaking matrix")?;
    if options.step_size.is_nan() || options.step_size <= 0.0 {
        return Err(invalid("step_size", options.step_size, "must be positive"));
    }
    if options.tolerance.is_nan() || options.tolerance < 0.0 {
        return Err(invalid("tolerance", options.tolerance, "must be non-negative"));
    }

    let mut lambda = DVector::from_element(n, 1.0 / n as f64);
    let mut eval = evaluate(c, &lambda)?;
    if options.method == AscentMethod::Gradient {
        // Jump to the best multiple of the uniform start so that fixed-size
        // steps begin on the right scale.
        let weighted = lambda.dot(&eval.traces);
        lambda = project(&lambda * (weighted / lambda.sum()));
        eval = evaluate(c, &lambda)?;
    }
    let mut iterations = 0;
    while iterations < options.iterations && eval.traces.max() > 1.0 + options.tolerance {
        iterations += 1;
        let cand = match options.method {
            AscentMethod::Multiplicative => project(lambda.component_mul(&eval.traces)),
            AscentMethod::Gradient => project(&lambda + gradient(&eval.traces) * options.step_size),
        };
        let next = evaluate(c, &cand)?;
        // Both updates can stall at working precision; keep the best point.
        if options.method == AscentMethod::Gradient && next.objective < eval.objective {
            break;
        }
        lambda = cand;
        eval = next;
    }

    let gnorm = projected_gradient_norm(&lambda, &gradient(&eval.traces));
    let max_trace = eval.traces.max();
    Ok(MOptimum {
        lambda,
        m: eval.m,
        iterations,
        gradient_norm: gnorm,
        max_trace,
        converged: max_trace <= 1.0 + options.tolerance,
        factor: eval.factor,
    })
}

/// `Δ = d · max_j sqrt(c_jᵀ M⁻¹ c_j)`.
pub fn delta_bound(c: &DMatrix<f64>, m: &DMatrix<f64>, d: f64) -> Result<f64> {
    if m.nrows() != c.nrows() {
        return Err(Error::DimensionMismatch {
            context: "noise covariance vs cloaking rows",
            expected: c.nrows(),
            found: m.nrows(),
        });
    }
    let factor = factorize_from(m, 0.0, "noise covariance M")?;
    Ok(delta_from_factor(&factor, c, d))
}

fn delta_from_factor(factor: &Factor, c: &DMatrix<f64>, d: f64) -> f64 {
    let worst = column_quadratic_forms(factor, c).iter().copied().fold(0.0, f64::max);
    d * worst.sqrt()
}

/// Everything needed to release `C y` privately.
#[derive(Clone, Debug)]
pub struct CloakingResult {
    pub c: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub m: DMatrix<f64>,
    /// Mahalanobis bound on a single-output change.
    pub delta: f64,
    /// `c(δ)·Δ/ε`; zero when ε is infinite.
    pub noise_scale: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `max_j ‖M^{-1/2} c_j‖`, i.e. `Δ` for `d = 1`.
    worst_column_norm: f64,
    factor: Factor,
}

impl CloakingResult {
    /// Optimises `M` for `c` and calibrates the noise scale to `privacy`.
    pub fn new(c: DMatrix<f64>, privacy: &PrivacySpec, options: &OptimizeOptions) -> Result<Self> {
        privacy.validate()?;
        let opt = optimize_m(&c, options)?;
        if !opt.converged {
            log::warn!(
                "noise covariance optimisation stopped after {} iterations with gradient norm {:e}",
                opt.iterations,
                opt.gradient_norm
            );
        }
        Self::from_parts(
            c,
            opt.lambda,
            opt.m,
            opt.factor,
            privacy,
            opt.gradient_norm,
            opt.iterations,
            opt.converged,
        )
    }

    /// Uses a caller-supplied `M` (it is factorised as given).
    pub fn with_m(c: DMatrix<f64>, mut m: DMatrix<f64>, privacy: &PrivacySpec) -> Result<Self> {
        privacy.validate()?;
        if m.nrows() != c.nrows() || m.ncols() != c.nrows() {
            return Err(Error::DimensionMismatch {
                context: "noise covariance vs cloaking rows",
                expected: c.nrows(),
                found: m.nrows(),
            });
        }
        let factor = factor_exact(&mut m)?;
        let lambda = DVector::zeros(c.ncols());
        Self::from_parts(c, lambda, m, factor, privacy, f64::NAN, 0, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        c: DMatrix<f64>,
        lambda: DVector<f64>,
        m: DMatrix<f64>,
        factor: Factor,
        privacy: &PrivacySpec,
        gradient_norm: f64,
        iterations: usize,
        converged: bool,
    ) -> Result<Self> {
        let worst_column_norm = delta_from_factor(&factor, &c, 1.0);
        let delta = privacy.data_sensitivity * worst_column_norm;
        let noise_scale = noise_scale(delta, privacy)?;
        Ok(Self {
            c,
            lambda,
            m,
            delta,
            noise_scale,
            gradient_norm,
            iterations,
            converged,
            worst_column_norm,
            factor,
        })
    }

    /// Lower Cholesky factor of the stored `M`.
    pub fn m_factor(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    /// `‖M^{-1/2} v‖₂`.
    pub fn mahalanobis(&self, v: &DVector<f64>) -> f64 {
        self.factor.whiten_vec(v).norm()
    }

    /// Standard deviation of the noise added to each output.
    pub fn noise_std(&self) -> DVector<f64> {
        self.m.diagonal().map(|v| self.noise_scale * v.max(0.0).sqrt())
    }

    /// One draw of `noise_scale · L z`, `z ~ N(0, I)`.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        sample_with_scale(&self.factor, self.noise_scale, rng)
    }

    /// The same `M` recalibrated to another privacy spec.
    pub fn rescaled(&self, privacy: &PrivacySpec) -> Result<Self> {
        let mut out = self.clone();
        out.delta = privacy.data_sensitivity * self.worst_column_norm;
        out.noise_scale = noise_scale(out.delta, privacy)?;
        Ok(out)
    }
}

fn noise_scale(delta: f64, privacy: &PrivacySpec) -> Result<f64> {
    if privacy.epsilon.is_infinite() {
        return Ok(0.0);
    }
    Ok(c_delta(privacy.delta)? * delta / privacy.epsilon)
}

fn sample_with_scale<R: Rng + ?Sized>(factor: &Factor, scale: f64, rng: &mut R) -> DVector<f64> {
    let p = factor.dim();
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    if scale == 0.0 {
        return DVector::zeros(p);
    }
    (factor.l_ref().lower_triangle() * z) * scale
}

/// One draw from `N(0, (c(δ)Δ/ε)² M)` for the given privacy spec.
pub fn dp_noise_sample<R: Rng + ?Sized>(
    result: &CloakingResult,
    spec: &PrivacySpec,
    rng: &mut R,
) -> Result<DVector<f64>> {
    spec.validate()?;
    let scale = noise_scale(spec.data_sensitivity * result.worst_column_norm, spec)?;
    Ok(sample_with_scale(&result.factor, scale, rng))
}
