//! Private binary GP classification through a Laplace-approximation update.
//!
//! With labels `y ∈ {−1, +1}` and logistic link, one Newton step from `f̂` is
//! `f̂' = 2C(W f̂ + ½ − π) + C y` with `C = ½(K⁻¹ + W)⁻¹`. Only `C y` touches
//! the labels, so it is released through the cloaking mechanism with `d = 2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cloaking::{CloakingResult, OptimizeOptions, PrivacySpec};
use crate::error::{invalid, Error, Result};
use crate::kernels::{HyperConfig, KernelSpec};
use crate::linalg::{factorize, factorize_from, Factor};
use crate::regression::validate_inputs;
use crate::sparse::{kmeans_place, sor_lowrank_with, InducingSet};

/// Label sensitivity: a flip moves one label by 2.
pub const LABEL_SENSITIVITY: f64 = 2.0;

/// Relative jitter added to the low-rank training covariance.
pub const SOR_JITTER: f64 = 1e-8;

pub fn logistic(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceState {
    pub f_hat: DVector<f64>,
    pub pi: DVector<f64>,
    pub w_diag: DVector<f64>,
}

impl LaplaceState {
    pub fn at(f_hat: DVector<f64>) -> Self {
        let pi = f_hat.map(logistic);
        let w_diag = pi.map(|p| p * (1.0 - p));
        Self { f_hat, pi, w_diag }
    }

    pub fn zeros(n: usize) -> Self {
        Self::at(DVector::zeros(n))
    }
}

#[derive(Clone, Debug)]
pub struct ClassifyTask {
    pub x: DMatrix<f64>,
    /// Private labels in {−1, +1}.
    pub y: DVector<f64>,
    pub x_star: DMatrix<f64>,
    pub theta: HyperConfig,
    /// ε and δ for the whole fit; `data_sensitivity` should be 2.
    pub privacy: PrivacySpec,
    /// Number of inducing inputs for the low-rank covariance.
    pub sparse: Option<usize>,
    pub newton_iterations: usize,
    pub options: OptimizeOptions,
}

impl ClassifyTask {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        x_star: DMatrix<f64>,
        theta: HyperConfig,
        privacy: PrivacySpec,
    ) -> Result<Self> {
        let task = Self {
            x,
            y,
            x_star,
            theta,
            privacy,
            sparse: None,
            newton_iterations: 1,
            options: OptimizeOptions::default(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn with_sparse(mut self, m_count: Option<usize>) -> Self {
        self.sparse = m_count;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.newton_iterations = iterations;
        self
    }

    pub fn with_options(mut self, options: OptimizeOptions) -> Self {
        self.options = options;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_inputs(&self.x, &self.y, Some(&self.x_star))?;
        if let Some(v) = self.y.iter().find(|v| **v != 1.0 && **v != -1.0) {
            return Err(invalid("labels", v, "labels must be −1 or +1"));
        }
        self.theta.validate()?;
        self.privacy.validate()?;
        if self.newton_iterations == 0 {
            return Err(invalid("newton_iterations", 0, "at least one update is required"));
        }
        if let Some(m) = self.sparse {
            if m == 0 || m > self.x.nrows() {
                return Err(invalid("m_count", m, "inducing count must lie in 1..=N"));
            }
        }
        Ok(())
    }
}

/// `B = I + W½ K W½` and its factor.
fn b_factor(k: &DMatrix<f64>, sqrt_w: &DVector<f64>) -> Result<Factor> {
    let n = k.nrows();
    let b = DMatrix::from_fn(n, n, |i, j| {
        let v = sqrt_w[i] * k[(i, j)] * sqrt_w[j];
        if i == j {
            v + 1.0
        } else {
            v
        }
    });
    // B has every eigenvalue ≥ 1, so the bare matrix is tried first.
    factorize_from(&b, 0.0, "Laplace matrix I + W½KW½")
}

/// `C = ½(K⁻¹ + W)⁻¹`, evaluated as `½(K − K W½ B⁻¹ W½ K)`.
pub fn laplace_cloaking_matrix(k: &DMatrix<f64>, w_diag: &DVector<f64>) -> Result<DMatrix<f64>> {
    if k.nrows() != k.ncols() || w_diag.len() != k.nrows() {
        return Err(Error::DimensionMismatch {
            context: "Laplace covariance and W",
            expected: k.nrows(),
            found: w_diag.len(),
        });
    }
    if let Some(w) = w_diag.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(invalid("w_diag", w, "W must be nonnegative"));
    }
    let sqrt_w = w_diag.map(f64::sqrt);
    let b = b_factor(k, &sqrt_w)?;
    let mut wk = k.clone();
    for (i, mut row) in wk.row_iter_mut().enumerate() {
        row *= sqrt_w[i];
    }
    let u = b.whiten(&wk); // L_B⁻¹ W½ K
    let mut c = (k - u.transpose() * u) * 0.5;
    crate::linalg::symmetrize(&mut c);
    Ok(c)
}

/// Training covariance used by the update: exact, or SoR plus jitter.
#[derive(Clone, Debug)]
pub struct LatentPrior {
    pub kernel: KernelSpec,
    pub k: DMatrix<f64>,
    pub inducing: Option<InducingSet>,
}

impl LatentPrior {
    pub fn dense(x: &DMatrix<f64>, theta: &HyperConfig) -> Result<Self> {
        let kernel = theta.eq_kernel(x.ncols())?;
        let k = kernel.cov(x, x)?;
        Ok(Self {
            kernel,
            k,
            inducing: None,
        })
    }

    pub fn sparse(x: &DMatrix<f64>, theta: &HyperConfig, z: InducingSet) -> Result<Self> {
        let kernel = theta.eq_kernel(x.ncols())?;
        let mut k = sor_lowrank_with(x, &z, &kernel)?;
        let jitter = SOR_JITTER * theta.kernel_variance;
        for i in 0..k.nrows() {
            k[(i, i)] += jitter;
        }
        Ok(Self {
            kernel,
            k,
            inducing: Some(z),
        })
    }

    pub fn for_task<R: Rng + ?Sized>(task: &ClassifyTask, rng: &mut R) -> Result<Self> {
        match task.sparse {
            None => Self::dense(&task.x, &task.theta),
            Some(m) => Self::sparse(&task.x, &task.theta, kmeans_place(&task.x, m, rng)?),
        }
    }
}

/// One privatised Newton update: `f̂' = base + C y + noise`.
#[derive(Clone, Debug)]
pub struct LaplaceStep {
    /// `2C(W f̂ + ½ − π)`, label independent.
    pub base: DVector<f64>,
    pub cloaking: CloakingResult,
}

impl LaplaceStep {
    pub fn new(
        k: &DMatrix<f64>,
        state: &LaplaceState,
        privacy: &PrivacySpec,
        options: &OptimizeOptions,
    ) -> Result<Self> {
        let c = laplace_cloaking_matrix(k, &state.w_diag)?;
        let g = state.w_diag.component_mul(&state.f_hat) - state.pi.add_scalar(-0.5);
        let base = (&c * g) * 2.0;
        let cloaking = CloakingResult::new(c, privacy, options)?;
        Ok(Self { base, cloaking })
    }

    pub fn clean(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.base + &self.cloaking.c * y
    }

    pub fn sample<R: Rng + ?Sized>(&self, y: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        self.clean(y) + self.cloaking.sample_noise(rng)
    }
}

#[derive(Clone, Debug)]
pub struct LaplaceFit {
    pub state: LaplaceState,
    /// Cloaking of the last update.
    pub cloaking: CloakingResult,
    pub prior: LatentPrior,
}

/// Fits `f̂` by `newton_iterations` privatised updates from `f̂ = 0`, splitting
/// ε and δ evenly across the updates.
pub fn dp_laplace_fit<R: Rng + ?Sized>(task: &ClassifyTask, rng: &mut R) -> Result<LaplaceFit> {
    task.validate()?;
    let prior = LatentPrior::for_task(task, rng)?;
    fit_with_prior(task, prior, rng)
}

pub fn fit_with_prior<R: Rng + ?Sized>(task: &ClassifyTask, prior: LatentPrior, rng: &mut R) -> Result<LaplaceFit> {
    let iterations = task.newton_iterations;
    if iterations > 1 {
        log::warn!(
            "{iterations} privatised Newton updates split the privacy budget; \
             extra updates usually lower accuracy"
        );
    }
    let privacy = task.privacy.split(iterations);
    let mut state = LaplaceState::zeros(task.x.nrows());
    let mut last = None;
    for _ in 0..iterations {
        let step = LaplaceStep::new(&prior.k, &state, &privacy, &task.options)?;
        state = LaplaceState::at(step.sample(&task.y, rng));
        last = Some(step.cloaking);
    }
    Ok(LaplaceFit {
        state,
        cloaking: last.expect("at least one iteration"),
        prior,
    })
}

/// Latent predictive mean `k_*ᵀ K⁻¹ f̂` and variance `k_** − k_*ᵀ(K + W⁻¹)⁻¹k_*`.
///
/// Dense covariance only; see [`LatentPredictor`] for the low-rank case.
pub fn predict_latent(
    x_star: &DMatrix<f64>,
    x: &DMatrix<f64>,
    state: &LaplaceState,
    theta: &HyperConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let prior = LatentPrior::dense(x, theta)?;
    let p = LatentPredictor::new(&prior, x, x_star, &state.w_diag)?;
    Ok((p.mean(&state.f_hat), p.variance.clone()))
}

/// Precomputed label-independent pieces of the latent prediction, so many
/// `f̂` draws can be mapped to test points cheaply.
#[derive(Clone, Debug)]
pub struct LatentPredictor {
    /// `P × N` map from `f̂` to the latent mean.
    pub mean_map: DMatrix<f64>,
    pub variance: DVector<f64>,
}

impl LatentPredictor {
    pub fn new(prior: &LatentPrior, x: &DMatrix<f64>, x_star: &DMatrix<f64>, w_diag: &DVector<f64>) -> Result<Self> {
        let kernel = &prior.kernel;
        let kss = kernel.diag(x_star)?;
        let (mean_map, k_fs) = match &prior.inducing {
            None => {
                let k_fs = kernel.cov(x, x_star)?;
                let factor = factorize(&prior.k, "latent covariance K")?;
                (factor.solve(&k_fs).transpose(), k_fs)
            }
            Some(z) => {
                // f̂ lies in the span of K_NM; project onto it and map through
                // the inducing inputs.
                let kmm = factorize(&kernel.cov(&z.z, &z.z)?, "inducing covariance K_MM")?;
                let v = kmm.whiten(&kernel.cov(&z.z, x)?);
                let w_star = kmm.whiten(&kernel.cov(&z.z, x_star)?);
                let gram = factorize(&(&v * v.transpose()), "inducing projection V Vᵀ")?;
                let mean_map = w_star.transpose() * gram.solve(&v);
                (mean_map, v.transpose() * w_star)
            }
        };
        let sqrt_w = w_diag.map(f64::sqrt);
        let b = b_factor(&prior.k, &sqrt_w)?;
        let mut scaled = k_fs;
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= sqrt_w[i];
        }
        let u = b.whiten(&scaled);
        let variance = DVector::from_fn(x_star.nrows(), |p, _| (kss[p] - u.column(p).norm_squared()).max(0.0));
        Ok(Self { mean_map, variance })
    }

    pub fn mean(&self, f_hat: &DVector<f64>) -> DVector<f64> {
        &self.mean_map * f_hat
    }
}

/// Logistic squash of the latent mean.
pub fn predict_class_prob(mean: &DVector<f64>) -> DVector<f64> {
    mean.map(logistic)
}

pub fn accuracy(prob: &DVector<f64>, labels: &DVector<f64>) -> f64 {
    let hits = prob
        .iter()
        .zip(labels.iter())
        .filter(|(p, y)| (**p >= 0.5) == (**y > 0.0))
        .count();
    hits as f64 / labels.len() as f64
}

#[derive(Clone, Debug)]
pub struct ClassifyOutput {
    pub fit: LaplaceFit,
    pub latent_mean: DVector<f64>,
    pub latent_var: DVector<f64>,
    pub class_prob: DVector<f64>,
}

/// Fit and predict at `task.x_star`, dense or low-rank per `task.sparse`.
pub fn dp_classify<R: Rng + ?Sized>(task: &ClassifyTask, rng: &mut R) -> Result<ClassifyOutput> {
    let fit = dp_laplace_fit(task, rng)?;
    let predictor = LatentPredictor::new(&fit.prior, &task.x, &task.x_star, &fit.state.w_diag)?;
    let latent_mean = predictor.mean(&fit.state.f_hat);
    let class_prob = predict_class_prob(&latent_mean);
    Ok(ClassifyOutput {
        fit,
        latent_mean,
        latent_var: predictor.variance,
        class_prob,
    })
}

/// Low-rank classification with k-means inducing inputs.
pub fn dp_sparse_classify<R: Rng + ?Sized>(task: &ClassifyTask, rng: &mut R) -> Result<ClassifyOutput> {
    if task.sparse.is_none() {
        return Err(invalid("sparse", "none", "dp_sparse_classify needs an inducing count"));
    }
    dp_classify(task, rng)
}
