//! Differentially private GP regression, dense or FITC-sparse.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloaking::{CloakingResult, OptimizeOptions, PrivacySpec};
use crate::error::{invalid, Error, Result};
use crate::kernels::{GibbsKernel, HyperConfig, KernelSpec, LengthscaleFunction, LengthscaleParams};
use crate::linalg::{
    check_finite_matrix, check_finite_vector, factorize_from, select_entries, select_rows, JITTER_START,
};
use crate::rng;
use crate::sparse::{fitc_cloaking_matrix_with, fitc_predict_var_with, kmeans_place, InducingSet};

/// How the cloaking matrix is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionMode {
    Standard,
    /// FITC with `m_count` inducing inputs placed by k-means.
    Sparse {
        m_count: usize,
    },
    /// Dense GP with the density-driven nonstationary kernel.
    Gibbs(LengthscaleParams),
}

#[derive(Clone, Debug)]
pub struct RegressionTask {
    pub x: DMatrix<f64>,
    /// Private outputs.
    pub y: DVector<f64>,
    pub x_star: DMatrix<f64>,
    pub theta: HyperConfig,
    pub privacy: PrivacySpec,
    pub mode: RegressionMode,
    /// Public constant prior mean; outputs are modelled as `prior_mean + f`.
    pub prior_mean: f64,
    pub options: OptimizeOptions,
}

impl RegressionTask {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        x_star: DMatrix<f64>,
        theta: HyperConfig,
        privacy: PrivacySpec,
        mode: RegressionMode,
    ) -> Result<Self> {
        let task = Self {
            x,
            y,
            x_star,
            theta,
            privacy,
            mode,
            prior_mean: 0.0,
            options: OptimizeOptions::default(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn with_prior_mean(mut self, prior_mean: f64) -> Self {
        self.prior_mean = prior_mean;
        self
    }

    pub fn with_options(mut self, options: OptimizeOptions) -> Self {
        self.options = options;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_inputs(&self.x, &self.y, Some(&self.x_star))?;
        self.theta.validate()?;
        self.privacy.validate()?;
        if !self.prior_mean.is_finite() {
            return Err(invalid("prior_mean", self.prior_mean, "must be finite"));
        }
        if let RegressionMode::Sparse { m_count } = self.mode {
            if m_count == 0 || m_count > self.x.nrows() {
                return Err(invalid("m_count", m_count, "inducing count must lie in 1..=N"));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_inputs(x: &DMatrix<f64>, y: &DVector<f64>, x_star: Option<&DMatrix<f64>>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(invalid("N", 0, "need at least one training point"));
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "training outputs",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    check_finite_matrix(x, "training inputs")?;
    check_finite_vector(y, "training outputs")?;
    if let Some(xs) = x_star {
        if xs.nrows() == 0 {
            return Err(invalid("P", 0, "need at least one test point"));
        }
        if xs.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch {
                context: "test input dimension",
                expected: x.ncols(),
                found: xs.ncols(),
            });
        }
        check_finite_matrix(xs, "test inputs")?;
    }
    Ok(())
}

/// Private predictions at the test inputs.
#[derive(Clone, Debug)]
pub struct DPPrediction {
    pub dp_mean: DVector<f64>,
    /// Noise-free mean. This is the private quantity; diagnostics only.
    pub clean_mean: DVector<f64>,
    /// Latent posterior variance (no observation noise); depends only on inputs.
    pub gp_variance: DVector<f64>,
    pub dp_noise_std: DVector<f64>,
    pub cloaking: CloakingResult,
    pub inducing: Option<InducingSet>,
}

/// The output-independent half of a regression: cloaking matrix, optimised
/// noise covariance and posterior variance. Building it touches only inputs,
/// so it can be reused for any number of releases on the same `X`, `X*`.
#[derive(Clone, Debug)]
pub struct CloakedPredictor {
    pub cloaking: CloakingResult,
    pub gp_variance: DVector<f64>,
    pub inducing: Option<InducingSet>,
}

impl CloakedPredictor {
    /// Builds the predictor. `rng` is consumed only for inducing placement.
    pub fn build<R: Rng + ?Sized>(
        x: &DMatrix<f64>,
        x_star: &DMatrix<f64>,
        theta: &HyperConfig,
        mode: &RegressionMode,
        privacy: &PrivacySpec,
        options: &OptimizeOptions,
        rng: &mut R,
    ) -> Result<Self> {
        let (c, gp_variance, inducing) = match mode {
            RegressionMode::Standard => {
                let kernel = theta.eq_kernel(x.ncols())?;
                let (c, var) = dense_cloaking(x, x_star, &kernel, theta.noise_variance)?;
                (c, var, None)
            }
            RegressionMode::Gibbs(params) => {
                let lf = LengthscaleFunction::fit(params, x)?;
                let kernel = KernelSpec::Gibbs(GibbsKernel::new(theta.kernel_variance, Arc::new(lf))?);
                let (c, var) = dense_cloaking(x, x_star, &kernel, theta.noise_variance)?;
                (c, var, None)
            }
            RegressionMode::Sparse { m_count } => {
                theta.validate()?;
                let kernel = theta.eq_kernel(x.ncols())?;
                let z = kmeans_place(x, *m_count, rng)?;
                let (c, _) = fitc_cloaking_matrix_with(x, x_star, &z, &kernel, theta.noise_variance)?;
                let var = fitc_predict_var_with(x, x_star, &z, &kernel, theta.noise_variance)?
                    .map(|v| (v - theta.noise_variance).max(0.0));
                (c, var, Some(z))
            }
        };
        let cloaking = CloakingResult::new(c, privacy, options)?;
        Ok(Self {
            cloaking,
            gp_variance,
            inducing,
        })
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.cloaking.c
    }

    pub fn clean_mean(&self, y: &DVector<f64>, prior_mean: f64) -> Result<DVector<f64>> {
        if y.len() != self.cloaking.c.ncols() {
            return Err(Error::DimensionMismatch {
                context: "training outputs",
                expected: self.cloaking.c.ncols(),
                found: y.len(),
            });
        }
        let centred = y.map(|v| v - prior_mean);
        Ok((&self.cloaking.c * centred).add_scalar(prior_mean))
    }

    /// One private release of the mean for outputs `y`.
    pub fn release<R: Rng + ?Sized>(&self, y: &DVector<f64>, prior_mean: f64, rng: &mut R) -> Result<DPPrediction> {
        let clean_mean = self.clean_mean(y, prior_mean)?;
        let noise = self.cloaking.sample_noise(rng);
        Ok(DPPrediction {
            dp_mean: &clean_mean + noise,
            clean_mean,
            gp_variance: self.gp_variance.clone(),
            dp_noise_std: self.cloaking.noise_std(),
            cloaking: self.cloaking.clone(),
            inducing: self.inducing.clone(),
        })
    }
}

/// `C = K_{*f}(K + σ²I)⁻¹` and the latent variance `diag(K_** − C K_{f*})`.
fn dense_cloaking(
    x: &DMatrix<f64>,
    x_star: &DMatrix<f64>,
    kernel: &KernelSpec,
    sigma2: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut k = kernel.cov(x, x)?;
    for i in 0..k.nrows() {
        k[(i, i)] += sigma2;
    }
    // Observation noise already keeps the matrix well conditioned.
    let start = if sigma2 > 0.0 { 0.0 } else { JITTER_START };
    let factor = factorize_from(&k, start, "training covariance")?;
    let k_fs = kernel.cov(x, x_star)?;
    let c = factor.solve(&k_fs).transpose();
    let v = factor.whiten(&k_fs);
    let kss = kernel.diag(x_star)?;
    let var = DVector::from_fn(x_star.nrows(), |p, _| (kss[p] - v.column(p).norm_squared()).max(0.0));
    Ok((c, var))
}

fn run<R: Rng + ?Sized>(task: &RegressionTask, rng: &mut R) -> Result<DPPrediction> {
    task.validate()?;
    let predictor = CloakedPredictor::build(
        &task.x,
        &task.x_star,
        &task.theta,
        &task.mode,
        &task.privacy,
        &task.options,
        rng,
    )?;
    predictor.release(&task.y, task.prior_mean, rng)
}

/// Dense private regression (standard EQ or nonstationary Gibbs kernel).
pub fn dp_gp_regress<R: Rng + ?Sized>(task: &RegressionTask, rng: &mut R) -> Result<DPPrediction> {
    if matches!(task.mode, RegressionMode::Sparse { .. }) {
        return Err(invalid("mode", "sparse", "use dp_sparse_regress for the sparse mode"));
    }
    run(task, rng)
}

/// FITC private regression with k-means inducing inputs.
pub fn dp_sparse_regress<R: Rng + ?Sized>(task: &RegressionTask, rng: &mut R) -> Result<DPPrediction> {
    if !matches!(task.mode, RegressionMode::Sparse { .. }) {
        return Err(invalid("mode", "dense", "dp_sparse_regress needs the sparse mode"));
    }
    run(task, rng)
}

/// Dispatches on the task's mode.
pub fn dp_regress<R: Rng + ?Sized>(task: &RegressionTask, rng: &mut R) -> Result<DPPrediction> {
    run(task, rng)
}

/// Shuffled assignment of `n` items to `folds` folds of near-equal size.
pub fn kfold_indices<R: Rng + ?Sized>(n: usize, folds: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(invalid("folds", folds, "need at least two folds"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in order.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    for (k, fold) in out.iter().enumerate() {
        if fold.is_empty() || fold.len() == n {
            return Err(Error::EmptyFold {
                fold: k,
                train: n - fold.len(),
                test: fold.len(),
            });
        }
    }
    Ok(out)
}

/// Training indices for `fold`: every index not in it, ascending.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut held = vec![false; n];
    for &i in fold {
        held[i] = true;
    }
    (0..n).filter(|&i| !held[i]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RmseSummary {
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
    pub per_fold: Vec<f64>,
}

impl RmseSummary {
    pub fn from_folds(per_fold: Vec<f64>) -> Self {
        let n = per_fold.len() as f64;
        let mean = per_fold.iter().sum::<f64>() / n;
        let std = if per_fold.len() > 1 {
            (per_fold.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, per_fold }
    }
}

pub fn rmse(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

/// Cross-validated RMSE of the private mean. The template's `x`, `y`, `theta`,
/// `privacy`, `mode` and `prior_mean` are used; its `x_star` is ignored.
///
/// The noise covariance is optimised once per fold and `noise_draws` fresh
/// noise vectors are released from it; a fold's RMSE is the mean over draws.
pub fn rmse_cv<R: Rng + ?Sized>(
    template: &RegressionTask,
    folds: usize,
    noise_draws: usize,
    rng: &mut R,
) -> Result<RmseSummary> {
    validate_inputs(&template.x, &template.y, None)?;
    let n = template.x.nrows();
    let assignment = kfold_indices(n, folds, rng)?;
    let seed = rng.next_u64();
    let draws = noise_draws.max(1);
    let mut per_fold = Vec::with_capacity(folds);
    for (k, test) in assignment.iter().enumerate() {
        let train = complement(n, test);
        let x_train = select_rows(&template.x, &train);
        let y_train = select_entries(&template.y, &train);
        let x_test = select_rows(&template.x, test);
        let y_test = select_entries(&template.y, test);
        let mut fold_rng = rng::stream(seed, k as u64);
        let predictor = CloakedPredictor::build(
            &x_train,
            &x_test,
            &template.theta,
            &template.mode,
            &template.privacy,
            &template.options,
            &mut fold_rng,
        )?;
        let clean = predictor.clean_mean(&y_train, template.prior_mean)?;
        let mut total = 0.0;
        for _ in 0..draws {
            let noisy = &clean + predictor.cloaking.sample_noise(&mut fold_rng);
            total += rmse(&noisy, &y_test);
        }
        per_fold.push(total / draws as f64);
    }
    Ok(RmseSummary::from_folds(per_fold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toy(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let mut r = rng(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| r.random_range(0.0f64..10.0));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)].sin() + 0.1 * r.random_range(-1.0..1.0));
        let xs = DMatrix::from_fn(p, 1, |i, _| i as f64 * 10.0 / p as f64);
        (x, y, xs)
    }

    fn task(mode: RegressionMode, privacy: PrivacySpec) -> RegressionTask {
        let (x, y, xs) = toy(15, 6, 3);
        RegressionTask::new(x, y, xs, HyperConfig::isotropic(1.5, 1.0, 0.1), privacy, mode).unwrap()
    }

    fn private() -> PrivacySpec {
        PrivacySpec::new(1.0, 0.01, 1.0).unwrap()
    }

    #[test]
    fn no_noise_gives_textbook_posterior() {
        let t = task(RegressionMode::Standard, PrivacySpec::non_private(1.0));
        let out = dp_gp_regress(&t, &mut rng(0)).unwrap();
        let k = t.theta.eq_kernel(1).unwrap();
        let mut kff = k.cov(&t.x, &t.x).unwrap();
        kff += DMatrix::identity(15, 15) * 0.1;
        let inv = kff.try_inverse().unwrap();
        let ksf = k.cov(&t.x_star, &t.x).unwrap();
        let mean = &ksf * &inv * &t.y;
        let var = DVector::from_fn(6, |p, _| 1.0 - (ksf.row(p) * &inv * ksf.row(p).transpose())[(0, 0)]);
        assert_eq!(out.dp_mean, out.clean_mean);
        assert!((out.dp_mean - mean).amax() < 1e-8);
        assert!((out.gp_variance - var).amax() < 1e-8);
    }

    #[test]
    fn output_shift_moves_clean_mean_only() {
        let t = task(RegressionMode::Standard, private());
        let a = dp_gp_regress(&t, &mut rng(1)).unwrap();
        let mut shifted = t.clone();
        shifted.y.add_scalar_mut(3.0);
        let b = dp_gp_regress(&shifted, &mut rng(1)).unwrap();
        let expected = &a.cloaking.c * DVector::from_element(15, 3.0);
        assert!((&b.clean_mean - &a.clean_mean - expected).amax() < 1e-12);
        assert_eq!(a.cloaking.m, b.cloaking.m);
        assert_eq!(a.cloaking.delta, b.cloaking.delta);
    }

    #[test]
    fn prior_mean_is_added_back() {
        let t = task(RegressionMode::Standard, PrivacySpec::non_private(1.0));
        let base = dp_gp_regress(&t, &mut rng(1)).unwrap();
        let mut lifted = t.clone().with_prior_mean(50.0);
        lifted.y.add_scalar_mut(50.0);
        let out = dp_gp_regress(&lifted, &mut rng(1)).unwrap();
        assert!((out.clean_mean - base.clean_mean.add_scalar(50.0)).amax() < 1e-10);
    }

    #[test]
    fn sparse_with_every_point_matches_dense() {
        let dense = dp_gp_regress(&task(RegressionMode::Standard, private()), &mut rng(2)).unwrap();
        let sparse = dp_sparse_regress(&task(RegressionMode::Sparse { m_count: 15 }, private()), &mut rng(2)).unwrap();
        assert!((&dense.clean_mean - &sparse.clean_mean).amax() < 1e-6);
        assert!((&dense.gp_variance - &sparse.gp_variance).amax() < 1e-6);
    }

    #[test]
    fn sparse_without_noise_is_the_fitc_mean() {
        let t = task(RegressionMode::Sparse { m_count: 4 }, PrivacySpec::non_private(1.0));
        let out = dp_sparse_regress(&t, &mut rng(5)).unwrap();
        assert_eq!(out.dp_mean, out.clean_mean);
        assert_eq!(out.inducing.unwrap().count(), 4);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        assert!(dp_gp_regress(&task(RegressionMode::Sparse { m_count: 3 }, private()), &mut rng(0)).is_err());
        assert!(dp_sparse_regress(&task(RegressionMode::Standard, private()), &mut rng(0)).is_err());
    }

    #[test]
    fn dp_mean_minus_clean_is_the_noise() {
        let t = task(RegressionMode::Standard, private());
        let out = dp_gp_regress(&t, &mut rng(9)).unwrap();
        let mut r = rng(9);
        let noise = out.cloaking.sample_noise(&mut r);
        assert_eq!(out.dp_mean, &out.clean_mean + noise);
        assert!(out.dp_noise_std.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn single_output_changes_respect_the_bound() {
        for mode in [
            RegressionMode::Standard,
            RegressionMode::Sparse { m_count: 5 },
            RegressionMode::Gibbs(LengthscaleParams {
                n: 3.0,
                m: 5.0,
                kde_bandwidth: None,
                neighbourhood_radius: None,
            }),
        ] {
            let mut t = task(mode, PrivacySpec::new(1.0, 0.01, 2.0).unwrap());
            let base = dp_regress(&t, &mut rng(4)).unwrap();
            for i in 0..t.y.len() {
                for sign in [-1.0, 1.0] {
                    let orig = t.y[i];
                    t.y[i] += sign * 2.0;
                    let moved = dp_regress(&t, &mut rng(4)).unwrap();
                    t.y[i] = orig;
                    let change = &moved.clean_mean - &base.clean_mean;
                    let expected = base.cloaking.c.column(i) * (sign * 2.0);
                    assert!((&change - &expected).amax() < 1e-9);
                    assert!(base.cloaking.mahalanobis(&expected) <= base.cloaking.delta * (1.0 + 1e-6));
                }
            }
        }
    }

    #[test]
    fn variance_ignores_outputs_and_runs_are_reproducible() {
        let t = task(RegressionMode::Sparse { m_count: 5 }, private());
        let a = dp_regress(&t, &mut rng(11)).unwrap();
        let b = dp_regress(&t, &mut rng(11)).unwrap();
        assert_eq!(a.dp_mean, b.dp_mean);
        assert_eq!(a.cloaking.m, b.cloaking.m);
        let mut scrambled = t.clone();
        let mut r = rng(99);
        scrambled.y = DVector::from_fn(15, |_, _| r.random_range(-50.0..50.0));
        let c = dp_regress(&scrambled, &mut rng(11)).unwrap();
        assert_eq!(a.gp_variance, c.gp_variance);
    }

    #[test]
    fn duplicating_a_clustered_point_does_not_raise_worst_trace() {
        let mut r = rng(21);
        let mut x = DMatrix::from_fn(12, 1, |_, _| r.random_range(0.0..1.0));
        x[(11, 0)] = 6.0;
        let xs = DMatrix::from_column_slice(4, 1, &[0.5, 2.0, 4.0, 6.0]);
        let theta = HyperConfig::isotropic(1.0, 1.0, 0.2);
        let worst = |x: &DMatrix<f64>| {
            let p = CloakedPredictor::build(
                x,
                &xs,
                &theta,
                &RegressionMode::Standard,
                &private(),
                &OptimizeOptions {
                    iterations: 100_000,
                    tolerance: 1e-7,
                    ..Default::default()
                },
                &mut rng(0),
            )
            .unwrap();
            let f = crate::linalg::factorize_from(&p.cloaking.m, 0.0, "M").unwrap();
            (0..x.nrows())
                .map(|j| f.whiten_vec(&p.cloaking.c.column(j).into_owned()).norm_squared())
                .fold(0.0, f64::max)
        };
        let before = worst(&x);
        let mut bigger = x.clone().insert_row(12, 0.0);
        bigger[(12, 0)] = x[(3, 0)];
        assert!(worst(&bigger) <= before + 1e-6);
    }

    #[test]
    fn folds_partition_indices() {
        let folds = kfold_indices(29, 14, &mut rng(3)).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..29).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 2 || f.len() == 3));
        assert!(kfold_indices(5, 1, &mut rng(0)).is_err());
        assert!(kfold_indices(3, 4, &mut rng(0)).is_err());
    }

    #[test]
    fn constant_function_cross_validates_to_zero() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let y = DVector::from_element(20, 4.0);
        let t = RegressionTask::new(
            x,
            y,
            DMatrix::zeros(1, 1),
            HyperConfig::isotropic(3.0, 1.0, 0.01),
            PrivacySpec::non_private(1.0),
            RegressionMode::Standard,
        )
        .unwrap()
        .with_prior_mean(4.0);
        let s = rmse_cv(&t, 5, 1, &mut rng(0)).unwrap();
        assert!(s.mean < 1e-12 && s.per_fold.len() == 5);
    }

    #[test]
    fn summary_statistics() {
        let s = RmseSummary::from_folds(vec![1.0, 2.0, 3.0]);
        assert!((s.mean - 2.0).abs() < 1e-15);
        assert!((s.std - 1.0).abs() < 1e-15);
    }
}
