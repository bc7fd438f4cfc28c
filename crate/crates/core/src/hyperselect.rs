//! Private hyperparameter selection with the exponential mechanism.
//!
//! Each configuration is scored by a κ-fold cross-validated sum of squared
//! errors (errors clipped to `±4d`). One output can move a fold's SSE by at
//! most `9d²` when it is a test point and by `d²·α_k` when it trains fold `k`,
//! where `α_k` is the largest squared column norm of that fold's cloaking
//! matrix. The `α_k` depend only on inputs, so configurations with an
//! excessive bound can be dropped before the mechanism runs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloaking::{CloakingResult, OptimizeOptions, PrivacySpec};
use crate::error::{invalid, Error, Result};
use crate::kernels::HyperConfig;
use crate::linalg::{select_entries, select_rows};
use crate::regression::{complement, kfold_indices, rmse, validate_inputs, CloakedPredictor, RegressionMode};
use crate::rng;

/// How far beyond `d` a single clipped error may reach.
pub const ERROR_CLIP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensitivityThreshold {
    /// Keep every configuration.
    None,
    Fixed {
        value: f64,
    },
    /// A multiple of the median bound over the grid.
    MedianMultiple {
        factor: f64,
    },
}

impl Default for SensitivityThreshold {
    fn default() -> Self {
        Self::MedianMultiple { factor: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigGrid {
    pub configs: Vec<HyperConfig>,
    pub kappa: usize,
    /// Bound on a single output's change.
    pub d: f64,
    pub epsilon_select: f64,
    #[serde(default)]
    pub sensitivity_threshold: SensitivityThreshold,
    /// DP-noise draws averaged into each SSE; zero scores clean predictions.
    pub noise_draws: usize,
    /// ε and δ of the regression whose noise the SSE should anticipate.
    pub regression_epsilon: f64,
    pub regression_delta: f64,
    #[serde(default)]
    pub prior_mean: f64,
}

impl ConfigGrid {
    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(invalid("configs", 0, "the grid needs at least one configuration"));
        }
        if self.kappa < 2 {
            return Err(invalid("kappa", self.kappa, "need at least two folds"));
        }
        if self.epsilon_select.is_nan() || self.epsilon_select <= 0.0 {
            return Err(invalid("epsilon_select", self.epsilon_select, "must be positive"));
        }
        for c in &self.configs {
            c.validate()?;
        }
        self.regression_privacy().validate()
    }

    pub fn regression_privacy(&self) -> PrivacySpec {
        PrivacySpec {
            epsilon: self.regression_epsilon,
            delta: self.regression_delta,
            data_sensitivity: self.d,
        }
    }

    /// Cartesian product of per-parameter value lists, lengthscale varying slowest.
    pub fn cartesian(lengthscales: &[f64], noise_variances: &[f64], kernel_variances: &[f64]) -> Vec<HyperConfig> {
        let mut out = Vec::new();
        for &l in lengthscales {
            for &s in noise_variances {
                for &k in kernel_variances {
                    out.push(HyperConfig::isotropic(l, k, s));
                }
            }
        }
        out
    }
}

fn clipped_sse(pred: &DVector<f64>, truth: &DVector<f64>, d: f64) -> f64 {
    let bound = ERROR_CLIP * d;
    pred.iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t).clamp(-bound, bound).powi(2))
        .sum()
}

/// One fold of one configuration: clean predictions and the noise model.
#[derive(Clone, Debug)]
struct FoldModel {
    clean: DVector<f64>,
    truth: DVector<f64>,
    cloaking: CloakingResult,
    alpha: f64,
}

/// Cross-validation of one configuration with fixed folds.
#[derive(Clone, Debug)]
pub struct ConfigCv {
    folds: Vec<FoldModel>,
    d: f64,
}

impl ConfigCv {
    pub fn new(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        theta: &HyperConfig,
        folds: &[Vec<usize>],
        privacy: &PrivacySpec,
        prior_mean: f64,
    ) -> Result<Self> {
        let n = x.nrows();
        let mut out = Vec::with_capacity(folds.len());
        for (k, test) in folds.iter().enumerate() {
            let train = complement(n, test);
            if train.is_empty() || test.is_empty() {
                return Err(Error::EmptyFold {
                    fold: k,
                    train: train.len(),
                    test: test.len(),
                });
            }
            let x_train = select_rows(x, &train);
            let x_test = select_rows(x, test);
            let predictor = CloakedPredictor::build(
                &x_train,
                &x_test,
                theta,
                &RegressionMode::Standard,
                privacy,
                &OptimizeOptions::default(),
                &mut rng::master(0),
            )?;
            let c = predictor.c();
            let alpha = c.column_iter().map(|col| col.norm_squared()).fold(0.0, f64::max);
            let clean = predictor.clean_mean(&select_entries(y, &train), prior_mean)?;
            out.push(FoldModel {
                clean,
                truth: select_entries(y, test),
                cloaking: predictor.cloaking,
                alpha,
            });
        }
        Ok(Self {
            folds: out,
            d: privacy.data_sensitivity,
        })
    }

    /// `α_k = max_j ‖c_{jk}‖²` per fold.
    pub fn alpha(&self) -> DVector<f64> {
        DVector::from_iterator(self.folds.len(), self.folds.iter().map(|f| f.alpha))
    }

    pub fn clean_sse(&self) -> f64 {
        self.folds.iter().map(|f| clipped_sse(&f.clean, &f.truth, self.d)).sum()
    }

    /// SSE averaged over `draws` noise draws calibrated to `privacy`.
    pub fn noisy_sse<R: Rng + ?Sized>(&self, privacy: &PrivacySpec, draws: usize, rng: &mut R) -> Result<f64> {
        if draws == 0 || !privacy.is_private() {
            return Ok(self.clean_sse());
        }
        let mut total = 0.0;
        for fold in &self.folds {
            let cloak = fold.cloaking.rescaled(privacy)?;
            for _ in 0..draws {
                let pred = &fold.clean + cloak.sample_noise(rng);
                total += clipped_sse(&pred, &fold.truth, self.d);
            }
        }
        let sse = total / draws as f64;
        if !sse.is_finite() {
            return Err(Error::NonFinite("cross-validated SSE"));
        }
        Ok(sse)
    }
}

/// κ-fold SSE of one configuration and its fold sensitivities.
#[allow(clippy::too_many_arguments)]
pub fn cross_val_sse<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &HyperConfig,
    kappa: usize,
    privacy: &PrivacySpec,
    noise_draws: usize,
    prior_mean: f64,
    rng: &mut R,
) -> Result<(f64, DVector<f64>)> {
    validate_inputs(x, y, None)?;
    let folds = kfold_indices(x.nrows(), kappa, rng)?;
    let cv = ConfigCv::new(x, y, theta, &folds, privacy, prior_mean)?;
    Ok((cv.noisy_sse(privacy, noise_draws, rng)?, cv.alpha()))
}

/// `9d² + d²·(sum of the κ−1 largest α_k)`.
pub fn sensitivity_bound(alpha: &DVector<f64>, d: f64) -> f64 {
    sum_excluding(alpha, d, true)
}

/// The variant that drops the largest `α_k` instead, i.e. sums the κ−1
/// smallest. Kept for comparison; it does not bound the SSE change.
pub fn sensitivity_bound_smallest(alpha: &DVector<f64>, d: f64) -> f64 {
    sum_excluding(alpha, d, false)
}

fn sum_excluding(alpha: &DVector<f64>, d: f64, keep_largest: bool) -> f64 {
    let mut sorted: Vec<f64> = alpha.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !keep_largest {
        sorted.reverse();
    }
    let kept: f64 = sorted.iter().take(sorted.len().saturating_sub(1)).sum();
    9.0 * d * d + d * d * kept
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionRow {
    pub config: HyperConfig,
    pub sse: f64,
    pub alpha: Vec<f64>,
    pub delta_u: f64,
    pub probability: f64,
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionTable {
    pub rows: Vec<SelectionRow>,
    /// Largest bound among the kept configurations.
    pub global_delta_u: f64,
    pub threshold: f64,
    pub epsilon: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl SelectionTable {
    /// Applies the threshold and computes `p ∝ exp(−ε·SSE / (2Δ_u))`.
    pub fn new(
        configs: Vec<HyperConfig>,
        sses: Vec<f64>,
        alphas: Vec<DVector<f64>>,
        d: f64,
        epsilon: f64,
        threshold: SensitivityThreshold,
    ) -> Result<Self> {
        if configs.is_empty() || configs.len() != sses.len() || sses.len() != alphas.len() {
            return Err(Error::DimensionMismatch {
                context: "selection table columns",
                expected: configs.len(),
                found: sses.len().min(alphas.len()),
            });
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(invalid("epsilon_select", epsilon, "must be positive"));
        }
        let bounds: Vec<f64> = alphas.iter().map(|a| sensitivity_bound(a, d)).collect();
        let threshold = match threshold {
            SensitivityThreshold::None => f64::INFINITY,
            SensitivityThreshold::Fixed { value } => value,
            SensitivityThreshold::MedianMultiple { factor } => factor * median(&bounds),
        };
        let rows: Vec<SelectionRow> = configs
            .into_iter()
            .zip(sses)
            .zip(alphas)
            .zip(&bounds)
            .map(|(((config, sse), alpha), &delta_u)| SelectionRow {
                config,
                sse,
                alpha: alpha.iter().copied().collect(),
                delta_u,
                probability: 0.0,
                excluded: delta_u > threshold,
            })
            .collect();
        let mut table = Self {
            rows,
            global_delta_u: 0.0,
            threshold,
            epsilon,
        };
        table.normalise()?;
        Ok(table)
    }

    fn normalise(&mut self) -> Result<()> {
        let kept: Vec<usize> = (0..self.rows.len()).filter(|&i| !self.rows[i].excluded).collect();
        if kept.is_empty() {
            return Err(Error::AllConfigsExcluded);
        }
        self.global_delta_u = kept.iter().map(|&i| self.rows[i].delta_u).fold(0.0, f64::max);
        let scores: Vec<f64> = kept
            .iter()
            .map(|&i| -self.epsilon * self.rows[i].sse / (2.0 * self.global_delta_u))
            .collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
        for row in &mut self.rows {
            row.probability = 0.0;
        }
        for (&i, s) in kept.iter().zip(&scores) {
            self.rows[i].probability = (s - lse).exp();
        }
        Ok(())
    }

    /// Drops configuration `index` and renormalises.
    pub fn exclude(&mut self, index: usize) -> Result<()> {
        self.rows[index].excluded = true;
        self.normalise()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.probability).collect()
    }

    pub fn best_index(&self) -> usize {
        (0..self.rows.len())
            .max_by(|&a, &b| self.rows[a].probability.total_cmp(&self.rows[b].probability))
            .expect("table is nonempty")
    }
}

/// Evaluates every configuration of the grid on `(x, y)`.
pub fn evaluate_grid<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &ConfigGrid,
    rng: &mut R,
) -> Result<SelectionTable> {
    GridCv::new(x, y, grid, rng)?.table(&grid.regression_privacy(), rng)
}

/// Per-configuration cross-validation models sharing one fold assignment.
/// The noise covariances do not depend on ε, so they are reused across
/// regression budgets.
#[derive(Clone, Debug)]
pub struct GridCv {
    grid: ConfigGrid,
    cvs: Vec<ConfigCv>,
}

impl GridCv {
    pub fn new<R: Rng + ?Sized>(x: &DMatrix<f64>, y: &DVector<f64>, grid: &ConfigGrid, rng: &mut R) -> Result<Self> {
        grid.validate()?;
        validate_inputs(x, y, None)?;
        let folds = kfold_indices(x.nrows(), grid.kappa, rng)?;
        let privacy = grid.regression_privacy();
        let cvs = grid
            .configs
            .iter()
            .map(|theta| ConfigCv::new(x, y, theta, &folds, &privacy, grid.prior_mean))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.clone(),
            cvs,
        })
    }

    /// Selection table with SSEs anticipating noise for `privacy`.
    pub fn table<R: Rng + ?Sized>(&self, privacy: &PrivacySpec, rng: &mut R) -> Result<SelectionTable> {
        let seed = rng.next_u64();
        let sses = self
            .cvs
            .iter()
            .enumerate()
            .map(|(i, cv)| cv.noisy_sse(privacy, self.grid.noise_draws, &mut rng::stream(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        SelectionTable::new(
            self.grid.configs.clone(),
            sses,
            self.cvs.iter().map(ConfigCv::alpha).collect(),
            self.grid.d,
            self.grid.epsilon_select,
            self.grid.sensitivity_threshold,
        )
    }
}

/// Samples a configuration index from the table's probabilities.
pub fn select_config<R: Rng + ?Sized>(table: &SelectionTable, rng: &mut R) -> Result<usize> {
    if table.rows.iter().all(|r| r.excluded) {
        return Err(Error::AllConfigsExcluded);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, row) in table.rows.iter().enumerate() {
        if row.excluded {
            continue;
        }
        last = i;
        acc += row.probability;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(last)
}

/// Probability-weighted mean of per-configuration RMSEs.
pub fn expected_rmse(table: &SelectionTable, rmse_per_config: &[f64]) -> Result<f64> {
    if rmse_per_config.len() != table.rows.len() {
        return Err(Error::DimensionMismatch {
            context: "per-configuration RMSEs",
            expected: table.rows.len(),
            found: rmse_per_config.len(),
        });
    }
    Ok(table
        .rows
        .iter()
        .zip(rmse_per_config)
        .filter(|(r, _)| r.probability > 0.0)
        .map(|(r, e)| r.probability * e)
        .sum())
}

/// Test RMSE of a private regression trained on one split and scored on
/// another, averaged over `draws` noise draws.
#[allow(clippy::too_many_arguments)]
pub fn holdout_rmse<R: Rng + ?Sized>(
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
    y_test: &DVector<f64>,
    theta: &HyperConfig,
    privacy: &PrivacySpec,
    prior_mean: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let predictor = CloakedPredictor::build(
        x_train,
        x_test,
        theta,
        &RegressionMode::Standard,
        privacy,
        &OptimizeOptions::default(),
        rng,
    )?;
    let clean = predictor.clean_mean(y_train, prior_mean)?;
    let draws = draws.max(1);
    let total: f64 = (0..draws)
        .map(|_| rmse(&(&clean + predictor.cloaking.sample_noise(rng)), y_test))
        .sum();
    Ok(total / draws as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// Distinct lengthscales in first-appearance order.
    pub lengthscales: Vec<f64>,
    /// Selection probability marginalised over the other parameters.
    pub probabilities: Vec<f64>,
    pub mean_log_lengthscale: f64,
}

/// Lengthscale marginals of the selection distribution for each regression ε.
pub fn epsilon_sweep<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &ConfigGrid,
    epsilons: &[f64],
    rng: &mut R,
) -> Result<Vec<SweepRow>> {
    let cv = GridCv::new(x, y, grid, rng)?;
    let mut lengthscales: Vec<f64> = Vec::new();
    for c in &grid.configs {
        if !lengthscales.contains(&c.lengthscales[0]) {
            lengthscales.push(c.lengthscales[0]);
        }
    }
    let seed = rng.next_u64();
    epsilons
        .iter()
        .enumerate()
        .map(|(e, &epsilon)| {
            let privacy = PrivacySpec {
                epsilon,
                ..grid.regression_privacy()
            };
            let table = cv.table(&privacy, &mut rng::stream(seed, e as u64))?;
            let mut probabilities = vec![0.0; lengthscales.len()];
            for row in &table.rows {
                let k = lengthscales
                    .iter()
                    .position(|l| *l == row.config.lengthscales[0])
                    .expect("collected above");
                probabilities[k] += row.probability;
            }
            let mean_log_lengthscale = lengthscales.iter().zip(&probabilities).map(|(l, p)| p * l.ln()).sum();
            Ok(SweepRow {
                epsilon,
                lengthscales: lengthscales.clone(),
                probabilities,
                mean_log_lengthscale,
            })
        })
        .collect()
}
