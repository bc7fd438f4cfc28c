//! Inducing-input placement and sparse approximations.
//!
//! FITC is used for regression: the predictive mean is
//! `k_*ᵀ Q_MM⁻¹ K_MN (Λ + σ²I)⁻¹ y`, so everything left of `y` is the cloaking
//! matrix. SoR replaces the training covariance by `K_NM K_MM⁻¹ K_MN` for
//! classification. All solves go through the whitened form
//! `V = L⁻¹ K_MN` with `K_MM = L Lᵀ`, so `Q_MM = L (I + V D⁻¹ Vᵀ) Lᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::kernels::{HyperConfig, KernelSpec};
use crate::linalg::{factorize, Factor};

const KMEANS_MAX_ITERATIONS: usize = 100;

/// Pseudo-input locations, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    pub z: DMatrix<f64>,
}

impl InducingSet {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(invalid("inducing", 0, "need at least one inducing input"));
        }
        Ok(Self { z })
    }

    pub fn count(&self) -> usize {
        self.z.nrows()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.z.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Result of Lloyd's algorithm.
#[derive(Clone, Debug)]
pub struct KMeans {
    pub centroids: DMatrix<f64>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    /// Within-cluster sum of squares after seeding and after every iteration.
    pub objective_history: Vec<f64>,
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    (0..x.ncols()).map(|d| (x[(i, d)] - c[(k, d)]).powi(2)).sum()
}

fn nearest(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..c.nrows() {
        let d = sq_dist(x, i, c, k);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Within-cluster sum of squares with every point assigned to its nearest centroid.
pub fn within_cluster_ss(x: &DMatrix<f64>, centroids: &DMatrix<f64>) -> f64 {
    (0..x.nrows()).map(|i| nearest(x, i, centroids).1).sum()
}

/// Lloyd's algorithm with farthest-first seeding. The first seed is drawn
/// from `rng`; everything after is deterministic.
pub fn kmeans<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> Result<KMeans> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(invalid("m_count", k, "inducing count must lie in 1..=N"));
    }
    let d = x.ncols();
    let mut centroids = DMatrix::<f64>::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&x.row(first));
    let mut min_dist: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centroids, 0)).collect();
    for c in 1..k {
        let (pick, _) = min_dist.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
        centroids.row_mut(c).copy_from(&x.row(pick));
        for (i, md) in min_dist.iter_mut().enumerate() {
            *md = md.min(sq_dist(x, i, &centroids, c));
        }
    }

    let mut assignment: Vec<usize> = (0..n).map(|i| nearest(x, i, &centroids).0).collect();
    let mut history = vec![within_cluster_ss(x, &centroids)];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for j in 0..d {
                sums[(a, j)] += x[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
        // Re-seed empty clusters at the point farthest from its centroid.
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                let far = (0..n)
                    .map(|i| (i, sq_dist(x, i, &centroids, assignment[i])))
                    .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc })
                    .0;
                centroids.row_mut(c).copy_from(&x.row(far));
                assignment[far] = c;
            }
        }
        let next: Vec<usize> = (0..n).map(|i| nearest(x, i, &centroids).0).collect();
        history.push(within_cluster_ss(x, &centroids));
        let changed = next != assignment;
        assignment = next;
        if !changed {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignment,
        iterations,
        objective_history: history,
    })
}

/// Places `m_count` inducing inputs at k-means centroids of the (public)
/// training inputs.
pub fn kmeans_place<R: Rng + ?Sized>(x: &DMatrix<f64>, m_count: usize, rng: &mut R) -> Result<InducingSet> {
    InducingSet::new(kmeans(x, m_count, rng)?.centroids)
}

/// Pieces of the FITC posterior that do not depend on the outputs.
#[derive(Clone, Debug)]
pub struct FitcParts {
    pub q_mm: DMatrix<f64>,
    /// Diagonal of `Λ`, `K_nn − k_nᵀ K_MM⁻¹ k_n`, clamped at zero.
    pub lambda: DVector<f64>,
    pub sigma2: f64,
}

/// Whitened FITC quantities shared by the mean and variance.
struct Fitc {
    kmm: Factor,
    /// `L⁻¹ K_MN`.
    v: DMatrix<f64>,
    /// `Λ + σ²`.
    d: DVector<f64>,
    lambda: DVector<f64>,
    /// Factor of `B = I + V D⁻¹ Vᵀ`.
    b: Factor,
    b_matrix: DMatrix<f64>,
}

fn fitc_core(x: &DMatrix<f64>, z: &InducingSet, kernel: &KernelSpec, sigma2: f64) -> Result<Fitc> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(invalid(
            "noise_variance",
            sigma2,
            "FITC needs a positive noise variance",
        ));
    }
    if z.z.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch {
            context: "inducing inputs",
            expected: x.ncols(),
            found: z.z.ncols(),
        });
    }
    let kmm = factorize(&kernel.cov(&z.z, &z.z)?, "inducing covariance K_MM")?;
    let v = kmm.whiten(&kernel.cov(&z.z, x)?);
    let knn = kernel.diag(x)?;
    let lambda = DVector::from_fn(x.nrows(), |n, _| (knn[n] - v.column(n).norm_squared()).max(0.0));
    let d = lambda.map(|l| l + sigma2);
    let mut a = v.clone();
    for (n, mut col) in a.column_iter_mut().enumerate() {
        col /= d[n].sqrt();
    }
    let mut b_matrix = &a * a.transpose();
    for i in 0..b_matrix.nrows() {
        b_matrix[(i, i)] += 1.0;
    }
    let b = factorize(&b_matrix, "FITC inner matrix")?;
    Ok(Fitc {
        kmm,
        v,
        d,
        lambda,
        b,
        b_matrix,
    })
}

impl Fitc {
    fn parts(&self, sigma2: f64) -> FitcParts {
        let l = self.kmm.l();
        let q_mm = &l * &self.b_matrix * l.transpose();
        FitcParts {
            q_mm,
            lambda: self.lambda.clone(),
            sigma2,
        }
    }
}

/// FITC cloaking matrix `k_{*m}ᵀ Q_MM⁻¹ K_MN (Λ + σ²I)⁻¹` for an arbitrary kernel.
pub fn fitc_cloaking_matrix_with(
    x: &DMatrix<f64>,
    x_star: &DMatrix<f64>,
    z: &InducingSet,
    kernel: &KernelSpec,
    sigma2: f64,
) -> Result<(DMatrix<f64>, FitcParts)> {
    let core = fitc_core(x, z, kernel, sigma2)?;
    let w_star = core.kmm.whiten(&kernel.cov(&z.z, x_star)?);
    let left = core.b.solve(&w_star); // B⁻¹ L⁻¹ K_{M*}
    let mut right = core.v.clone();
    for (n, mut col) in right.column_iter_mut().enumerate() {
        col /= core.d[n];
    }
    let c = left.transpose() * right;
    Ok((c, core.parts(sigma2)))
}

pub fn fitc_cloaking_matrix(
    x: &DMatrix<f64>,
    x_star: &DMatrix<f64>,
    z: &InducingSet,
    theta: &HyperConfig,
) -> Result<(DMatrix<f64>, FitcParts)> {
    let kernel = theta.eq_kernel(x.ncols())?;
    fitc_cloaking_matrix_with(x, x_star, z, &kernel, theta.noise_variance)
}

/// Tolerance below zero before a predictive variance counts as a failure.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-8;

/// FITC predictive variance `K_** − k_*ᵀ(K_MM⁻¹ − Q_MM⁻¹)k_* + σ²`.
pub fn fitc_predict_var_with(
    x: &DMatrix<f64>,
    x_star: &DMatrix<f64>,
    z: &InducingSet,
    kernel: &KernelSpec,
    sigma2: f64,
) -> Result<DVector<f64>> {
    let core = fitc_core(x, z, kernel, sigma2)?;
    let w_star = core.kmm.whiten(&kernel.cov(&z.z, x_star)?);
    let u = core.b.whiten(&w_star);
    let kss = kernel.diag(x_star)?;
    let mut out = DVector::<f64>::zeros(x_star.nrows());
    for p in 0..x_star.nrows() {
        let v = kss[p] - w_star.column(p).norm_squared() + u.column(p).norm_squared() + sigma2;
        if v < -NEGATIVE_VARIANCE_TOLERANCE {
            return Err(Error::NegativeVariance { index: p, value: v });
        }
        out[p] = v.max(0.0);
    }
    Ok(out)
}

/// FITC predictive variance. Depends on the inputs only, never on `y`.
///
/// `x` are the training inputs the posterior is conditioned on.
pub fn fitc_predict_var(
    x: &DMatrix<f64>,
    x_star: &DMatrix<f64>,
    z: &InducingSet,
    theta: &HyperConfig,
) -> Result<DVector<f64>> {
    let kernel = theta.eq_kernel(x.ncols())?;
    fitc_predict_var_with(x, x_star, z, &kernel, theta.noise_variance)
}

/// Rank-`M'` surrogate `K_NM K_MM⁻¹ K_MN` for the training covariance.
pub fn sor_lowrank_with(x: &DMatrix<f64>, z: &InducingSet, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let kmm = factorize(&kernel.cov(&z.z, &z.z)?, "inducing covariance K_MM")?;
    let v = kmm.whiten(&kernel.cov(&z.z, x)?);
    Ok(v.transpose() * v)
}

pub fn sor_lowrank(x: &DMatrix<f64>, z: &InducingSet, theta: &HyperConfig) -> Result<DMatrix<f64>> {
    let kernel = theta.eq_kernel(x.ncols())?;
    sor_lowrank_with(x, z, &kernel)
}
