//! Covariance functions.
//!
//! Three families are provided:
//!
//! * the stationary exponentiated quadratic (EQ) with per-dimension
//!   lengthscales, `σ_f² exp(−½ Σ_d (x_d − x'_d)² / ℓ_d²)`;
//! * the Gibbs/Paciorek variable-lengthscale covariance, whose lengthscale at
//!   each input comes from a [`LengthscaleFunction`] driven by the density of
//!   the (public) training inputs;
//! * a weighted sum of two GPs, `w(x) k_f w(x') + (1 − w(x)) k_g (1 − w(x'))`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One point of a hyperparameter grid: lengthscale(s), kernel variance and
/// Gaussian observation-noise variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    /// Either one shared lengthscale or one per input dimension.
    pub lengthscales: Vec<f64>,
    pub kernel_variance: f64,
    pub noise_variance: f64,
}

impl HyperConfig {
    pub fn isotropic(lengthscale: f64, kernel_variance: f64, noise_variance: f64) -> Self {
        Self {
            lengthscales: vec![lengthscale],
            kernel_variance,
            noise_variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(invalid("lengthscales", "[]", "at least one lengthscale is required"));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(invalid("lengthscales", l, "lengthscales must be positive and finite"));
        }
        if !(self.kernel_variance > 0.0 && self.kernel_variance.is_finite()) {
            return Err(invalid("kernel_variance", self.kernel_variance, "must be positive"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(invalid("noise_variance", self.noise_variance, "must be nonnegative"));
        }
        Ok(())
    }

    /// Lengthscales expanded to `dim` entries.
    pub fn lengthscales_for(&self, dim: usize) -> Result<Vec<f64>> {
        match self.lengthscales.len() {
            1 => Ok(vec![self.lengthscales[0]; dim]),
            n if n == dim => Ok(self.lengthscales.clone()),
            n => Err(Error::DimensionMismatch {
                context: "hyperparameter lengthscales",
                expected: dim,
                found: n,
            }),
        }
    }

    /// The EQ kernel described by this configuration for `dim`-dimensional inputs.
    pub fn eq_kernel(&self, dim: usize) -> Result<KernelSpec> {
        self.validate()?;
        Ok(KernelSpec::Eq(EqKernel::new(
            self.kernel_variance,
            self.lengthscales_for(dim)?,
        )?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EqKernel {
    variance: f64,
    lengthscales: Vec<f64>,
}

impl EqKernel {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(invalid("variance", variance, "kernel variance must be positive"));
        }
        if lengthscales.is_empty() {
            return Err(invalid("lengthscales", "[]", "at least one lengthscale is required"));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(invalid("lengthscales", l, "lengthscales must be positive and finite"));
        }
        Ok(Self { variance, lengthscales })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum();
        self.variance * (-0.5 * r2).exp()
    }
}

/// Parameters of the density-driven lengthscale function, before it is fitted
/// to a set of training inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthscaleParams {
    /// Target number of training points within half a lengthscale.
    pub n: f64,
    /// Upper bound on the lengthscale.
    pub m: f64,
    /// KDE bandwidth; Silverman's rule on the training inputs when absent.
    #[serde(default)]
    pub kde_bandwidth: Option<f64>,
    /// Radius of the ball over which the minimum density is taken; one KDE
    /// bandwidth when absent. Zero gives the plain density.
    #[serde(default)]
    pub neighbourhood_radius: Option<f64>,
}

/// Probe points per half-axis used to approximate the minimum density over
/// the neighbourhood ball.
const NEIGHBOURHOOD_PROBES: usize = 4;

/// `l(x) = [m⁻¹ + ρ̃(x)/n]⁻¹` where `ρ̃` is the smallest Gaussian-KDE density
/// of the training inputs found in a ball around `x`.
#[derive(Clone, Debug)]
pub struct LengthscaleFunction {
    n: f64,
    m: f64,
    bandwidth: f64,
    radius: f64,
    inputs: DMatrix<f64>,
}

impl LengthscaleFunction {
    pub fn new(inputs: DMatrix<f64>, n: f64, m: f64, bandwidth: f64, radius: f64) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(invalid("training_inputs", "empty", "need at least one training input"));
        }
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid("n", n, "must be positive"));
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(invalid("m", m, "must be positive"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(invalid("kde_bandwidth", bandwidth, "must be positive"));
        }
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(invalid("neighbourhood_radius", radius, "must be nonnegative"));
        }
        Ok(Self {
            n,
            m,
            bandwidth,
            radius,
            inputs,
        })
    }

    /// Fits the function to `inputs`, filling unset bandwidth and radius.
    pub fn fit(params: &LengthscaleParams, inputs: &DMatrix<f64>) -> Result<Self> {
        let bandwidth = match params.kde_bandwidth {
            Some(h) => h,
            None => silverman_bandwidth(inputs),
        };
        let radius = params.neighbourhood_radius.unwrap_or(bandwidth);
        Self::new(inputs.clone(), params.n, params.m, bandwidth, radius)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn upper_bound(&self) -> f64 {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Gaussian KDE of the training inputs, as a count density (it integrates
    /// to the number of training points, not to one).
    pub fn density(&self, x: &[f64]) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let d = self.inputs.ncols() as f64;
        let norm = (2.0 * PI * h2).powf(-0.5 * d);
        self.inputs
            .row_iter()
            .map(|row| {
                let r2: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (-0.5 * r2 / h2).exp()
            })
            .sum::<f64>()
            * norm
    }

    /// Minimum density over probe points spread along each axis of the
    /// neighbourhood ball (the centre included).
    pub fn neighbourhood_density(&self, x: &[f64]) -> f64 {
        let mut best = self.density(x);
        if self.radius == 0.0 {
            return best;
        }
        let mut probe = x.to_vec();
        for dim in 0..x.len() {
            for step in 1..=NEIGHBOURHOOD_PROBES {
                let offset = self.radius * step as f64 / NEIGHBOURHOOD_PROBES as f64;
                for sign in [-1.0, 1.0] {
                    probe[dim] = x[dim] + sign * offset;
                    best = best.min(self.density(&probe));
                }
            }
            probe[dim] = x[dim];
        }
        best
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        lengthscale_from_density(self.neighbourhood_density(x), self.n, self.m)
    }
}

/// `[m⁻¹ + ρ/n]⁻¹`.
pub fn lengthscale_from_density(density: f64, n: f64, m: f64) -> f64 {
    1.0 / (1.0 / m + density / n)
}

pub fn lengthscale_at(x: &[f64], f: &LengthscaleFunction) -> f64 {
    f.at(x)
}

/// Silverman-style bandwidth `(4/(D+2))^{1/(D+4)} σ̄ N^{−1/(D+4)}`, with `σ̄`
/// the mean per-dimension standard deviation of the inputs.
pub fn silverman_bandwidth(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let d = x.ncols().max(1) as f64;
    if n < 2 {
        return 1.0;
    }
    let sd: f64 = x
        .column_iter()
        .map(|col| {
            let mean = col.mean();
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        })
        .sum::<f64>()
        / d;
    let sd = if sd > 0.0 { sd } else { 1.0 };
    (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0)) * sd * (n as f64).powf(-1.0 / (d + 4.0))
}

#[derive(Clone, Debug)]
pub struct GibbsKernel {
    variance: f64,
    lengthscale_fn: Arc<LengthscaleFunction>,
}

impl GibbsKernel {
    pub fn new(variance: f64, lengthscale_fn: Arc<LengthscaleFunction>) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(invalid("variance", variance, "kernel variance must be positive"));
        }
        Ok(Self {
            variance,
            lengthscale_fn,
        })
    }

    pub fn lengthscale_fn(&self) -> &LengthscaleFunction {
        &self.lengthscale_fn
    }
}

/// Gibbs covariance between two points with scalar lengthscales `ra`, `rb`
/// shared across all `D` dimensions.
pub fn gibbs_entry(variance: f64, a: &[f64], b: &[f64], ra: f64, rb: f64) -> f64 {
    let sum_sq = ra * ra + rb * rb;
    let prefactor = (2.0 * ra * rb / sum_sq).powf(0.5 * a.len() as f64);
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    variance * prefactor * (-r2 / sum_sq).exp()
}

/// Position-dependent mixing weight of the weighted-sum kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFunction {
    Constant {
        value: f64,
    },
    /// `1 / (1 + exp(−(x_dim − centre)/scale))`.
    Logistic {
        dim: usize,
        centre: f64,
        scale: f64,
    },
    /// 1 when `x_dim < threshold`, else 0.
    Step {
        dim: usize,
        threshold: f64,
    },
}

impl WeightFunction {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let w = match *self {
            WeightFunction::Constant { value } => value,
            WeightFunction::Logistic { dim, centre, scale } => {
                let v = *x.get(dim).ok_or(Error::DimensionMismatch {
                    context: "weight function",
                    expected: dim + 1,
                    found: x.len(),
                })?;
                1.0 / (1.0 + (-(v - centre) / scale).exp())
            }
            WeightFunction::Step { dim, threshold } => {
                let v = *x.get(dim).ok_or(Error::DimensionMismatch {
                    context: "weight function",
                    expected: dim + 1,
                    found: x.len(),
                })?;
                if v < threshold {
                    1.0
                } else {
                    0.0
                }
            }
        };
        if (0.0..=1.0).contains(&w) {
            Ok(w)
        } else {
            Err(invalid("weight", w, "weight function must map into [0, 1]"))
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeightedSumKernel {
    pub f: Box<KernelSpec>,
    pub g: Box<KernelSpec>,
    pub weight: WeightFunction,
}

/// A covariance function.
#[derive(Clone, Debug)]
pub enum KernelSpec {
    Eq(EqKernel),
    Gibbs(GibbsKernel),
    WeightedSum(WeightedSumKernel),
}

impl KernelSpec {
    pub fn eq(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        EqKernel::new(variance, lengthscales).map(KernelSpec::Eq)
    }

    pub fn gibbs(variance: f64, lengthscale_fn: LengthscaleFunction) -> Result<Self> {
        GibbsKernel::new(variance, Arc::new(lengthscale_fn)).map(KernelSpec::Gibbs)
    }

    pub fn weighted_sum(f: KernelSpec, g: KernelSpec, weight: WeightFunction) -> Self {
        KernelSpec::WeightedSum(WeightedSumKernel {
            f: Box::new(f),
            g: Box::new(g),
            weight,
        })
    }

    /// Input dimension the kernel requires, if it fixes one.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            KernelSpec::Eq(k) if k.lengthscales.len() > 1 => Some(k.lengthscales.len()),
            KernelSpec::Eq(_) => None,
            KernelSpec::Gibbs(k) => Some(k.lengthscale_fn.dim()),
            KernelSpec::WeightedSum(k) => k.f.input_dim().or_else(|| k.g.input_dim()),
        }
    }

    fn check_dims(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<()> {
        if x1.ncols() != x2.ncols() {
            return Err(Error::DimensionMismatch {
                context: "kernel inputs",
                expected: x1.ncols(),
                found: x2.ncols(),
            });
        }
        if let Some(d) = self.input_dim() {
            if d != x1.ncols() {
                return Err(Error::DimensionMismatch {
                    context: "kernel input dimension",
                    expected: d,
                    found: x1.ncols(),
                });
            }
        }
        Ok(())
    }

    /// Covariance matrix between the rows of `x1` and `x2`.
    pub fn cov(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(x1, x2)?;
        match self {
            KernelSpec::Eq(k) => {
                let k = if k.lengthscales.len() == 1 && x1.ncols() > 1 {
                    EqKernel {
                        variance: k.variance,
                        lengthscales: vec![k.lengthscales[0]; x1.ncols()],
                    }
                } else {
                    k.clone()
                };
                let rows1 = rows_of(x1);
                let rows2 = rows_of(x2);
                Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
                    k.eval(&rows1[i], &rows2[j])
                }))
            }
            KernelSpec::Gibbs(k) => {
                let rows1 = rows_of(x1);
                let rows2 = rows_of(x2);
                let r1 = lengthscales_checked(&k.lengthscale_fn, &rows1)?;
                let r2 = lengthscales_checked(&k.lengthscale_fn, &rows2)?;
                Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
                    gibbs_entry(k.variance, &rows1[i], &rows2[j], r1[i], r2[j])
                }))
            }
            KernelSpec::WeightedSum(k) => {
                let kf = k.f.cov(x1, x2)?;
                let kg = k.g.cov(x1, x2)?;
                let w1 = weights(&k.weight, x1)?;
                let w2 = weights(&k.weight, x2)?;
                Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
                    w1[i] * kf[(i, j)] * w2[j] + (1.0 - w1[i]) * kg[(i, j)] * (1.0 - w2[j])
                }))
            }
        }
    }

    /// Prior variances `k(x, x)` for each row of `x`.
    pub fn diag(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_dims(x, x)?;
        match self {
            KernelSpec::Eq(k) => Ok(DVector::from_element(x.nrows(), k.variance)),
            KernelSpec::Gibbs(k) => Ok(DVector::from_element(x.nrows(), k.variance)),
            KernelSpec::WeightedSum(k) => {
                let df = k.f.diag(x)?;
                let dg = k.g.diag(x)?;
                let w = weights(&k.weight, x)?;
                Ok(DVector::from_fn(x.nrows(), |i, _| {
                    w[i] * w[i] * df[i] + (1.0 - w[i]) * (1.0 - w[i]) * dg[i]
                }))
            }
        }
    }
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn lengthscales_checked(f: &LengthscaleFunction, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let l = f.at(r);
            if l > 0.0 && l.is_finite() {
                Ok(l)
            } else {
                Err(invalid(
                    "lengthscale",
                    l,
                    "lengthscale function returned a nonpositive value",
                ))
            }
        })
        .collect()
}

fn weights(w: &WeightFunction, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    rows_of(x).iter().map(|r| w.eval(r)).collect()
}

/// EQ covariance between the rows of `x1` and `x2`.
pub fn eq_cov(x1: &DMatrix<f64>, x2: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    match spec {
        KernelSpec::Eq(_) => spec.cov(x1, x2),
        _ => Err(invalid("family", "non-EQ", "eq_cov requires an EQ kernel")),
    }
}

/// Gibbs covariance between the rows of `x1` and `x2`.
pub fn gibbs_cov(x1: &DMatrix<f64>, x2: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    match spec {
        KernelSpec::Gibbs(_) => spec.cov(x1, x2),
        _ => Err(invalid("family", "non-Gibbs", "gibbs_cov requires a Gibbs kernel")),
    }
}

/// Weighted-sum covariance between the rows of `x1` and `x2`.
pub fn weighted_sum_cov(x1: &DMatrix<f64>, x2: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    match spec {
        KernelSpec::WeightedSum(_) => spec.cov(x1, x2),
        _ => Err(invalid(
            "family",
            "non-weighted-sum",
            "weighted_sum_cov requires a weighted-sum kernel",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mean_abs_diagonal;
    use nalgebra::Cholesky;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn eq_same_point_is_variance() {
        let k = KernelSpec::eq(1.0, vec![2.0]).unwrap();
        let c = eq_cov(&col(&[3.0]), &col(&[3.0]), &k).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
    }

    #[test]
    fn eq_one_lengthscale_apart() {
        let k = KernelSpec::eq(1.0, vec![1.7]).unwrap();
        let c = eq_cov(&col(&[0.0]), &col(&[1.7]), &k).unwrap();
        assert!((c[(0, 0)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((c[(0, 0)] - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn eq_row_of_two() {
        let k = KernelSpec::eq(2.0, vec![1.0]).unwrap();
        let c = eq_cov(&col(&[0.0]), &col(&[0.0, 1.0]), &k).unwrap();
        assert_eq!(c.shape(), (1, 2));
        assert_eq!(c[(0, 0)], 2.0);
        assert!((c[(0, 1)] - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn eq_rejects_bad_hyperparameters() {
        assert!(KernelSpec::eq(0.0, vec![1.0]).is_err());
        assert!(KernelSpec::eq(1.0, vec![1.0, -1.0]).is_err());
        assert!(KernelSpec::eq(1.0, vec![]).is_err());
    }

    #[test]
    fn eq_dimension_mismatch() {
        let k = KernelSpec::eq(1.0, vec![1.0, 2.0]).unwrap();
        let x = DMatrix::zeros(2, 3);
        assert!(matches!(k.cov(&x, &x), Err(Error::DimensionMismatch { .. })));
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 1);
        assert!(k.cov(&a, &b).is_err());
    }

    fn constant_lengthscale_fn(r: f64) -> LengthscaleFunction {
        // Zero density everywhere (inputs far away) pins l(x) to m.
        LengthscaleFunction::new(col(&[1e9]), 1.0, r, 1.0, 0.0).unwrap()
    }

    #[test]
    fn gibbs_with_constant_lengthscale_is_eq() {
        let f = constant_lengthscale_fn(1.3);
        assert_eq!(f.at(&[0.2]), 1.3);
        let g = KernelSpec::gibbs(2.5, f).unwrap();
        let e = KernelSpec::eq(2.5, vec![1.3]).unwrap();
        let x1 = col(&[0.0, 0.4, 1.9, -2.0]);
        let x2 = col(&[0.1, 3.0, -0.7]);
        let diff = gibbs_cov(&x1, &x2, &g).unwrap() - eq_cov(&x1, &x2, &e).unwrap();
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn gibbs_prefactor_at_zero_distance() {
        let v = gibbs_entry(1.0, &[0.5], &[0.5], 1.0, 10.0);
        assert!((v - (20.0f64 / 101.0).sqrt()).abs() < 1e-15);
        assert!((v - 0.4450).abs() < 1e-4);
        assert_eq!(gibbs_entry(3.0, &[0.5, 1.0], &[0.5, 1.0], 2.0, 2.0), 3.0);
    }

    #[test]
    fn lengthscale_formula() {
        assert_eq!(lengthscale_from_density(0.0, 5.0, 100.0), 100.0);
        assert!((lengthscale_from_density(0.1, 5.0, 100.0) - 1.0 / 0.03).abs() < 1e-12);
        assert!(lengthscale_from_density(1e300, 5.0, 100.0) < 1e-290);
    }

    #[test]
    fn density_counts_points() {
        // A single training point: KDE peak is the Gaussian normaliser.
        let f = LengthscaleFunction::new(col(&[0.0]), 1.0, 10.0, 0.5, 0.0).unwrap();
        let peak = 1.0 / (2.0 * PI * 0.25f64).sqrt();
        assert!((f.density(&[0.0]) - peak).abs() < 1e-12);
        // Neighbourhood minimum can only lower the density.
        let g = LengthscaleFunction::new(col(&[0.0]), 1.0, 10.0, 0.5, 1.0).unwrap();
        assert!(g.neighbourhood_density(&[0.0]) < f.density(&[0.0]));
        assert!(g.at(&[0.0]) > f.at(&[0.0]));
    }

    #[test]
    fn silverman_defaults_are_positive() {
        let x = col(&[0.0, 1.0, 2.0, 5.0]);
        let f = LengthscaleFunction::fit(
            &LengthscaleParams {
                n: 3.0,
                m: 50.0,
                kde_bandwidth: None,
                neighbourhood_radius: None,
            },
            &x,
        )
        .unwrap();
        assert!(f.bandwidth() > 0.0);
        assert_eq!(f.radius(), f.bandwidth());
    }

    #[test]
    fn weighted_sum_limits() {
        let kf = KernelSpec::eq(1.0, vec![1.0]).unwrap();
        let kg = KernelSpec::eq(4.0, vec![10.0]).unwrap();
        let x = col(&[0.0, 0.3, 5.0]);

        let all_f = KernelSpec::weighted_sum(kf.clone(), kg.clone(), WeightFunction::Constant { value: 1.0 });
        let diff = weighted_sum_cov(&x, &x, &all_f).unwrap() - kf.cov(&x, &x).unwrap();
        assert!(diff.amax() == 0.0);

        // w = 1 left of 1.0, 0 to the right: points across the boundary are uncorrelated.
        let step = KernelSpec::weighted_sum(kf.clone(), kg.clone(), WeightFunction::Step { dim: 0, threshold: 1.0 });
        let c = weighted_sum_cov(&col(&[0.99]), &col(&[1.01]), &step).unwrap();
        assert_eq!(c[(0, 0)], 0.0);

        let half = KernelSpec::weighted_sum(kf.clone(), kf.clone(), WeightFunction::Constant { value: 0.5 });
        let diff = weighted_sum_cov(&x, &x, &half).unwrap() - kf.cov(&x, &x).unwrap() * 0.5;
        assert!(diff.amax() < 1e-15);
    }

    #[test]
    fn weight_outside_unit_interval_is_an_error() {
        let kf = KernelSpec::eq(1.0, vec![1.0]).unwrap();
        let bad = KernelSpec::weighted_sum(kf.clone(), kf, WeightFunction::Constant { value: 1.5 });
        assert!(bad.cov(&col(&[0.0]), &col(&[1.0])).is_err());
    }

    #[test]
    fn diag_matches_cov_diagonal() {
        let kf = KernelSpec::eq(1.0, vec![1.0]).unwrap();
        let kg = KernelSpec::eq(3.0, vec![2.0]).unwrap();
        let k = KernelSpec::weighted_sum(
            kf,
            kg,
            WeightFunction::Logistic {
                dim: 0,
                centre: 1.0,
                scale: 0.5,
            },
        );
        let x = col(&[0.0, 1.0, 2.5]);
        let full = k.cov(&x, &x).unwrap();
        let d = k.diag(&x).unwrap();
        for i in 0..3 {
            assert!((full[(i, i)] - d[i]).abs() < 1e-14);
        }
    }

    fn psd_with_jitter(k: &DMatrix<f64>) -> bool {
        let mut a = k.clone();
        let j = 1e-8 * mean_abs_diagonal(k);
        for i in 0..a.nrows() {
            a[(i, i)] += j;
        }
        Cholesky::new(a).is_some()
    }

    fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..=30, 1usize..=5).prop_flat_map(|(n, d)| {
            proptest::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gram_matrices_are_psd(x in matrix_strategy(), l in 0.3f64..4.0, v in 0.1f64..10.0) {
            let d = x.ncols();
            let eq = KernelSpec::eq(v, vec![l; d]).unwrap();
            let ke = eq.cov(&x, &x).unwrap();
            prop_assert!(psd_with_jitter(&ke));
            prop_assert!((&ke - ke.transpose()).amax() < 1e-14);

            let f = LengthscaleFunction::fit(
                &LengthscaleParams { n: 2.0, m: 4.0 * l, kde_bandwidth: None, neighbourhood_radius: None },
                &x,
            ).unwrap();
            let gibbs = KernelSpec::gibbs(v, f).unwrap();
            let kg = gibbs.cov(&x, &x).unwrap();
            prop_assert!(psd_with_jitter(&kg));

            let ws = KernelSpec::weighted_sum(
                eq.clone(),
                KernelSpec::eq(v, vec![3.0 * l; d]).unwrap(),
                WeightFunction::Logistic { dim: 0, centre: 0.0, scale: 1.0 },
            );
            let kw = ws.cov(&x, &x).unwrap();
            prop_assert!(psd_with_jitter(&kw));
        }

        #[test]
        fn lengthscale_bounded_and_monotone(rho1 in 0.0f64..1e3, rho2 in 0.0f64..1e3, n in 0.1f64..50.0, m in 0.1f64..500.0) {
            let (lo, hi) = if rho1 <= rho2 { (rho1, rho2) } else { (rho2, rho1) };
            let l_lo = lengthscale_from_density(lo, n, m);
            let l_hi = lengthscale_from_density(hi, n, m);
            prop_assert!(l_lo <= m && l_hi <= m);
            prop_assert!(l_lo > 0.0 && l_hi > 0.0);
            prop_assert!(l_hi <= l_lo);
        }

        #[test]
        fn cross_regime_covariance_vanishes(a in -10.0f64..0.0, b in 0.0f64..10.0) {
            let kf = KernelSpec::eq(1.0, vec![100.0]).unwrap();
            let kg = KernelSpec::eq(1.0, vec![100.0]).unwrap();
            let k = KernelSpec::weighted_sum(kf, kg, WeightFunction::Step { dim: 0, threshold: 0.0 });
            let c = k.cov(&col(&[a]), &col(&[b])).unwrap();
            prop_assert_eq!(c[(0, 0)], 0.0);
        }
    }
}
