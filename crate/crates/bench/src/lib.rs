//! Fixtures shared by the benchmarks: seeded synthetic problems at desk scale.

use dpgp_core::data::{gen_kung_like, gen_stripes, TabularDataset};
use dpgp_core::rng;
use dpgp_core::{cloaking_matrix, HyperConfig, Result};
use nalgebra::DMatrix;

/// Height against age with `n` records.
pub fn kung(n: usize) -> TabularDataset {
    gen_kung_like(n, &mut rng::stream(0, 0))
        .and_then(|d| d.select_features(&["age"]))
        .expect("fixture parameters are valid")
}

/// Noisy stripes with `n` points.
pub fn stripes(n: usize) -> TabularDataset {
    gen_stripes(n, 0.1, &mut rng::stream(0, 1)).expect("fixture parameters are valid")
}

pub fn kung_theta() -> HyperConfig {
    HyperConfig::isotropic(15.0, 2500.0, 100.0)
}

/// `p` evenly spaced ages in `[0, 90]`.
pub fn age_grid(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, 1, |i, _| 90.0 * i as f64 / (p - 1).max(1) as f64)
}

/// Dense cloaking matrix of the kung fixture at `p` test ages.
pub fn kung_cloaking(n: usize, p: usize) -> Result<DMatrix<f64>> {
    let data = kung(n);
    let theta = kung_theta();
    let kernel = theta.eq_kernel(1)?;
    let mut k = kernel.cov(&data.x, &data.x)?;
    for i in 0..n {
        k[(i, i)] += theta.noise_variance;
    }
    cloaking_matrix(&kernel.cov(&age_grid(p), &data.x)?, &k)
}
