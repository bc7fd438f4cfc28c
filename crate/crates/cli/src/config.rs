//! Run configuration: per-command defaults, a partial JSON overlay and flag
//! overrides, resolved into one fully specified record.

use std::path::{Path, PathBuf};

use dpgp_core::hyperselect::SensitivityThreshold;
use dpgp_core::{HyperConfig, LengthscaleParams, OptimizeOptions, PrivacySpec, RegressionMode};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Regress,
    Classify,
    SelectHypers,
    Bench,
}

/// Where the training data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Synthetic height-against-age records.
    KungLike { n: usize, features: Vec<String> },
    /// Two-class diagonal stripes with label noise.
    Stripes { n: usize, flip: f64 },
    /// Header row, feature columns and one output column.
    Csv {
        path: PathBuf,
        output: String,
        #[serde(default)]
        features: Option<Vec<String>>,
        /// Output sensitivity; overrides the privacy section's when set.
        #[serde(default)]
        sensitivity: Option<f64>,
    },
    /// IDX image/label pair, downsampled to 15×15 with labels {0–4} vs {5–9}.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        n_train: usize,
        n_test: usize,
    },
}

/// Where predictions are made.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSpec {
    /// Evenly spaced points on a line (one-dimensional inputs only).
    Grid { from: f64, to: f64, points: usize },
    /// Labelled `side × side` lattice over the stripes square.
    StripesGrid { side: usize },
    /// The training inputs themselves.
    Training,
    /// Feature columns of a CSV file.
    Csv { path: PathBuf },
    /// The held-out split of an image dataset.
    Holdout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Eq,
    Gibbs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
    /// Gibbs only: target count of points within half a lengthscale.
    #[serde(default)]
    pub n: Option<f64>,
    /// Gibbs only: upper bound on the lengthscale.
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub kde_bandwidth: Option<f64>,
    #[serde(default)]
    pub neighbourhood_radius: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    /// `null` releases the clean predictions.
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub sensitivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lengthscales: Vec<f64>,
    pub noise_variances: Vec<f64>,
    pub kernel_variances: Vec<f64>,
    pub kappa: usize,
    pub epsilon_select: f64,
    pub threshold: SensitivityThreshold,
    /// Share of the records used for selection; the rest score the RMSE.
    pub selection_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Cross-validated RMSE of standard and sparse cloaking, with and without noise.
    Rmse,
    /// Classification accuracy over inducing counts × lengthscales.
    InducingSweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub experiment: Experiment,
    /// Inducing counts for the sweep; sixteen log-spaced values in 4–200
    /// (capped at N) when absent.
    #[serde(default)]
    pub inducing_counts: Option<Vec<usize>>,
    /// Lengthscales for the sweep.
    pub lengthscales: Vec<f64>,
    /// Feature subsets compared by the RMSE experiment.
    pub feature_sets: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Output directory; left out of the artifacts so reruns elsewhere match.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Withholds the clean mean and raw outputs from every artifact.
    pub privacy_mode: bool,
    pub dataset: DatasetSpec,
    pub test: TestSpec,
    pub kernel: KernelConfig,
    pub noise_variance: f64,
    pub prior_mean: f64,
    pub privacy: PrivacyConfig,
    /// Inducing-input count; dense when absent.
    pub sparse: Option<usize>,
    pub newton_iterations: usize,
    pub folds: usize,
    pub noise_draws: usize,
    pub optimizer: OptimizeOptions,
    pub grid: GridConfig,
    pub bench: BenchConfig,
}

/// Command-line values that override the configuration.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub sensitivity: Option<f64>,
    pub sparse: Option<usize>,
    pub iterations: Option<usize>,
    pub privacy_mode: bool,
}

fn defaults(command: Command) -> RunConfig {
    // The RMSE table compares feature subsets, so bench keeps both columns.
    let kung_features = match command {
        Command::Bench => vec!["age".into(), "weight".into()],
        _ => vec!["age".into()],
    };
    let kung = DatasetSpec::KungLike {
        n: 300,
        features: kung_features,
    };
    let (dataset, test, kernel, noise_variance, prior_mean, sensitivity) = match command {
        Command::Classify => (
            DatasetSpec::Stripes { n: 200, flip: 0.1 },
            TestSpec::StripesGrid { side: 10 },
            eq_kernel(1.0, 3.5),
            0.0,
            0.0,
            2.0,
        ),
        Command::SelectHypers => (
            DatasetSpec::KungLike {
                n: 230,
                features: vec!["age".into()],
            },
            TestSpec::Training,
            eq_kernel(2500.0, 15.0),
            100.0,
            0.0,
            100.0,
        ),
        Command::Regress | Command::Bench => (
            kung,
            TestSpec::Grid {
                from: 0.0,
                to: 90.0,
                points: 91,
            },
            eq_kernel(2500.0, 15.0),
            100.0,
            100.0,
            100.0,
        ),
    };
    RunConfig {
        command,
        out: None,
        seed: 0,
        privacy_mode: false,
        dataset,
        test,
        kernel,
        noise_variance,
        prior_mean,
        privacy: PrivacyConfig {
            epsilon: Some(1.0),
            delta: 0.01,
            sensitivity,
        },
        sparse: None,
        newton_iterations: 1,
        folds: 14,
        noise_draws: if command == Command::SelectHypers { 100 } else { 25 },
        optimizer: OptimizeOptions::default(),
        grid: GridConfig {
            lengthscales: vec![1.0, 5.0, 25.0, 125.0, 625.0],
            noise_variances: vec![0.2, 1.0, 5.0, 25.0],
            kernel_variances: vec![1.0, 5.0, 25.0, 125.0],
            kappa: 5,
            epsilon_select: 1.0,
            threshold: SensitivityThreshold::default(),
            selection_fraction: 0.5,
        },
        bench: BenchConfig {
            experiment: Experiment::Rmse,
            inducing_counts: None,
            lengthscales: vec![84.0, 168.0, 336.0, 672.0, 1344.0],
            feature_sets: vec![vec!["age".into()], vec!["age".into(), "weight".into()]],
        },
    }
}

fn eq_kernel(variance: f64, lengthscale: f64) -> KernelConfig {
    KernelConfig {
        family: KernelFamily::Eq,
        variance,
        lengthscales: vec![lengthscale],
        n: None,
        m: None,
        kde_bandwidth: None,
        neighbourhood_radius: None,
    }
}

/// Recursively overlays `patch` onto `base`; objects merge, anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    // Tagged enums are replaced wholesale when the tag changes.
                    Some(existing) if !tag_changed(existing, &v) => merge(existing, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn tag_changed(existing: &Value, patch: &Value) -> bool {
    match (existing.get("kind"), patch.get("kind")) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    }
}

impl RunConfig {
    /// Defaults for `command`, overlaid with the JSON file at `path` and then
    /// with the command-line overrides.
    pub fn resolve(command: Command, path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(defaults(command)).expect("defaults serialise");
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
            if !patch.is_object() {
                return Err(CliError::Validation("config must be a JSON object".into()));
            }
            merge(&mut value, patch);
        }
        let mut config: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        if config.command != command {
            return Err(CliError::Validation(format!(
                "config is for `{:?}` but the subcommand is `{:?}`",
                config.command, command
            )));
        }
        config.apply(overrides)?;
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if o.privacy_mode {
            self.privacy_mode = true;
        }
        match o.seed {
            Some(seed) => self.seed = seed,
            None if self.privacy_mode => {
                return Err(CliError::Validation("--seed is required in privacy mode".into()));
            }
            None => {}
        }
        if let Some(v) = o.epsilon {
            self.privacy.epsilon = v.is_finite().then_some(v);
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(v) = o.delta {
            self.privacy.delta = v;
        }
        if let Some(v) = o.sensitivity {
            self.privacy.sensitivity = v;
        }
        if let Some(m) = o.sparse {
            self.sparse = Some(m);
        }
        if let Some(n) = o.iterations {
            self.newton_iterations = n;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.privacy_spec().map_err(CliError::from)?;
        self.theta().validate()?;
        for path in self.referenced_files() {
            if !path.exists() {
                return Err(CliError::Validation(format!("file not found: {}", path.display())));
            }
        }
        if self.sparse == Some(0) {
            return Err(CliError::Validation("--sparse must be at least 1".into()));
        }
        if self.newton_iterations == 0 {
            return Err(CliError::Validation("newton_iterations must be at least 1".into()));
        }
        if self.kernel.family == KernelFamily::Gibbs {
            if self.kernel.n.is_none() || self.kernel.m.is_none() {
                return Err(CliError::Validation("the gibbs kernel needs `n` and `m`".into()));
            }
            if self.sparse.is_some() {
                return Err(CliError::Validation(
                    "the gibbs kernel cannot be combined with --sparse".into(),
                ));
            }
        }
        if !(self.grid.selection_fraction > 0.0 && self.grid.selection_fraction < 1.0) {
            return Err(CliError::Validation("selection_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<&Path> {
        let mut files = Vec::new();
        match &self.dataset {
            DatasetSpec::Csv { path, .. } => files.push(path.as_path()),
            DatasetSpec::Mnist { images, labels, .. } => {
                files.push(images.as_path());
                files.push(labels.as_path());
            }
            _ => {}
        }
        if let TestSpec::Csv { path } = &self.test {
            files.push(path.as_path());
        }
        files
    }

    pub fn sensitivity(&self) -> f64 {
        match &self.dataset {
            DatasetSpec::Csv {
                sensitivity: Some(d), ..
            } => *d,
            _ => self.privacy.sensitivity,
        }
    }

    pub fn privacy_spec(&self) -> dpgp_core::Result<PrivacySpec> {
        let epsilon = self.privacy.epsilon.unwrap_or(f64::INFINITY);
        PrivacySpec::new(epsilon, self.privacy.delta, self.sensitivity())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("dpgp-out"))
    }

    pub fn theta(&self) -> HyperConfig {
        HyperConfig {
            lengthscales: self.kernel.lengthscales.clone(),
            kernel_variance: self.kernel.variance,
            noise_variance: self.noise_variance,
        }
    }

    pub fn regression_mode(&self) -> RegressionMode {
        match (self.kernel.family, self.sparse) {
            (KernelFamily::Gibbs, _) => RegressionMode::Gibbs(LengthscaleParams {
                n: self.kernel.n.unwrap_or(1.0),
                m: self.kernel.m.unwrap_or(1.0),
                kde_bandwidth: self.kernel.kde_bandwidth,
                neighbourhood_radius: self.kernel.neighbourhood_radius,
            }),
            (KernelFamily::Eq, Some(m_count)) => RegressionMode::Sparse { m_count },
            (KernelFamily::Eq, None) => RegressionMode::Standard,
        }
    }
}
