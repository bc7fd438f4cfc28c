//! Subcommand pipelines. Every random choice draws from a stream of the run
//! seed reserved for that purpose, so reruns reproduce the artifacts exactly.

use std::path::Path;

use dpgp_core::classification::{accuracy, LaplaceStep};
use dpgp_core::data::{gen_kung_like, gen_stripes, load_csv_report, load_mnist_binary, stripes_grid};
use dpgp_core::hyperselect::{holdout_rmse, select_config};
use dpgp_core::rng::{self, StreamRng};
use dpgp_core::{
    dp_classify, dp_regress, evaluate_grid, expected_rmse, kmeans_place, predict_class_prob, rmse_cv, ClassifyTask,
    ConfigGrid, HyperConfig, LaplaceState, LatentPredictor, LatentPrior, LengthscaleParams, PrivacySpec,
    RegressionMode, RegressionTask, TabularDataset,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::config::{Command, DatasetSpec, Experiment, RunConfig, TestSpec};
use crate::output::{self, Table};
use crate::CliError;

/// Streams of the run seed, one per purpose.
const DATA_STREAM: u64 = 0;
const SPLIT_STREAM: u64 = 1;
const MODEL_STREAM: u64 = 2;
const SCORE_STREAM: u64 = 3;
const CHOICE_STREAM: u64 = 4;

/// Accuracy of one and of two privatised Newton updates on the noisy
/// stripes task (200 points, ε = 1, mean over 5 seeds × 25 draws).
const ONE_UPDATE_ACCURACY: f64 = 0.59;
const TWO_UPDATE_ACCURACY: f64 = 0.52;

/// Inducing counts used by the sweep when none are configured.
pub fn default_inducing_counts(n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = (0..16)
        .map(|i| ((4.0 * 50f64.powf(i as f64 / 15.0)).round() as usize).min(n))
        .collect();
    counts.dedup();
    counts
}

pub fn execute(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.out_dir();
    output::ensure_dir(&dir)?;
    match cfg.command {
        Command::Regress => regress(cfg, &dir),
        Command::Classify => classify(cfg, &dir),
        Command::SelectHypers => select_hypers(cfg, &dir),
        Command::Bench => match cfg.bench.experiment {
            Experiment::Rmse => bench_rmse(cfg, &dir),
            Experiment::InducingSweep => bench_sweep(cfg, &dir),
        },
    }
}

fn stream(cfg: &RunConfig, index: u64) -> StreamRng {
    rng::stream(cfg.seed, index)
}

/// Training data for the regression-style commands, plus load warnings.
fn tabular(cfg: &RunConfig) -> Result<(TabularDataset, Vec<String>), CliError> {
    let mut warnings = Vec::new();
    let data = match &cfg.dataset {
        DatasetSpec::KungLike { n, features } => {
            let names: Vec<&str> = features.iter().map(String::as_str).collect();
            gen_kung_like(*n, &mut stream(cfg, DATA_STREAM))?.select_features(&names)?
        }
        DatasetSpec::Csv {
            path, output, features, ..
        } => {
            let load = load_csv_report(path, output)?;
            if load.skipped_rows > 0 {
                warnings.push(format!("skipped {} rows with missing values", load.skipped_rows));
            }
            match features {
                Some(f) => load
                    .dataset
                    .select_features(&f.iter().map(String::as_str).collect::<Vec<_>>())?,
                None => load.dataset,
            }
        }
        DatasetSpec::Stripes { n, flip } => gen_stripes(*n, *flip, &mut stream(cfg, DATA_STREAM))?,
        DatasetSpec::Mnist { .. } => {
            return Err(CliError::Validation(
                "image datasets are only supported by classification".into(),
            ));
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((data, warnings))
}

/// Reads the named feature columns from a CSV file with a header row.
fn read_inputs(path: &Path, names: &[String]) -> Result<DMatrix<f64>, CliError> {
    let bad = |e: &dyn std::fmt::Display| CliError::Validation(format!("{}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(&e))?;
    let headers = reader.headers().map_err(|e| bad(&e))?.clone();
    let cols = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| bad(&format!("missing column `{n}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(&e))?;
        for &c in &cols {
            let field = record.get(c).unwrap_or("");
            let v: f64 = field
                .parse()
                .map_err(|_| bad(&format!("line {}: cannot parse `{field}` as a number", line + 2)))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(bad(&"no test rows"));
    }
    Ok(DMatrix::from_row_slice(rows, cols.len(), &values))
}

/// Test inputs and, where known, their labels.
fn test_inputs(
    cfg: &RunConfig,
    x: &DMatrix<f64>,
    names: &[String],
) -> Result<(DMatrix<f64>, Option<DVector<f64>>), CliError> {
    match &cfg.test {
        TestSpec::Grid { from, to, points } => {
            if x.ncols() != 1 {
                return Err(CliError::Validation(format!(
                    "a grid of test points needs one feature, the data has {}",
                    x.ncols()
                )));
            }
            if *points == 0 || !from.is_finite() || !to.is_finite() {
                return Err(CliError::Validation(
                    "grid needs finite ends and at least one point".into(),
                ));
            }
            let step = if *points > 1 {
                (to - from) / (*points - 1) as f64
            } else {
                0.0
            };
            Ok((DMatrix::from_fn(*points, 1, |i, _| from + step * i as f64), None))
        }
        TestSpec::StripesGrid { side } => {
            if *side == 0 || x.ncols() != 2 {
                return Err(CliError::Validation(
                    "the stripes grid needs two features and side ≥ 1".into(),
                ));
            }
            let grid = stripes_grid(*side);
            Ok((grid.x, Some(grid.y)))
        }
        TestSpec::Training => Ok((x.clone(), None)),
        TestSpec::Csv { path } => Ok((read_inputs(path, names)?, None)),
        TestSpec::Holdout => Err(CliError::Validation("holdout test points need an image dataset".into())),
    }
}

#[derive(Serialize)]
struct Diagnostics {
    /// Bound on the scaled change of the prediction from one output.
    delta: f64,
    noise_scale: f64,
    gradient_norm: f64,
    optimizer_iterations: usize,
    converged: bool,
}

impl Diagnostics {
    fn of(c: &dpgp_core::CloakingResult) -> Self {
        Self {
            delta: c.delta,
            noise_scale: c.noise_scale,
            gradient_norm: c.gradient_norm,
            optimizer_iterations: c.iterations,
            converged: c.converged,
        }
    }
}

#[derive(Serialize)]
struct RegressResults<'a> {
    config: &'a RunConfig,
    seed: u64,
    epsilon: Option<f64>,
    /// The δ of (ε, δ)-privacy.
    delta_dp: f64,
    #[serde(flatten)]
    diagnostics: Diagnostics,
    feature_names: &'a [String],
    test_inputs: Vec<Vec<f64>>,
    dp_mean: Vec<f64>,
    gp_variance: Vec<f64>,
    dp_noise_std: Vec<f64>,
    inducing_inputs: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clean_mean: Option<Vec<f64>>,
    warnings: Vec<String>,
}

fn regress(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let (data, warnings) = tabular(cfg)?;
    let (x_star, _) = test_inputs(cfg, &data.x, &data.feature_names)?;
    let task = RegressionTask::new(
        data.x.clone(),
        data.y.clone(),
        x_star.clone(),
        cfg.theta(),
        cfg.privacy_spec()?,
        cfg.regression_mode(),
    )?
    .with_prior_mean(cfg.prior_mean)
    .with_options(cfg.optimizer);
    let pred = dp_regress(&task, &mut stream(cfg, MODEL_STREAM))?;
    let clean_mean = (!cfg.privacy_mode).then(|| output::vec(&pred.clean_mean));

    let mut plot = Table::new()
        .inputs(&data.feature_names, &x_star)
        .numbers("dp_mean", pred.dp_mean.iter().copied())
        .numbers("dp_noise_std", pred.dp_noise_std.iter().copied())
        .numbers("gp_variance", pred.gp_variance.iter().copied());
    if let Some(clean) = &clean_mean {
        plot = plot.numbers("clean_mean", clean.iter().copied());
    }
    plot.write(&dir.join("plotdata.csv"))?;

    output::write_json(
        &dir.join("results.json"),
        &RegressResults {
            config: cfg,
            seed: cfg.seed,
            epsilon: cfg.privacy.epsilon,
            delta_dp: cfg.privacy.delta,
            diagnostics: Diagnostics::of(&pred.cloaking),
            feature_names: &data.feature_names,
            test_inputs: output::rows(&x_star),
            dp_mean: output::vec(&pred.dp_mean),
            gp_variance: output::vec(&pred.gp_variance),
            dp_noise_std: output::vec(&pred.dp_noise_std),
            inducing_inputs: pred.inducing.as_ref().map(|z| output::rows(&z.z)),
            clean_mean,
            warnings,
        },
    )
}

/// Labels coded {0, 1} become {−1, +1}; anything else but ±1 is rejected.
fn signed_labels(y: &DVector<f64>) -> Result<DVector<f64>, CliError> {
    if y.iter().all(|v| *v == 0.0 || *v == 1.0) {
        return Ok(y.map(|v| 2.0 * v - 1.0));
    }
    if let Some(v) = y.iter().find(|v| **v != 1.0 && **v != -1.0) {
        return Err(CliError::Validation(format!("label {v} is neither 0/1 nor ±1")));
    }
    Ok(y.clone())
}

struct ClassData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    feature_names: Vec<String>,
    x_star: DMatrix<f64>,
    labels: Option<DVector<f64>>,
    warnings: Vec<String>,
}

fn class_data(cfg: &RunConfig) -> Result<ClassData, CliError> {
    if let DatasetSpec::Mnist {
        images,
        labels,
        n_train,
        n_test,
    } = &cfg.dataset
    {
        if cfg.test != TestSpec::Holdout {
            return Err(CliError::Validation(
                "image datasets are tested on their holdout split".into(),
            ));
        }
        let (train, test) = load_mnist_binary(images, labels, *n_train, *n_test, &mut stream(cfg, DATA_STREAM))?;
        let dim = train.images.ncols();
        return Ok(ClassData {
            x: train.images,
            y: train.labels,
            feature_names: (0..dim).map(|j| format!("pixel{j}")).collect(),
            x_star: test.images,
            labels: Some(test.labels),
            warnings: Vec::new(),
        });
    }
    if matches!(cfg.dataset, DatasetSpec::KungLike { .. }) {
        return Err(CliError::Validation("classification needs a labelled dataset".into()));
    }
    let (data, warnings) = tabular(cfg)?;
    let y = signed_labels(&data.y)?;
    let (x_star, labels) = test_inputs(cfg, &data.x, &data.feature_names)?;
    Ok(ClassData {
        x: data.x,
        y,
        feature_names: data.feature_names,
        x_star,
        labels,
        warnings,
    })
}

#[derive(Serialize)]
struct ClassifyResults<'a> {
    config: &'a RunConfig,
    seed: u64,
    epsilon: Option<f64>,
    delta_dp: f64,
    #[serde(flatten)]
    diagnostics: Diagnostics,
    newton_iterations: usize,
    latent_mean: Vec<f64>,
    latent_var: Vec<f64>,
    class_prob: Vec<f64>,
    accuracy: Option<f64>,
    inducing_inputs: Option<Vec<Vec<f64>>>,
    warnings: Vec<String>,
}

/// Above this many inputs the plot data leaves out the coordinates.
const PLOT_MAX_DIM: usize = 3;

fn classify(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let mut data = class_data(cfg)?;
    if cfg.newton_iterations > 1 {
        let w = format!(
            "{} privatised Newton updates split ε and δ between them; on the noisy stripes task two updates \
             lowered mean accuracy from {:.0}% to {:.0}% compared with one",
            cfg.newton_iterations,
            100.0 * ONE_UPDATE_ACCURACY,
            100.0 * TWO_UPDATE_ACCURACY
        );
        eprintln!("warning: {w}");
        data.warnings.push(w);
    }
    let task = ClassifyTask::new(data.x, data.y, data.x_star.clone(), cfg.theta(), cfg.privacy_spec()?)?
        .with_sparse(cfg.sparse)
        .with_iterations(cfg.newton_iterations)
        .with_options(cfg.optimizer);
    let out = dp_classify(&task, &mut stream(cfg, MODEL_STREAM))?;
    let acc = data.labels.as_ref().map(|l| accuracy(&out.class_prob, l));

    let mut plot = Table::new();
    if data.x_star.ncols() <= PLOT_MAX_DIM {
        plot = plot.inputs(&data.feature_names, &data.x_star);
    }
    plot = plot
        .numbers("latent_mean", out.latent_mean.iter().copied())
        .numbers("latent_var", out.latent_var.iter().copied())
        .numbers("class_prob", out.class_prob.iter().copied());
    if let Some(l) = &data.labels {
        plot = plot.numbers("label", l.iter().copied());
    }
    plot.write(&dir.join("plotdata.csv"))?;

    output::write_json(
        &dir.join("results.json"),
        &ClassifyResults {
            config: cfg,
            seed: cfg.seed,
            epsilon: cfg.privacy.epsilon,
            delta_dp: cfg.privacy.delta,
            diagnostics: Diagnostics::of(&out.fit.cloaking),
            newton_iterations: cfg.newton_iterations,
            latent_mean: output::vec(&out.latent_mean),
            latent_var: output::vec(&out.latent_var),
            class_prob: output::vec(&out.class_prob),
            accuracy: acc,
            inducing_inputs: out.fit.prior.inducing.as_ref().map(|z| output::rows(&z.z)),
            warnings: data.warnings,
        },
    )
}

#[derive(Serialize)]
struct Choice {
    index: usize,
    lengthscale: f64,
    noise_variance: f64,
    kernel_variance: f64,
    probability: f64,
    rmse: f64,
}

#[derive(Serialize)]
struct SelectResults<'a> {
    config: &'a RunConfig,
    seed: u64,
    chosen: Choice,
    expected_rmse: f64,
    mean_rmse: f64,
    configurations: usize,
    excluded: usize,
    global_delta_u: f64,
    threshold: f64,
    epsilon_select: f64,
    /// Selection plus regression budget.
    epsilon_total: Option<f64>,
    selection_records: usize,
    scoring_records: usize,
    warnings: Vec<String>,
}

fn select_hypers(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let (data, warnings) = tabular(cfg)?;
    let n = data.len();
    let n_select = (cfg.grid.selection_fraction * n as f64).round() as usize;
    if n_select < cfg.grid.kappa || n - n_select == 0 {
        return Err(CliError::Validation(format!(
            "{n} records cannot be split into {n_select} for {}-fold selection and the rest for scoring",
            cfg.grid.kappa
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(cfg, SPLIT_STREAM));
    let select = data.subset(&order[..n_select]);
    let score = data.subset(&order[n_select..]);

    let privacy = cfg.privacy_spec()?;
    let grid = ConfigGrid {
        configs: ConfigGrid::cartesian(
            &cfg.grid.lengthscales,
            &cfg.grid.noise_variances,
            &cfg.grid.kernel_variances,
        ),
        kappa: cfg.grid.kappa,
        d: privacy.data_sensitivity,
        epsilon_select: cfg.grid.epsilon_select,
        sensitivity_threshold: cfg.grid.threshold,
        noise_draws: cfg.noise_draws,
        regression_epsilon: privacy.epsilon,
        regression_delta: privacy.delta,
        prior_mean: cfg.prior_mean,
    };
    let table = evaluate_grid(&select.x, &select.y, &grid, &mut stream(cfg, MODEL_STREAM))?;
    let mut score_rng = stream(cfg, SCORE_STREAM);
    let rmses = grid
        .configs
        .iter()
        .map(|theta| {
            holdout_rmse(
                &select.x,
                &select.y,
                &score.x,
                &score.y,
                theta,
                &privacy,
                cfg.prior_mean,
                cfg.noise_draws,
                &mut score_rng,
            )
        })
        .collect::<dpgp_core::Result<Vec<f64>>>()?;
    let index = select_config(&table, &mut stream(cfg, CHOICE_STREAM))?;

    let cell = |f: fn(&HyperConfig) -> f64| table.rows.iter().map(move |r| f(&r.config));
    Table::new()
        .numbers("lengthscale", cell(|c| c.lengthscales[0]))
        .numbers("noise_variance", cell(|c| c.noise_variance))
        .numbers("kernel_variance", cell(|c| c.kernel_variance))
        .numbers("probability", table.rows.iter().map(|r| r.probability))
        .numbers("rmse", rmses.iter().copied())
        .numbers("sse", table.rows.iter().map(|r| r.sse))
        .numbers("delta_u", table.rows.iter().map(|r| r.delta_u))
        .text("excluded", table.rows.iter().map(|r| r.excluded.to_string()))
        .write(&dir.join("table.csv"))?;

    let row = &table.rows[index];
    output::write_json(
        &dir.join("results.json"),
        &SelectResults {
            config: cfg,
            seed: cfg.seed,
            chosen: Choice {
                index,
                lengthscale: row.config.lengthscales[0],
                noise_variance: row.config.noise_variance,
                kernel_variance: row.config.kernel_variance,
                probability: row.probability,
                rmse: rmses[index],
            },
            expected_rmse: expected_rmse(&table, &rmses)?,
            mean_rmse: rmses.iter().sum::<f64>() / rmses.len() as f64,
            configurations: table.rows.len(),
            excluded: table.rows.iter().filter(|r| r.excluded).count(),
            global_delta_u: table.global_delta_u,
            threshold: table.threshold,
            epsilon_select: cfg.grid.epsilon_select,
            epsilon_total: cfg.privacy.epsilon.map(|e| e + cfg.grid.epsilon_select),
            selection_records: select.len(),
            scoring_records: score.len(),
            warnings,
        },
    )
}

#[derive(Serialize)]
struct RmseRow {
    features: String,
    method: &'static str,
    private: bool,
    rmse_mean: f64,
    rmse_std: f64,
    per_fold: Vec<f64>,
}

#[derive(Serialize)]
struct BenchResults<'a, T> {
    config: &'a RunConfig,
    seed: u64,
    rows: Vec<T>,
    warnings: Vec<String>,
}

/// RMSE-table defaults: inducing count, Gibbs neighbour target and the Gibbs
/// lengthscale cap as a multiple of the stationary lengthscale.
const BENCH_INDUCING: usize = 5;
const BENCH_GIBBS_N: f64 = 100.0;
const BENCH_GIBBS_UPPER: f64 = 4.0;

fn bench_rmse(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let (data, warnings) = tabular(cfg)?;
    let lengthscale = cfg.kernel.lengthscales.first().copied().unwrap_or(1.0);
    let methods = [
        ("standard", RegressionMode::Standard),
        (
            "sparse",
            RegressionMode::Sparse {
                m_count: cfg.sparse.unwrap_or(BENCH_INDUCING),
            },
        ),
        (
            "nonstationary",
            RegressionMode::Gibbs(LengthscaleParams {
                n: cfg.kernel.n.unwrap_or(BENCH_GIBBS_N),
                m: cfg.kernel.m.unwrap_or(BENCH_GIBBS_UPPER * lengthscale),
                kde_bandwidth: cfg.kernel.kde_bandwidth,
                neighbourhood_radius: cfg.kernel.neighbourhood_radius,
            }),
        ),
    ];
    let private = cfg.privacy_spec()?;
    let mut settings = vec![(true, private)];
    if !cfg.privacy_mode {
        settings.push((false, PrivacySpec::non_private(private.data_sensitivity)));
    }
    let mut rows = Vec::new();
    for (s, features) in cfg.bench.feature_sets.iter().enumerate() {
        let names: Vec<&str> = features.iter().map(String::as_str).collect();
        let subset = data.select_features(&names)?;
        for (is_private, privacy) in &settings {
            for (method, mode) in &methods {
                let task = RegressionTask::new(
                    subset.x.clone(),
                    subset.y.clone(),
                    subset.x.clone(),
                    cfg.theta(),
                    *privacy,
                    mode.clone(),
                )?
                .with_prior_mean(cfg.prior_mean)
                .with_options(cfg.optimizer);
                // Same folds for every method on a feature set.
                let mut r = rng::stream(rng::child_seed(cfg.seed, s as u64), SPLIT_STREAM);
                let summary = rmse_cv(&task, cfg.folds, cfg.noise_draws, &mut r)?;
                rows.push(RmseRow {
                    features: features.join("+"),
                    method,
                    private: *is_private,
                    rmse_mean: summary.mean,
                    rmse_std: summary.std,
                    per_fold: summary.per_fold,
                });
            }
        }
    }
    Table::new()
        .text("features", rows.iter().map(|r| r.features.clone()))
        .text("method", rows.iter().map(|r| r.method.to_string()))
        .text("private", rows.iter().map(|r| r.private.to_string()))
        .numbers("rmse_mean", rows.iter().map(|r| r.rmse_mean))
        .numbers("rmse_std", rows.iter().map(|r| r.rmse_std))
        .write(&dir.join("table.csv"))?;
    output::write_json(
        &dir.join("results.json"),
        &BenchResults {
            config: cfg,
            seed: cfg.seed,
            rows,
            warnings,
        },
    )
}

#[derive(Serialize)]
struct SweepRow {
    inducing: usize,
    lengthscale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    clean_accuracy: Option<f64>,
    dp_accuracy_mean: f64,
    dp_accuracy_std: f64,
}

fn bench_sweep(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let data = class_data(cfg)?;
    let Some(labels) = &data.labels else {
        return Err(CliError::Validation(
            "the inducing sweep needs labelled test points".into(),
        ));
    };
    let n = data.x.nrows();
    let counts = match &cfg.bench.inducing_counts {
        Some(c) => c.clone(),
        None => default_inducing_counts(n),
    };
    if let Some(bad) = counts.iter().find(|&&m| m == 0 || m > n) {
        return Err(CliError::Validation(format!(
            "inducing count {bad} must lie in 1..={n}"
        )));
    }
    let privacy = cfg.privacy_spec()?;
    let draws = cfg.noise_draws.max(1);
    let zeros = LaplaceState::zeros(n);
    let mut rows = Vec::new();
    for (i, &m) in counts.iter().enumerate() {
        for (j, &l) in cfg.bench.lengthscales.iter().enumerate() {
            let theta = HyperConfig::isotropic(l, cfg.kernel.variance, cfg.noise_variance);
            let mut r = rng::stream(rng::child_seed(cfg.seed, i as u64), j as u64);
            let prior = LatentPrior::sparse(&data.x, &theta, kmeans_place(&data.x, m, &mut r)?)?;
            let step = LaplaceStep::new(&prior.k, &zeros, &privacy, &cfg.optimizer)?;
            let predictor = LatentPredictor::new(&prior, &data.x, &data.x_star, &zeros.w_diag)?;
            let score = |f: &DVector<f64>| accuracy(&predict_class_prob(&predictor.mean(f)), labels);
            let accs: Vec<f64> = (0..draws).map(|_| score(&step.sample(&data.y, &mut r))).collect();
            let mean = accs.iter().sum::<f64>() / draws as f64;
            let std = if draws > 1 {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt()
            } else {
                0.0
            };
            rows.push(SweepRow {
                inducing: m,
                lengthscale: l,
                clean_accuracy: (!cfg.privacy_mode).then(|| score(&step.clean(&data.y))),
                dp_accuracy_mean: mean,
                dp_accuracy_std: std,
            });
        }
    }
    let mut table = Table::new()
        .numbers("inducing", rows.iter().map(|r| r.inducing as f64))
        .numbers("lengthscale", rows.iter().map(|r| r.lengthscale));
    if !cfg.privacy_mode {
        table = table.numbers(
            "clean_accuracy",
            rows.iter().map(|r| r.clean_accuracy.unwrap_or(f64::NAN)),
        );
    }
    table
        .numbers("dp_accuracy_mean", rows.iter().map(|r| r.dp_accuracy_mean))
        .numbers("dp_accuracy_std", rows.iter().map(|r| r.dp_accuracy_std))
        .write(&dir.join("table.csv"))?;
    output::write_json(
        &dir.join("results.json"),
        &BenchResults {
            config: cfg,
            seed: cfg.seed,
            rows,
            warnings: data.warnings,
        },
    )
}
