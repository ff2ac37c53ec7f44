//! Command implementations. Commands compose through files: dataset caches,
//! solution JSON, shaped-covariance JSON and bit-packed network binaries.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use qsdp::baseline::{
    self, evaluate, evaluate_network, evaluate_vector, post_training_quantize, sgd_train_bilinear,
    QuantizeFormula, TrainConfig,
};
use qsdp::data::{
    load_csv, normalize, planted_dataset, planted_multiclass_dataset, read_dataset, split,
    write_dataset, Dataset,
};
use qsdp::model::{read_network_file, write_network_file, Network};
use qsdp::sampler::{empirical_moment_gap, sample_network, sample_vector_output, SamplingReport};
use qsdp::sdp::{solve_sdp, LossKind, SdpProblem, SdpSolution, SolverConfig};
use qsdp::shaping::{
    krivine_shape, numeric_shape, read_shaped_set, scale_solution, shape_class, shape_solution,
    write_shaped_set, ShapedCovariance,
};

use crate::config::*;
use crate::CliError;

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))
}

fn missing_artifact(path: &Path, producer: &str) -> CliError {
    CliError::io(format!(
        "{} not found; produce it with `qsdp {producer}` first",
        path.display()
    ))
}

fn load_dataset(path: &Path, producer: &str) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(missing_artifact(path, producer));
    }
    read_dataset(path).map_err(CliError::from)
}

pub fn gen_data(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config: GenDataConfig = load_config(config_path)?;
    config.validate()?;
    ensure_dir(out)?;
    let (train, test) = build_dataset(&config.source, config.normalize)?;
    write_dataset(&train, &out.join("train.qdat"))?;
    write_dataset(&test, &out.join("test.qdat"))?;
    println!(
        "wrote {} (n={}, d={}, classes={}) and {} (n={})",
        out.join("train.qdat").display(),
        train.n(),
        train.d(),
        train.classes(),
        out.join("test.qdat").display(),
        test.n()
    );
    Ok(())
}

pub fn build_dataset(
    source: &DataSource,
    mode: qsdp::data::NormalizeMode,
) -> Result<(Dataset, Dataset), CliError> {
    let (train, test) = match source {
        DataSource::Planted(spec) => {
            let planted =
                planted_dataset(spec.n, spec.d, spec.planted_m, spec.seed, spec.second_layer)?;
            (planted.train, planted.test)
        }
        DataSource::PlantedMulticlass(spec) => {
            planted_multiclass_dataset(spec.n, spec.d, spec.classes, spec.planted_m, spec.seed)?
        }
        DataSource::Csv(spec) => {
            if !spec.path.exists() {
                return Err(CliError::io(format!("CSV file {} not found", spec.path.display())));
            }
            let full = load_csv(&spec.path, &spec.schema)?;
            split(&full, spec.train_fraction, spec.split_seed)?
        }
    };
    Ok(normalize(&train, &test, mode))
}

pub fn train_sdp(
    config_path: &Path,
    out: &Path,
    variant_override: Option<VariantChoice>,
) -> Result<(), CliError> {
    let mut config: TrainSdpConfig = load_config(config_path)?;
    config.validate()?;
    if let Some(v) = variant_override {
        config.variant = v;
    }
    let dataset = load_dataset(&config.dataset, "gen-data")?;
    let solution = solve_problem(&dataset, config.variant, config.loss, config.beta, &config.solver)?;
    solution.write_json(out)?;
    println!(
        "solved {:?} relaxation: objective {:.9e}, {} iterations, residuals ({:.2e}, {:.2e})",
        config.variant,
        solution.objective,
        solution.iterations,
        solution.primal_residual,
        solution.dual_residual
    );
    Ok(())
}

pub fn solve_problem(
    dataset: &Dataset,
    variant: VariantChoice,
    loss: LossKind,
    beta: f64,
    solver: &SolverConfig,
) -> Result<SdpSolution, CliError> {
    let problem = match variant {
        VariantChoice::Bilinear => SdpProblem::bilinear(
            dataset.x.clone(),
            dataset.targets_vector(),
            loss,
            beta,
            solver.clone(),
        )?,
        VariantChoice::Quadratic => SdpProblem::quadratic(
            dataset.x.clone(),
            dataset.targets_vector(),
            loss,
            beta,
            solver.clone(),
        )?,
        VariantChoice::Vector => SdpProblem::vector_output(
            dataset.x.clone(),
            dataset.y.clone(),
            loss,
            beta,
            solver.clone(),
        )?,
    };
    Ok(solve_sdp(&problem)?)
}

pub fn shape(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config: ShapeCommandConfig = load_config(config_path)?;
    config.validate()?;
    if !config.solution.exists() {
        return Err(missing_artifact(&config.solution, "train-sdp"));
    }
    let solution = SdpSolution::read_json(&config.solution)?;
    let shaped = shape_from_solution(&solution, config.method, &config.numeric)?;
    write_shaped_set(&shaped, out)?;
    println!("shaped {} covariance block(s) -> {}", shaped.len(), out.display());
    Ok(())
}

pub fn shape_from_solution(
    solution: &SdpSolution,
    method: ShapeMethod,
    numeric_config: &qsdp::shaping::ShapeConfig,
) -> Result<Vec<ShapedCovariance>, CliError> {
    let classes = solution.classes();
    let mut shaped = Vec::with_capacity(classes);
    for k in 0..classes {
        let cov = match method {
            ShapeMethod::Krivine => {
                if classes == 1 {
                    shape_solution(solution)?
                } else {
                    shape_class(solution, k)?
                }
            }
            ShapeMethod::Numeric => {
                let scaled = if classes == 1 {
                    scale_solution(solution)?
                } else {
                    qsdp::shaping::scale_class(solution, k)?
                };
                if scaled.rho == 0.0 {
                    // Zero-network signal: reuse the closed form's identity.
                    krivine_shape(
                        &DMatrix::identity(scaled.z.nrows(), scaled.z.nrows()),
                        &DMatrix::zeros(scaled.z.nrows(), scaled.z.nrows()),
                        &DMatrix::identity(scaled.z.nrows(), scaled.z.nrows()),
                    )?
                    .with_source_rho(0.0)
                } else {
                    numeric_shape(&scaled.z, numeric_config)?.with_source_rho(scaled.rho)
                }
            }
        };
        shaped.push(cov);
    }
    Ok(shaped)
}

pub fn sample(config_path: &Path, out: &Path, seed_override: Option<u64>) -> Result<(), CliError> {
    let mut config: SampleConfig = load_config(config_path)?;
    config.validate()?;
    if let Some(s) = seed_override {
        config.seed = s;
    }
    if !config.shaped.exists() {
        return Err(missing_artifact(&config.shaped, "shape"));
    }
    let shaped = read_shaped_set(&config.shaped)?;
    if shaped.len() != 1 {
        return Err(CliError::config(format!(
            "sample writes scalar network files; the shaped set has {} classes \
             (multiclass sampling runs inside `qsdp experiment`)",
            shaped.len()
        )));
    }
    let network = sample_network(&shaped[0], config.neurons, config.seed)?;
    write_network_file(&Network::Bilinear(network.clone()), out)?;
    let report = SamplingReport {
        seed: config.seed,
        neurons: config.neurons,
        rho: shaped[0].source_rho(),
        moment_gap: empirical_moment_gap(network.u(), network.v(), &shaped[0]),
    };
    let report_path = out.with_extension("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(qsdp::QsdpError::from)?)?;
    println!(
        "sampled {} neurons (seed {}) -> {} (moment gap {:.4})",
        config.neurons,
        config.seed,
        out.display(),
        report.moment_gap
    );
    Ok(())
}

pub fn train_baseline(
    config_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let mut config: TrainBaselineConfig = load_config(config_path)?;
    config.validate()?;
    if let Some(s) = seed_override {
        config.train.seed = s;
    }
    let dataset = load_dataset(&config.dataset, "gen-data")?;
    let trained = sgd_train_bilinear(&dataset, &config.train, config.loss)?;

    let weights = WeightsJson {
        m: trained.u.nrows(),
        d: trained.u.ncols(),
        u: row_major(&trained.u),
        v: row_major(&trained.v),
        alpha: trained.alpha.iter().copied().collect(),
    };
    std::fs::write(out, serde_json::to_string_pretty(&weights).map_err(qsdp::QsdpError::from)?)?;

    let curve_path = out.with_extension("curve.csv");
    write_curve(&trained.curve, &curve_path)?;
    println!(
        "trained {} neurons for {} epochs (final loss {:.6e}) -> {}, curve {}",
        config.train.neurons,
        config.train.epochs,
        trained.curve.last().map(|e| e.loss).unwrap_or(f64::NAN),
        out.display(),
        curve_path.display()
    );
    Ok(())
}

fn write_curve(curve: &[qsdp::baseline::EpochStat], path: &Path) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))?;
    writeln!(file, "epoch,seconds,loss,accuracy").map_err(|e| CliError::io(e.to_string()))?;
    for stat in curve {
        writeln!(
            file,
            "{},{:.6},{:.12e},{}",
            stat.epoch,
            stat.seconds,
            stat.loss,
            stat.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default()
        )
        .map_err(|e| CliError::io(e.to_string()))?;
    }
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn quantize_baseline(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config: QuantizeBaselineConfig = load_config(config_path)?;
    config.validate()?;
    if !config.weights.exists() {
        return Err(missing_artifact(&config.weights, "train-baseline"));
    }
    let text = std::fs::read_to_string(&config.weights)?;
    let weights: WeightsJson =
        serde_json::from_str(&text).map_err(|e| CliError::io(format!("bad weights file: {e}")))?;
    if weights.u.len() != weights.m * weights.d || weights.v.len() != weights.m * weights.d {
        return Err(CliError::io("weights file dimensions are inconsistent".into()));
    }
    let u = DMatrix::from_row_slice(weights.m, weights.d, &weights.u);
    let v = DMatrix::from_row_slice(weights.m, weights.d, &weights.v);
    let network = post_training_quantize(&u, &v, config.formula)?;
    write_network_file(&Network::Bilinear(network), out)?;
    println!("quantized {} neurons -> {}", weights.m, out.display());
    Ok(())
}

pub fn eval(config_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let config: EvalConfig = load_config(config_path)?;
    config.validate()?;
    if !config.network.exists() {
        return Err(missing_artifact(&config.network, "sample (or quantize-baseline / convert)"));
    }
    let network = read_network_file(&config.network)?;
    let dataset = load_dataset(&config.dataset, "gen-data")?;
    let metrics = evaluate_network(&network, &dataset, config.loss, config.beta)?;
    let text = serde_json::to_string_pretty(&metrics).map_err(qsdp::QsdpError::from)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text)?;
    }
    Ok(())
}

pub fn convert(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config: ConvertConfig = load_config(config_path)?;
    config.validate()?;
    if !config.network.exists() {
        return Err(missing_artifact(&config.network, "sample"));
    }
    let network = read_network_file(&config.network)?;
    let converted = match (network, config.target) {
        (Network::Poly(net), ConvertTarget::Bilinear) => {
            Network::Bilinear(net.to_binary_bilinear())
        }
        (Network::Bilinear(net), ConvertTarget::Quadratic) => {
            Network::Quadratic(net.to_quadratic())
        }
        (Network::Bilinear(_), ConvertTarget::Bilinear) => {
            return Err(CliError::config("network is already bilinear".into()))
        }
        (Network::Poly(net), ConvertTarget::Quadratic) => {
            Network::Quadratic(net.to_binary_bilinear().to_quadratic())
        }
        (Network::Quadratic(_), _) => {
            return Err(CliError::config(
                "quadratic networks have no further reduction here".into(),
            ))
        }
    };
    write_network_file(&converted, out)?;
    println!("converted -> {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct ResultRow {
    method: &'static str,
    m: usize,
    seed: u64,
    train_objective: f64,
    test_objective: f64,
    train_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    solve_seconds: f64,
    shape_seconds: f64,
    sample_seconds: f64,
    train_seconds: f64,
    quantize_seconds: f64,
    eval_seconds: f64,
}

pub fn experiment(
    config_path: &Path,
    out: &Path,
    threads: Option<usize>,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let mut spec: ExperimentSpec = load_config(config_path)?;
    spec.validate()?;
    if let Some(s) = seed_override {
        spec.seeds = vec![s];
    }
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    ensure_dir(out)?;
    std::fs::write(
        out.join("experiment_config.json"),
        serde_json::to_string_pretty(&spec).map_err(qsdp::QsdpError::from)?,
    )?;

    let (train, test) = build_dataset(&spec.source, spec.normalize)?;
    write_dataset(&train, &out.join("train.qdat"))?;
    write_dataset(&test, &out.join("test.qdat"))?;

    // One relaxation solve serves the whole m grid.
    let solve_start = Instant::now();
    let solution = solve_problem(&train, spec.variant, spec.loss, spec.beta, &spec.solver)?;
    let solve_seconds = solve_start.elapsed().as_secs_f64();
    solution.write_json(&out.join("lower_bound.json"))?;

    let shape_start = Instant::now();
    let shaped = shape_from_solution(&solution, ShapeMethod::Krivine, &Default::default())?;
    let shape_seconds = shape_start.elapsed().as_secs_f64();

    let mut rows: Vec<ResultRow> = Vec::new();
    rows.push(sdp_bound_row(&solution, &train, &test, spec.loss, solve_seconds, shape_seconds)?);

    let grid: Vec<(usize, u64)> = spec
        .m_grid
        .iter()
        .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();

    use rayon::prelude::*;
    let sampled: Vec<ResultRow> = grid
        .par_iter()
        .map(|&(m, seed)| {
            sampled_row(
                &shaped, &train, &test, spec.loss, spec.beta, m, seed, solve_seconds,
                shape_seconds,
            )
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    rows.extend(sampled);

    if spec.variant == VariantChoice::Bilinear {
        if let Some(baseline_spec) = &spec.baseline {
            let baseline_rows: Vec<(ResultRow, Vec<qsdp::baseline::EpochStat>, usize, u64)> = grid
                .par_iter()
                .map(|&(m, seed)| {
                    baseline_rows(baseline_spec, &train, &test, spec.loss, spec.beta, m, seed)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let mut curves = Vec::new();
            for (row, curve, m, seed) in baseline_rows {
                rows.push(row);
                curves.push((m, seed, curve));
            }
            write_baseline_curves(&curves, &out.join("baseline_curves.csv"))?;
        }
    }

    rows.sort_by(|a, b| {
        (a.method, a.m, a.seed).cmp(&(b.method, b.m, b.seed))
    });
    write_results_csv(&rows, &out.join("results.csv"))?;
    write_objective_plot(&rows, &out.join("plot_objective_vs_m.csv"))?;
    write_accuracy_plot(&rows, &out.join("plot_accuracy_vs_m.csv"))?;
    println!(
        "experiment {}: lower bound {:.9e}, {} grid points -> {}",
        spec.name,
        solution.objective,
        grid.len(),
        out.display()
    );
    Ok(())
}

fn sdp_bound_row(
    solution: &SdpSolution,
    train: &Dataset,
    test: &Dataset,
    loss: LossKind,
    solve_seconds: f64,
    shape_seconds: f64,
) -> Result<ResultRow, CliError> {
    let test_pred = solution.predict(&test.x)?;
    let (_, train_acc) = prediction_metrics(&solution.predictions, train, loss)?;
    let (test_loss, test_acc) = prediction_metrics(&test_pred, test, loss)?;
    Ok(ResultRow {
        method: "sdp_bound",
        m: 0,
        seed: 0,
        // Train column carries d_SDP itself; test column the raw prediction
        // loss on held-out rows.
        train_objective: solution.objective,
        test_objective: test_loss,
        train_accuracy: train_acc,
        test_accuracy: test_acc,
        solve_seconds,
        shape_seconds,
        sample_seconds: 0.0,
        train_seconds: 0.0,
        quantize_seconds: 0.0,
        eval_seconds: 0.0,
    })
}

fn prediction_metrics(
    pred: &DMatrix<f64>,
    dataset: &Dataset,
    loss: LossKind,
) -> Result<(f64, Option<f64>), CliError> {
    if dataset.classes() == 1 {
        let yhat = DVector::from_column_slice(pred.column(0).as_slice());
        let metrics = baseline::evaluate_predictions(&yhat, dataset, loss)?;
        Ok((metrics.loss, metrics.accuracy))
    } else {
        let loss_val = qsdp::sdp::loss_value_matrix(loss, pred, &dataset.y)?;
        Ok((loss_val, baseline::matrix_accuracy(pred, &dataset.y)))
    }
}

#[allow(clippy::too_many_arguments)]
fn sampled_row(
    shaped: &[ShapedCovariance],
    train: &Dataset,
    test: &Dataset,
    loss: LossKind,
    beta: f64,
    m: usize,
    seed: u64,
    solve_seconds: f64,
    shape_seconds: f64,
) -> Result<ResultRow, CliError> {
    let sample_start = Instant::now();
    let (train_metrics, test_metrics, sample_seconds, eval_start) = if shaped.len() == 1 {
        let network = sample_network(&shaped[0], m, seed)?;
        let sample_seconds = sample_start.elapsed().as_secs_f64();
        let eval_start = Instant::now();
        let train_metrics = evaluate(&network, train, loss, beta)?;
        let test_metrics = evaluate(&network, test, loss, beta)?;
        (train_metrics, test_metrics, sample_seconds, eval_start)
    } else {
        let classes = shaped.len();
        let m_rounded = m - m % classes.max(1);
        let m_eff = if m_rounded == 0 { classes } else { m_rounded };
        let network = sample_vector_output(shaped, m_eff, seed)?;
        let sample_seconds = sample_start.elapsed().as_secs_f64();
        let eval_start = Instant::now();
        let train_metrics = evaluate_vector(&network, train, loss, beta)?;
        let test_metrics = evaluate_vector(&network, test, loss, beta)?;
        (train_metrics, test_metrics, sample_seconds, eval_start)
    };
    let eval_seconds = eval_start.elapsed().as_secs_f64();
    Ok(ResultRow {
        method: "sdp_sampled",
        m,
        seed,
        train_objective: train_metrics.objective,
        test_objective: test_metrics.objective,
        train_accuracy: train_metrics.accuracy,
        test_accuracy: test_metrics.accuracy,
        solve_seconds,
        shape_seconds,
        sample_seconds,
        train_seconds: 0.0,
        quantize_seconds: 0.0,
        eval_seconds,
    })
}

fn baseline_rows(
    spec: &BaselineSpec,
    train: &Dataset,
    test: &Dataset,
    loss: LossKind,
    beta: f64,
    m: usize,
    seed: u64,
) -> Result<(ResultRow, Vec<qsdp::baseline::EpochStat>, usize, u64), CliError> {
    let lr_base = if spec.scale_lr_with_m {
        spec.learning_rate * m as f64
    } else {
        spec.learning_rate
    };
    let train_start = Instant::now();
    let mut lr = lr_base;
    let mut trained = None;
    // Divergence backoff: retry with a smaller step, deterministically.
    for _ in 0..4 {
        let config = TrainConfig {
            neurons: m,
            learning_rate: lr,
            momentum: spec.momentum,
            epochs: spec.epochs,
            batch_size: spec.batch_size,
            seed,
            second_layer: qsdp::baseline::SecondLayerMode::FixedUniform,
        };
        match sgd_train_bilinear(train, &config, loss) {
            Ok(t) => {
                trained = Some(t);
                break;
            }
            Err(qsdp::QsdpError::TrainingDiverged { .. }) => {
                lr *= 0.1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let trained = trained.ok_or_else(|| {
        CliError::config(format!(
            "baseline training diverged at m = {m}, seed = {seed} even after step backoff"
        ))
    })?;
    let train_seconds = train_start.elapsed().as_secs_f64();

    let quantize_start = Instant::now();
    let network = post_training_quantize(&trained.u, &trained.v, QuantizeFormula::LeastSquares)?;
    let quantize_seconds = quantize_start.elapsed().as_secs_f64();

    let eval_start = Instant::now();
    let train_metrics = evaluate(&network, train, loss, beta)?;
    let test_metrics = evaluate(&network, test, loss, beta)?;
    let eval_seconds = eval_start.elapsed().as_secs_f64();

    Ok((
        ResultRow {
            method: "backprop_quantized",
            m,
            seed,
            train_objective: train_metrics.objective,
            test_objective: test_metrics.objective,
            train_accuracy: train_metrics.accuracy,
            test_accuracy: test_metrics.accuracy,
            solve_seconds: 0.0,
            shape_seconds: 0.0,
            sample_seconds: 0.0,
            train_seconds,
            quantize_seconds,
            eval_seconds,
        },
        trained.curve,
        m,
        seed,
    ))
}

fn format_acc(a: Option<f64>) -> String {
    a.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))?;
    writeln!(
        file,
        "method,m,seed,train_objective,test_objective,train_accuracy,test_accuracy,\
         solve_seconds,shape_seconds,sample_seconds,train_seconds,quantize_seconds,eval_seconds"
    )
    .map_err(|e| CliError::io(e.to_string()))?;
    for r in rows {
        writeln!(
            file,
            "{},{},{},{:.12e},{:.12e},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.method,
            r.m,
            r.seed,
            r.train_objective,
            r.test_objective,
            format_acc(r.train_accuracy),
            format_acc(r.test_accuracy),
            r.solve_seconds,
            r.shape_seconds,
            r.sample_seconds,
            r.train_seconds,
            r.quantize_seconds,
            r.eval_seconds
        )
        .map_err(|e| CliError::io(e.to_string()))?;
    }
    Ok(())
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Some(values[values.len() / 2])
}

fn write_objective_plot(rows: &[ResultRow], path: &Path) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))?;
    writeln!(file, "method,m,split,median_objective").map_err(|e| CliError::io(e.to_string()))?;
    let methods: Vec<&'static str> = {
        let mut ms: Vec<&'static str> = rows.iter().map(|r| r.method).collect();
        ms.sort();
        ms.dedup();
        ms
    };
    for method in methods {
        let mut grid: Vec<usize> =
            rows.iter().filter(|r| r.method == method).map(|r| r.m).collect();
        grid.sort();
        grid.dedup();
        for m in grid {
            for (split, pick) in [
                ("train", true),
                ("test", false),
            ] {
                let mut vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.method == method && r.m == m)
                    .map(|r| if pick { r.train_objective } else { r.test_objective })
                    .collect();
                if let Some(med) = median(&mut vals) {
                    writeln!(file, "{method},{m},{split},{med:.12e}")
                        .map_err(|e| CliError::io(e.to_string()))?;
                }
            }
        }
    }
    Ok(())
}

fn write_accuracy_plot(rows: &[ResultRow], path: &Path) -> Result<(), CliError> {
    if rows.iter().all(|r| r.train_accuracy.is_none()) {
        return Ok(());
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))?;
    writeln!(file, "method,m,split,median_accuracy").map_err(|e| CliError::io(e.to_string()))?;
    let methods: Vec<&'static str> = {
        let mut ms: Vec<&'static str> = rows.iter().map(|r| r.method).collect();
        ms.sort();
        ms.dedup();
        ms
    };
    for method in methods {
        let mut grid: Vec<usize> =
            rows.iter().filter(|r| r.method == method).map(|r| r.m).collect();
        grid.sort();
        grid.dedup();
        for m in grid {
            for (split, pick_train) in [("train", true), ("test", false)] {
                let mut vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.method == method && r.m == m)
                    .filter_map(|r| if pick_train { r.train_accuracy } else { r.test_accuracy })
                    .collect();
                if let Some(med) = median(&mut vals) {
                    writeln!(file, "{method},{m},{split},{med:.6}")
                        .map_err(|e| CliError::io(e.to_string()))?;
                }
            }
        }
    }
    Ok(())
}

fn write_baseline_curves(
    curves: &[(usize, u64, Vec<qsdp::baseline::EpochStat>)],
    path: &Path,
) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))?;
    writeln!(file, "m,seed,epoch,seconds,loss,accuracy").map_err(|e| CliError::io(e.to_string()))?;
    for (m, seed, curve) in curves {
        for stat in curve {
            writeln!(
                file,
                "{m},{seed},{},{:.6},{:.12e},{}",
                stat.epoch,
                stat.seconds,
                stat.loss,
                stat.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default()
            )
            .map_err(|e| CliError::io(e.to_string()))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_source_round_trips_through_json() {
        let source = DataSource::Planted(PlantedSpec {
            n: 10,
            d: 3,
            planted_m: 2,
            seed: 7,
            second_layer: qsdp::data::SecondLayer::Nonnegative,
        });
        let text = serde_json::to_string(&source).unwrap();
        let back: DataSource = serde_json::from_str(&text).unwrap();
        match back {
            DataSource::Planted(spec) => assert_eq!(spec.n, 10),
            _ => panic!("wrong variant"),
        }
    }
}
