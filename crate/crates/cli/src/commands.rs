use std::fs;
use std::path::{Path, PathBuf};

use nhnn::bench::{loglog_slope, scaling_benchmark, BenchSize};
use nhnn::dataset::{split_dataset, Dataset, Split, SplitWarning, Task};
use nhnn::gradcheck::run_suite;
use nhnn::io::{load_dataset, load_params, save_dataset, save_params};
use nhnn::metrics::{cluster_similarity, factor_recovery_score, pearson_factor_correlation, relevance_similarity_matrix};
use nhnn::model::{ModelConfig, ModelParams};
use nhnn::sweep::{DataSource, SweepGrid, SweepOutcome};
use nhnn::synthetic::{generate_planted, SyntheticSpec};
use nhnn::tensor::{DType, Real, Tensor};
use nhnn::train::{evaluate, RunResult, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::ledger::{self, RunLedgerRow, LEDGER_VERSION};
use crate::output::{read_assignment, read_matrix, write_alpha, write_curve, write_matrix, write_records};
use crate::Overrides;

/// Precision from `NHNN_DTYPE` (`f32` or `f64`, default `f64`).
pub fn dtype_from_env() -> CliResult<DType> {
    match std::env::var("NHNN_DTYPE") {
        Ok(v) => v.parse().map_err(|_| CliError::usage(format!("NHNN_DTYPE must be f32 or f64, got {v:?}"))),
        Err(_) => Ok(DType::F64),
    }
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_ratio: 0.5,
            val_ratio: 0.25,
            test_ratio: 0.25,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn open_dataset(path: &Path) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(CliError::usage(format!("dataset {} does not exist", path.display())));
    }
    Ok(load_dataset(path)?)
}

fn resolve(o: &Overrides) -> CliResult<RunConfig> {
    let mut cfg: RunConfig = match &o.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let m = &mut cfg.model;
    if let Some(v) = o.variant {
        m.variant = v;
    }
    if let Some(v) = o.factors {
        m.factors = v;
    }
    if let Some(v) = o.hidden {
        m.hidden = v;
    }
    if let Some(v) = o.layers {
        m.layers = v;
    }
    if let Some(v) = o.lambda {
        m.lambda = v;
    }
    if let Some(v) = o.beta {
        m.beta = v;
    }
    if let Some(v) = o.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = o.train_ratio {
        cfg.train_ratio = v;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn report_warnings(warnings: &[SplitWarning]) {
    for w in warnings {
        eprintln!("warning: {w:?}");
    }
}

pub struct GenArgs {
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub nodes: Option<usize>,
    pub edges: Option<usize>,
    pub planted_factors: Option<usize>,
    pub feature_dim: Option<usize>,
    pub classes: Option<usize>,
    pub samples: Option<usize>,
    pub train_ratio: f64,
}

pub fn gen(a: GenArgs) -> CliResult<()> {
    let mut spec: SyntheticSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.num_nodes = a.nodes.unwrap_or(spec.num_nodes);
    spec.num_edges = a.edges.unwrap_or(spec.num_edges);
    spec.num_factors = a.planted_factors.unwrap_or(spec.num_factors);
    spec.feature_dim = a.feature_dim.unwrap_or(spec.feature_dim);
    spec.num_classes = a.classes.unwrap_or(spec.num_classes);
    if let Some(s) = a.samples {
        spec.task = Task::HypergraphClassification;
        spec.num_samples = s;
    }
    let ds = generate_planted(&spec)?;
    let (ds, warnings) = split_dataset(&ds, (a.train_ratio, 0.25, 0.25), spec.seed)?;
    report_warnings(&warnings);
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {}: N={} M={} E={} d0={} items={}",
        a.out.display(),
        ds.hypergraph.num_nodes(),
        ds.hypergraph.num_edges(),
        ds.hypergraph.num_incidences(),
        ds.feature_dim(),
        ds.num_items()
    );
    Ok(())
}

fn ledger_row(
    run_id: String,
    dataset: String,
    model: &ModelConfig,
    train: &TrainConfig,
    train_ratio: f64,
    result: &RunResult,
) -> RunLedgerRow {
    RunLedgerRow {
        ledger_version: LEDGER_VERSION,
        run_id,
        dataset,
        variant: model.variant.to_string(),
        factors: model.factors,
        hidden: model.hidden,
        layers: model.layers,
        lambda: model.lambda,
        beta: model.beta,
        lr: train.lr,
        seed: train.seed,
        train_ratio,
        test_accuracy: result.test.accuracy,
        test_macro_f1: result.test.macro_f1,
        test_micro_f1: result.test.micro_f1,
        factor_auc: result.recovery.map(|r| r.auc),
        factor_ari: result.recovery.map(|r| r.ari),
        wall_seconds: result.train_seconds,
    }
}

/// Curves, relevance scores and the summary of one run.
fn write_run_artifacts(dir: &Path, result: &RunResult) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    write_curve(&dir.join("loss_curve.csv"), &result.curve)?;
    if let Some(alpha) = result.test.alphas.last() {
        write_alpha(&dir.join("alpha.csv"), alpha)?;
    }
    for (l, alpha) in result.test.alphas.iter().enumerate() {
        write_alpha(&dir.join(format!("alpha_layer{l}.csv")), alpha)?;
    }
    for (epoch, alpha) in &result.alpha_snapshots {
        write_alpha(&dir.join(format!("alpha_epoch{epoch:04}.csv")), alpha)?;
    }
    write_json(&dir.join("result.json"), result)
}

fn train_typed<T: Real>(ds: &Dataset, cfg: &RunConfig, out: &Path) -> CliResult<RunResult> {
    let (params, result) = nhnn::train::train::<T>(ds, &cfg.model, &cfg.train)?;
    write_run_artifacts(out, &result)?;
    save_params(&params, out.join("params.nhnp"))?;
    Ok(result)
}

pub fn train(
    dtype: DType,
    dataset: &Path,
    out: &Path,
    overrides: &Overrides,
    ledger_path: Option<PathBuf>,
    run_id: Option<String>,
) -> CliResult<()> {
    let cfg = resolve(overrides)?;
    let mut ds = open_dataset(dataset)?;
    let stored = !ds.splits.indices(Split::Train).is_empty();
    let train_ratio = if stored && overrides.train_ratio.is_none() {
        ds.splits.indices(Split::Train).len() as f64 / ds.num_items() as f64
    } else {
        let (split, warnings) =
            split_dataset(&ds, (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio), cfg.train.seed)?;
        report_warnings(&warnings);
        ds = split;
        cfg.train_ratio
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let result = match dtype {
        DType::F32 => train_typed::<f32>(&ds, &cfg, out)?,
        DType::F64 => train_typed::<f64>(&ds, &cfg, out)?,
    };
    let row = ledger_row(
        run_id.unwrap_or_else(|| format!("train-{}-seed{}", cfg.model.variant, cfg.train.seed)),
        dataset.display().to_string(),
        &cfg.model,
        &cfg.train,
        train_ratio,
        &result,
    );
    ledger::append(&ledger_path.unwrap_or_else(|| out.join("ledger.csv")), std::slice::from_ref(&row))?;
    println!(
        "best epoch {} of {}: test accuracy {:.4}, macro-F1 {:.4}, micro-F1 {:.4}",
        result.best_epoch, result.epochs_run, row.test_accuracy, row.test_macro_f1, row.test_micro_f1
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    split: String,
    items: usize,
    loss: f64,
    accuracy: f64,
    macro_f1: f64,
    micro_f1: f64,
}

fn eval_typed<T: Real>(params: &Path, ds: &Dataset, split: Split) -> CliResult<nhnn::train::EvalReport> {
    let params: ModelParams<T> = load_params(params)?;
    if params.input_dim != ds.feature_dim() {
        return Err(CliError::usage(format!(
            "parameters expect {} input features, dataset has {}",
            params.input_dim,
            ds.feature_dim()
        )));
    }
    Ok(evaluate(ds, &params, split, 50)?)
}

pub fn eval(dtype: DType, params: &Path, dataset: &Path, split: Split, out: Option<&Path>) -> CliResult<()> {
    let ds = open_dataset(dataset)?;
    if !params.exists() {
        return Err(CliError::usage(format!("parameters {} do not exist", params.display())));
    }
    if split != Split::All && ds.splits.indices(split).is_empty() {
        return Err(CliError::usage(format!("split {split:?} is empty in {}", dataset.display())));
    }
    let report = match dtype {
        DType::F32 => eval_typed::<f32>(params, &ds, split)?,
        DType::F64 => eval_typed::<f64>(params, &ds, split)?,
    };
    let summary = EvalSummary {
        split: format!("{split:?}").to_lowercase(),
        items: ds.splits.indices(split).len(),
        loss: report.loss.total,
        accuracy: report.accuracy,
        macro_f1: report.macro_f1,
        micro_f1: report.micro_f1,
    };
    println!("{}", serde_json::to_string(&summary)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("metrics.json"), &summary)?;
        if let Some(alpha) = report.alphas.last() {
            write_alpha(&dir.join("alpha.csv"), alpha)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RecoveryRow {
    auc: f64,
    ari: f64,
    column: usize,
    flipped: bool,
    hyperedges: usize,
}

/// Rows of `alpha` restricted to `rows`.
fn restrict(alpha: &Tensor<f64>, rows: &[usize]) -> Tensor<f64> {
    let data = rows.iter().flat_map(|&r| alpha.row(r).to_vec()).collect();
    Tensor::matrix(rows.len(), alpha.cols(), data).expect("row subset")
}

pub fn analyze(
    alpha_path: &Path,
    out: &Path,
    dataset: Option<&Path>,
    planted: Option<&Path>,
    clusters: Option<&Path>,
    seed: u64,
) -> CliResult<()> {
    let alpha = read_matrix(alpha_path)?;
    let m = alpha.rows();
    let ds = dataset.map(open_dataset).transpose()?;
    if let Some(ds) = &ds {
        if ds.hypergraph.num_edges() != m {
            return Err(CliError::usage(format!(
                "α has {m} rows but the dataset has {} hyperedges",
                ds.hypergraph.num_edges()
            )));
        }
    }
    // Hyperedges without members carry no relevance information.
    let live: Vec<usize> = match &ds {
        Some(ds) => (0..m).filter(|&e| ds.hypergraph.edge_degree(e) > 0).collect(),
        None => (0..m).collect(),
    };
    fs::create_dir_all(out)?;

    let pearson = pearson_factor_correlation(&restrict(&alpha, &live));
    write_matrix(&out.join("pearson.csv"), "factor", "factor_", &pearson.matrix)?;
    for c in &pearson.zero_variance {
        eprintln!("warning: α column {c} has zero variance; its correlations are reported as 0");
    }
    write_matrix(&out.join("similarity.csv"), "hyperedge", "hyperedge_", &relevance_similarity_matrix(&alpha))?;

    if let Some(path) = clusters {
        let assign = read_assignment(path, m)?;
        let count = assign.iter().max().map_or(0, |c| c + 1);
        let mut groups = vec![Vec::new(); count];
        for (e, &c) in assign.iter().enumerate() {
            groups[c].push(e);
        }
        if groups.iter().any(Vec::is_empty) {
            return Err(CliError::usage("cluster ids must be contiguous from 0"));
        }
        write_matrix(&out.join("cluster_similarity.csv"), "cluster", "cluster_", &cluster_similarity(&groups, &alpha)?)?;
    }

    let planted_ids = match (planted, &ds) {
        (Some(path), _) => Some(read_assignment(path, m)?),
        (None, Some(ds)) => ds.planted.as_ref().map(|p| p.edge_factor.clone()),
        (None, None) => None,
    };
    if let Some(ids) = planted_ids {
        let factors = ids.iter().max().map_or(1, |k| k + 1);
        let score = factor_recovery_score(&alpha, &ids, factors, &live, seed)?;
        write_records(
            &out.join("recovery.csv"),
            &[RecoveryRow {
                auc: score.auc,
                ari: score.ari,
                column: score.column,
                flipped: score.flipped,
                hyperedges: live.len(),
            }],
        )?;
        println!("factor recovery: AUC {:.4}, ARI {:.4}", score.auc, score.ari);
    }
    println!("mean |off-diagonal Pearson| {:.4}", pearson.mean_abs_off_diagonal());
    Ok(())
}

pub fn gradcheck(seeds: u64, out: Option<&Path>) -> CliResult<()> {
    if seeds == 0 {
        return Err(CliError::usage("--seeds must be positive"));
    }
    let results = run_suite(0..seeds)?;
    for r in &results {
        println!("{:<28} {:.3e} {}", r.name, r.max_rel_error, if r.passed { "ok" } else { "FAILED" });
    }
    if let Some(path) = out {
        write_records(path, &results)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("gradient check failed for {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct BenchCsvRow {
    nodes: usize,
    edges: usize,
    incidences: usize,
    hidden: usize,
    factors: usize,
    trials: usize,
    median_seconds: f64,
}

pub fn bench(dtype: DType, base: BenchSize, points: usize, trials: usize, seed: u64, out: Option<&Path>) -> CliResult<()> {
    if points == 0 || trials == 0 || !base.hidden.is_multiple_of(base.factors.max(1)) {
        return Err(CliError::usage("need points ≥ 1, trials ≥ 1 and hidden divisible by factors"));
    }
    let sizes: Vec<BenchSize> = (0..points)
        .map(|i| BenchSize {
            incidences: base.incidences << i,
            ..base
        })
        .collect();
    let rows = match dtype {
        DType::F32 => scaling_benchmark::<f32>(&sizes, trials, seed)?,
        DType::F64 => scaling_benchmark::<f64>(&sizes, trials, seed)?,
    };
    let csv_rows: Vec<BenchCsvRow> = rows
        .iter()
        .map(|r| BenchCsvRow {
            nodes: r.size.nodes,
            edges: r.size.edges,
            incidences: r.incidences,
            hidden: r.size.hidden,
            factors: r.size.factors,
            trials: r.trials.len(),
            median_seconds: r.median_seconds,
        })
        .collect();
    match out {
        Some(path) => write_records(path, &csv_rows)?,
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for r in &csv_rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    if rows.len() > 1 {
        let xs: Vec<f64> = rows.iter().map(|r| r.incidences as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.median_seconds).collect();
        eprintln!("log-log slope of time against E: {:.3}", loglog_slope(&xs, &ys));
    }
    Ok(())
}

/// Contents of a `--grid` file.
#[derive(Debug, Deserialize)]
#[serde(default)]
#[derive(Default)]
struct SweepFile {
    #[serde(flatten)]
    grid: SweepGrid,
    /// Generator spec for planted data (ignored with `--dataset`).
    synthetic: SyntheticSpec,
}


#[derive(Serialize)]
struct AggregateRow {
    variant: String,
    factors: usize,
    lambda: f64,
    train_ratio: f64,
    runs: usize,
    mean_test_macro_f1: f64,
    mean_test_accuracy: f64,
    mean_factor_auc: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(outcomes: &[SweepOutcome]) -> Vec<AggregateRow> {
    let mut rows: Vec<AggregateRow> = Vec::new();
    let mut groups: Vec<Vec<&SweepOutcome>> = Vec::new();
    for o in outcomes {
        let key = |x: &SweepOutcome| (x.run.variant, x.run.factors, x.run.lambda.to_bits(), x.run.train_ratio.to_bits());
        match groups.iter_mut().find(|g| key(g[0]) == key(o)) {
            Some(g) => g.push(o),
            None => groups.push(vec![o]),
        }
    }
    for g in groups {
        let ok: Vec<&RunResult> = g.iter().filter_map(|o| o.result.as_ref().ok()).collect();
        rows.push(AggregateRow {
            variant: g[0].run.variant.to_string(),
            factors: g[0].run.factors,
            lambda: g[0].run.lambda,
            train_ratio: g[0].run.train_ratio,
            runs: ok.len(),
            mean_test_macro_f1: mean(ok.iter().map(|r| r.test.macro_f1)).unwrap_or(f64::NAN),
            mean_test_accuracy: mean(ok.iter().map(|r| r.test.accuracy)).unwrap_or(f64::NAN),
            mean_factor_auc: mean(ok.iter().filter_map(|r| r.recovery.map(|s| s.auc))),
        });
    }
    rows
}

pub fn sweep(dtype: DType, grid_path: &Path, out: &Path, dataset: Option<&Path>, overrides: &Overrides, jobs: usize) -> CliResult<()> {
    let file: SweepFile = read_json(grid_path)?;
    let base = resolve(overrides)?;
    let grid = SweepGrid {
        val_ratio: base.val_ratio,
        test_ratio: base.test_ratio,
        ..file.grid
    };
    let source = match dataset {
        Some(p) => DataSource::Fixed(open_dataset(p)?),
        None => DataSource::Planted(file.synthetic.clone()),
    };
    if grid.seeds.is_empty() || grid.train_ratios.is_empty() {
        return Err(CliError::usage("grid needs at least one seed and one training ratio"));
    }
    let outcomes = match dtype {
        DType::F32 => nhnn::sweep::sweep::<f32>(&source, &grid, &base.model, &base.train, jobs)?,
        DType::F64 => nhnn::sweep::sweep::<f64>(&source, &grid, &base.model, &base.train, jobs)?,
    };
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in &outcomes {
        let id = format!("run{:04}", o.run.id);
        match &o.result {
            Ok(result) => {
                write_run_artifacts(&out.join("runs").join(&id), result)?;
                let label = match dataset {
                    Some(p) => p.display().to_string(),
                    None => format!("planted:seed={}", o.run.seed),
                };
                let train = TrainConfig {
                    seed: o.run.seed,
                    ..base.train.clone()
                };
                rows.push(ledger_row(id, label, &o.model, &train, o.run.train_ratio, result));
            }
            Err(e) => failures.push(format!("{id}: {} ({e})", e.category())),
        }
    }
    ledger::append(&out.join("ledger.csv"), &rows)?;
    write_records(&out.join("aggregate.csv"), &aggregate(&outcomes))?;
    println!("{} runs completed, {} failed; ledger at {}", rows.len(), failures.len(), out.join("ledger.csv").display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime {
            category: "RunFailed",
            message: failures.join("; "),
        })
    }
}
