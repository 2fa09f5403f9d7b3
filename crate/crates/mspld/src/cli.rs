//! Command implementations behind the `mspld` binary: dataset generation,
//! experiment execution, baseline comparison, oracle checks, and metric
//! reports. Every command is deterministic given its seed arguments;
//! rerunning a command overwrites its outputs identically.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::data::{
    generate_synthetic_dataset, load_dataset, sample_initial_labels, save_dataset, DataError,
    DatasetSplit,
};
use crate::engine::{
    fuse_singles, run_ensemble_baseline, Engine, EngineError, EngineState, IterationTrace,
    RunConfig, RunMode, RunOutcome,
};
use crate::eval::{
    average_precision, corloc, pseudo_quality, write_metrics_csv, ApMode, ClassMetricsRow,
    EvalError, ImageEval, PseudoQualityInput,
};
use crate::geometry::ScoredBox;
use crate::oracle::equivalence_check;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("oracle check failed: {passed}/{total} instances exact")]
    OracleMismatch { passed: usize, total: usize },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Engine(_) => "engine",
            CliError::Eval(_) => "eval",
            CliError::Io { .. } => "io",
            CliError::OracleMismatch { .. } => "oracle_mismatch",
            CliError::Invalid(_) => "invalid",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    s.parse()
}

#[derive(Debug, Parser)]
#[command(
    name = "mspld",
    version,
    about = "Few-example detection via multi-modal self-paced sample selection"
)]
pub struct Cli {
    /// Worker threads (default: MSPLD_WORKERS env var, then all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from the config's scene section.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output dataset file (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Execute one experiment run into a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Run directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<RunMode>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Continue from the latest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run every baseline and the full method over the comparison seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify the closed-form selection update against the brute-force
    /// oracle on random instances.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        n_instances: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a detections file against a dataset's ground truth.
    Eval {
        /// Detections JSON: [{"image_id", "boxes": [{"box", "class_id", "score"}]}].
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for metrics.csv / metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "eleven_point")]
        ap_mode: String,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out, seed } => cmd_gen_data(&config, &out, seed),
        Command::Run { config, data, out, seed, mode, max_iters, resume } => {
            cmd_run(&config, &data, &out, seed, mode, max_iters, resume)
        }
        Command::Compare { config, data, out, seed } => cmd_compare(&config, &data, &out, seed),
        Command::OracleCheck { n_instances, seed, out } => {
            cmd_oracle_check(n_instances, seed, out.as_deref())
        }
        Command::Eval { dets, data, out, ap_mode } => {
            cmd_eval(&dets, &data, out.as_deref(), &ap_mode)
        }
    }
}

pub fn cmd_gen_data(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let seed = seed.unwrap_or(config.run.seed);
    let dataset = generate_synthetic_dataset(&config.scene, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(out))?;
    }
    save_dataset(&dataset, out)?;
    println!(
        "wrote {}: {} images ({} unlabeled, {} test), {} classes",
        out.display(),
        dataset.images.len(),
        dataset.unlabeled_ids.len(),
        dataset.test_ids.len(),
        dataset.num_classes
    );
    Ok(())
}

fn sha256_hex(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Labels are sampled here (not in the engine) so one dataset supports many
/// label draws; a dataset that already carries labels is used as-is.
fn prepare_labels(dataset: &DatasetSplit, run: &RunConfig, seed: u64) -> Result<DatasetSplit, CliError> {
    if dataset.labeled_ids.is_empty() {
        Ok(sample_initial_labels(dataset, run.labels_per_class, seed)?)
    } else {
        Ok(dataset.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    mode: RunMode,
    iterations: usize,
    converged: bool,
    mean_ap: Option<f64>,
    mean_corloc: Option<f64>,
    per_model_map: Vec<Option<f64>>,
    img_precision: f64,
    img_recall: f64,
    ins_precision: f64,
    ins_recall: f64,
    dataset_sha256: String,
}

fn write_summary(path: &Path, summary: &RunSummary) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(path, text).map_err(io_err(path))
}

fn write_traces(path: &Path, traces: &[IterationTrace]) -> Result<(), CliError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for trace in traces {
        let line = serde_json::to_string(trace).expect("trace serializes");
        writeln!(file, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("iter_{iteration:03}.json"))
}

fn write_state(path: &Path, state: &EngineState) -> Result<(), CliError> {
    let text = serde_json::to_string(state).expect("state serializes");
    fs::write(path, text).map_err(io_err(path))
}

fn finish_run(
    out: &Path,
    run_config: &RunConfig,
    outcome: &RunOutcome,
    dataset_hash: &str,
) -> Result<(), CliError> {
    write_traces(&out.join("trace.jsonl"), &outcome.traces)?;
    write_metrics_csv(&out.join("metrics.csv"), &outcome.report.rows)?;
    write_state(&out.join("checkpoints").join("final.json"), &outcome.state)?;
    let summary = RunSummary {
        mode: run_config.mode,
        iterations: outcome.state.iteration,
        converged: outcome.state.converged,
        mean_ap: outcome.report.mean_ap,
        mean_corloc: outcome.report.mean_corloc,
        per_model_map: outcome.report.per_model_map.clone(),
        img_precision: outcome.report.quality.img_precision,
        img_recall: outcome.report.quality.img_recall,
        ins_precision: outcome.report.quality.ins_precision,
        ins_recall: outcome.report.quality.ins_recall,
        dataset_sha256: dataset_hash.to_string(),
    };
    write_summary(&out.join("summary.json"), &summary)?;
    println!(
        "run complete: {} iterations, mAP {}, CorLoc {}",
        outcome.state.iteration,
        summary.mean_ap.map_or("n/a".into(), |v| format!("{:.4}", v)),
        summary.mean_corloc.map_or("n/a".into(), |v| format!("{:.4}", v)),
    );
    Ok(())
}

pub fn cmd_run(
    config_path: &Path,
    data_path: &Path,
    out: &Path,
    seed: Option<u64>,
    mode: Option<RunMode>,
    max_iters: Option<usize>,
    resume: bool,
) -> Result<(), CliError> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.run.seed = seed;
    }
    if let Some(mode) = mode {
        config.run.mode = mode;
    }
    if let Some(max) = max_iters {
        config.run.max_iterations = max;
    }

    let checkpoints = out.join("checkpoints");
    fs::create_dir_all(&checkpoints).map_err(io_err(&checkpoints))?;
    config.save(&out.join("config.json"))?;
    let dataset_hash = sha256_hex(data_path)?;
    fs::write(out.join("dataset.sha256"), format!("{dataset_hash}\n"))
        .map_err(io_err(&out.join("dataset.sha256")))?;

    let dataset = load_dataset(data_path)?;
    let labeled = prepare_labels(&dataset, &config.run, config.run.seed)?;

    match config.run.mode {
        RunMode::SplEnsemble => {
            let outcome = run_ensemble_baseline(&config.run, &labeled)?;
            for (j, single) in outcome.single_runs.iter().enumerate() {
                let dir = out.join(format!("singles/{j}"));
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                write_traces(&dir.join("trace.jsonl"), &single.traces)?;
                write_metrics_csv(&dir.join("metrics.csv"), &single.report.rows)?;
            }
            write_traces(&out.join("trace.jsonl"), &[])?;
            write_metrics_csv(&out.join("metrics.csv"), &outcome.report.rows)?;
            let summary = RunSummary {
                mode: RunMode::SplEnsemble,
                iterations: outcome.single_runs.iter().map(|r| r.state.iteration).max().unwrap_or(0),
                converged: true,
                mean_ap: outcome.fused_test_map,
                mean_corloc: outcome.fused_corloc,
                per_model_map: outcome
                    .single_runs
                    .iter()
                    .map(|r| r.report.mean_ap)
                    .collect(),
                img_precision: outcome.report.quality.img_precision,
                img_recall: outcome.report.quality.img_recall,
                ins_precision: outcome.report.quality.ins_precision,
                ins_recall: outcome.report.quality.ins_recall,
                dataset_sha256: dataset_hash.clone(),
            };
            write_summary(&out.join("summary.json"), &summary)?;
            println!(
                "ensemble complete: fused mAP {}",
                summary.mean_ap.map_or("n/a".into(), |v| format!("{:.4}", v))
            );
            Ok(())
        }
        RunMode::SplSingle | RunMode::Mspld => {
            let engine = Engine::new(&config.run, &labeled)?;
            let mut traces: Vec<IterationTrace> = Vec::new();
            let mut state = if resume {
                latest_checkpoint(&checkpoints)?
                    .map(|(state, iter)| -> Result<EngineState, CliError> {
                        traces = read_traces(&out.join("trace.jsonl"), iter)?;
                        Ok(state)
                    })
                    .transpose()?
                    .unwrap_or(engine.initial_state()?)
            } else {
                engine.initial_state()?
            };
            let mut checkpoint_err = None;
            engine.resume_with_observer(&mut state, &mut traces, &mut |_, snapshot| {
                let path = checkpoint_path(&checkpoints, snapshot.iteration);
                if let Err(e) = write_state(&path, snapshot) {
                    checkpoint_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = checkpoint_err {
                return Err(e);
            }
            let report = engine.final_report(&state);
            let outcome = RunOutcome { traces, state, report };
            finish_run(out, &config.run, &outcome, &dataset_hash)
        }
    }
}

fn latest_checkpoint(dir: &Path) -> Result<Option<(EngineState, usize)>, CliError> {
    let mut best: Option<(usize, PathBuf)> = None;
    if let Ok(entries) = fs::read_dir(dir) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(iter) = name
                .strip_prefix("iter_")
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse::<usize>().ok())
            {
                if best.as_ref().is_none_or(|(b, _)| iter > *b) {
                    best = Some((iter, entry.path()));
                }
            }
        }
    }
    match best {
        None => Ok(None),
        Some((iter, path)) => {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let state: EngineState = serde_json::from_str(&text).map_err(|e| {
                CliError::Invalid(format!("corrupt checkpoint {}: {e}", path.display()))
            })?;
            Ok(Some((state, iter)))
        }
    }
}

fn read_traces(path: &Path, up_to_iteration: usize) -> Result<Vec<IterationTrace>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut traces = Vec::new();
    for line in text.lines().take(up_to_iteration) {
        let trace: IterationTrace = serde_json::from_str(line)
            .map_err(|e| CliError::Invalid(format!("corrupt trace line: {e}")))?;
        traces.push(trace);
    }
    Ok(traces)
}

/// Per-method statistics over the comparison seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub map_mean: f64,
    pub map_std: f64,
    pub corloc_mean: f64,
    pub corloc_std: f64,
    pub per_seed_map: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodStats>,
}

impl ComparisonReport {
    pub fn method(&self, name: &str) -> Option<&MethodStats> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn best_single_map(&self) -> f64 {
        self.methods
            .iter()
            .filter(|m| m.method.starts_with("spl_single"))
            .map(|m| m.map_mean)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Strip any existing label assignment so every seed draws fresh.
fn without_labels(dataset: &DatasetSplit) -> DatasetSplit {
    let mut d = dataset.clone();
    let labeled: Vec<u64> = d.labeled_ids.iter().copied().collect();
    for id in labeled {
        d.labeled_ids.remove(&id);
        d.unlabeled_ids.insert(id);
    }
    d
}

/// Run single-model baselines, the late-fusion ensemble, and the full
/// multi-modal method for every comparison seed. The seed varies only the
/// initial label draw.
pub fn run_comparison(
    config: &ExperimentConfig,
    dataset: &DatasetSplit,
) -> Result<ComparisonReport, CliError> {
    let seeds = config.compare_seeds.clone();
    if seeds.is_empty() {
        return Err(CliError::Invalid("compare_seeds is empty".into()));
    }
    let base = without_labels(dataset);
    let m = config.run.models.len();
    let mut single_maps: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut single_corlocs: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut ensemble_maps = Vec::new();
    let mut ensemble_corlocs = Vec::new();
    let mut mspld_maps = Vec::new();
    let mut mspld_corlocs = Vec::new();

    for &seed in &seeds {
        let labeled = sample_initial_labels(&base, config.run.labels_per_class, seed)?;

        let mut single_runs = Vec::with_capacity(m);
        for (j, spec) in config.run.models.iter().enumerate() {
            let single = RunConfig {
                mode: RunMode::SplSingle,
                models: vec![spec.clone()],
                ..config.run.clone()
            };
            let outcome = Engine::new(&single, &labeled)?.run()?;
            single_maps[j].push(outcome.report.mean_ap.unwrap_or(0.0));
            single_corlocs[j].push(outcome.report.mean_corloc.unwrap_or(0.0));
            single_runs.push(outcome);
        }

        let ensemble = fuse_singles(&config.run, &labeled, &single_runs)?;
        ensemble_maps.push(ensemble.fused_test_map.unwrap_or(0.0));
        ensemble_corlocs.push(ensemble.fused_corloc.unwrap_or(0.0));

        if m >= 2 {
            let mspld = RunConfig { mode: RunMode::Mspld, ..config.run.clone() };
            let outcome = Engine::new(&mspld, &labeled)?.run()?;
            mspld_maps.push(outcome.report.mean_ap.unwrap_or(0.0));
            mspld_corlocs.push(outcome.report.mean_corloc.unwrap_or(0.0));
        }
    }

    let mut methods = Vec::new();
    for (j, spec) in config.run.models.iter().enumerate() {
        let (map_mean, map_std) = mean_std(&single_maps[j]);
        let (corloc_mean, corloc_std) = mean_std(&single_corlocs[j]);
        methods.push(MethodStats {
            method: format!("spl_single_{j}_{:?}", spec.family).to_lowercase(),
            map_mean,
            map_std,
            corloc_mean,
            corloc_std,
            per_seed_map: single_maps[j].clone(),
        });
    }
    let (map_mean, map_std) = mean_std(&ensemble_maps);
    let (corloc_mean, corloc_std) = mean_std(&ensemble_corlocs);
    methods.push(MethodStats {
        method: "spl_ensemble".into(),
        map_mean,
        map_std,
        corloc_mean,
        corloc_std,
        per_seed_map: ensemble_maps,
    });
    if !mspld_maps.is_empty() {
        let (map_mean, map_std) = mean_std(&mspld_maps);
        let (corloc_mean, corloc_std) = mean_std(&mspld_corlocs);
        methods.push(MethodStats {
            method: "mspld".into(),
            map_mean,
            map_std,
            corloc_mean,
            corloc_std,
            per_seed_map: mspld_maps,
        });
    }
    Ok(ComparisonReport { seeds, methods })
}

pub fn cmd_compare(
    config_path: &Path,
    data_path: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.compare_seeds = vec![seed];
    }
    let dataset = load_dataset(data_path)?;
    let report = run_comparison(&config, &dataset)?;

    fs::create_dir_all(out).map_err(io_err(out))?;
    let json_path = out.join("comparison.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(io_err(&json_path))?;
    let csv_path = out.join("comparison.csv");
    let mut file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    writeln!(file, "method,map_mean,map_std,corloc_mean,corloc_std").map_err(io_err(&csv_path))?;
    for m in &report.methods {
        writeln!(
            file,
            "{},{},{},{},{}",
            m.method, m.map_mean, m.map_std, m.corloc_mean, m.corloc_std
        )
        .map_err(io_err(&csv_path))?;
    }

    println!("{:<28} {:>16} {:>16}", "method", "mAP", "CorLoc");
    for m in &report.methods {
        println!(
            "{:<28} {:>7.4} ±{:>6.4} {:>7.4} ±{:>6.4}",
            m.method, m.map_mean, m.map_std, m.corloc_mean, m.corloc_std
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct OracleReport {
    total: usize,
    passed: usize,
    failures: Vec<OracleFailure>,
}

#[derive(Debug, Serialize)]
struct OracleFailure {
    index: u64,
    selector_objective: f64,
    oracle_objective: f64,
}

pub fn cmd_oracle_check(
    n_instances: u64,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let outcomes = equivalence_check(n_instances, seed);
    let failures: Vec<OracleFailure> = outcomes
        .iter()
        .filter(|o| !o.exact())
        .map(|o| OracleFailure {
            index: o.index,
            selector_objective: o.selector_objective,
            oracle_objective: o.oracle_objective,
        })
        .collect();
    let report = OracleReport {
        total: outcomes.len(),
        passed: outcomes.len() - failures.len(),
        failures,
    };
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report).expect("report serializes"))
            .map_err(io_err(path))?;
    }
    println!("{}/{} exact", report.passed, report.total);
    for f in &report.failures {
        println!(
            "  instance {}: selector {} vs oracle {}",
            f.index, f.selector_objective, f.oracle_objective
        );
    }
    if report.passed != report.total {
        return Err(CliError::OracleMismatch { passed: report.passed, total: report.total });
    }
    Ok(())
}

/// One image's detections in the external detections-file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: u64,
    pub boxes: Vec<ScoredBox>,
}

pub fn cmd_eval(
    dets_path: &Path,
    data_path: &Path,
    out: Option<&Path>,
    ap_mode: &str,
) -> Result<(), CliError> {
    let mode = match ap_mode {
        "eleven_point" => ApMode::ElevenPoint,
        "all_points" => ApMode::AllPoints,
        other => {
            return Err(CliError::Invalid(format!(
                "unknown ap mode {other:?} (expected eleven_point | all_points)"
            )))
        }
    };
    let dataset = load_dataset(data_path)?;
    let text = fs::read_to_string(dets_path).map_err(io_err(dets_path))?;
    let detections: Vec<ImageDetections> = serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("bad detections file: {e}")))?;

    let known: BTreeMap<u64, &crate::data::ImageRecord> =
        dataset.images.iter().map(|im| (im.id, im)).collect();
    let mut images = Vec::with_capacity(detections.len());
    let mut quality_pool = Vec::with_capacity(detections.len());
    for entry in &detections {
        let record = known.get(&entry.image_id).ok_or_else(|| {
            CliError::Invalid(format!("detections reference unknown image {}", entry.image_id))
        })?;
        images.push(ImageEval {
            detections: entry.boxes.clone(),
            ground_truth: record.objects.clone(),
        });
        quality_pool.push(PseudoQualityInput {
            image_id: entry.image_id,
            selected: !entry.boxes.is_empty(),
            pseudo_boxes: entry
                .boxes
                .iter()
                .map(|b| crate::data::Annotation { bbox: b.bbox, class_id: b.class_id })
                .collect(),
            ground_truth: record.objects.clone(),
        });
    }

    let ap = average_precision(&images, dataset.num_classes, 0.5, mode);
    let loc = corloc(&images, dataset.num_classes);
    let quality = pseudo_quality(&quality_pool);
    let rows: Vec<ClassMetricsRow> = (0..dataset.num_classes)
        .map(|class_id| {
            let class_pool: Vec<PseudoQualityInput> = quality_pool
                .iter()
                .map(|input| PseudoQualityInput {
                    image_id: input.image_id,
                    selected: input.selected
                        && input.pseudo_boxes.iter().any(|b| b.class_id == class_id),
                    pseudo_boxes: input
                        .pseudo_boxes
                        .iter()
                        .filter(|b| b.class_id == class_id)
                        .copied()
                        .collect(),
                    ground_truth: input
                        .ground_truth
                        .iter()
                        .filter(|g| g.class_id == class_id)
                        .copied()
                        .collect(),
                })
                .collect();
            let q = pseudo_quality(&class_pool);
            ClassMetricsRow {
                class_id,
                ap: ap.per_class[class_id],
                corloc: loc.per_class[class_id],
                img_p: q.img_precision,
                img_r: q.img_recall,
                ins_p: q.ins_precision,
                ins_r: q.ins_recall,
            }
        })
        .collect();

    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
        let json = serde_json::json!({
            "mean_ap": ap.mean,
            "mean_corloc": loc.mean,
            "skipped_classes": ap.skipped_classes,
            "quality": quality,
        });
        let path = dir.join("metrics.json");
        fs::write(&path, serde_json::to_string_pretty(&json).expect("serializes"))
            .map_err(io_err(&path))?;
    }
    println!(
        "mAP {} | CorLoc {} | ins precision {:.4} recall {:.4}",
        ap.mean.map_or("n/a".into(), |v| format!("{:.4}", v)),
        loc.mean.map_or("n/a".into(), |v| format!("{:.4}", v)),
        quality.ins_precision,
        quality.ins_recall
    );
    Ok(())
}
