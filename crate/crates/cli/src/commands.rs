use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use aigi_core::classifier::{classify, predictions_table};
use aigi_core::data::{
    is_image, load_manifest, preprocess_file, AugmentConfig, DatasetManifest, ImageLoader, MissingFilePolicy, Split,
};
use aigi_core::dire::{calibrate_threshold, compute_dire, dire_score, scores_table, ToyDiffusion};
use aigi_core::encoder::checkpoint::{load_checkpoint, save_checkpoint};
use aigi_core::encoder::{load_backbone, CheckpointAdapter};
use aigi_core::eval::{parse_report_csv, render_reports, report_from_predictions, PredictionFile, ReportFormat};
use aigi_core::fixtures::{self, REGISTRY_FILE};
use aigi_core::records::RecordTable;
use aigi_core::{builtin_registry, BackboneSpec, EvalReport, Normalization, Registry, Verdict};
use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use walkdir::WalkDir;

use crate::config::{require, set, set_opt, DireRun, EvaluateRun, FileConfig, PredictRun, ReportRun, TrainRun};
use crate::{Common, Usage};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (path, abbreviation, split).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Class registry; defaults to registry.tsv beside the manifest, else the built-in classes.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    backbone: Option<String>,
    /// Initial weights for the backbone.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Prefix every caption with "an image of a".
    #[arg(long)]
    prompt_prefix: bool,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Count same-class pairs in a batch as positives.
    #[arg(long)]
    multi_positive: bool,
    /// Random blur / JPEG augmentation with default settings.
    #[arg(long)]
    augment: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    manifest: Option<PathBuf>,
    /// Image file or directory (searched recursively).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Restrict a manifest to one split.
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Prediction or score file; repeat to compare methods.
    #[arg(long = "predictions", num_args = 1..)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct DireArgs {
    /// Diffusion oracle; "toy" is built in.
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    oracle_seed: Option<u64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long, conflicts_with = "input")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    split: Option<Split>,
    /// Fixed threshold; otherwise calibrated from manifest labels.
    #[arg(long)]
    threshold: Option<f64>,
    /// Write one grayscale map image per input under maps/.
    #[arg(long)]
    save_maps: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.csv files from earlier evaluations.
    #[arg(long = "reports", num_args = 1..)]
    reports: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FixtureKind {
    /// Three texture classes with train and test splits.
    Toy,
    /// Toy diffusion samples against uniform noise.
    Dire,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    kind: FixtureKind,
    #[arg(long, default_value_t = 100)]
    train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
    /// Images per class for the dire fixture.
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    oracle_seed: u64,
}

fn prepare_run_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating run directory {}", dir.display()))
}

/// Explicit registry, else registry.tsv next to the manifest, else the
/// built-in classes.
fn resolve_registry(explicit: Option<&Path>, manifest: Option<&Path>) -> Result<Registry> {
    if let Some(p) = explicit {
        return Registry::load(p).with_context(|| format!("loading registry {}", p.display()));
    }
    if let Some(sibling) = manifest.and_then(Path::parent).map(|d| d.join(REGISTRY_FILE)) {
        if sibling.is_file() {
            log::info!("using registry {}", sibling.display());
            return Registry::load(&sibling).with_context(|| format!("loading registry {}", sibling.display()));
        }
    }
    Ok(builtin_registry())
}

struct Input {
    name: String,
    path: PathBuf,
    class_id: Option<usize>,
}

fn manifest_inputs(manifest: &DatasetManifest, split: Option<Split>) -> Vec<Input> {
    manifest
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|r| Input {
            name: r.path.to_string_lossy().into_owned(),
            path: manifest.resolve(r),
            class_id: Some(r.class_id),
        })
        .collect()
}

fn path_inputs(input: &Path) -> Result<Vec<Input>> {
    if input.is_file() {
        let name = input
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        return Ok(vec![Input {
            name,
            path: input.to_path_buf(),
            class_id: None,
        }]);
    }
    if !input.is_dir() {
        bail!(aigi_core::Error::MissingFile(input.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(input).sort_by_file_name() {
        let entry = entry.with_context(|| format!("reading {}", input.display()))?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            files.push(entry.into_path());
        }
    }
    Ok(files
        .into_iter()
        .map(|p| Input {
            name: p.strip_prefix(input).unwrap_or(&p).to_string_lossy().into_owned(),
            path: p,
            class_id: None,
        })
        .collect())
}

fn gather_inputs(
    manifest: Option<&Path>,
    input: Option<&Path>,
    split: Option<Split>,
    registry: &Registry,
) -> Result<Vec<Input>> {
    let inputs = match (manifest, input) {
        (Some(m), _) => {
            let manifest = load_manifest(m, registry, MissingFilePolicy::Fail)
                .with_context(|| format!("loading manifest {}", m.display()))?;
            manifest_inputs(&manifest, split)
        }
        (None, Some(i)) => path_inputs(i)?,
        (None, None) => return Err(Usage("one of --manifest or --input is required".into()).into()),
    };
    if inputs.is_empty() {
        bail!("no input images found");
    }
    Ok(inputs)
}

pub fn train(args: TrainArgs, common: &Common) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let mut run = file.train.unwrap_or_default();
    set_opt(&mut run.manifest, args.manifest);
    set_opt(&mut run.registry, args.registry);
    set(&mut run.backbone, args.backbone);
    set_opt(&mut run.weights, args.weights);
    run.prompt_prefix |= args.prompt_prefix;
    set(&mut run.resolution, args.resolution);
    set(&mut run.embed_dim, args.embed_dim);
    let fit = &mut run.fit;
    set(&mut fit.epochs, args.epochs);
    set(&mut fit.batch_size, args.batch_size);
    set(&mut fit.learning_rate, args.learning_rate);
    set(&mut fit.beta1, args.beta1);
    set(&mut fit.beta2, args.beta2);
    set(&mut fit.eps, args.eps);
    set(&mut fit.weight_decay, args.weight_decay);
    set(&mut fit.seed, args.seed);
    fit.multi_positive |= args.multi_positive;
    if args.augment && fit.augment.is_none() {
        fit.augment = Some(AugmentConfig::default());
    }
    run_train(run, &common.run_dir)
}

fn run_train(run: TrainRun, run_dir: &Path) -> Result<()> {
    let manifest_path = require(&run.manifest, "manifest")?.clone();
    run.fit.validate()?;
    let spec = BackboneSpec {
        name: run.backbone.clone(),
        resolution: run.resolution,
        embed_dim: run.embed_dim,
        ..Default::default()
    };
    spec.validate()?;
    prepare_run_dir(run_dir)?;
    FileConfig {
        train: Some(run.clone()),
        ..Default::default()
    }
    .snapshot(run_dir)?;

    let registry =
        resolve_registry(run.registry.as_deref(), Some(&manifest_path))?.with_prompt_prefix(run.prompt_prefix);
    let manifest = load_manifest(&manifest_path, &registry, MissingFilePolicy::Fail)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    let bundle = load_backbone(
        &run.backbone,
        run.weights.as_deref(),
        &[&CheckpointAdapter],
        spec,
        &registry,
        run.fit.seed,
    )?;
    let loader = ImageLoader::new(bundle.resolution(), *bundle.normalization()).with_env_cache();

    let checkpoints = run_dir.join("checkpoints");
    fs::create_dir_all(&checkpoints)?;
    let outcome = aigi_core::fit(&run.fit, &manifest, &registry, bundle, &loader, |state| {
        let path = checkpoints.join(format!("epoch-{:02}.safetensors", state.epoch + 1));
        let extra = HashMap::from([("epoch".to_string(), (state.epoch + 1).to_string())]);
        save_checkpoint(&path, &state.bundle, &registry, extra)
    })?;

    let mut history = RecordTable::new(&["epoch", "step", "loss"]);
    for r in &outcome.history {
        history.push(vec![(r.epoch + 1).to_string(), r.step.to_string(), r.loss.to_string()]);
    }
    history.write_path(&run_dir.join("loss_history.tsv"))?;
    let final_path = run_dir.join("model.safetensors");
    save_checkpoint(&final_path, &outcome.bundle, &registry, HashMap::new())?;
    log::info!("wrote {}", final_path.display());
    Ok(())
}

pub fn predict(args: PredictArgs, common: &Common) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let mut run = file.predict.unwrap_or_default();
    set_opt(&mut run.checkpoint, args.checkpoint);
    if args.manifest.is_some() || args.input.is_some() {
        run.manifest = args.manifest;
        run.input = args.input;
    }
    set_opt(&mut run.split, args.split);
    set(&mut run.batch_size, args.batch_size);
    run_predict(run, &common.run_dir)
}

fn run_predict(run: PredictRun, run_dir: &Path) -> Result<()> {
    let checkpoint = require(&run.checkpoint, "checkpoint")?.clone();
    if run.manifest.is_none() && run.input.is_none() {
        return Err(Usage("one of --manifest or --input is required".into()).into());
    }
    if run.batch_size == 0 {
        return Err(Usage("--batch-size must be at least 1".into()).into());
    }
    prepare_run_dir(run_dir)?;
    FileConfig {
        predict: Some(run.clone()),
        ..Default::default()
    }
    .snapshot(run_dir)?;

    let (bundle, meta) =
        load_checkpoint(&checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let registry = meta.registry()?;
    let inputs = gather_inputs(run.manifest.as_deref(), run.input.as_deref(), run.split, &registry)?;

    let mut names = Vec::with_capacity(inputs.len());
    let mut predictions = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(run.batch_size) {
        let images = chunk
            .iter()
            .map(|i| preprocess_file(&i.path, bundle.resolution(), bundle.normalization()))
            .collect::<aigi_core::Result<Vec<_>>>()?;
        predictions.extend(classify(&bundle, &registry, &images)?);
        names.extend(chunk.iter().map(|i| i.name.clone()));
    }
    let out = run_dir.join("predictions.tsv");
    predictions_table(&names, &predictions, &registry)?.write_path(&out)?;
    log::info!("wrote {} predictions to {}", predictions.len(), out.display());
    Ok(())
}

pub fn evaluate(args: EvaluateArgs, common: &Common) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let mut run = file.evaluate.unwrap_or_default();
    set_opt(&mut run.manifest, args.manifest);
    set_opt(&mut run.registry, args.registry);
    if !args.predictions.is_empty() {
        run.predictions = args.predictions;
    }
    set_opt(&mut run.split, args.split);
    run_evaluate(run, &common.run_dir)
}

fn write_reports(reports: &[EvalReport], run_dir: &Path) -> Result<()> {
    fs::write(run_dir.join("report.csv"), render_reports(reports, ReportFormat::Csv)?)?;
    fs::write(
        run_dir.join("report.md"),
        render_reports(reports, ReportFormat::Markdown)?,
    )?;
    for r in reports {
        if let Some(acc) = r.binary.accuracy() {
            log::info!("{}: real/fake accuracy {acc:.4}", r.method);
        }
        if let Some(acc) = r.multiclass.as_ref().and_then(|m| m.overall_accuracy) {
            log::info!("{}: multi-class accuracy {acc:.4}", r.method);
        }
    }
    Ok(())
}

/// Appends the file stem to repeated method labels so columns stay distinct.
fn distinct_methods(files: &mut [(PathBuf, PredictionFile)]) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (_, f) in files.iter() {
        *counts.entry(f.method.clone()).or_default() += 1;
    }
    for (path, f) in files.iter_mut() {
        if counts[&f.method] > 1 {
            let stem = path
                .file_stem()
                .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let parent = path
                .parent()
                .and_then(Path::file_name)
                .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            f.method = format!("{} ({parent}/{stem})", f.method);
        }
    }
}

fn run_evaluate(run: EvaluateRun, run_dir: &Path) -> Result<()> {
    let manifest_path = require(&run.manifest, "manifest")?.clone();
    if run.predictions.is_empty() {
        return Err(Usage("missing required setting --predictions".into()).into());
    }
    prepare_run_dir(run_dir)?;
    FileConfig {
        evaluate: Some(run.clone()),
        ..Default::default()
    }
    .snapshot(run_dir)?;

    let registry = resolve_registry(run.registry.as_deref(), Some(&manifest_path))?;
    let manifest = load_manifest(&manifest_path, &registry, MissingFilePolicy::Fail)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    let mut files = run
        .predictions
        .iter()
        .map(|p| {
            PredictionFile::read(p)
                .map(|f| (p.clone(), f))
                .with_context(|| format!("reading predictions {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    distinct_methods(&mut files);
    let reports = files
        .iter()
        .map(|(p, f)| {
            report_from_predictions(f, &manifest, &registry, run.split)
                .with_context(|| format!("matching {} against the manifest", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    write_reports(&reports, run_dir)
}

pub fn dire(args: DireArgs, common: &Common) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let mut run = file.dire.unwrap_or_default();
    set_opt(&mut run.oracle, args.oracle);
    set(&mut run.steps, args.steps);
    set(&mut run.oracle_seed, args.oracle_seed);
    set(&mut run.resolution, args.resolution);
    if args.manifest.is_some() || args.input.is_some() {
        run.manifest = args.manifest;
        run.input = args.input;
    }
    set_opt(&mut run.registry, args.registry);
    set_opt(&mut run.split, args.split);
    set_opt(&mut run.threshold, args.threshold);
    run.save_maps |= args.save_maps;
    run_dire(run, &common.run_dir)
}

fn map_file_name(name: &str) -> String {
    let stem = name.rsplit_once('.').map_or(name, |(s, _)| s);
    format!("{}.png", stem.replace(['/', '\\'], "__"))
}

fn run_dire(run: DireRun, run_dir: &Path) -> Result<()> {
    let oracle_name = require(&run.oracle, "oracle")?.clone();
    if run.manifest.is_none() && run.input.is_none() {
        return Err(Usage("one of --manifest or --input is required".into()).into());
    }
    prepare_run_dir(run_dir)?;
    FileConfig {
        dire: Some(run.clone()),
        ..Default::default()
    }
    .snapshot(run_dir)?;

    let oracle = match oracle_name.as_str() {
        "toy" => ToyDiffusion::new(run.resolution, run.steps, run.oracle_seed)?,
        other => bail!(aigi_core::Error::Oracle(format!("no oracle named {other:?}"))),
    };
    let registry = resolve_registry(run.registry.as_deref(), run.manifest.as_deref())?;
    let inputs = gather_inputs(run.manifest.as_deref(), run.input.as_deref(), run.split, &registry)?;
    let maps_dir = run_dir.join("maps");
    if run.save_maps {
        fs::create_dir_all(&maps_dir)?;
    }

    let norm = Normalization::HALF;
    let mut scores = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let image = preprocess_file(&input.path, run.resolution, &norm)?;
        let map = compute_dire(&image, &oracle)?;
        if run.save_maps {
            map.save_png(&maps_dir.join(map_file_name(&input.name)), 2.0)?;
        }
        scores.push(dire_score(&map));
    }

    let labels: Option<Vec<usize>> = inputs.iter().map(|i| i.class_id).collect();
    let mut threshold = run.threshold;
    if threshold.is_none() {
        if let Some(ids) = &labels {
            let verdicts = ids
                .iter()
                .map(|&c| registry.verdict(c))
                .collect::<aigi_core::Result<Vec<_>>>()?;
            let cal = calibrate_threshold(&scores, &verdicts)?;
            log::info!(
                "calibrated threshold {} (balanced accuracy {:.4})",
                cal.threshold,
                cal.balanced_accuracy
            );
            threshold = Some(cal.threshold);
        }
    }
    let names: Vec<String> = inputs.iter().map(|i| i.name.clone()).collect();
    scores_table(&names, &scores, threshold)?.write_path(&run_dir.join("scores.tsv"))?;

    if let (Some(t), Some(ids)) = (threshold, &labels) {
        let verdicts: Vec<Verdict> = scores
            .iter()
            .map(|&s| aigi_core::dire::verdict_for_score(s, t))
            .collect();
        let report = EvalReport::from_verdicts(aigi_core::dire::METHOD, &registry, ids, &verdicts)?;
        write_reports(&[report], run_dir)?;
    }
    Ok(())
}

pub fn report(args: ReportArgs, common: &Common) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let mut run = file.report.unwrap_or_default();
    if !args.reports.is_empty() {
        run.reports = args.reports;
    }
    run_report(run, &common.run_dir)
}

fn run_report(run: ReportRun, run_dir: &Path) -> Result<()> {
    if run.reports.is_empty() {
        return Err(Usage("missing required setting --reports".into()).into());
    }
    prepare_run_dir(run_dir)?;
    FileConfig {
        report: Some(run.clone()),
        ..Default::default()
    }
    .snapshot(run_dir)?;
    let mut reports = Vec::new();
    for path in &run.reports {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        reports.extend(parse_report_csv(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    write_reports(&reports, run_dir)
}

pub fn make_fixtures(args: FixtureArgs) -> Result<()> {
    let paths = match args.kind {
        FixtureKind::Toy => fixtures::write_toy_dataset(
            &args.out,
            args.train_per_class,
            args.test_per_class,
            args.resolution,
            args.seed,
        )?,
        FixtureKind::Dire => {
            let oracle = ToyDiffusion::new(args.resolution, args.steps, args.oracle_seed)?;
            fixtures::write_dire_dataset(&args.out, &oracle, args.count, args.seed)?
        }
    };
    log::info!("wrote {} and {}", paths.manifest.display(), paths.registry.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_names_are_flat() {
        assert_eq!(map_file_name("TOY/0001.png"), "TOY__0001.png");
        assert_eq!(map_file_name("plain"), "plain.png");
    }
}
