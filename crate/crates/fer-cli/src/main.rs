//! `fer`: command-line front end for the emotion recognition pipeline.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! verification error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fer_core::augment::{
    compute_plan, default_templates, emit_manifest, merge_and_verify, run_generation,
    AugmentationPlan, AugmentationScheme, CommandGenerator, Generator, PromptManifest,
    StubGenerator,
};
use fer_core::data::{
    load_fer2013_csv, load_image_folder, LabeledDataset, Origin, Split, SplitSpec, NUM_CLASSES,
};
use fer_core::error::Error;
use fer_core::eval::{
    comparison_table, emit_confusion_csv, emit_report_json, evaluate, parse_report_json,
};
use fer_core::gradcheck;
use fer_core::model::{load_checkpoint, ModelConfig, ResEmoteNet};
use fer_core::train::{fit, TrainConfig};

#[derive(Parser)]
#[command(name = "fer", version, about = "Facial emotion recognition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a class-rebalancing plan and its prompt manifest.
    Plan(PlanArgs),
    /// Run a prompt manifest through an image generator.
    Generate(GenerateArgs),
    /// Train a model, optionally merging synthetic images first.
    Train(TrainArgs),
    /// Evaluate a checkpoint or compare existing reports.
    Eval(EvalArgs),
    /// Verify every backward pass with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Per-class training counts `a,b,c,d,e,f,g` in class-code order.
    #[arg(long, conflicts_with = "csv")]
    counts: Option<String>,
    /// FER2013-style CSV; the plan is computed on its training split.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// `equalize` or `fixed:<n>`.
    #[arg(long, default_value = "equalize")]
    scheme: String,
    /// Dataset label recorded in the plan and manifest.
    #[arg(long, default_value = "dataset")]
    dataset: String,
    /// Base seed for the per-prompt generation seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Prompt manifest produced by `fer plan`.
    #[arg(long)]
    manifest: PathBuf,
    /// `stub` or `command:<program and args>`.
    #[arg(long, default_value = "stub")]
    generator: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// FER2013-style CSV with train and validation splits.
    #[arg(long)]
    csv: PathBuf,
    /// Directory of generated images to merge into the training split.
    #[arg(long, requires = "plan")]
    synth_dir: Option<PathBuf>,
    /// Plan used to verify per-class counts after the merge.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Training configuration JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model configuration JSON; missing fields take defaults.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Zero recorded wall-clock times so reports are byte-reproducible.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "compare")]
    checkpoint: Option<PathBuf>,
    /// Model configuration JSON matching the checkpoint.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// FER2013-style CSV; evaluation runs on its test split.
    #[arg(long, conflicts_with = "image_dir")]
    csv: Option<PathBuf>,
    /// Class-per-directory image tree to evaluate instead of a CSV.
    #[arg(long)]
    image_dir: Option<PathBuf>,
    /// Augmentation tag recorded in the report (`Original`, `Aug1`, ...).
    #[arg(long, default_value = "Original")]
    augmentation: String,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Existing report JSONs to merge into a comparison table.
    #[arg(long, num_args = 1..)]
    compare: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random seeds per layer check.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with exit 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ShapeMismatch { .. } => 1,
        Error::NonFinite(_) | Error::Diverged { .. } => 3,
        _ => 2,
    }
}

type Result<T> = std::result::Result<T, Error>;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Record of what a run did, written next to its outputs.
#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    inputs: Vec<String>,
    config: C,
}

fn parse_counts(s: &str) -> Result<[usize; NUM_CLASSES]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != NUM_CLASSES {
        return Err(Error::Config(format!(
            "--counts needs {NUM_CLASSES} comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut out = [0usize; NUM_CLASSES];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad count `{p}`")))?;
    }
    Ok(out)
}

fn train_split_histogram(csv: &Path) -> Result<[usize; NUM_CLASSES]> {
    let splits = load_fer2013_csv(csv, &SplitSpec::default())?;
    let train = splits
        .get(&Split::Train)
        .ok_or(Error::EmptyDataset)?;
    Ok(train.class_histogram())
}

fn cmd_plan(args: PlanArgs) -> Result<ExitCode> {
    let histogram = match (&args.counts, &args.csv) {
        (Some(counts), _) => parse_counts(counts)?,
        (None, Some(csv)) => train_split_histogram(csv)?,
        (None, None) => {
            return Err(Error::Config("one of --counts or --csv is required".into()))
        }
    };
    let scheme = AugmentationScheme::parse(&args.scheme)?;
    let plan = compute_plan(&histogram, scheme, args.dataset.clone())?;
    let manifest = emit_manifest(&plan, &default_templates(), args.seed)?;

    ensure_dir(&args.out_dir)?;
    write_json(&plan, &args.out_dir.join("plan.json"))?;
    write_json(&manifest, &args.out_dir.join("manifest.json"))?;
    write_json(
        &RunManifest {
            command: "plan",
            inputs: args.csv.iter().map(|p| p.display().to_string()).collect(),
            config: &plan,
        },
        &args.out_dir.join("run-manifest.json"),
    )?;

    println!("plan for `{}` ({:?})", plan.dataset, plan.scheme);
    for class in &plan.classes {
        println!(
            "  {:<9} {:>6} -> {:>6} (deficit {})",
            class.class.name(),
            class.original,
            class.target,
            class.deficit
        );
    }
    println!("total prompts: {}", manifest.entries.len());
    Ok(ExitCode::SUCCESS)
}

fn make_generator(spec: &str) -> Result<Box<dyn Generator>> {
    if spec == "stub" {
        return Ok(Box::new(StubGenerator));
    }
    if let Some(cmd) = spec.strip_prefix("command:") {
        return Ok(Box::new(CommandGenerator::parse(cmd)?));
    }
    Err(Error::Config(format!(
        "unknown generator `{spec}`, expected `stub` or `command:<program>`"
    )))
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode> {
    let manifest: PromptManifest = read_json(&args.manifest)?;
    let generator = make_generator(&args.generator)?;
    ensure_dir(&args.out_dir)?;
    let images_dir = args.out_dir.join("images");
    let report = run_generation(&manifest, generator.as_ref(), &images_dir)?;
    write_json(&report, &args.out_dir.join("generation-report.json"))?;
    write_json(
        &RunManifest {
            command: "generate",
            inputs: vec![args.manifest.display().to_string()],
            config: &args.generator,
        },
        &args.out_dir.join("run-manifest.json"),
    )?;

    for (class, r) in &report.classes {
        println!(
            "{class:<9} requested {:>5}  ok {:>5}  skipped {:>5}  failed {:>5}",
            r.requested,
            r.succeeded,
            r.skipped,
            r.failed.len()
        );
    }
    if report.all_failed() {
        return Err(Error::Generator("every generation request failed".into()));
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config_or_default<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let mut train_config: TrainConfig = load_config_or_default(&args.config)?;
    if let Some(v) = args.learning_rate {
        train_config.learning_rate = v;
    }
    if let Some(v) = args.max_epochs {
        train_config.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        train_config.batch_size = v;
    }
    if let Some(v) = args.seed {
        train_config.seed = v;
    }
    if args.deterministic {
        train_config.deterministic = true;
    }
    ensure_dir(&args.out_dir)?;
    train_config.checkpoint_dir = Some(args.out_dir.clone());
    train_config.validate()?;
    let model_config: ModelConfig = load_config_or_default(&args.model_config)?;
    model_config.validate()?;

    let mut splits = load_fer2013_csv(&args.csv, &SplitSpec::default())?;
    let mut train_ds = splits.remove(&Split::Train).ok_or(Error::EmptyDataset)?;
    let val_ds = splits.remove(&Split::Val).ok_or(Error::EmptyDataset)?;

    if let (Some(synth_dir), Some(plan_path)) = (&args.synth_dir, &args.plan) {
        let plan: AugmentationPlan = read_json(plan_path)?;
        train_ds = merge_and_verify(&train_ds, synth_dir, &plan)?;
    }

    let mut model = ResEmoteNet::build(model_config.clone())?;
    println!(
        "training on {} samples ({} validation), {} parameters",
        train_ds.len(),
        val_ds.len(),
        model.num_parameters()
    );
    let report = fit(&mut model, &train_ds, &val_ds, &train_config)?;
    write_json(&report, &args.out_dir.join("train-report.json"))?;
    write_json(
        &RunManifest {
            command: "train",
            inputs: vec![args.csv.display().to_string()],
            config: (&train_config, &model_config),
        },
        &args.out_dir.join("run-manifest.json"),
    )?;

    let last = report.epochs.last().expect("at least one epoch");
    println!(
        "stopped after epoch {} ({:?}); best val loss {:.6} at epoch {}",
        last.epoch, report.stop_reason, report.best_val_loss, report.best_epoch
    );
    println!("final val accuracy {:.2}%", 100.0 * last.val_accuracy);
    Ok(ExitCode::SUCCESS)
}

fn load_eval_dataset(args: &EvalArgs) -> Result<LabeledDataset> {
    match (&args.csv, &args.image_dir) {
        (Some(csv), _) => {
            let mut splits = load_fer2013_csv(csv, &SplitSpec::default())?;
            splits.remove(&Split::Test).ok_or(Error::EmptyDataset)
        }
        (None, Some(dir)) => load_image_folder(dir, Split::Test, Origin::Real),
        (None, None) => Err(Error::Config(
            "one of --csv or --image-dir is required unless only --compare is used".into(),
        )),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    ensure_dir(&args.out_dir)?;
    let mut reports = Vec::new();

    if let Some(checkpoint) = &args.checkpoint {
        let model_config: ModelConfig = load_config_or_default(&args.model_config)?;
        let mut model = load_checkpoint(checkpoint, model_config)?;
        let test_ds = load_eval_dataset(&args)?;
        let report = evaluate(
            &mut model,
            &test_ds,
            args.batch_size,
            args.augmentation.clone(),
            checkpoint.display().to_string(),
        )?;
        emit_report_json(&report, &args.out_dir.join("report.json"))?;
        emit_confusion_csv(&report.confusion, &args.out_dir.join("confusion.csv"))?;
        println!(
            "{}: overall accuracy {:.2}% over {} samples",
            report.dataset, report.overall_accuracy, report.sample_count
        );
        reports.push(report);
    }

    for path in &args.compare {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        reports.push(parse_report_json(&text)?);
    }
    if reports.is_empty() {
        return Err(Error::Config("nothing to evaluate or compare".into()));
    }
    if reports.len() > 1 || !args.compare.is_empty() {
        let (text, csv) = comparison_table(&reports);
        print!("{text}");
        let path = args.out_dir.join("comparison.csv");
        fs::write(&path, csv).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    write_json(
        &RunManifest {
            command: "eval",
            inputs: args.compare.iter().map(|p| p.display().to_string()).collect(),
            config: &args.augmentation,
        },
        &args.out_dir.join("run-manifest.json"),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (1..=args.seeds).collect();
    let checks = gradcheck::run_all(&seeds)?;
    let mut ok = true;
    for check in &checks {
        println!(
            "{:<22} max rel err {:>10.3e} (tolerance {:>7.0e})  {}",
            check.name,
            check.max_rel_err,
            check.tolerance,
            if check.passed() { "ok" } else { "FAIL" }
        );
        ok &= check.passed();
    }
    if ok {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check exceeded tolerance");
        Ok(ExitCode::from(3))
    }
}
