//! Command-line front end: `train`, `evaluate`, `predict`, `gradcheck`,
//! `synth`.

mod config;
mod report;

pub use config::{ExperimentConfig, SplitChoice, CONFIG_KEYS};
pub use report::{
    fmt_value, read_report, write_epoch_log, write_report, ReportRow, TestFields, EPOCH_LOG_HEADER, REPORT_HEADER,
    TEST_HEADER,
};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    decode_image_file, load_dataset, make_synthetic, split_dataset, write_lct1_dataset, write_manifest, Dataset,
    DatasetLayout, ImageOptions, SplitSpec, Splits,
};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckConfig};
use crate::layers::Mode;
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, SequentialModel};
use crate::tensor::Tensor;
use crate::train::{checkpoint_file_name, evaluate, train};

pub const THREADS_ENV: &str = "LCDL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lcdl", version, about = "Chest-CT CNN classifier: train, evaluate, predict, verify")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the proposed model and write checkpoints and reports.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset directory.
    Evaluate(EvaluateArgs),
    /// Classify one image.
    Predict(PredictArgs),
    /// Finite-difference check of every layer's backward pass.
    Gradcheck(GradcheckArgs),
    /// Write the synthetic quadrant dataset as `.lct1` files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.lr=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory-per-class root; for a pre-split root the `test/` part is used.
    #[arg(long)]
    pub data: PathBuf,
    /// Expected input resolution; must match the checkpoint.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Print unrounded values.
    #[arg(long)]
    pub full_precision: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Write a `train/valid/test` layout with these fractions, e.g. `0.7,0.15,0.15`.
    #[arg(long)]
    pub split: Option<String>,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match configure_threads().and_then(|()| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Sizes the global worker pool from `LCDL_THREADS` (default 1).
pub fn configure_threads() -> Result<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} must be a positive integer")))?,
        Err(_) => 1,
    };
    // A pool that already exists (repeated calls in one process) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Loads and splits the data named by `cfg`.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Splits> {
    let root = cfg.data_root.as_ref().ok_or_else(|| Error::Config("data.root is required".into()))?;
    let opts = ImageOptions {
        resolution: (cfg.resolution, cfg.resolution),
        channels: cfg.input_channels,
    };
    match (load_dataset(root, opts)?, cfg.split) {
        (DatasetLayout::PreSplit { train, val, test }, SplitChoice::Auto | SplitChoice::PreSplit) => {
            Ok(Splits { train, val, test })
        }
        (DatasetLayout::PreSplit { .. }, SplitChoice::Fractions(_)) => Err(Error::Config(format!(
            "data.split: {} is already split into train/valid/test; use auto or pre-split",
            root.display()
        ))),
        (DatasetLayout::Flat(_), SplitChoice::PreSplit) => Err(Error::Data(format!(
            "{}: data.split = pre-split but train/, valid/ and test/ are not all present",
            root.display()
        ))),
        (DatasetLayout::Flat(ds), SplitChoice::Auto) => split_dataset(&ds, &cfg.split_spec(SplitChoice::DEFAULT_FRACTIONS)),
        (DatasetLayout::Flat(ds), SplitChoice::Fractions(f)) => split_dataset(&ds, &cfg.split_spec(f)),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    let splits = prepare_data(&cfg)?;

    let model_cfg = ModelConfig {
        input_channels: cfg.input_channels,
        input_height: cfg.resolution,
        input_width: cfg.resolution,
        num_classes: splits.train.num_classes(),
        dropout: cfg.dropout,
        class_names: splits.train.class_names().to_vec(),
        ..ModelConfig::default()
    };
    let model = SequentialModel::<f32>::new(model_cfg, cfg.seed)?;

    let out = &cfg.output_dir;
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    fs::write(out.join("config.resolved"), cfg.to_text()).map_err(|e| Error::io(out.join("config.resolved"), e))?;
    write_manifest(
        out.join("manifest.csv"),
        &[("train", &splits.train), ("val", &splits.val), ("test", &splits.test)],
    )?;
    println!(
        "data: {} train / {} val / {} test, classes {:?}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        splits.train.class_names()
    );

    let outcome = train(model, &splits.train, &splits.val, &cfg.train, Some(&ckpt_dir))?;
    write_epoch_log(&out.join("epoch_log.csv"), &outcome.logs)?;
    save_checkpoint(&outcome.model, out.join("final.lcdl"))?;

    let mut rows = Vec::new();
    for path in &outcome.checkpoint_paths {
        let snapshot = load_checkpoint::<f32>(path)?;
        let epoch = outcome.snapshots[rows.len()].0;
        let eval = evaluate(&snapshot, &splits.test, cfg.train.batch_size)?;
        let row = ReportRow::new(&cfg.model_name, &outcome.logs[epoch - 1], TestFields::from_evaluation(&eval));
        println!("{}", row.record(false).join(","));
        rows.push(row);
    }
    write_report(&out.join("report.csv"), &rows, false)?;
    if cfg.full_precision {
        write_report(&out.join("report_full.csv"), &rows, true)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn checkpoint_input(model: &SequentialModel<f32>) -> ImageOptions {
    let c = model.config();
    ImageOptions {
        resolution: (c.input_height, c.input_width),
        channels: c.input_channels,
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut model = load_checkpoint::<f32>(&args.checkpoint)?;
    model.set_mode(Mode::Eval);
    let opts = checkpoint_input(&model);
    if let Some(r) = args.resolution {
        if (r, r) != opts.resolution {
            return Err(Error::Config(format!(
                "checkpoint expects {}x{} input, --resolution {r} given",
                opts.resolution.0, opts.resolution.1
            )));
        }
    }
    let ds = match load_dataset(&args.data, opts)? {
        DatasetLayout::PreSplit { test, .. } => test,
        DatasetLayout::Flat(ds) => ds,
    };
    check_classes(&model, &ds)?;
    let eval = evaluate(&model, &ds, args.batch_size)?;
    let fields = TestFields::from_evaluation(&eval);
    println!("{}", TEST_HEADER.join(","));
    let values: Vec<String> = fields.values().iter().map(|&v| fmt_value(v, args.full_precision)).collect();
    println!("{}", values.join(","));
    Ok(())
}

fn check_classes(model: &SequentialModel<f32>, ds: &Dataset) -> Result<()> {
    if ds.class_names() != model.class_names() {
        return Err(Error::Config(format!(
            "data classes {:?} differ from checkpoint classes {:?}",
            ds.class_names(),
            model.class_names()
        )));
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let mut model = load_checkpoint::<f32>(&args.checkpoint)?;
    model.set_mode(Mode::Eval);
    let opts = checkpoint_input(&model);
    let image = decode_image_file(&args.image, opts)?;
    let (h, w) = opts.resolution;
    let x: Tensor<f32> = image.reshape(vec![1, opts.channels, h, w])?;
    let pred = model.predict(&x)?;
    let mut line = vec![pred.class_name[0].clone()];
    line.extend(pred.probs.data().iter().map(|p| p.to_string()));
    println!("{}", line.join(","));
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let mut cfg = GradCheckConfig::default();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.fault = args.inject_fault.clone();
    let reports = gradcheck::run_suite(&cfg)?;
    for r in &reports {
        println!("{r}");
    }
    gradcheck::verify_reports(&reports)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let res = (args.resolution, args.resolution);
    let ds = make_synthetic(args.per_class, res, args.channels, args.noise, args.seed)?;
    create_dir(&args.out)?;
    match &args.split {
        None => {
            write_lct1_dataset(&ds, &args.out)?;
            write_manifest(args.out.join("manifest.csv"), &[("all", &ds)])?;
        }
        Some(spec) => {
            let f: Vec<f64> = spec
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("--split {spec:?}: expected three fractions")))?;
            let [a, b, c]: [f64; 3] = f
                .try_into()
                .map_err(|_| Error::Config(format!("--split {spec:?}: expected three fractions")))?;
            let s = split_dataset(&ds, &SplitSpec::new(a, b, c, args.seed)?)?;
            for (dir, part) in [("train", &s.train), ("valid", &s.val), ("test", &s.test)] {
                write_lct1_dataset(part, args.out.join(dir))?;
            }
            write_manifest(
                args.out.join("manifest.csv"),
                &[("train", &s.train), ("val", &s.val), ("test", &s.test)],
            )?;
        }
    }
    println!("wrote {} samples to {}", ds.len(), args.out.display());
    Ok(())
}

/// File name of the checkpoint written at `epoch` under `output.dir`.
pub fn checkpoint_path(output_dir: &Path, epoch: usize) -> PathBuf {
    output_dir.join("checkpoints").join(checkpoint_file_name(epoch))
}
