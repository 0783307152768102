use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// How the dataset is divided into train/val/test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitChoice {
    /// Pre-split if `train/`, `valid/` and `test/` exist, else 0.7/0.15/0.15.
    Auto,
    PreSplit,
    Fractions([f64; 3]),
}

impl SplitChoice {
    pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.15, 0.15];

    fn parse(value: &str) -> Result<Self> {
        match value {
            "auto" => Ok(SplitChoice::Auto),
            "pre-split" => Ok(SplitChoice::PreSplit),
            _ => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                let fracs: Vec<f64> = parts
                    .iter()
                    .map(|p| p.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("data.split: expected auto, pre-split or three fractions, got {value:?}")))?;
                let fracs: [f64; 3] = fracs
                    .try_into()
                    .map_err(|_| Error::Config(format!("data.split: expected three fractions, got {value:?}")))?;
                SplitSpec::new(fracs[0], fracs[1], fracs[2], 0).map_err(|e| Error::Config(format!("data.split: {e}")))?;
                Ok(SplitChoice::Fractions(fracs))
            }
        }
    }

    fn render(&self) -> String {
        match self {
            SplitChoice::Auto => "auto".into(),
            SplitChoice::PreSplit => "pre-split".into(),
            SplitChoice::Fractions(f) => format!("{},{},{}", f[0], f[1], f[2]),
        }
    }
}

/// Everything a `train` run needs. Text form is one `section.key = value`
/// per line; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_root: Option<PathBuf>,
    /// Square side length images are resized to.
    pub resolution: usize,
    pub split: SplitChoice,
    pub stratified: bool,
    pub model_name: String,
    pub input_channels: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    /// Also write `report_full.csv` with unrounded values.
    pub full_precision: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        ExperimentConfig {
            data_root: None,
            resolution: 64,
            split: SplitChoice::Auto,
            stratified: true,
            model_name: "proposed".into(),
            input_channels: 3,
            dropout: train.dropout_rate,
            seed: train.seed,
            train,
            output_dir: PathBuf::from("runs/lcdl"),
            full_precision: false,
        }
    }
}

pub const CONFIG_KEYS: [&str; 15] = [
    "data.root",
    "data.resolution",
    "data.split",
    "data.stratified",
    "model.name",
    "model.input_channels",
    "model.dropout",
    "train.epochs",
    "train.eval_epochs",
    "train.lr",
    "train.momentum",
    "train.batch_size",
    "output.dir",
    "output.full_precision",
    "run.seed",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`, got {raw:?}", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.root" => self.data_root = Some(PathBuf::from(value)),
            "data.resolution" => self.resolution = parse_num(key, value)?,
            "data.split" => self.split = SplitChoice::parse(value)?,
            "data.stratified" => self.stratified = parse_bool(key, value)?,
            "model.name" => {
                if value.is_empty() || value.contains([',', '"', '\n']) {
                    return Err(Error::Config(format!("{key}: {value:?} is not a plain name")));
                }
                self.model_name = value.to_string();
            }
            "model.input_channels" => self.input_channels = parse_num(key, value)?,
            "model.dropout" => {
                self.dropout = parse_num(key, value)?;
                self.train.dropout_rate = self.dropout;
            }
            "train.epochs" => self.train.epochs = parse_num(key, value)?,
            "train.eval_epochs" => {
                self.train.eval_epochs = value
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?;
            }
            "train.lr" => self.train.lr = parse_num(key, value)?,
            "train.momentum" => self.train.momentum = parse_num(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            "output.full_precision" => self.full_precision = parse_bool(key, value)?,
            "run.seed" => {
                self.seed = parse_num(key, value)?;
                self.train.seed = self.seed;
            }
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_root.is_none() {
            return Err(Error::Config("data.root is required".into()));
        }
        if self.resolution == 0 || !self.resolution.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "data.resolution {} must be a positive multiple of 32",
                self.resolution
            )));
        }
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::Config(format!(
                "model.input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        self.train.validate()
    }

    pub fn split_spec(&self, fractions: [f64; 3]) -> SplitSpec {
        SplitSpec {
            train_frac: fractions[0],
            val_frac: fractions[1],
            test_frac: fractions[2],
            seed: self.seed,
            stratified: self.stratified,
        }
    }

    /// Canonical text with every key, in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let eval: Vec<String> = t.eval_epochs.iter().map(usize::to_string).collect();
        let root = self.data_root.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values = [
            root,
            self.resolution.to_string(),
            self.split.render(),
            self.stratified.to_string(),
            self.model_name.clone(),
            self.input_channels.to_string(),
            self.dropout.to_string(),
            t.epochs.to_string(),
            eval.join(","),
            t.lr.to_string(),
            t.momentum.to_string(),
            t.batch_size.to_string(),
            self.output_dir.display().to_string(),
            self.full_precision.to_string(),
            self.seed.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
