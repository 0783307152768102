use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Architecture parameters of a [`SequentialModel`](super::SequentialModel).
///
/// The default is the proposed classifier on 3×64×64 inputs with four
/// classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub num_classes: usize,
    /// Output channels of each conv+pool block.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    /// Width of each hidden dense+dropout block.
    pub dense_units: Vec<usize>,
    pub dropout: f64,
    pub class_names: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            input_height: 64,
            input_width: 64,
            num_classes: 4,
            conv_channels: vec![16, 32, 64, 128, 128],
            kernel: 3,
            stride: 1,
            padding: 1,
            pool_window: 2,
            pool_stride: 2,
            dense_units: vec![256, 128],
            dropout: 0.5,
            class_names: Self::default_class_names(4),
        }
    }
}

const KEYS: [&str; 13] = [
    "input_channels",
    "input_height",
    "input_width",
    "num_classes",
    "conv_channels",
    "kernel",
    "stride",
    "padding",
    "pool_window",
    "pool_stride",
    "dense_units",
    "dropout",
    "class_names",
];

impl ModelConfig {
    pub fn default_class_names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("class{i}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("pool_window", self.pool_window),
            ("pool_stride", self.pool_stride),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{key} must be >= 1")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.conv_channels.contains(&0) || self.dense_units.contains(&0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must be in [0, 1)", self.dropout)));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::Config(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        if let Some(bad) = self
            .class_names
            .iter()
            .find(|n| n.is_empty() || n.contains([',', '\n', '\r']))
        {
            return Err(Error::Config(format!(
                "class name {bad:?} must be non-empty without commas or newlines"
            )));
        }
        Ok(())
    }

    /// Spatial extent after all conv+pool blocks, or `None` if some layer
    /// would receive an input smaller than its window.
    pub fn final_spatial(&self) -> Option<(usize, usize)> {
        let step = |extent: usize| -> Option<usize> {
            let padded = extent + 2 * self.padding;
            let conv = (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)?;
            (conv >= self.pool_window).then(|| (conv - self.pool_window) / self.pool_stride + 1)
        };
        let mut h = self.input_height;
        let mut w = self.input_width;
        for _ in &self.conv_channels {
            h = step(h)?;
            w = step(w)?;
        }
        Some((h, w))
    }

    pub fn flatten_width(&self) -> Result<usize> {
        let (h, w) = self.final_spatial().ok_or_else(|| {
            Error::Config(format!(
                "input {}x{} collapses below the kernel/pool window before the last block",
                self.input_height, self.input_width
            ))
        })?;
        let channels = self.conv_channels.last().copied().unwrap_or(self.input_channels);
        Ok(channels * h * w)
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "input_channels={}", self.input_channels);
        let _ = writeln!(s, "input_height={}", self.input_height);
        let _ = writeln!(s, "input_width={}", self.input_width);
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        let _ = writeln!(s, "conv_channels={}", list(&self.conv_channels));
        let _ = writeln!(s, "kernel={}", self.kernel);
        let _ = writeln!(s, "stride={}", self.stride);
        let _ = writeln!(s, "padding={}", self.padding);
        let _ = writeln!(s, "pool_window={}", self.pool_window);
        let _ = writeln!(s, "pool_stride={}", self.pool_stride);
        let _ = writeln!(s, "dense_units={}", list(&self.dense_units));
        let _ = writeln!(s, "dropout={:?}", self.dropout);
        let _ = writeln!(s, "class_names={}", self.class_names.join(","));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("architecture line {}: expected key=value", lineno + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("unknown architecture key {k:?}")));
            }
            if map.insert(k, v.trim()).is_some() {
                return Err(Error::Config(format!("duplicate architecture key {k:?}")));
            }
        }
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("architecture key {k:?} missing")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("architecture key {k:?}: not an integer")))
        };
        let list = |k: &str| -> Result<Vec<usize>> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("architecture key {k:?}: bad list entry {x:?}")))
                })
                .collect()
        };
        let config = ModelConfig {
            input_channels: num("input_channels")?,
            input_height: num("input_height")?,
            input_width: num("input_width")?,
            num_classes: num("num_classes")?,
            conv_channels: list("conv_channels")?,
            kernel: num("kernel")?,
            stride: num("stride")?,
            padding: num("padding")?,
            pool_window: num("pool_window")?,
            pool_stride: num("pool_stride")?,
            dense_units: list("dense_units")?,
            dropout: get("dropout")?
                .parse()
                .map_err(|_| Error::Config("architecture key \"dropout\": not a number".into()))?,
            class_names: get("class_names")?.split(',').map(str::to_string).collect(),
        };
        config.validate()?;
        Ok(config)
    }
}
