//! Finite-difference verification of every backward pass.
//!
//! Each check projects the layer output onto a fixed random direction
//! `r`, so the scalar objective is `L = Σ r ⊙ f(x)`, and compares the
//! analytic gradients against central differences
//! `(L(θ + h) − L(θ − h)) / 2h` in `f64`. Inputs are drawn away from the
//! non-differentiable points of ReLU and max-pool by `margin`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    softmax, softmax_backward, softmax_cross_entropy, softmax_cross_entropy_backward, Activation, Conv2d, ConvSpec,
    Dense, Dropout, Flatten, Layer, MaxPool2d, Mode, Relu,
};
use crate::model::{ModelConfig, SequentialModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub margin: f64,
    /// Lower bound on the relative-error denominator, so exact zeros
    /// compare by absolute error.
    pub denominator_floor: f64,
    pub seed: u64,
    /// Name of a check whose analytic gradient is deliberately perturbed;
    /// used to prove the harness detects a broken backward pass.
    pub fault: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            margin: 1e-3,
            denominator_floor: 1e-6,
            seed: 0x6C63_646C,
            fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<24} max_rel_err={:.3e} entries={:<5} {}",
            self.name,
            self.max_rel_error,
            self.entries,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

/// Names of every check in [`run_suite`], in order.
pub const CHECKS: [&str; 8] = [
    "conv2d",
    "maxpool2d",
    "relu",
    "flatten",
    "dense",
    "dropout",
    "softmax",
    "softmax_cross_entropy",
];

pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::new();

    let spec = ConvSpec::new(2, 2, 3, 1, 0)?;
    let conv = Layer::Conv2d(Conv2d::init(spec, Activation::None, &mut rng)?);
    let x = uniform(vec![1, 2, 5, 5], &mut rng);
    let mut rep = check_layer("conv2d", &conv, &x, cfg, &mut rng)?;
    // second geometry: strided and padded
    let spec = ConvSpec::new(2, 3, 3, 2, 1)?;
    let conv = Layer::Conv2d(Conv2d::init(spec, Activation::None, &mut rng)?);
    let x = uniform(vec![2, 2, 6, 6], &mut rng);
    merge(&mut rep, check_layer("conv2d", &conv, &x, cfg, &mut rng)?);
    reports.push(rep);

    let pool = Layer::MaxPool2d(MaxPool2d::new(2, 2)?);
    let x = tie_free(vec![2, 2, 6, 6], cfg.margin, &mut rng);
    let mut rep = check_layer("maxpool2d", &pool, &x, cfg, &mut rng)?;
    let pool = Layer::MaxPool2d(MaxPool2d::new(3, 2)?);
    let x = tie_free(vec![1, 2, 7, 7], cfg.margin, &mut rng);
    merge(&mut rep, check_layer("maxpool2d", &pool, &x, cfg, &mut rng)?);
    reports.push(rep);

    let x = away_from_zero(vec![2, 3, 4, 4], cfg.margin, &mut rng);
    reports.push(check_layer("relu", &Layer::Relu(Relu::new()), &x, cfg, &mut rng)?);

    let x = uniform(vec![2, 3, 2, 2], &mut rng);
    reports.push(check_layer("flatten", &Layer::Flatten(Flatten::new()), &x, cfg, &mut rng)?);

    let dense = Layer::Dense(Dense::init(6, 3, Activation::None, &mut rng)?);
    let x = uniform(vec![4, 6], &mut rng);
    reports.push(check_layer("dense", &dense, &x, cfg, &mut rng)?);

    let dropout = Layer::Dropout(Dropout::new(0.5, rng.gen())?);
    let x = uniform(vec![3, 10], &mut rng);
    reports.push(check_layer("dropout", &dropout, &x, cfg, &mut rng)?);

    reports.push(check_softmax(cfg, &mut rng)?);
    reports.push(check_softmax_cross_entropy(cfg, &mut rng)?);
    Ok(reports)
}

/// Runs the suite and fails with a [`Error::Verification`] listing every
/// check over tolerance.
pub fn verify(cfg: &GradCheckConfig) -> Result<Vec<CheckReport>> {
    let reports = run_suite(cfg)?;
    verify_reports(&reports)?;
    Ok(reports)
}

pub fn verify_reports(reports: &[CheckReport]) -> Result<()> {
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} (max relative error {:.3e})", r.name, r.max_rel_error))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn merge(into: &mut CheckReport, other: CheckReport) {
    into.max_rel_error = into.max_rel_error.max(other.max_rel_error);
    into.entries += other.entries;
}

fn uniform(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("valid dims")
}

/// Values with `|x| ≥ margin`.
fn away_from_zero(dims: Vec<usize>, margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(margin.max(1e-2)..1.0);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(dims, data).expect("valid dims")
}

/// Pairwise-distinct values separated by far more than `margin`.
fn tie_free(dims: Vec<usize>, margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let spacing = (margin * 20.0).max(2.0 / n as f64);
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * spacing - 1.0).collect();
    data.shuffle(rng);
    for v in &mut data {
        *v += rng.gen_range(0.0..spacing / 4.0);
    }
    Tensor::from_vec(dims, data).expect("valid dims")
}

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn perturb(values: &[f64], name: &str, cfg: &GradCheckConfig) -> Vec<f64> {
    if cfg.fault.as_deref() == Some(name) {
        values.iter().map(|v| v * 1.01 + 1e-3).collect()
    } else {
        values.to_vec()
    }
}

fn projection(layer: &Layer<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> Result<f64> {
    let mut l = layer.clone();
    let y = l.forward(x, Mode::Train)?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Checks input and parameter gradients of one layer. The layer is cloned
/// for every evaluation so stochastic layers replay the same mask.
pub fn check_layer(
    name: &str,
    layer: &Layer<f64>,
    x: &Tensor<f64>,
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CheckReport> {
    let out_shape = layer.output_shape(x.shape())?;
    let r = uniform(out_shape.dims().to_vec(), rng);

    let mut analytic_layer = layer.clone();
    analytic_layer.zero_grads();
    analytic_layer.forward(x, Mode::Train)?;
    let grad_in = analytic_layer.backward(&r)?;
    let grad_in = perturb(grad_in.data(), name, cfg);
    let param_grads: Vec<Vec<f64>> = analytic_layer
        .grads()
        .iter()
        .map(|(_, g)| perturb(g.data(), name, cfg))
        .collect();

    let h = cfg.step;
    let mut worst = 0.0f64;
    let mut entries = 0;

    for (i, &g) in grad_in.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (projection(layer, &plus, &r)? - projection(layer, &minus, &r)?) / (2.0 * h);
        worst = worst.max(rel_error(g, numeric, cfg.denominator_floor));
        entries += 1;
    }

    for (p, analytic) in param_grads.iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let shifted = |delta: f64| -> Result<f64> {
                let mut l = layer.clone();
                l.params_mut()[p].1.data_mut()[i] += delta;
                projection(&l, x, &r)
            };
            let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            worst = worst.max(rel_error(a, numeric, cfg.denominator_floor));
            entries += 1;
        }
    }

    Ok(CheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        entries,
        tolerance: cfg.tolerance,
    })
}

fn check_function(
    name: &str,
    x: &Tensor<f64>,
    analytic: &[f64],
    f: impl Fn(&Tensor<f64>) -> Result<f64>,
    cfg: &GradCheckConfig,
) -> Result<CheckReport> {
    let analytic = perturb(analytic, name, cfg);
    let h = cfg.step;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate().take(x.numel()) {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (f(&plus)? - f(&minus)?) / (2.0 * h);
        worst = worst.max(rel_error(a, numeric, cfg.denominator_floor));
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        entries: x.numel(),
        tolerance: cfg.tolerance,
    })
}

fn check_softmax(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let x = uniform(vec![3, 4], rng).scale(3.0);
    let r = uniform(vec![3, 4], rng);
    let analytic = softmax_backward(&softmax(&x)?, &r)?;
    let f = |z: &Tensor<f64>| -> Result<f64> {
        Ok(softmax(z)?.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };
    check_function("softmax", &x, analytic.data(), f, cfg)
}

fn check_softmax_cross_entropy(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let x = uniform(vec![3, 4], rng).scale(3.0);
    let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
    let (_, probs) = softmax_cross_entropy(&x, &labels)?;
    let analytic = softmax_cross_entropy_backward(&probs, &labels)?;
    let f = |z: &Tensor<f64>| -> Result<f64> { Ok(softmax_cross_entropy(z, &labels)?.0) };
    check_function("softmax_cross_entropy", &x, analytic.data(), f, cfg)
}

/// End-to-end check of the loss gradient w.r.t. every weight of the first
/// conv layer, through the whole model.
pub fn check_model_probe(config: ModelConfig, seed: u64, cfg: &GradCheckConfig) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SequentialModel::<f64>::new(config.clone(), seed)?;
    let x = uniform(vec![2, config.input_channels, config.input_height, config.input_width], &mut rng);
    let labels: Vec<usize> = (0..2).map(|_| rng.gen_range(0..config.num_classes)).collect();

    let loss = |m: &SequentialModel<f64>| -> Result<f64> {
        let mut m = m.clone();
        let logits = m.forward(&x)?;
        Ok(softmax_cross_entropy(&logits, &labels)?.0)
    };

    let mut analytic_model = model.clone();
    let logits = analytic_model.forward(&x)?;
    let (_, probs) = softmax_cross_entropy(&logits, &labels)?;
    analytic_model.backward(&softmax_cross_entropy_backward(&probs, &labels)?)?;
    let analytic = perturb(analytic_model.named_grads()[0].1.data(), "model", cfg);

    let h = cfg.step;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let shifted = |delta: f64| -> Result<f64> {
            let mut m = model.clone();
            m.params_mut()[0].data_mut()[i] += delta;
            loss(&m)
        };
        let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        worst = worst.max(rel_error(a, numeric, cfg.denominator_floor));
    }
    Ok(CheckReport {
        name: "model.conv1.weight".into(),
        max_rel_error: worst,
        entries: analytic.len(),
        tolerance: cfg.tolerance,
    })
}
