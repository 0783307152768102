//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines are never captured.

// NaN must fail every check, hence the negated comparisons in `ensure!`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod support;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lcdl::data::{make_synthetic, split_dataset, SplitSpec, SYNTHETIC_CLASSES};
use lcdl::gradcheck::{self, GradCheckConfig, CHECKS};
use lcdl::layers::{Activation, Conv2d, ConvSpec, LayerKind, Mode};
use lcdl::metrics::{rmse_labels, score};
use lcdl::model::{build_proposed_model, decode_checkpoint, encode_checkpoint, ModelConfig, SequentialModel};
use lcdl::train::{evaluate, TrainConfig, Trainer};
use lcdl::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{code, run_cli, stderr, stdout, synth_presplit, write_config};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gradient_soundness() -> Outcome {
    let cfg = GradCheckConfig::default();
    ensure!(cfg.step == 1e-5 && cfg.tolerance == 1e-4 && cfg.margin == 1e-3, "non-standard settings {cfg:?}");
    let start = Instant::now();
    let reports = gradcheck::run_suite(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    ensure!(names == CHECKS, "checks ran {names:?}");
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    for r in &reports {
        ensure!(r.max_rel_error < 1e-4, "{r}");
    }
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("{} checks, worst rel err {worst:.2e}, {secs:.2}s", reports.len()))
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 50 {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (st, p) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
        let (n, c, f) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let (h, w) = (rng.gen_range(1..=10), rng.gen_range(1..=10));
        if h + 2 * p < k || w + 2 * p < k {
            continue;
        }
        let x: Vec<f64> = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..f * c * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // The oracle sees exactly the values the f32 layer sees.
        let to32 = |v: &[f64]| -> Vec<f32> { v.iter().map(|&a| a as f32).collect() };
        let back = |v: &[f32]| -> Vec<f64> { v.iter().map(|&a| a as f64).collect() };
        let (x32, w32, b32) = (to32(&x), to32(&wt), to32(&b));
        let (want, oh, ow) = support::naive_conv(&back(&x32), (n, c, h, w), &back(&w32), &back(&b32), (f, k), st, p);
        let conv = Conv2d::<f32>::new(
            ConvSpec::new(c, f, k, st, p).map_err(|e| e.to_string())?,
            Activation::None,
            Tensor::from_vec(vec![f, c, k, k], w32).unwrap(),
            Tensor::from_vec(vec![f], b32).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let y = conv.infer(&Tensor::from_vec(vec![n, c, h, w], x32).unwrap()).map_err(|e| e.to_string())?;
        ensure!(y.dims() == [n, f, oh, ow], "config {done}: dims {:?}", y.dims());
        for (g, e) in y.data().iter().zip(&want) {
            let d = (*g as f64 - e).abs();
            worst = worst.max(d);
            ensure!(d <= 1e-5, "config {done} (k={k} s={st} p={p} n={n} c={c} f={f} {h}x{w}): {g} vs {e}");
        }
        done += 1;
    }
    Ok(format!("50 configs, worst abs err {worst:.2e}"))
}

fn architecture() -> Outcome {
    let m = build_proposed_model::<f32>((3, 64, 64), 4, 0.5, 7).map_err(|e| e.to_string())?;
    use LayerKind::*;
    let want = [
        Conv2d, MaxPool2d, Conv2d, MaxPool2d, Conv2d, MaxPool2d, Conv2d, MaxPool2d, Conv2d, MaxPool2d, Flatten, Dense, Dropout, Dense,
        Dropout, Dense,
    ];
    ensure!(m.kinds() == want, "sequence {:?}", m.kinds());
    for (i, layer) in m.layers().iter().enumerate() {
        let want = match i {
            15 => Activation::Softmax,
            0 | 2 | 4 | 6 | 8 | 11 | 13 => Activation::Relu,
            _ => Activation::None,
        };
        ensure!(layer.activation() == want, "layer {i} activation {:?}", layer.activation());
    }
    let chain = m.shape_chain().map_err(|e| e.to_string())?;
    ensure!(chain[0].dims() == [1, 3, 64, 64], "chain starts {:?}", chain[0].dims());
    ensure!(chain.last().unwrap().dims() == [1, 4], "chain ends {:?}", chain.last().unwrap().dims());
    ensure!(m.num_classes() == 4, "{} classes", m.num_classes());
    Ok(format!("{} layers, 3x64x64 -> {:?}, {} params", m.layers().len(), chain.last().unwrap().dims(), m.param_count()))
}

struct PinnedRun {
    train_acc: Vec<f64>,
    first_perfect: Option<usize>,
    epochs_run: usize,
    test_acc: f64,
    secs: f64,
}

/// Synthetic data (32 per class, 32x32, noise 0.05, seed 7), default
/// training settings, run to 30 epochs and on until train accuracy hits 1.
fn pinned_run() -> Result<PinnedRun, String> {
    let start = Instant::now();
    let ds = make_synthetic(32, (32, 32), 3, 0.05, 7).map_err(|e| e.to_string())?;
    let splits = split_dataset(&ds, &SplitSpec::new(0.7, 0.15, 0.15, 7).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let model_cfg = ModelConfig {
        input_height: 32,
        input_width: 32,
        class_names: SYNTHETIC_CLASSES.iter().map(|c| c.to_string()).collect(),
        ..ModelConfig::default()
    };
    let model = SequentialModel::<f32>::new(model_cfg, 7).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(model, &splits.train, &splits.val, cfg.clone()).map_err(|e| e.to_string())?;
    let mut train_acc = Vec::new();
    let mut first_perfect = None;
    while trainer.epoch() < 200 {
        let log = trainer.run_epoch().map_err(|e| e.to_string())?;
        train_acc.push(log.train_acc);
        if log.train_acc == 1.0 && first_perfect.is_none() {
            first_perfect = Some(log.epoch);
        }
        if log.epoch >= cfg.epochs && first_perfect.is_some() {
            break;
        }
    }
    let epochs_run = trainer.epoch();
    let model = trainer.into_model();
    let test = evaluate(&model, &splits.test, cfg.batch_size).map_err(|e| e.to_string())?;
    Ok(PinnedRun {
        train_acc,
        first_perfect,
        epochs_run,
        test_acc: test.metrics.accuracy,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn overfit(run: &PinnedRun) -> Outcome {
    let Some(e) = run.first_perfect else {
        return Err(format!("train accuracy never reached 1.0 in {} epochs", run.epochs_run));
    };
    ensure!(run.test_acc >= 0.9, "test accuracy {:.4}", run.test_acc);
    ensure!(run.secs < 600.0, "took {:.0}s", run.secs);
    Ok(format!(
        "100% train accuracy at epoch {e}, test accuracy {:.4} after {} epochs, {:.1}s",
        run.test_acc, run.epochs_run, run.secs
    ))
}

fn monotonicity(run: &PinnedRun) -> Outcome {
    ensure!(run.train_acc.len() >= 30, "only {} epochs", run.train_acc.len());
    let (a10, a20, a30) = (run.train_acc[9], run.train_acc[19], run.train_acc[29]);
    ensure!(a30 >= a20 && a20 >= a10, "train_acc 10/20/30 = {a10}/{a20}/{a30}");
    Ok(format!("train_acc 10/20/30 = {a10:.4}/{a20:.4}/{a30:.4}"))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for case in 0..500 {
        let k = rng.gen_range(2..=4);
        let n = rng.gen_range(1..=100);
        let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let m = score(&t, &p, k).map_err(|e| e.to_string())?;
        let o = support::metrics_oracle(&t, &p, k);
        let pairs = [
            (m.accuracy, o.accuracy),
            (m.precision_macro, o.precision),
            (m.recall_macro, o.recall),
            (m.f1_macro, o.f1),
            (m.rmse.unwrap_or(f64::NAN), o.rmse),
        ];
        for (i, (a, b)) in pairs.iter().enumerate() {
            let d = (a - b).abs();
            worst = worst.max(d);
            ensure!(d <= 1e-12, "case {case} field {i}: {a} vs {b}");
        }
    }
    let r = rmse_labels(&[0, 1, 2, 3], &[1, 1, 2, 2]).map_err(|e| e.to_string())?;
    ensure!((r - 0.5f64.sqrt()).abs() < 1e-15 && format!("{r:.4}") == "0.7071", "worked rmse {r}");
    Ok(format!("500 lists, worst abs err {worst:.1e}, worked rmse {r:.4}"))
}

struct CliRuns {
    data: PathBuf,
    a: PathBuf,
    b: PathBuf,
}

fn cli_runs(work: &Path) -> Result<CliRuns, String> {
    let data = work.join("data");
    synth_presplit(&data, 8, 32, 7);
    let mut outs = Vec::new();
    for name in ["run_a", "run_b"] {
        let sub = work.join(format!("{name}_cfg"));
        fs::create_dir_all(&sub).unwrap();
        let out = work.join(name);
        let cfg = write_config(&sub, &data, &out, "");
        let res = run_cli(&["train", "--config", s(&cfg)]);
        ensure!(code(&res) == 0, "train {name} exited {}: {}", code(&res), stderr(&res));
        outs.push(out);
    }
    let b = outs.pop().unwrap();
    let a = outs.pop().unwrap();
    Ok(CliRuns { data, a, b })
}

fn determinism(runs: &CliRuns) -> Outcome {
    let mut compared = Vec::new();
    for f in ["report.csv", "final.lcdl", "epoch_log.csv", "checkpoints/checkpoint_epoch_030.lcdl"] {
        let (x, y) = (fs::read(runs.a.join(f)).map_err(|e| format!("{f}: {e}"))?, fs::read(runs.b.join(f)).map_err(|e| format!("{f}: {e}"))?);
        ensure!(x == y, "{f} differs between runs");
        compared.push(f);
    }
    Ok(format!("byte-identical {}", compared.join(", ")))
}

fn serialization(work: &Path, runs: &CliRuns) -> Outcome {
    let mut model = build_proposed_model::<f32>((3, 32, 32), 4, 0.5, 21).map_err(|e| e.to_string())?;
    model.set_mode(Mode::Eval);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probe = Tensor::from_vec(vec![3, 3, 32, 32], (0..3 * 3 * 32 * 32).map(|_| rng.gen::<f32>()).collect()).unwrap();
    let before = model.infer(&probe).map_err(|e| e.to_string())?;
    let mut loaded: SequentialModel<f32> = decode_checkpoint(&encode_checkpoint(&model)).map_err(|e| e.to_string())?;
    loaded.set_mode(Mode::Eval);
    let after = loaded.infer(&probe).map_err(|e| e.to_string())?;
    let bits = |t: &Tensor<f32>| -> Vec<u32> { t.data().iter().map(|v| v.to_bits()).collect() };
    ensure!(bits(&before) == bits(&after), "reloaded forward differs");

    let good = fs::read(runs.a.join("final.lcdl")).map_err(|e| e.to_string())?;
    let cfg_len = u32::from_le_bytes(good[8..12].try_into().unwrap()) as usize;
    let first = 12 + cfg_len + 4;
    let name_len = u32::from_le_bytes(good[first..first + 4].try_into().unwrap()) as usize;
    let first_dim = first + 4 + name_len + 1;

    let mut cases: Vec<(&str, Vec<u8>)> = Vec::new();
    cases.push(("empty", Vec::new()));
    cases.push(("truncated", good[..good.len() - 3].to_vec()));
    cases.push(("header only", good[..10].to_vec()));
    let mut v = good.clone();
    v[0] = b'X';
    cases.push(("bad magic", v));
    let mut v = good.clone();
    v[4] = 9;
    cases.push(("bad version", v));
    let mut v = good.clone();
    v[first_dim] ^= 0x01;
    cases.push(("bad dims", v));
    let mut v = good.clone();
    let n = v.len();
    v[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    cases.push(("NaN value", v));
    let mut v = good.clone();
    v.push(0);
    cases.push(("trailing byte", v));

    let dir = work.join("corrupt");
    fs::create_dir_all(&dir).unwrap();
    for (i, (what, bytes)) in cases.iter().enumerate() {
        let path = dir.join(format!("c{i}.lcdl"));
        fs::write(&path, bytes).unwrap();
        let res = run_cli(&["evaluate", "--checkpoint", s(&path), "--data", s(&runs.data)]);
        ensure!(code(&res) == 5, "{what}: exit {} ({})", code(&res), stderr(&res).trim());
    }
    let res = run_cli(&["evaluate", "--checkpoint", s(&runs.a.join("final.lcdl")), "--data", s(&runs.data)]);
    ensure!(code(&res) == 0, "intact checkpoint: exit {} ({})", code(&res), stderr(&res).trim());
    Ok(format!("bit-exact reload on a 3-image probe, {} corrupt files exit 5", cases.len()))
}

fn evaluation_invariance(runs: &CliRuns) -> Outcome {
    let ckpt = runs.a.join("final.lcdl");
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for bs in [1, 17, 32] {
        let res = run_cli(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&runs.data), "--batch-size", &bs.to_string(), "--full-precision"]);
        ensure!(code(&res) == 0, "batch {bs}: exit {} ({})", code(&res), stderr(&res));
        let text = stdout(&res);
        let row = text.lines().nth(1).ok_or("no value line")?;
        rows.push((bs, row.split(',').map(|v| v.parse().unwrap()).collect()));
    }
    let mut worst = 0.0f64;
    for (bs, row) in &rows[1..] {
        for (a, b) in row.iter().zip(&rows[0].1) {
            let d = (a - b).abs();
            worst = worst.max(d);
            ensure!(d <= 1e-6, "batch {bs} vs 1: {a} vs {b}");
        }
    }
    Ok(format!("batch sizes 1/17/32, worst diff {worst:.1e}"))
}

fn report(n: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    match res {
        Ok(detail) => {
            println!("[PASS] criterion {n}: {title}: {detail}");
            true
        }
        Err(why) => {
            println!("[FAIL] criterion {n}: {title}: {why}");
            false
        }
    }
}

fn main() {
    let work = tempfile::tempdir().expect("tempdir");
    let mut ok = true;
    ok &= report(1, "gradient soundness", gradient_soundness);
    ok &= report(2, "convolution oracle equivalence", conv_oracle);
    ok &= report(3, "architecture conformance", architecture);

    let run = catch_unwind(pinned_run).unwrap_or_else(|_| Err("pinned run panicked".into()));
    ok &= report(4, "overfit sanity", || overfit(run.as_ref().map_err(Clone::clone)?));
    ok &= report(5, "train accuracy monotonicity", || monotonicity(run.as_ref().map_err(Clone::clone)?));

    ok &= report(6, "metrics oracle", metrics_oracle);

    let runs = catch_unwind(|| cli_runs(work.path())).unwrap_or_else(|_| Err("cli runs panicked".into()));
    ok &= report(7, "determinism", || determinism(runs.as_ref().map_err(Clone::clone)?));
    ok &= report(8, "serialization", || serialization(work.path(), runs.as_ref().map_err(Clone::clone)?));
    ok &= report(9, "evaluation invariance", || evaluation_invariance(runs.as_ref().map_err(Clone::clone)?));

    if !ok {
        std::process::exit(1);
    }
}
