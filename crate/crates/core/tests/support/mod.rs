//! Independent oracles and process helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

/// Direct six-loop convolution in f64, `[N,C,H,W] * [F,C,k,k] + b`.
pub fn naive_conv(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    (f, k): (usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[o];
                    for ch in 0..c {
                        for di in 0..k {
                            for dj in 0..k {
                                let (r, s) = ((i * stride + di) as isize - pad as isize, (j * stride + dj) as isize - pad as isize);
                                if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ch) * h + r as usize) * w + s as usize];
                                acc += xv * weight[((o * c + ch) * k + di) * k + dj];
                            }
                        }
                    }
                    out[((b * f + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Metrics recomputed from a pair-count dictionary.
#[derive(Debug)]
pub struct OracleMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rmse: f64,
}

pub fn metrics_oracle(truth: &[usize], pred: &[usize], k: usize) -> OracleMetrics {
    let mut pairs: HashMap<(usize, usize), usize> = HashMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        *pairs.entry((t, p)).or_default() += 1;
    }
    let count = |t: Option<usize>, p: Option<usize>| -> usize {
        pairs
            .iter()
            .filter(|((a, b), _)| t.is_none_or(|t| t == *a) && p.is_none_or(|p| p == *b))
            .map(|(_, n)| n)
            .sum()
    };
    let (mut ps, mut rs, mut fs, mut present) = (0.0, 0.0, 0.0, 0usize);
    for c in 0..k {
        let support = count(Some(c), None);
        if support == 0 {
            continue;
        }
        present += 1;
        let tp = count(Some(c), Some(c)) as f64;
        let predicted = count(None, Some(c));
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = tp / support as f64;
        ps += p;
        rs += r;
        fs += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    let sq: f64 = truth.iter().zip(pred).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    OracleMetrics {
        accuracy: hits as f64 / truth.len() as f64,
        precision: ps / present as f64,
        recall: rs / present as f64,
        f1: fs / present as f64,
        rmse: (sq / truth.len() as f64).sqrt(),
    }
}

pub fn lcdl_bin() -> &'static str {
    env!("CARGO_BIN_EXE_lcdl")
}

/// Runs the CLI single-threaded.
pub fn run_cli(args: &[&str]) -> Output {
    Command::new(lcdl_bin())
        .args(args)
        .env("LCDL_THREADS", "1")
        .output()
        .expect("spawn lcdl")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a pre-split synthetic tree with `synth`.
pub fn synth_presplit(dir: &Path, per_class: usize, resolution: usize, seed: u64) {
    let out = run_cli(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--per-class",
        &per_class.to_string(),
        "--resolution",
        &resolution.to_string(),
        "--noise",
        "0.05",
        "--seed",
        &seed.to_string(),
        "--split",
        "0.7,0.15,0.15",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

/// Writes a config file for a `train` run and returns its path.
pub fn write_config(dir: &Path, data: &Path, out: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    let text = format!(
        "data.root = {}\ndata.resolution = 32\noutput.dir = {}\n{extra}",
        data.display(),
        out.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}
