use std::path::Path;

use crate::error::{Error, Result};
use crate::train::{EpochLog, Evaluation};

pub const REPORT_HEADER: [&str; 13] = [
    "model",
    "epoch",
    "train_loss",
    "train_acc",
    "val_loss",
    "val_acc",
    "test_loss",
    "test_acc",
    "precision",
    "recall",
    "f1",
    "rmse",
    "acc_score",
];

pub const TEST_HEADER: [&str; 7] = ["test_loss", "test_acc", "precision", "recall", "f1", "rmse", "acc_score"];

pub const EPOCH_LOG_HEADER: [&str; 5] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"];

/// Test-set columns of a report row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFields {
    pub test_loss: f64,
    pub test_acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rmse: f64,
    /// Same value as `test_acc`.
    pub acc_score: f64,
}

impl TestFields {
    pub fn from_evaluation(e: &Evaluation) -> Self {
        let m = &e.metrics;
        TestFields {
            test_loss: e.loss,
            test_acc: m.accuracy,
            precision: m.precision_macro,
            recall: m.recall_macro,
            f1: m.f1_macro,
            rmse: m.rmse.unwrap_or(f64::NAN),
            acc_score: m.accuracy,
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.test_loss,
            self.test_acc,
            self.precision,
            self.recall,
            self.f1,
            self.rmse,
            self.acc_score,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test: TestFields,
}

impl ReportRow {
    pub fn new(model: &str, log: &EpochLog, test: TestFields) -> Self {
        ReportRow {
            model: model.to_string(),
            epoch: log.epoch,
            train_loss: log.train_loss,
            train_acc: log.train_acc,
            val_loss: log.val_loss,
            val_acc: log.val_acc,
            test,
        }
    }

    pub fn record(&self, full_precision: bool) -> Vec<String> {
        let mut out = vec![self.model.clone(), self.epoch.to_string()];
        let head = [self.train_loss, self.train_acc, self.val_loss, self.val_acc];
        out.extend(head.iter().chain(&self.test.values()).map(|&v| fmt_value(v, full_precision)));
        out
    }
}

/// Four decimals, or the shortest string that parses back to the same
/// `f64`.
pub fn fmt_value(v: f64, full_precision: bool) -> String {
    if full_precision {
        format!("{v}")
    } else {
        format!("{v:.4}")
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_report(path: &Path, rows: &[ReportRow], full_precision: bool) -> Result<()> {
    let records: Vec<Vec<String>> = rows.iter().map(|r| r.record(full_precision)).collect();
    write_csv(path, &REPORT_HEADER, &records)
}

pub fn write_epoch_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let records: Vec<Vec<String>> = logs
        .iter()
        .map(|l| {
            let mut r = vec![l.epoch.to_string()];
            r.extend([l.train_loss, l.train_acc, l.val_loss, l.val_acc].iter().map(|&v| fmt_value(v, true)));
            r
        })
        .collect();
    write_csv(path, &EPOCH_LOG_HEADER, &records)
}

/// Reads a report CSV back; values keep whatever precision was written.
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(Error::Data(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Data(format!("{} row {}: bad number {:?}", path.display(), line + 1, &rec[i])))
        };
        rows.push(ReportRow {
            model: rec[0].to_string(),
            epoch: num(1)? as usize,
            train_loss: num(2)?,
            train_acc: num(3)?,
            val_loss: num(4)?,
            val_acc: num(5)?,
            test: TestFields {
                test_loss: num(6)?,
                test_acc: num(7)?,
                precision: num(8)?,
                recall: num(9)?,
                f1: num(10)?,
                rmse: num(11)?,
                acc_score: num(12)?,
            },
        });
    }
    Ok(rows)
}
