use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const RUNLOG_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Per-epoch training curve of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub name: String,
    pub records: Vec<EpochRecord>,
    /// Measured wall seconds; kept out of the CSV so reruns stay byte-identical.
    pub wall_time: f64,
    /// Resolved configuration the run used.
    pub config: String,
}

impl RunLog {
    pub fn new(name: impl Into<String>, config: impl Into<String>) -> Self {
        RunLog {
            name: name.into(),
            config: config.into(),
            ..RunLog::default()
        }
    }

    pub fn push(&mut self, mut record: EpochRecord) {
        record.epoch = self.records.len() + 1;
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Population standard deviation of validation loss over the one-based,
    /// inclusive epoch range. `None` when the range holds fewer than two epochs.
    pub fn val_loss_std(&self, first: usize, last: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| (first..=last).contains(&r.epoch))
            .map(|r| r.val_loss)
            .collect();
        if v.len() < 2 {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Some((v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64).sqrt())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUNLOG_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            )
            .expect("writing to a string");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(RUNLOG_HEADER) {
            return Err(Error::Format(format!("run log must start with {RUNLOG_HEADER:?}")));
        }
        let mut log = RunLog::default();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Format(format!("run log row {}: bad field {i}", n + 1)))
            };
            if f.len() != 5 {
                return Err(Error::Format(format!("run log row {} has {} fields", n + 1, f.len())));
            }
            log.push(EpochRecord {
                epoch: 0,
                train_loss: num(1)?,
                train_acc: num(2)?,
                val_loss: num(3)?,
                val_acc: num(4)?,
            });
        }
        Ok(log)
    }
}
