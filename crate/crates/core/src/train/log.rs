//! Tab-separated training log, one row per epoch.

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub const HEADER: &str = "epoch\tlr\tloss\tl1\tl2\tl3\tl4\tw1\tw2\tw3\tw4\ttrain_dsc";

/// Per-set losses and weights are NaN when the multi-set loss is off.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub set_losses: [f64; 4],
    pub weights: [f64; 4],
    /// Mean foreground DSC (percent) of the training predictions.
    pub train_dsc: f64,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        let mut cols = vec![self.epoch.to_string(), format!("{:e}", self.lr), format!("{:.8}", self.loss)];
        cols.extend(self.set_losses.iter().map(|v| format!("{v:.8}")));
        cols.extend(self.weights.iter().map(|v| format!("{v:.8}")));
        cols.push(format!("{:.4}", self.train_dsc));
        cols.join("\t")
    }

    pub fn parse(line: &str) -> Option<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 12 {
            return None;
        }
        let f = |i: usize| cols[i].parse::<f64>().ok();
        let four = |from: usize| -> Option<[f64; 4]> { Some([f(from)?, f(from + 1)?, f(from + 2)?, f(from + 3)?]) };
        Some(Self {
            epoch: cols[0].parse().ok()?,
            lr: f(1)?,
            loss: f(2)?,
            set_losses: four(3)?,
            weights: four(7)?,
            train_dsc: f(11)?,
        })
    }
}

/// Packs up to four values, padding with NaN.
pub fn pad4(values: &[f64]) -> [f64; 4] {
    std::array::from_fn(|i| values.get(i).copied().unwrap_or(f64::NAN))
}

pub struct TrainLog {
    file: std::fs::File,
    path: std::path::PathBuf,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self { file, path: path.to_path_buf() })
    }

    pub fn append(&mut self, rec: &EpochRecord) -> Result<()> {
        writeln!(self.file, "{}", rec.to_line()).and_then(|_| self.file.flush()).map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::format(path, "missing training log header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| EpochRecord::parse(l).ok_or_else(|| Error::format(path, format!("bad log row {}", i + 2))))
        .collect()
}
