//! Per-epoch training metrics and their CSV rendering.

use crate::error::{Error, Result};

/// Column header of the metrics CSV.
pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_acc,lr,seconds";

/// One epoch of training measurements.
///
/// `seconds` is the wall-clock duration of the epoch and stays 0 unless
/// timing was explicitly requested, so that repeated runs with the same seed
/// produce byte-identical CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Renders a float with six significant digits in scientific notation.
pub fn sig6(v: f64) -> String {
    format!("{v:.5e}")
}

impl Metrics {
    /// One CSV row matching [`METRICS_HEADER`]. Floats carry six significant
    /// digits.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            sig6(self.train_loss),
            sig6(self.train_acc),
            sig6(self.val_acc),
            sig6(self.lr),
            sig6(self.seconds)
        )
    }

    /// Parses a row produced by [`csv_row`](Self::csv_row).
    pub fn from_csv_row(row: &str) -> Result<Metrics> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Data(format!(
                "metrics row has {} fields, expected 6: {row}",
                fields.len()
            )));
        }
        let epoch = fields[0]
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("bad epoch field: {}", fields[0])))?;
        let mut floats = [0.0f64; 5];
        for (slot, field) in floats.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("bad float field: {field}")))?;
        }
        Ok(Metrics {
            epoch,
            train_loss: floats[0],
            train_acc: floats[1],
            val_acc: floats[2],
            lr: floats[3],
            seconds: floats[4],
        })
    }
}
