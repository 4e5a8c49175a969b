//! FER2013 CSV ingestion. The distributed file has the header
//! `emotion,pixels,Usage`, one 48x48 grayscale image per row as 2304
//! space-separated integers in 0..=255, emotion labels 0..=6, and a usage
//! tag naming the split.

use std::io::Read;

use super::Sample;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Emotion classes in FER2013.
pub const FER_CLASSES: usize = 7;
/// Images are 48x48.
pub const FER_SIDE: usize = 48;

/// Dataset split, decoded from the `Usage` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn from_usage(usage: &str) -> Option<Split> {
        match usage {
            "Training" => Some(Split::Train),
            "PublicTest" => Some(Split::Val),
            "PrivateTest" => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!(
                "unknown split \"{s}\" (expected train, val, or test)"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Parses the whole stream, scaling pixels to [0,1]. Malformed rows fail
/// with their 1-based data row number.
pub fn load_fer_csv<E: Element>(stream: impl Read) -> Result<Vec<(Sample<E>, Split)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(stream);

    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Data(format!("unreadable CSV header: {e}")))?;
        let expected = ["emotion", "pixels", "Usage"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Data(format!(
                "expected header emotion,pixels,Usage, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }

    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let row = row + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if record.len() != 3 {
            return Err(Error::Data(format!(
                "row {row}: expected 3 fields, got {}",
                record.len()
            )));
        }

        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: non-integer label {:?}", &record[0])))?;
        if label >= FER_CLASSES {
            return Err(Error::Data(format!(
                "row {row}: label {label} outside 0..={}",
                FER_CLASSES - 1
            )));
        }

        let mut pixels = Vec::with_capacity(FER_SIDE * FER_SIDE);
        for tok in record[1].split_ascii_whitespace() {
            let p: u16 = tok
                .parse()
                .map_err(|_| Error::Data(format!("row {row}: non-integer pixel {tok:?}")))?;
            if p > 255 {
                return Err(Error::Data(format!("row {row}: pixel {p} outside 0..=255")));
            }
            pixels.push(E::from_f64(p as f64 / 255.0));
        }
        if pixels.len() != FER_SIDE * FER_SIDE {
            return Err(Error::Data(format!(
                "row {row}: expected {} pixels, got {}",
                FER_SIDE * FER_SIDE,
                pixels.len()
            )));
        }

        let split = Split::from_usage(record[2].trim()).ok_or_else(|| {
            Error::Data(format!("row {row}: unknown usage {:?}", &record[2]))
        })?;

        let image = Tensor::from_vec(&[1, FER_SIDE, FER_SIDE], pixels)?;
        out.push((Sample::new(image, label)?, split));
    }
    Ok(out)
}
