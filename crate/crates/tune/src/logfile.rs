//! Newline-delimited JSON logs.
//!
//! Training commands stream one [`LogLine`] per epoch so a run can be
//! watched with `tail -f`. The log is the only artifact that carries wall
//! clock time; everything else a command writes is a pure function of
//! (config, seed).

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use c2w_core::train::EpochRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// One epoch of a training log: the core [`EpochRecord`] plus elapsed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_dice: f64,
    pub trainable_tags: Vec<String>,
    /// Seconds since the start of training, the one non-reproducible field.
    pub wall_clock_s: f64,
}

impl LogLine {
    pub fn from_record(r: &EpochRecord, wall_clock_s: f64) -> Self {
        Self {
            epoch: r.epoch,
            loss: r.loss,
            lr: r.lr,
            val_dice: r.val_dice,
            trainable_tags: r.trainable_tags.clone(),
            wall_clock_s,
        }
    }
}

/// Line-buffered NDJSON writer; each record is flushed as it is written so
/// an interrupted run leaves a valid prefix of the log.
pub struct NdjsonWriter {
    out: BufWriter<File>,
}

impl NdjsonWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> io::Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

/// Read a whole NDJSON file back; blank lines are rejected, not skipped.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let record = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn round_trips_log_lines() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("log.ndjson");
        let lines = vec![
            LogLine {
                epoch: 1,
                loss: 0.75,
                lr: 1e-3,
                val_dice: 0.5,
                trainable_tags: vec!["head".into()],
                wall_clock_s: 0.25,
            },
            LogLine {
                epoch: 2,
                loss: 0.5,
                lr: 5e-4,
                val_dice: 0.625,
                trainable_tags: vec!["dec1".into(), "head".into()],
                wall_clock_s: 0.5,
            },
        ];
        let mut w = NdjsonWriter::create(&path).unwrap();
        for l in &lines {
            w.write(l).unwrap();
        }
        drop(w);
        let back: Vec<LogLine> = read_ndjson(&path).unwrap();
        assert_eq!(back, lines);
    }

    #[test]
    fn corrupt_lines_error_out() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("log.ndjson");
        std::fs::write(&path, "{\"epoch\": 1\n").unwrap();
        assert!(read_ndjson::<LogLine>(&path).is_err());
    }
}
