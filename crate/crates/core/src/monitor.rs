//! Per-step CSV records (`monitor.csv`) and their reader.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::StepInfo;

/// Columns following the observation and action columns.
pub const TRAILING_COLUMNS: [&str; 6] = ["reward", "energy_term", "comfort_term", "power_W", "violation_C", "truncated"];

pub struct MonitorWriter {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    field: String,
    rows: usize,
}

impl MonitorWriter {
    pub fn create(path: &Path, obs_names: &[String], act_names: &[String]) -> std::io::Result<Self> {
        let file = File::create(path)?;
        let mut writer = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
        let mut header: Vec<&str> = vec!["step", "month", "day", "hour"];
        header.extend(obs_names.iter().map(String::as_str));
        header.extend(act_names.iter().map(String::as_str));
        header.extend(TRAILING_COLUMNS.iter().copied());
        writer.write_record(&header).map_err(into_io)?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
            field: String::with_capacity(32),
            rows: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn num(&mut self, v: f64) -> std::io::Result<()> {
        self.field.clear();
        write!(self.field, "{v}").expect("write to String");
        self.writer.write_field(&self.field).map_err(into_io)
    }

    pub fn write_row(
        &mut self,
        info: &StepInfo,
        observation: &[f64],
        action: &[f64],
        reward: f64,
        truncated: bool,
    ) -> std::io::Result<()> {
        self.writer.write_field(info.timestep.to_string()).map_err(into_io)?;
        self.writer.write_field(info.month.to_string()).map_err(into_io)?;
        self.writer.write_field(info.day.to_string()).map_err(into_io)?;
        self.writer.write_field(info.hour.to_string()).map_err(into_io)?;
        for &v in observation {
            self.num(v)?;
        }
        for &v in action {
            self.num(v)?;
        }
        self.num(reward)?;
        self.num(info.energy_term)?;
        self.num(info.comfort_term)?;
        self.num(info.total_power)?;
        self.num(info.violation)?;
        self.writer
            .write_field(if truncated { "true" } else { "false" })
            .map_err(into_io)?;
        self.writer.write_record(None::<&[u8]>).map_err(into_io)?;
        self.rows += 1;
        if truncated {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.writer.flush()
    }
}

impl Drop for MonitorWriter {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

fn into_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

/// The columns of a monitor row needed for metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub month: u8,
    pub reward: f64,
    pub power: f64,
    pub violation: f64,
}

/// Reads the metric-relevant columns of a monitor file.
pub fn read_monitor(path: &Path) -> Result<Vec<LogRow>, csv::Error> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    // Observation columns may repeat names such as `month`; the fixed
    // leading and trailing columns are located by position.
    let n = headers.len();
    let bad = |m: &str| csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string()));
    if n < 10 || &headers[0] != "step" || &headers[1] != "month" || &headers[n - 6] != "reward" {
        return Err(bad("not a monitor file"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |k: usize| record[k].parse::<f64>().map_err(|_| bad("non-numeric monitor field"));
        rows.push(LogRow {
            month: record[1].parse::<u8>().map_err(|_| bad("bad month"))?,
            reward: parse(n - 6)?,
            power: parse(n - 3)?,
            violation: parse(n - 2)?,
        });
    }
    Ok(rows)
}
