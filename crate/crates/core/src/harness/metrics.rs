use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::BehaviorLevel;
use crate::error::{Error, Result};
use crate::numfmt::format_real;

pub const COMPLETE_MARKER: &str = "# complete";
pub const INCOMPLETE_MARKER: &str = "# incomplete";

/// Per-level statistics; `None` when no client of that level contributed.
pub type LevelStats = [Option<f64>; 4];

/// One row per (seed, round).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub algorithm: String,
    pub seed: u64,
    pub round: usize,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub n_sampled: usize,
    /// Mean policy value over the sampled clients.
    pub mean_value: f64,
    /// Mean aggregation weight of the sampled clients of each level.
    pub mean_weight: LevelStats,
    /// Mean decay coefficient over all clients of each level.
    pub mean_decay: LevelStats,
    pub mean_decay_all: f64,
}

pub fn level_index(level: BehaviorLevel) -> usize {
    BehaviorLevel::ALL.iter().position(|&l| l == level).expect("level listed in ALL")
}

pub fn header() -> String {
    let mut cols: Vec<String> =
        ["algo", "seed", "round", "eval_mean", "eval_std", "n_sampled", "mean_value"].map(String::from).to_vec();
    cols.extend(BehaviorLevel::ALL.iter().map(|l| format!("mean_weight_{l}")));
    cols.extend(BehaviorLevel::ALL.iter().map(|l| format!("mean_decay_{l}")));
    cols.push("mean_decay_all".into());
    cols.join(",")
}

fn opt(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut cols = vec![
            self.algorithm.clone(),
            self.seed.to_string(),
            self.round.to_string(),
            format_real(self.eval_mean),
            format_real(self.eval_std),
            self.n_sampled.to_string(),
            format_real(self.mean_value),
        ];
        cols.extend(self.mean_weight.iter().map(|&v| opt(v)));
        cols.extend(self.mean_decay.iter().map(|&v| opt(v)));
        cols.push(format_real(self.mean_decay_all));
        cols.join(",")
    }

    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::Parse { line: line_no, message };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 16 {
            return Err(err(format!("expected 16 columns, found {}", cols.len())));
        }
        let real = |i: usize| cols[i].parse::<f64>().map_err(|e| err(format!("column {i}: {e}")));
        let int = |i: usize| cols[i].parse::<u64>().map_err(|e| err(format!("column {i}: {e}")));
        let optional = |i: usize| if cols[i].is_empty() { Ok(None) } else { real(i).map(Some) };
        let mut mean_weight = [None; 4];
        let mut mean_decay = [None; 4];
        for k in 0..4 {
            mean_weight[k] = optional(7 + k)?;
            mean_decay[k] = optional(11 + k)?;
        }
        Ok(Self {
            algorithm: cols[0].to_string(),
            seed: int(1)?,
            round: int(2)? as usize,
            eval_mean: real(3)?,
            eval_std: real(4)?,
            n_sampled: int(5)? as usize,
            mean_value: real(6)?,
            mean_weight,
            mean_decay,
            mean_decay_all: real(15)?,
        })
    }
}

/// Streams rows to a CSV file, flushing after every row.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self { out: BufWriter::new(file), path: path.to_path_buf() };
        w.line(&header())?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").and_then(|_| self.out.flush()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        self.line(&row.to_csv())
    }

    pub fn finish(mut self, outcome: std::result::Result<(), &Error>) -> Result<()> {
        match outcome {
            Ok(()) => self.line(COMPLETE_MARKER),
            Err(e) => self.line(&format!("{INCOMPLETE_MARKER}: {}", e.to_string().replace('\n', " "))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsFile {
    pub rows: Vec<MetricsRow>,
    pub complete: bool,
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut complete = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != header() {
                return Err(Error::Parse { line: 1, message: "metrics header does not match the expected schema".into() });
            }
            continue;
        }
        if line.starts_with('#') {
            complete = line == COMPLETE_MARKER;
            continue;
        }
        rows.push(MetricsRow::parse(&line, i + 1)?);
    }
    Ok(MetricsFile { rows, complete })
}
