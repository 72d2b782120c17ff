//! Columnar text tables and schema-tagged JSON reports.
//!
//! A table is a block of `# key: value` metadata lines, one `# columns:` line
//! and whitespace-separated rows. Numbers are written in shortest round-trip
//! form, so reading a table back gives bit-identical values.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::wave::{SpectralData, WaveProfile};

pub const SCHEMA_WAVE: &str = "nagumo.wave-report/1";
pub const SCHEMA_SIMULATION: &str = "nagumo.simulation-report/1";
pub const SCHEMA_EXIT: &str = "nagumo.exit-result/1";
pub const SCHEMA_SCALING: &str = "nagumo.scaling-fit/1";
pub const SCHEMA_GROWTH: &str = "nagumo.growth-report/1";
pub const SCHEMA_METRIC: &str = "nagumo.metric-table/1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColumnTable {
    pub meta: Vec<(String, String)>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("table i/o: {e}"))
}

impl ColumnTable {
    pub fn new(names: &[&str]) -> Self {
        Self {
            meta: Vec::new(),
            names: names.iter().map(|s| s.to_string()).collect(),
            columns: vec![Vec::new(); names.len()],
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.names.len() {
            return Err(io_err(format!("row has {} values, expected {}", row.len(), self.names.len())));
        }
        self.columns.iter_mut().zip(row).for_each(|(c, v)| c.push(*v));
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| io_err(format!("no column named {name}")))
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in &self.meta {
            writeln!(w, "# {k}: {v}").map_err(io_err)?;
        }
        writeln!(w, "# columns: {}", self.names.join(" ")).map_err(io_err)?;
        for r in 0..self.rows() {
            let line: Vec<String> = self.columns.iter().map(|c| format!("{:e}", c[r])).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io_err)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut table = ColumnTable::default();
        let mut have_names = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(io_err)?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .split_once(':')
                    .ok_or_else(|| io_err(format!("line {}: malformed header", lineno + 1)))?;
                let (k, v) = (k.trim(), v.trim());
                if k == "columns" {
                    table.names = v.split_whitespace().map(str::to_string).collect();
                    table.columns = vec![Vec::new(); table.names.len()];
                    have_names = true;
                } else {
                    table.meta.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            if !have_names {
                return Err(io_err(format!("line {}: data before the columns header", lineno + 1)));
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| io_err(format!("line {}: {e}", lineno + 1))))
                .collect::<Result<Vec<f64>>>()?;
            table.push_row(&row)?;
        }
        if !have_names {
            return Err(io_err("missing columns header"));
        }
        Ok(table)
    }
}

/// `x, phi, dphi, psi` table of a front; `psi` is included when spectral
/// data are given.
pub fn profile_table(wave: &WaveProfile, spectral: Option<&SpectralData>) -> ColumnTable {
    let grid = wave.grid();
    let mut names = vec!["x", "phi", "dphi"];
    if spectral.is_some() {
        names.push("psi");
    }
    let mut t = ColumnTable::new(&names)
        .with_meta("half_length", grid.half_length())
        .with_meta("points", grid.points())
        .with_meta("speed", format!("{:e}", wave.speed));
    t.columns[0] = grid.coordinates();
    t.columns[1] = wave.profile.values().to_vec();
    t.columns[2] = wave.derivative.values().to_vec();
    if let Some(s) = spectral {
        t.columns[3] = s.psi_tw.values().to_vec();
    }
    t
}

/// Reads back a front written by [`profile_table`], e.g. as a Newton warm
/// start.
pub fn wave_from_table(t: &ColumnTable) -> Result<WaveProfile> {
    let parse = |k: &str| -> Result<f64> {
        t.meta_value(k)
            .ok_or_else(|| io_err(format!("missing {k}")))?
            .parse::<f64>()
            .map_err(io_err)
    };
    let grid = GridSpec::new(parse("half_length")?, parse("points")? as usize)?;
    let phi = GridFunction::new(grid, t.column("phi")?.to_vec())?;
    Ok(WaveProfile::from_parts(phi, parse("speed")?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema: String,
    #[serde(flatten)]
    pub body: T,
}

pub fn report_json<T: Serialize>(schema: &str, body: &T) -> Result<String> {
    let r = Report {
        schema: schema.to_string(),
        body,
    };
    serde_json::to_string_pretty(&r).map_err(io_err)
}

/// Parses a report and checks its schema tag.
pub fn parse_report<T: DeserializeOwned>(schema: &str, text: &str) -> Result<T> {
    let r: Report<T> = serde_json::from_str(text).map_err(io_err)?;
    if r.schema != schema {
        return Err(io_err(format!("schema {} where {schema} was expected", r.schema)));
    }
    Ok(r.body)
}
