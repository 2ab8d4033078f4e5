//! Tabular input and output.
//!
//! Covariates are the columns whose name starts with `x_`, kept in header order. The
//! reserved columns are `d`, `y`, `z`, `y_proxy`, `g` and `score`; any other name is rejected.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use selbounds::RawRecord;

use crate::error::{CliError, Result};

pub const RESERVED: [&str; 6] = ["d", "y", "z", "y_proxy", "g", "score"];

/// Records read from a table, plus the optional score column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub covariates: Vec<String>,
    pub records: Vec<RawRecord>,
    pub score: Option<Vec<f64>>,
}

#[derive(Default)]
struct Layout {
    x: Vec<usize>,
    d: Option<usize>,
    y: Option<usize>,
    z: Option<usize>,
    y_proxy: Option<usize>,
    g: Option<usize>,
    score: Option<usize>,
}

fn layout(header: &csv::StringRecord, path: &Path, need_outcomes: bool) -> Result<(Layout, Vec<String>)> {
    let err = |message: String| CliError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let mut l = Layout::default();
    let mut names = Vec::new();
    for (j, name) in header.iter().enumerate() {
        let name = name.trim();
        let slot = match name {
            "d" => &mut l.d,
            "y" => &mut l.y,
            "z" => &mut l.z,
            "y_proxy" => &mut l.y_proxy,
            "g" => &mut l.g,
            "score" => &mut l.score,
            _ if name.starts_with("x_") => {
                l.x.push(j);
                names.push(name.to_string());
                continue;
            }
            _ if !need_outcomes => continue,
            _ => return Err(err(format!("unexpected column `{name}`"))),
        };
        if slot.replace(j).is_some() {
            return Err(err(format!("duplicate column `{name}`")));
        }
    }
    if l.x.is_empty() {
        return Err(err("no covariate columns (prefix `x_`)".into()));
    }
    if need_outcomes {
        for (name, c) in [("d", l.d), ("y", l.y)] {
            if c.is_none() {
                return Err(err(format!("missing required column `{name}`")));
            }
        }
    }
    Ok((l, names))
}

fn number(row: &csv::StringRecord, j: usize, name: &str, path: &Path, line: u64) -> Result<f64> {
    let cell = row.get(j).unwrap_or("").trim();
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("column `{name}`: cannot parse `{cell}` as a finite number"),
        })
}

fn binary(v: f64, name: &str, path: &Path, line: u64) -> Result<f64> {
    if v == 0.0 || v == 1.0 {
        Ok(v)
    } else {
        Err(CliError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("column `{name}` must be 0 or 1, found {v}"),
        })
    }
}

fn read_table(reader: impl Read, path: &Path, need_outcomes: bool) -> Result<Table> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let (l, covariates) = layout(&header, path, need_outcomes)?;
    let mut records = Vec::new();
    let mut score = l.score.map(|_| Vec::new());
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = i as u64 + 2;
        let x = l
            .x
            .iter()
            .zip(&covariates)
            .map(|(&j, name)| number(&row, j, name, path, line))
            .collect::<Result<Vec<f64>>>()?;
        let bin = |c: Option<usize>, name: &str| -> Result<Option<f64>> {
            c.map(|j| binary(number(&row, j, name, path, line)?, name, path, line))
                .transpose()
        };
        let (d, y) = if need_outcomes {
            (bin(l.d, "d")?.unwrap_or(0.0), bin(l.y, "y")?.unwrap_or(0.0))
        } else {
            (0.0, 0.0)
        };
        let z = l.z.map(|j| number(&row, j, "z", path, line)).transpose()?;
        if let (Some(s), Some(j)) = (score.as_mut(), l.score) {
            s.push(number(&row, j, "score", path, line)?);
        }
        records.push(RawRecord {
            x,
            d,
            y,
            z,
            y_proxy: bin(l.y_proxy, "y_proxy")?,
            g: bin(l.g, "g")?,
        });
    }
    Ok(Table {
        covariates,
        records,
        score,
    })
}

/// Reads a record table. Binary columns are checked here; the remaining model
/// constraints are enforced by `validate_dataset`.
pub fn load_csv(path: &Path) -> Result<Table> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_table(f, path, true)
}

/// Reads only the `x_` columns; other columns are ignored.
pub fn load_covariates(path: &Path) -> Result<Table> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_table(f, path, false)
}

/// Same as [`load_csv`] for an in-memory table.
pub fn parse_csv(text: &str) -> Result<Table> {
    read_table(text.as_bytes(), Path::new("<memory>"), true)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Serializes records with fixed column order; floats use the shortest exact representation.
pub fn write_csv(path: &Path, records: &[RawRecord], score: Option<&[f64]>) -> Result<()> {
    let mut buf = Vec::new();
    write_table(&mut buf, records, score)?;
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

pub fn write_table(out: &mut impl Write, records: &[RawRecord], score: Option<&[f64]>) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.x.len());
    let has = |f: fn(&RawRecord) -> Option<f64>| records.iter().any(|r| f(r).is_some());
    let (hz, hp, hg) = (has(|r| r.z), has(|r| r.y_proxy), has(|r| r.g));
    let mut header: Vec<String> = (0..dim).map(|j| format!("x_{j}")).collect();
    header.extend(["d".to_string(), "y".to_string()]);
    for (on, name) in [(hz, "z"), (hp, "y_proxy"), (hg, "g"), (score.is_some(), "score")] {
        if on {
            header.push(name.into());
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let wrap = |source| CliError::Csv {
        path: "<output>".into(),
        source,
    };
    w.write_record(&header).map_err(wrap)?;
    for (i, r) in records.iter().enumerate() {
        let mut row: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        row.push(r.d.to_string());
        row.push(r.y.to_string());
        if hz {
            row.push(fmt_opt(r.z));
        }
        if hp {
            row.push(fmt_opt(r.y_proxy));
        }
        if hg {
            row.push(fmt_opt(r.g));
        }
        if let Some(s) = score {
            row.push(s[i].to_string());
        }
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io("<output>", e))
}

/// Writes a header and rows of already formatted cells.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let wrap = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
