//! Comma-separated tables with a header row. Floats are written with 17
//! significant digits so every value reads back bit for bit.

use std::collections::HashMap;
use std::path::Path;

use crate::akm::FirmQuality;
use crate::error::{Error, Result};
use crate::synth::{FirmYear, MatchRecord};

/// Round-trip float formatting.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

/// A table ready to be written: header plus string cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.display().to_string()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Table { header, rows })
    }

    /// Parse one column by name.
    pub fn column<T: std::str::FromStr>(&self, name: &str) -> Result<Vec<T>> {
        rows(self, |r| r.get(name))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.header.iter().any(|h| h == name)
    }

    fn columns(&self) -> HashMap<&str, usize> {
        self.header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect()
    }
}

/// Typed access to a row by column name.
struct Row<'a> {
    cells: &'a [String],
    cols: &'a HashMap<&'a str, usize>,
    line: usize,
}

impl Row<'_> {
    fn raw(&self, name: &str) -> Result<Option<&str>> {
        Ok(self.cols.get(name).map(|&i| self.cells[i].as_str()))
    }

    fn get<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        let v = self.raw(name)?.ok_or_else(|| Error::MissingInput(format!("column `{name}`")))?;
        v.parse().map_err(|_| Error::Io(format!("line {}: cannot parse `{v}` in column `{name}`", self.line)))
    }

    fn get_or<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T> {
        match self.raw(name)? {
            Some(_) => self.get(name),
            None => Ok(default),
        }
    }
}

fn rows<T>(table: &Table, f: impl Fn(&Row) -> Result<T>) -> Result<Vec<T>> {
    let cols = table.columns();
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, cells)| f(&Row { cells, cols: &cols, line: i + 2 }))
        .collect()
}

pub const FIRM_COLUMNS: [&str; 15] = [
    "firm_id", "sector", "year", "value_added", "capital", "labor_count", "materials", "p_g", "p_m", "share", "omega",
    "omega_x", "x", "y", "eps",
];

pub fn firms_table(firms: &[FirmYear]) -> Table {
    let mut t = Table::new(&FIRM_COLUMNS);
    for r in firms {
        t.push(vec![
            r.firm_id.to_string(),
            r.sector.to_string(),
            r.year.to_string(),
            fmt_f64(r.f),
            fmt_f64(r.k),
            fmt_f64(r.l),
            fmt_f64(r.m),
            fmt_f64(r.p_g),
            fmt_f64(r.p_m),
            fmt_f64(r.s),
            fmt_f64(r.omega),
            fmt_f64(r.omega_x),
            fmt_f64(r.x),
            fmt_f64(r.y),
            fmt_f64(r.eps),
        ]);
    }
    t
}

/// Truth columns (omega, omega_x, x, y, eps) are optional and read as NaN
/// when absent.
pub fn read_firms(path: &Path) -> Result<Vec<FirmYear>> {
    rows(&Table::read(path)?, |r| {
        Ok(FirmYear {
            firm_id: r.get("firm_id")?,
            sector: r.get("sector")?,
            year: r.get("year")?,
            f: r.get("value_added")?,
            k: r.get("capital")?,
            l: r.get("labor_count")?,
            m: r.get("materials")?,
            p_g: r.get("p_g")?,
            p_m: r.get("p_m")?,
            s: r.get_or("share", f64::NAN)?,
            omega: r.get_or("omega", f64::NAN)?,
            omega_x: r.get_or("omega_x", f64::NAN)?,
            x: r.get_or("x", f64::NAN)?,
            y: r.get_or("y", f64::NAN)?,
            eps: r.get_or("eps", f64::NAN)?,
        })
    })
}

pub const MATCH_COLUMNS: [&str; 9] =
    ["worker_id", "firm_id", "year", "earnings", "age", "sex", "owner_flag", "alpha_i", "is_top"];

fn match_cells(m: &MatchRecord) -> Vec<String> {
    vec![
        m.worker_id.to_string(),
        m.firm_id.to_string(),
        m.year.to_string(),
        fmt_f64(m.earnings),
        m.age.to_string(),
        m.sex.to_string(),
        (m.is_owner as u8).to_string(),
        fmt_f64(m.alpha_true),
        (m.is_top as u8).to_string(),
    ]
}

pub fn matches_table(matches: &[MatchRecord]) -> Table {
    let mut t = Table::new(&MATCH_COLUMNS);
    for m in matches {
        t.push(match_cells(m));
    }
    t
}

/// Matches with extra per-row float columns appended.
pub fn matches_with_columns(matches: &[MatchRecord], extra: &[(&str, &[f64])]) -> Table {
    let mut header: Vec<&str> = MATCH_COLUMNS.to_vec();
    header.extend(extra.iter().map(|e| e.0));
    let mut t = Table::new(&header);
    for (i, m) in matches.iter().enumerate() {
        let mut cells = match_cells(m);
        cells.extend(extra.iter().map(|e| fmt_f64(e.1[i])));
        t.push(cells);
    }
    t
}

fn flag(r: &Row, name: &str) -> Result<bool> {
    Ok(r.get_or::<u8>(name, 0)? != 0)
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchRecord>> {
    rows(&Table::read(path)?, |r| {
        Ok(MatchRecord {
            worker_id: r.get("worker_id")?,
            firm_id: r.get("firm_id")?,
            year: r.get("year")?,
            earnings: r.get("earnings")?,
            age: r.get("age")?,
            sex: r.get("sex")?,
            is_owner: flag(r, "owner_flag")?,
            alpha_true: r.get_or("alpha_i", f64::NAN)?,
            is_top: flag(r, "is_top")?,
        })
    })
}

/// Read one float column of a table by name.
pub fn read_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    Table::read(path)?.column(name)
}

pub fn quality_table(rows: &[FirmQuality]) -> Table {
    let mut t = Table::new(&["firm_id", "year", "ln_y", "ln_x", "n_top", "n_nontop"]);
    for q in rows {
        t.push(vec![
            q.firm_id.to_string(),
            q.year.to_string(),
            fmt_f64(q.ln_y),
            fmt_f64(q.ln_x),
            q.n_top.to_string(),
            q.n_nontop.to_string(),
        ]);
    }
    t
}

pub fn read_quality(path: &Path) -> Result<Vec<FirmQuality>> {
    rows(&Table::read(path)?, |r| {
        Ok(FirmQuality {
            firm_id: r.get("firm_id")?,
            year: r.get("year")?,
            ln_y: r.get("ln_y")?,
            ln_x: r.get("ln_x")?,
            n_top: r.get("n_top")?,
            n_nontop: r.get("n_nontop")?,
        })
    })
}

/// Plain values, one per line, optionally under a single header line.
pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::Io(format!("line {}: `{line}` is not a number", i + 1))),
        }
    }
    Ok(out)
}
