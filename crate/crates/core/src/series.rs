//! Uniformly sampled time series and the header-addressed CSV tables they
//! are read from.

use std::collections::BTreeMap;
use std::io::Read;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column {column:?}: {message}")]
    Cell { row: usize, column: String, message: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("time grid is not uniform at row {row}: step {found} s, expected {expected} s")]
    NonUniform { row: usize, found: f64, expected: f64 },
    #[error("series needs at least two samples")]
    TooShort,
    #[error("{0}")]
    Invalid(String),
}

/// Uniform time grid `start + i·step`, `i < len`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn end(&self) -> f64 {
        self.start + self.step * (self.len.saturating_sub(1)) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        let tol = 1e-9 * self.step.max(1.0);
        t0 >= self.start - tol && t1 <= self.end() + tol
    }

    /// Bracketing sample and interpolation weight for `t`, clamped to the
    /// grid.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        if self.len < 2 || t <= self.start {
            return (0, 0.0);
        }
        let u = (t - self.start) / self.step;
        let i = u.floor() as usize;
        if i >= self.len - 1 {
            return (self.len - 2, 1.0);
        }
        (i, u - i as f64)
    }

    /// Index of the interval `[t_i, t_{i+1})` containing `t`, clamped.
    pub fn interval(&self, t: f64) -> usize {
        if self.len < 2 || t <= self.start {
            return 0;
        }
        (((t - self.start) / self.step).floor() as usize).min(self.len - 2)
    }
}

/// Linear interpolation in a column sampled on `grid`.
pub fn interp(grid: &UniformGrid, values: &[f64], t: f64) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    let (i, w) = grid.locate(t);
    if w == 0.0 {
        values[i]
    } else {
        values[i] + w * (values[i + 1] - values[i])
    }
}

/// A CSV file held as named `f64` columns on a uniform `time_s` grid.
#[derive(Clone, Debug)]
pub struct Table {
    pub grid: UniformGrid,
    pub columns: BTreeMap<String, Vec<f64>>,
    pub order: Vec<String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<&[f64], SeriesError> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| SeriesError::MissingColumn(name.to_string()))
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, SeriesError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let time_idx = headers
            .iter()
            .position(|h| h == "time_s")
            .ok_or_else(|| SeriesError::MissingColumn("time_s".into()))?;
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (c, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| SeriesError::Cell {
                    row: r + 2,
                    column: headers[c].clone(),
                    message: format!("cannot parse {cell:?}"),
                })?;
                if !v.is_finite() {
                    return Err(SeriesError::Cell {
                        row: r + 2,
                        column: headers[c].clone(),
                        message: "non-finite value".into(),
                    });
                }
                cols[c].push(v);
            }
        }
        let times = &cols[time_idx];
        let grid = uniform_grid(times)?;
        let mut columns = BTreeMap::new();
        let mut order = Vec::new();
        for (h, c) in headers.into_iter().zip(cols) {
            if h != "time_s" {
                order.push(h.clone());
                columns.insert(h, c);
            }
        }
        Ok(Self { grid, columns, order })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, SeriesError> {
        let f = std::fs::File::open(path).map_err(|e| SeriesError::Invalid(format!("{}: {e}", path.display())))?;
        Self::read(f)
    }
}

/// Checks a time column for a uniform step.
pub fn uniform_grid(times: &[f64]) -> Result<UniformGrid, SeriesError> {
    if times.len() < 2 {
        return Err(SeriesError::TooShort);
    }
    let step = times[1] - times[0];
    if step <= 0.0 {
        return Err(SeriesError::NonUniform {
            row: 3,
            found: step,
            expected: step,
        });
    }
    for (i, w) in times.windows(2).enumerate() {
        let d = w[1] - w[0];
        if (d - step).abs() > 1e-6 * step {
            return Err(SeriesError::NonUniform {
                row: i + 3,
                found: d,
                expected: step,
            });
        }
    }
    Ok(UniformGrid {
        start: times[0],
        step,
        len: times.len(),
    })
}

/// Writes `time_s` plus named columns, all on one time axis.
pub fn write_csv<W: std::io::Write>(
    writer: W,
    times: &[f64],
    columns: &[(String, &[f64])],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time_s".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (i, t) in times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(columns.iter().map(|(_, c)| c[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
