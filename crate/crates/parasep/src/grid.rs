//! Labeled sample tables: values of one scalar quantity on a (row label,
//! column label) product grid. Both greedy stages consume exactly this shape.

use std::io::{Read, Write};
use std::path::Path;

use crate::linalg::DMat;
use crate::scalar::{FieldTag, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    Empty,
    LabelCount {
        axis: &'static str,
        labels: usize,
        dim: usize,
    },
    DuplicateLabel {
        axis: &'static str,
        index: usize,
    },
    NonFiniteLabel {
        axis: &'static str,
        index: usize,
    },
    NonFiniteValue {
        row: usize,
        col: usize,
    },
    FieldMismatch {
        expect: &'static str,
        got: String,
    },
    Format(String),
}

impl std::fmt::Display for GridError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridError::Empty => write!(f, "grid must have at least one row and one column"),
            GridError::LabelCount { axis, labels, dim } => {
                write!(f, "{axis} labels ({labels}) do not match value table ({dim})")
            }
            GridError::DuplicateLabel { axis, index } => {
                write!(f, "duplicate {axis} label at position {index}")
            }
            GridError::NonFiniteLabel { axis, index } => {
                write!(f, "non-finite {axis} label at position {index}")
            }
            GridError::NonFiniteValue { row, col } => {
                write!(f, "non-finite value at ({row}, {col})")
            }
            GridError::FieldMismatch { expect, got } => {
                write!(f, "field tag mismatch: table holds {got}, expected {expect}")
            }
            GridError::Format(msg) => write!(f, "malformed grid table: {msg}"),
        }
    }
}

impl std::error::Error for GridError {}

/// Values of a scalar function sampled on a label product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid<T> {
    row_labels: Vec<f64>,
    col_labels: Vec<f64>,
    values: DMat<T>,
}

fn check_labels(axis: &'static str, labels: &[f64], dim: usize) -> Result<(), GridError> {
    if labels.len() != dim {
        return Err(GridError::LabelCount {
            axis,
            labels: labels.len(),
            dim,
        });
    }
    for (i, &l) in labels.iter().enumerate() {
        if !l.is_finite() {
            return Err(GridError::NonFiniteLabel { axis, index: i });
        }
        // Quadratic scan is fine at these sizes and needs no ordering.
        if labels[..i].contains(&l) {
            return Err(GridError::DuplicateLabel { axis, index: i });
        }
    }
    Ok(())
}

impl<T: Scalar> SampleGrid<T> {
    pub fn new(
        row_labels: Vec<f64>,
        col_labels: Vec<f64>,
        values: DMat<T>,
    ) -> Result<SampleGrid<T>, GridError> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(GridError::Empty);
        }
        check_labels("row", &row_labels, values.rows())?;
        check_labels("column", &col_labels, values.cols())?;
        for i in 0..values.rows() {
            for j in 0..values.cols() {
                if !values[(i, j)].is_finite() {
                    return Err(GridError::NonFiniteValue { row: i, col: j });
                }
            }
        }
        Ok(SampleGrid {
            row_labels,
            col_labels,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.cols()
    }

    pub fn row_labels(&self) -> &[f64] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[f64] {
        &self.col_labels
    }

    pub fn values(&self) -> &DMat<T> {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> T {
        self.values[(i, j)]
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    /// Swap the two axes. Useful for checking that a construction treats
    /// rows and columns symmetrically.
    pub fn transposed(&self) -> SampleGrid<T> {
        SampleGrid {
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            values: self.values.transpose(),
        }
    }

    /// Text form. First cell carries the field tag, the rest of the header
    /// row holds column labels; each body row starts with its row label.
    /// Numbers round-trip bit-exactly.
    pub fn to_csv<W: Write>(&self, w: W) -> Result<(), GridError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = Vec::with_capacity(1 + self.n_cols());
        header.push(T::FIELD.name().to_string());
        for &c in &self.col_labels {
            header.push(crate::scalar::fmt_f64_exact(c));
        }
        wtr.write_record(&header)
            .map_err(|e| GridError::Format(e.to_string()))?;
        for i in 0..self.n_rows() {
            let mut rec = Vec::with_capacity(1 + self.n_cols());
            rec.push(crate::scalar::fmt_f64_exact(self.row_labels[i]));
            for v in self.row(i) {
                rec.push(v.fmt_exact());
            }
            wtr.write_record(&rec)
                .map_err(|e| GridError::Format(e.to_string()))?;
        }
        wtr.flush().map_err(|e| GridError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn from_csv<R: Read>(r: R) -> Result<SampleGrid<T>, GridError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(false)
            .from_reader(r);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(rec) => rec.map_err(|e| GridError::Format(e.to_string()))?,
            None => return Err(GridError::Format("empty table".into())),
        };
        let mut fields = header.iter();
        let tag = fields.next().ok_or(GridError::Format("empty header".into()))?;
        match FieldTag::from_name(tag) {
            Some(t) if t == T::FIELD => {}
            Some(_) | None => {
                return Err(GridError::FieldMismatch {
                    expect: T::FIELD.name(),
                    got: tag.to_string(),
                })
            }
        }
        let col_labels: Vec<f64> = fields
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| GridError::Format(format!("bad column label {s:?}")))
            })
            .collect::<Result<_, _>>()?;
        let n_cols = col_labels.len();
        let mut row_labels = Vec::new();
        let mut rows: Vec<Vec<T>> = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| GridError::Format(e.to_string()))?;
            if rec.len() != n_cols + 1 {
                return Err(GridError::Format(format!(
                    "row {} has {} cells, expected {}",
                    rows.len(),
                    rec.len(),
                    n_cols + 1
                )));
            }
            let label = rec
                .get(0)
                .unwrap()
                .trim()
                .parse::<f64>()
                .map_err(|_| GridError::Format(format!("bad row label {:?}", rec.get(0))))?;
            row_labels.push(label);
            let mut vals = Vec::with_capacity(n_cols);
            for k in 1..rec.len() {
                let cell = rec.get(k).unwrap();
                let v = T::parse(cell).map_err(|e| GridError::Format(e.to_string()))?;
                vals.push(v);
            }
            rows.push(vals);
        }
        if rows.is_empty() || n_cols == 0 {
            return Err(GridError::Empty);
        }
        SampleGrid::new(row_labels, col_labels, DMat::from_rows(rows))
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), GridError> {
        let f = std::fs::File::create(path)
            .map_err(|e| GridError::Format(format!("{}: {e}", path.display())))?;
        self.to_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv_path(path: &Path) -> Result<SampleGrid<T>, GridError> {
        let f = std::fs::File::open(path)
            .map_err(|e| GridError::Format(format!("{}: {e}", path.display())))?;
        SampleGrid::from_csv(std::io::BufReader::new(f))
    }
}
