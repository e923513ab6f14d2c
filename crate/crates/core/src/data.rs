//! Sample-by-variable tables and their CSV representation.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Role;

/// Measurement scale of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    #[default]
    Continuous,
    /// Integer level codes `0..levels`.
    Ordinal { levels: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    #[serde(default)]
    pub role: Role,
    #[serde(default)]
    pub kind: ColumnKind,
}

impl ColumnMeta {
    pub fn continuous(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
            kind: ColumnKind::Continuous,
        }
    }
}

/// Complete (no missing entries) numeric table; rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    columns: Vec<ColumnMeta>,
    index: HashMap<String, usize>,
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(columns: Vec<ColumnMeta>, values: DMatrix<f64>) -> Result<Self> {
        if columns.len() != values.ncols() {
            return Err(Error::InvalidData(format!(
                "{} column names for {} columns",
                columns.len(),
                values.ncols()
            )));
        }
        let mut index = HashMap::with_capacity(columns.len());
        for (j, c) in columns.iter().enumerate() {
            if index.insert(c.name.clone(), j).is_some() {
                return Err(Error::DuplicateNode(c.name.clone()));
            }
            let col = values.column(j);
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "column `{}` row {} is missing or non-finite",
                    c.name,
                    i + 1
                )));
            }
            if let ColumnKind::Ordinal { levels } = c.kind {
                if levels < 2 {
                    return Err(Error::InvalidData(format!(
                        "ordinal column `{}` needs at least 2 levels",
                        c.name
                    )));
                }
                if let Some(i) = col
                    .iter()
                    .position(|&v| v.fract() != 0.0 || v < 0.0 || v >= levels as f64)
                {
                    return Err(Error::InvalidData(format!(
                        "column `{}` row {}: {} is not a level code in 0..{}",
                        c.name,
                        i + 1,
                        col[i],
                        levels
                    )));
                }
            }
        }
        Ok(Self {
            columns,
            index,
            values,
        })
    }

    /// Continuous predictor columns with the given names.
    pub fn from_columns(names: &[&str], values: DMatrix<f64>) -> Result<Self> {
        let cols = names
            .iter()
            .map(|n| ColumnMeta::continuous(*n, Role::Predictor))
            .collect();
        Self::new(cols, values)
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.values.ncols()
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.columns.iter().map(|c| c.role).collect()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn column(&self, j: usize) -> DVectorView<'_, f64> {
        self.values.column(j)
    }

    pub fn column_by_name(&self, name: &str) -> Result<DVectorView<'_, f64>> {
        Ok(self.values.column(self.index_of(name)?))
    }

    /// Rows `rows` (repeats allowed), in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        let values = self.values.select_rows(rows);
        DataMatrix {
            columns: self.columns.clone(),
            index: self.index.clone(),
            values,
        }
    }

    /// Copy without the named columns; unknown names are an error.
    pub fn drop_columns(&self, names: &[&str]) -> Result<DataMatrix> {
        let mut drop = vec![false; self.n_columns()];
        for n in names {
            drop[self.index_of(n)?] = true;
        }
        let keep: Vec<usize> = (0..self.n_columns()).filter(|&j| !drop[j]).collect();
        self.select_columns(&keep)
    }

    pub fn select_columns(&self, keep: &[usize]) -> Result<DataMatrix> {
        let columns = keep.iter().map(|&j| self.columns[j].clone()).collect();
        DataMatrix::new(columns, self.values.select_columns(keep))
    }

    /// Copy with extra columns appended on the right.
    pub fn append_columns(&self, extra: Vec<ColumnMeta>, values: &DMatrix<f64>) -> Result<DataMatrix> {
        if values.nrows() != self.n_samples() {
            return Err(Error::ShapeMismatch {
                expected: self.n_samples(),
                found: values.nrows(),
            });
        }
        for c in &extra {
            if self.index.contains_key(&c.name) {
                return Err(Error::NameCollision(c.name.clone()));
            }
        }
        let mut out = DMatrix::zeros(self.n_samples(), self.n_columns() + extra.len());
        out.columns_mut(0, self.n_columns()).copy_from(&self.values);
        out.columns_mut(self.n_columns(), extra.len()).copy_from(values);
        let mut columns = self.columns.clone();
        columns.extend(extra);
        DataMatrix::new(columns, out)
    }

    /// Same values with column metadata replaced by `meta` where names match.
    pub fn with_metadata(&self, meta: &[ColumnMeta]) -> Result<DataMatrix> {
        let mut columns = self.columns.clone();
        for m in meta {
            let j = self.index_of(&m.name)?;
            columns[j] = m.clone();
        }
        DataMatrix::new(columns, self.values.clone())
    }

    /// Reads a headered CSV. Column metadata defaults to continuous
    /// predictors; use [`DataMatrix::with_metadata`] to apply roles.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let (names, values) = read_numeric_csv(reader)?;
        let cols = names
            .into_iter()
            .map(|n| ColumnMeta::continuous(n, Role::Predictor))
            .collect();
        Self::new(cols, values)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_numeric_csv(writer, &self.names(), &self.values)
    }
}

/// Formats a value with 17 significant digits, enough to round-trip any f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_numeric_csv<W: Write>(writer: W, names: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "{}", names.iter().map(|n| csv_quote(n)).collect::<Vec<_>>().join(","))?;
    for i in 0..values.nrows() {
        let row: Vec<String> = (0..values.ncols()).map(|j| format_f64(values[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn read_numeric_csv<R: Read>(reader: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().any(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "empty header".into(),
        });
    }
    let m = headers.len();
    let mut flat = Vec::new();
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_error(e, line))?;
        if rec.len() != m {
            return Err(Error::Parse {
                line,
                column: rec.len().min(m) + 1,
                message: format!("expected {m} fields, found {}", rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                column: j + 1,
                message: if field.is_empty() || field.eq_ignore_ascii_case("na") {
                    "missing value".to_string()
                } else {
                    format!("`{field}` is not a number")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: j + 1,
                    message: "missing or non-finite value".into(),
                });
            }
            flat.push(v);
        }
        rows += 1;
    }
    Ok((headers, DMatrix::from_row_slice(rows, m, &flat)))
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    Error::Parse {
        line,
        column: 0,
        message: e.to_string(),
    }
}

/// Residual table mirroring the modeled columns of a [`DataMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    roles: Vec<Role>,
    values: DMatrix<f64>,
}

impl ResidualMatrix {
    pub fn new(columns: &[ColumnMeta], values: DMatrix<f64>) -> Result<Self> {
        if columns.len() != values.ncols() {
            return Err(Error::InvalidData("residual column count mismatch".into()));
        }
        Ok(Self {
            names: columns.iter().map(|c| c.name.clone()).collect(),
            kinds: columns.iter().map(|c| c.kind).collect(),
            roles: columns.iter().map(|c| c.role).collect(),
            values,
        })
    }

    pub fn from_matrix(names: &[&str], values: DMatrix<f64>) -> Result<Self> {
        let cols: Vec<_> = names
            .iter()
            .map(|n| ColumnMeta::continuous(*n, Role::Predictor))
            .collect();
        Self::new(&cols, values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_by_name(&self, name: &str) -> Result<DVectorView<'_, f64>> {
        let j = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))?;
        Ok(self.values.column(j))
    }

    /// Copy keeping only columns whose role passes `keep`.
    pub fn filter_roles(&self, keep: impl Fn(Role) -> bool) -> ResidualMatrix {
        let idx: Vec<usize> = (0..self.n_columns()).filter(|&j| keep(self.roles[j])).collect();
        ResidualMatrix {
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            kinds: idx.iter().map(|&j| self.kinds[j]).collect(),
            roles: idx.iter().map(|&j| self.roles[j]).collect(),
            values: self.values.select_columns(&idx),
        }
    }

    /// Columns centered to mean 0 and scaled to unit sample standard deviation.
    pub fn standardized(&self) -> Result<DMatrix<f64>> {
        standardize_columns(&self.values).map_err(|j| {
            Error::DegenerateInput(format!("residual column `{}` has zero variance", self.names[j]))
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_numeric_csv(writer, &self.names, &self.values)
    }
}

/// Centers every column and divides by its sample standard deviation
/// (n - 1 denominator). Fails with the index of a constant column.
pub fn standardize_columns(x: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, usize> {
    let n = x.nrows();
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n as f64 - 1.0)).sqrt();
        let scale = col.amax().max(mean.abs()).max(f64::MIN_POSITIVE);
        if !(sd > 1e-12 * scale) || n < 2 {
            return Err(j);
        }
        col /= sd;
    }
    Ok(out)
}

pub fn mean(v: &DVectorView<'_, f64>) -> f64 {
    v.mean()
}

/// Pearson correlation of two equally long vectors.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

pub fn to_vec(v: DVectorView<'_, f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_codes() {
        let v = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(DataMatrix::from_columns(&["a"], v), Err(Error::InvalidData(_))));
        let cols = vec![ColumnMeta {
            name: "o".into(),
            role: Role::Predictor,
            kind: ColumnKind::Ordinal { levels: 3 },
        }];
        let ok = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(DataMatrix::new(cols.clone(), ok).is_ok());
        let bad = DMatrix::from_row_slice(2, 1, &[0.0, 3.0]);
        assert!(matches!(DataMatrix::new(cols.clone(), bad), Err(Error::InvalidData(_))));
        let frac = DMatrix::from_row_slice(2, 1, &[0.0, 0.5]);
        assert!(matches!(DataMatrix::new(cols, frac), Err(Error::InvalidData(_))));
    }

    #[test]
    fn csv_reports_row_of_malformed_record() {
        let text = "a,b\n1,2\n3,x\n";
        match DataMatrix::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = "a,b\n1,2\n3\n";
        assert!(matches!(
            DataMatrix::read_csv(short.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let missing = "a,b\n1,\n";
        assert!(matches!(
            DataMatrix::read_csv(missing.as_bytes()),
            Err(Error::Parse { line: 2, column: 2, .. })
        ));
    }

    #[test]
    fn append_checks_rows_and_names() {
        let d = DataMatrix::from_columns(&["a"], DMatrix::from_element(3, 1, 1.0)).unwrap();
        let extra = DMatrix::from_element(2, 1, 0.0);
        assert!(matches!(
            d.append_columns(vec![ColumnMeta::continuous("b", Role::Predictor)], &extra),
            Err(Error::ShapeMismatch { .. })
        ));
        let extra = DMatrix::from_element(3, 1, 0.0);
        assert!(matches!(
            d.append_columns(vec![ColumnMeta::continuous("a", Role::Predictor)], &extra),
            Err(Error::NameCollision(_))
        ));
    }

    #[test]
    fn standardize_flags_constant_column() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        assert_eq!(standardize_columns(&x).unwrap_err(), 1);
    }
}
