//! Column-oriented numeric table keyed by `unit_id`, used for covariates,
//! intensities and synthetic model data.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    ids: Vec<String>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(ids: Vec<String>) -> Self {
        Table {
            ids,
            names: Vec::new(),
            columns: Vec::new(),
        }
    }

    /// A table with generated ids `0..n`.
    pub fn with_len(n: usize) -> Self {
        Table::new((0..n).map(|i| i.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.ids.len() {
            return Err(Error::InvalidInput(format!(
                "column `{name}` has {} values, table has {} rows",
                values.len(),
                self.ids.len()
            )));
        }
        if let Some(pos) = self.names.iter().position(|n| *n == name) {
            self.columns[pos] = values;
        } else {
            self.names.push(name);
            self.columns.push(values);
        }
        Ok(())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Table {
        Table {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    /// Reorders rows to follow `order` (a list of ids). Fails listing ids
    /// present on only one side.
    pub fn align_to(&self, order: &[String]) -> Result<Table> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let wanted: std::collections::HashSet<&str> = order.iter().map(|s| s.as_str()).collect();
        let missing: Vec<&str> = order
            .iter()
            .filter(|id| !index.contains_key(id.as_str()))
            .map(|s| s.as_str())
            .collect();
        let extra: Vec<&str> = self
            .ids
            .iter()
            .filter(|id| !wanted.contains(id.as_str()))
            .map(|s| s.as_str())
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::UnitMismatch(format!(
                "missing from covariates: [{}]; not in intensity table: [{}]",
                missing.join(", "),
                extra.join(", ")
            )));
        }
        let rows: Vec<usize> = order.iter().map(|id| index[id.as_str()]).collect();
        Ok(self.subset(&rows))
    }

    pub fn read_csv_file(path: &Path) -> Result<Table> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Table::read_csv(file)
    }

    /// Reads `unit_id,<col>,...`. Lines starting with `#` are comments; an
    /// empty cell reads as NaN.
    pub fn read_csv<R: Read>(reader: R) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let id_col = headers
            .iter()
            .position(|h| h == "unit_id")
            .ok_or_else(|| Error::MissingColumn("unit_id".into()))?;
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_col)
            .map(|(_, h)| h.to_string())
            .collect();
        let mut ids = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            ids.push(rec[id_col].to_string());
            let mut k = 0;
            for (i, field) in rec.iter().enumerate() {
                if i == id_col {
                    continue;
                }
                let v = if field.is_empty() {
                    f64::NAN
                } else {
                    field.parse::<f64>().map_err(|_| Error::MalformedRow {
                        line: line as u64 + 2,
                        reason: format!("column `{}`: `{field}` is not a number", names[k]),
                    })?
                };
                columns[k].push(v);
                k += 1;
            }
        }
        Ok(Table { ids, names, columns })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<table>", e);
        write!(out, "unit_id").map_err(io)?;
        for n in &self.names {
            write!(out, ",{n}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
        for (r, id) in self.ids.iter().enumerate() {
            write!(out, "{id}").map_err(io)?;
            for c in &self.columns {
                write!(out, ",{}", c[r]).map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        Ok(())
    }
}
