//! Output files. Every CSV has a header row and ends with a `#` comment line
//! holding the exact invocation, plus any notes about how it was produced.

use std::fs;
use std::path::Path;

use serde::Serialize;
use ulot::tensor::Tensor;

use crate::error::{CliError, Result};

/// The command line as typed, with arguments quoted where the shell would
/// need it.
pub fn invocation() -> String {
    std::env::args()
        .map(|a| {
            if !a.is_empty() && a.chars().all(|c| c.is_ascii_alphanumeric() || "-_./,:=+@%".contains(c)) {
                a
            } else {
                format!("'{}'", a.replace('\'', r"'\''"))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("outputs serialize") + "\n";
    write_file(path, text)
}

/// A CSV table built in memory and written in one go.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    notes: Vec<String>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(|c| c.to_string()).collect();
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Appends a note to the metadata line.
    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.notes.push(note.into());
        self
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let mut text = String::from_utf8(w.into_inner().map_err(|e| CliError::Input(e.to_string()))?)
            .expect("csv of utf-8 fields");
        let mut meta = format!("# invocation: {}", invocation());
        for n in &self.notes {
            meta.push_str("; ");
            meta.push_str(n);
        }
        text.push_str(&meta.replace('\n', " "));
        text.push('\n');
        Ok(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv()?)
    }
}

/// A matrix as CSV with columns `prefix0, prefix1, ...`.
pub fn matrix_table(m: &Tensor, prefix: &str) -> Table {
    let mut t = Table::new((0..m.cols()).map(|j| format!("{prefix}{j}")));
    for i in 0..m.rows() {
        t.push(m.row(i));
    }
    t
}

/// Reads a CSV with a header row, skipping `#` comment lines.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = read_file(path)?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

/// Reads a matrix written by [`matrix_table`].
pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let (_, rows) = read_table(path)?;
    let parsed = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Input(format!("{}: row {}: not a number: {c:?}", path.display(), i + 1)))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&parsed).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Column `name` of a table parsed as numbers; empty cells become NaN.
pub fn numeric_column(header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>> {
    let k = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Input(format!("no column {name:?}; columns are {}", header.join(", "))))?;
    rows.iter()
        .map(|r| {
            let cell = r.get(k).map_or("", |c| c.trim());
            if cell.is_empty() {
                Ok(f64::NAN)
            } else {
                cell.parse().map_err(|_| CliError::Input(format!("column {name}: not a number: {cell:?}")))
            }
        })
        .collect()
}

/// Formats an optional number as an empty cell when missing.
pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}
