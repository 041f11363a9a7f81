//! Tabular data model: immutable rows of raw string cells.
//!
//! Cells are never coerced at load time. Predicates decide how to read a
//! cell (`int(...)`, `real(...)` or as a plain string), so the loaded data
//! is exactly what the provider shipped.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file is empty, expected a header line")]
    MissingHeader { path: PathBuf },
    #[error("{path}: header column {position} has an empty name")]
    EmptyHeaderName { path: PathBuf, position: usize },
    #[error("{path}: duplicate header name {name:?}")]
    DuplicateHeaderName { path: PathBuf, name: String },
    #[error(
        "{path}: line {line}: duplicate header name {name:?} carries conflicting values {first:?} and {second:?}"
    )]
    ConflictingDuplicate {
        path: PathBuf,
        line: u64,
        name: String,
        first: String,
        second: String,
    },
    #[error("{path}: line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("{path}: line {line}: invalid UTF-8")]
    Encoding { path: PathBuf, line: u64 },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum RowError {
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("empty column name")]
    EmptyColumn,
    #[error("row has {found} values for {expected} columns")]
    Width { expected: usize, found: usize },
}

/// Error raised by a row predicate while filtering, tagged with the 0-based
/// row index where it happened.
#[derive(Debug, Error)]
#[error("row {index}: {source}")]
pub struct FilterError<E: std::error::Error + 'static> {
    pub index: usize,
    #[source]
    pub source: E,
}

/// Ordered, unique column names with a name → position index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Header {
    pub fn new<I, S>(names: I) -> Result<Self, RowError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(RowError::EmptyColumn);
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(RowError::DuplicateColumn(name.clone()));
            }
        }
        Ok(Header { names, index })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// SHA-256 over the sorted column names, so column order does not
    /// change the fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut sorted: Vec<&str> = self.names.iter().map(String::as_str).collect();
        sorted.sort_unstable();
        let mut hasher = Sha256::new();
        for name in sorted {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// One record: a lookup from column name to raw cell value.
#[derive(Clone)]
pub struct Row {
    header: Arc<Header>,
    values: Vec<String>,
}

impl Row {
    pub fn new(header: Arc<Header>, values: Vec<String>) -> Result<Self, RowError> {
        if values.len() != header.len() {
            return Err(RowError::Width {
                expected: header.len(),
                found: values.len(),
            });
        }
        Ok(Row { header, values })
    }

    /// Builds a standalone row from `(column, value)` pairs.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, RowError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let (names, values): (Vec<String>, Vec<String>) =
            pairs.into_iter().map(|(k, v)| (k.into(), v.into())).unzip();
        let header = Header::new(names)?;
        Ok(Row {
            header: Arc::new(header),
            values,
        })
    }

    pub fn get(&self, column: &str) -> Option<&str> {
        self.header
            .position(column)
            .map(|i| self.values[i].as_str())
    }

    pub fn columns(&self) -> &[String] {
        self.header.names()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.header
            .names()
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

// Rows compare as maps: same key set, same value per key.
impl PartialEq for Row {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.iter().all(|(k, v)| other.get(k) == Some(v))
    }
}

impl Eq for Row {}

impl fmt::Debug for Row {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}

/// An ordered collection of rows sharing one header. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    header: Arc<Header>,
    rows: Arc<[Row]>,
}

impl Dataset {
    pub fn new(header: Header, records: Vec<Vec<String>>) -> Result<Self, RowError> {
        let header = Arc::new(header);
        let rows = records
            .into_iter()
            .map(|values| Row::new(Arc::clone(&header), values))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset {
            header,
            rows: rows.into(),
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sub-dataset of the rows the predicate accepts, order preserved.
    pub fn filter_rows<F, E>(&self, mut predicate: F) -> Result<Dataset, FilterError<E>>
    where
        F: FnMut(usize, &Row) -> Result<bool, E>,
        E: std::error::Error + 'static,
    {
        let mut kept = Vec::new();
        for (index, row) in self.rows.iter().enumerate() {
            match predicate(index, row) {
                Ok(true) => kept.push(row.clone()),
                Ok(false) => {}
                Err(source) => return Err(FilterError { index, source }),
            }
        }
        Ok(Dataset {
            header: Arc::clone(&self.header),
            rows: kept.into(),
        })
    }

    /// Row count plus order-insensitive header hash.
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            row_count: self.row_count(),
            header_sha256: self.header.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Fingerprint {
    pub row_count: usize,
    pub header_sha256: String,
}

/// Loads an RFC 4180 CSV file whose first record is the header.
///
/// A header name may repeat only if every record carries the same value in
/// all of its copies; the copies then collapse into one column. Public
/// exports (ProPublica's COMPAS file among them) repeat columns this way.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, LoadError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| LoadError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, path)
}

/// Same as [`load_csv`] over any reader; `origin` names the source in errors.
pub fn read_csv<R: std::io::Read>(reader: R, origin: &Path) -> Result<Dataset, LoadError> {
    let path = || origin.to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(reader);

    let mut records = reader.byte_records();
    let raw_header = match records.next() {
        None => return Err(LoadError::MissingHeader { path: path() }),
        Some(record) => record.map_err(|e| csv_error(e, origin))?,
    };
    let raw_header = decode_record(&raw_header, origin)?;

    // first position of each name, and (kept, duplicate) position pairs
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    let mut kept = Vec::new();
    let mut duplicates = Vec::new();
    for (position, name) in raw_header.iter().enumerate() {
        if name.is_empty() {
            return Err(LoadError::EmptyHeaderName {
                path: path(),
                position: position + 1,
            });
        }
        match first_seen.get(name.as_str()) {
            Some(&first) => duplicates.push((first, position)),
            None => {
                first_seen.insert(name, position);
                kept.push(position);
            }
        }
    }
    let names: Vec<String> = kept.iter().map(|&i| raw_header[i].clone()).collect();
    let header = Header::new(names).map_err(|e| match e {
        RowError::DuplicateColumn(name) => LoadError::DuplicateHeaderName { path: path(), name },
        _ => LoadError::Csv {
            path: path(),
            message: e.to_string(),
        },
    })?;

    let expected = raw_header.len();
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(e, origin))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected {
            return Err(LoadError::FieldCount {
                path: path(),
                line,
                expected,
                found: record.len(),
            });
        }
        let fields = decode_record(&record, origin)?;
        for &(first, dup) in &duplicates {
            if fields[first] != fields[dup] {
                return Err(LoadError::ConflictingDuplicate {
                    path: path(),
                    line,
                    name: raw_header[first].clone(),
                    first: fields[first].clone(),
                    second: fields[dup].clone(),
                });
            }
        }
        let mut fields = fields;
        let values = if duplicates.is_empty() {
            fields
        } else {
            kept.iter()
                .map(|&i| std::mem::take(&mut fields[i]))
                .collect()
        };
        rows.push(values);
    }

    Dataset::new(header, rows).map_err(|e| LoadError::Csv {
        path: path(),
        message: e.to_string(),
    })
}

fn decode_record(record: &csv::ByteRecord, origin: &Path) -> Result<Vec<String>, LoadError> {
    let line = record.position().map_or(0, |p| p.line());
    record
        .iter()
        .map(|field| {
            std::str::from_utf8(field)
                .map(str::to_owned)
                .map_err(|_| LoadError::Encoding {
                    path: origin.to_path_buf(),
                    line,
                })
        })
        .collect()
}

fn csv_error(err: csv::Error, origin: &Path) -> LoadError {
    let line = err.position().map(|p| p.line());
    match err.kind() {
        csv::ErrorKind::Io(_) | csv::ErrorKind::Utf8 { .. } if line.is_some() => {
            LoadError::Encoding {
                path: origin.to_path_buf(),
                line: line.unwrap_or(0),
            }
        }
        _ => LoadError::Csv {
            path: origin.to_path_buf(),
            message: err.to_string(),
        },
    }
}
