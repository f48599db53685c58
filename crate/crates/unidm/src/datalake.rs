//! Relational tables loaded from CSV, with cell access, ground-truth masking
//! and seeded record sampling.
//!
//! Tables are immutable after load. Masking and sampling return new values and
//! take explicit seeds (ChaCha8), so repeated runs over one loaded lake are
//! reproducible and safe to share across workers.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataLakeError {
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
    #[error("duplicate attribute in header: {0}")]
    DuplicateAttribute(String),
    #[error("empty header row")]
    EmptyHeader,
    #[error("unknown attribute: {0}")]
    UnknownAttribute(String),
    #[error("row {0} out of range")]
    RowOutOfRange(usize),
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("no maskable cells under attribute {0}")]
    NoMaskableCells(String),
}

/// A named column position within one table's schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub position: usize,
}

/// A cell either holds text or is missing. Cells equal to the configured
/// missing sentinel become `Missing` at load time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellValue {
    Present(String),
    Missing,
}

impl CellValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            CellValue::Present(t) => Some(t),
            CellValue::Missing => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub index: usize,
    pub cells: Vec<CellValue>,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub schema: Vec<Attribute>,
    pub records: Vec<Record>,
}

impl Table {
    pub fn attribute_position(&self, name: &str) -> Result<usize, DataLakeError> {
        self.schema
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.position)
            .ok_or_else(|| DataLakeError::UnknownAttribute(name.to_string()))
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.schema.iter().map(|a| a.name.clone()).collect()
    }

    /// Cell access by row index and attribute name, without mutation.
    pub fn cell(&self, row: usize, attribute: &str) -> Result<&CellValue, DataLakeError> {
        let pos = self.attribute_position(attribute)?;
        let record = self
            .records
            .get(row)
            .ok_or(DataLakeError::RowOutOfRange(row))?;
        Ok(&record.cells[pos])
    }
}

#[derive(Debug, Clone, Default)]
pub struct DataLake {
    pub tables: Vec<Table>,
}

impl DataLake {
    pub fn table(&self, name: &str) -> Result<&Table, DataLakeError> {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| DataLakeError::UnknownTable(name.to_string()))
    }

    pub fn add_table(&mut self, table: Table) {
        self.tables.retain(|t| t.name != table.name);
        self.tables.push(table);
    }
}

/// Expected texts for masked cells, keyed by (table, row, attribute).
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub entries: BTreeMap<(String, usize, String), String>,
}

impl GroundTruth {
    pub fn get(&self, table: &str, row: usize, attribute: &str) -> Option<&str> {
        self.entries
            .get(&(table.to_string(), row, attribute.to_string()))
            .map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Load an RFC 4180 CSV (UTF-8, header row first) into a [`Table`].
///
/// Cells equal to `missing_sentinel` (the empty string by default in the CLI)
/// become [`CellValue::Missing`].
pub fn load_table<R: Read>(
    source: R,
    name: &str,
    missing_sentinel: &str,
) -> Result<Table, DataLakeError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| DataLakeError::MalformedCsv(e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(DataLakeError::EmptyHeader);
    }

    let mut seen = HashSet::new();
    let mut schema = Vec::with_capacity(headers.len());
    for (position, header) in headers.iter().enumerate() {
        if !seen.insert(header.to_string()) {
            return Err(DataLakeError::DuplicateAttribute(header.to_string()));
        }
        schema.push(Attribute {
            name: header.to_string(),
            position,
        });
    }

    let mut records = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let row = row.map_err(|e| DataLakeError::MalformedCsv(e.to_string()))?;
        let cells = row
            .iter()
            .map(|cell| {
                if cell == missing_sentinel {
                    CellValue::Missing
                } else {
                    CellValue::Present(cell.to_string())
                }
            })
            .collect();
        records.push(Record { index, cells });
    }

    Ok(Table {
        name: name.to_string(),
        schema,
        records,
    })
}

/// Mask a seeded subset of the present cells under `attribute`, returning the
/// masked copy and the ground truth of the original texts. Exactly
/// `ceil(fraction * present_count)` cells are masked; the input table is left
/// untouched.
pub fn mask_cells(
    table: &Table,
    attribute: &str,
    fraction: f64,
    seed: u64,
) -> Result<(Table, GroundTruth), DataLakeError> {
    let pos = table.attribute_position(attribute)?;
    let present: Vec<usize> = table
        .records
        .iter()
        .filter(|r| !r.cells[pos].is_missing())
        .map(|r| r.index)
        .collect();
    if present.is_empty() {
        return Err(DataLakeError::NoMaskableCells(attribute.to_string()));
    }

    let count = ((fraction * present.len() as f64).ceil() as usize).min(present.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<usize> = rand::seq::index::sample(&mut rng, present.len(), count)
        .into_iter()
        .map(|i| present[i])
        .collect();

    let mut masked = table.clone();
    let mut truth = GroundTruth::default();
    for record in &mut masked.records {
        if chosen.contains(&record.index) {
            if let CellValue::Present(text) = &record.cells[pos] {
                truth.entries.insert(
                    (table.name.clone(), record.index, attribute.to_string()),
                    text.clone(),
                );
            }
            record.cells[pos] = CellValue::Missing;
        }
    }
    Ok((masked, truth))
}

/// Uniform sample without replacement of up to `n` rows not in `exclude`,
/// ordered by ascending row index. A pure function of
/// (table size, n, exclude, seed).
pub fn sample_records(
    table: &Table,
    n: usize,
    seed: u64,
    exclude: &HashSet<usize>,
) -> Vec<Record> {
    let eligible: Vec<usize> = table
        .records
        .iter()
        .map(|r| r.index)
        .filter(|i| !exclude.contains(i))
        .collect();
    if n == 0 || eligible.is_empty() {
        return Vec::new();
    }
    let take = n.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, eligible.len(), take)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| table.records[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(csv: &str) -> Table {
        load_table(csv.as_bytes(), "t", "").unwrap()
    }

    #[test]
    fn header_only_csv_yields_empty_table() {
        let t = load("a,b\n");
        assert_eq!(t.schema.len(), 2);
        assert!(t.records.is_empty());
    }

    #[test]
    fn sentinel_cell_becomes_missing() {
        let t = load(
            "name,addr,phone,type,city\n\
             ruth's chris steak house (los angeles),224 s. beverly dr.,310-859-8744,steakhouses,\n",
        );
        assert_eq!(
            t.cell(0, "name").unwrap().text(),
            Some("ruth's chris steak house (los angeles)")
        );
        assert!(t.cell(0, "city").unwrap().is_missing());
    }

    #[test]
    fn quoted_field_keeps_comma() {
        let t = load("a,b\n\"x,y\",z\n");
        assert_eq!(t.cell(0, "a").unwrap().text(), Some("x,y"));
    }

    #[test]
    fn custom_sentinel_allows_empty_present() {
        let t = load_table("a\nNA\n\n".as_bytes(), "t", "NA").unwrap();
        assert!(t.cell(0, "a").unwrap().is_missing());
    }

    #[test]
    fn duplicate_header_rejected() {
        let err = load_table("a,a\n1,2\n".as_bytes(), "t", "").unwrap_err();
        assert!(matches!(err, DataLakeError::DuplicateAttribute(_)));
    }

    #[test]
    fn ragged_row_rejected() {
        let err = load_table("a,b\n1\n".as_bytes(), "t", "").unwrap_err();
        assert!(matches!(err, DataLakeError::MalformedCsv(_)));
    }

    #[test]
    fn mask_full_fraction_masks_everything() {
        let t = load("name,city\na,x\nb,y\nc,z\nd,w\ne,v\n");
        let (masked, truth) = mask_cells(&t, "city", 1.0, 7).unwrap();
        assert_eq!(truth.len(), 5);
        assert!(masked
            .records
            .iter()
            .all(|r| r.cells[1].is_missing()));
        // input untouched
        assert!(t.records.iter().all(|r| !r.cells[1].is_missing()));
    }

    #[test]
    fn mask_fraction_rounds_up() {
        let csv: String = std::iter::once("name,city\n".to_string())
            .chain((0..10).map(|i| format!("n{i},c{i}\n")))
            .collect();
        let (masked, truth) = mask_cells(&load(&csv), "city", 0.4, 3).unwrap();
        assert_eq!(truth.len(), 4);
        let missing = masked
            .records
            .iter()
            .filter(|r| r.cells[1].is_missing())
            .count();
        assert_eq!(missing, 4);
    }

    #[test]
    fn mask_is_deterministic() {
        let csv: String = std::iter::once("name,city\n".to_string())
            .chain((0..20).map(|i| format!("n{i},c{i}\n")))
            .collect();
        let t = load(&csv);
        let (a, _) = mask_cells(&t, "city", 0.5, 42).unwrap();
        let (b, _) = mask_cells(&t, "city", 0.5, 42).unwrap();
        let idx = |m: &Table| -> Vec<usize> {
            m.records
                .iter()
                .filter(|r| r.cells[1].is_missing())
                .map(|r| r.index)
                .collect()
        };
        assert_eq!(idx(&a), idx(&b));
    }

    #[test]
    fn mask_unknown_attribute() {
        let t = load("a\n1\n");
        assert!(matches!(
            mask_cells(&t, "nope", 1.0, 0),
            Err(DataLakeError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn sample_zero_and_exhaustion() {
        let t = load("a\n1\n2\n3\n");
        assert!(sample_records(&t, 0, 0, &HashSet::new()).is_empty());
        let all = sample_records(&t, 10, 0, &HashSet::new());
        assert_eq!(all.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn sample_is_deterministic_and_excludes() {
        let csv: String = std::iter::once("a\n".to_string())
            .chain((0..10).map(|i| format!("{i}\n")))
            .collect();
        let t = load(&csv);
        let exclude: HashSet<usize> = [4].into_iter().collect();
        let a = sample_records(&t, 3, 9, &exclude);
        let b = sample_records(&t, 3, 9, &exclude);
        let idx: Vec<usize> = a.iter().map(|r| r.index).collect();
        assert_eq!(idx, b.iter().map(|r| r.index).collect::<Vec<_>>());
        assert_eq!(idx.len(), 3);
        assert!(!idx.contains(&4));
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cell_errors() {
        let t = load("name\nx\n");
        assert_eq!(t.cell(0, "name").unwrap().text(), Some("x"));
        assert!(matches!(t.cell(1, "name"), Err(DataLakeError::RowOutOfRange(1))));
        assert!(matches!(t.cell(0, "city"), Err(DataLakeError::UnknownAttribute(_))));
    }
}
