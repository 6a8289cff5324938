//! Parsing and validation of ADaM-style delimited datasets.

mod reader;
mod validate;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use reader::{read_records, RawRecord};
pub use validate::{validate_domain, validate_domain_with, DomainRules, Issue, Severity, ValidationReport};

/// Field separator of the canonical serialization hashed by [`checksum_dataset`].
pub const UNIT_SEPARATOR: char = '\u{1f}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Domain {
    Adsl,
    Adtte,
    Adae,
    Other,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Adsl => "ADSL",
            Domain::Adtte => "ADTTE",
            Domain::Adae => "ADAE",
            Domain::Other => "OTHER",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ADSL" => Ok(Domain::Adsl),
            "ADTTE" => Ok(Domain::Adtte),
            "ADAE" => Ok(Domain::Adae),
            "OTHER" => Ok(Domain::Other),
            _ => Err(Error::Argument(format!("unknown domain {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Date,
    Flag,
    Identifier,
}

impl ColumnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Continuous => "continuous",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Date => "date",
            ColumnKind::Flag => "flag",
            ColumnKind::Identifier => "identifier",
        }
    }
}

impl FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(ColumnKind::Continuous),
            "categorical" => Ok(ColumnKind::Categorical),
            "date" => Ok(ColumnKind::Date),
            "flag" => Ok(ColumnKind::Flag),
            "identifier" => Ok(ColumnKind::Identifier),
            _ => Err(Error::Argument(format!("unknown column kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ColumnMeta {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnMeta { name: name.into(), kind, unit: None, label: None }
    }
}

/// Parse a sidecar metadata document: a JSON array of `{name, kind, unit, label}`.
pub fn parse_meta_json(bytes: &[u8]) -> Result<Vec<ColumnMeta>> {
    let mut meta: Vec<ColumnMeta> = serde_json::from_slice(bytes)?;
    for m in &mut meta {
        m.name = m.name.trim().to_ascii_uppercase();
    }
    Ok(meta)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Number(f64),
    Text(String),
    Date(String),
}

impl Cell {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }

    /// Text form used for grouping keys and labels; `None` for nulls.
    pub fn label(&self) -> Option<String> {
        match self {
            Cell::Null => None,
            other => Some(other.canonical_text()),
        }
    }

    /// On-disk text of the cell: nulls are empty, numbers use the shortest
    /// representation that parses back to the same value.
    pub fn canonical_text(&self) -> String {
        match self {
            Cell::Null => String::new(),
            Cell::Number(v) => format!("{v}"),
            Cell::Text(s) | Cell::Date(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisDataset {
    pub domain: Domain,
    pub columns: Vec<ColumnMeta>,
    pub rows: Vec<Vec<Cell>>,
    pub source_name: String,
    pub checksum: String,
}

impl AnalysisDataset {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column_meta(&self, name: &str) -> Option<&ColumnMeta> {
        self.column_index(name).map(|i| &self.columns[i])
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column_index(name).is_some()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// RFC 4180 serialization of the typed cells. Parsing the output with the
    /// same column metadata reproduces this dataset exactly.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut out = String::new();
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            reader::write_field(&mut out, &c.name);
        }
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                reader::write_field(&mut out, &cell.canonical_text());
            }
            out.push('\n');
        }
        out.into_bytes()
    }
}

/// Parse a comma-separated dataset.
///
/// Column names are uppercased. Empty cells become [`Cell::Null`]. Columns
/// named in `meta` take the given kind, unit and label; the rest are inferred.
pub fn parse_dataset(
    source_name: &str,
    source: &[u8],
    domain: Domain,
    meta: Option<&[ColumnMeta]>,
) -> Result<AnalysisDataset> {
    let mut records = read_records(source)?.into_iter();
    let header = records.next().ok_or_else(|| Error::Parse { line: 1, message: "missing header row".into() })?;
    let names: Vec<String> = header.fields.iter().map(|f| f.trim().to_ascii_uppercase()).collect();

    let mut seen = HashSet::new();
    for name in &names {
        if name.is_empty() {
            return Err(Error::Parse { line: header.line, message: "empty column name".into() });
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::Parse { line: header.line, message: format!("duplicate column name {name}") });
        }
    }

    let mut raw_rows = Vec::new();
    let mut lines = Vec::new();
    for rec in records {
        if rec.fields.len() != names.len() {
            return Err(Error::Parse {
                line: rec.line,
                message: format!("expected {} fields, found {}", names.len(), rec.fields.len()),
            });
        }
        lines.push(rec.line);
        raw_rows.push(rec.fields);
    }

    let usubjid = names
        .iter()
        .position(|n| n == "USUBJID")
        .ok_or_else(|| Error::Domain(format!("{source_name}: missing USUBJID column")))?;
    if let Some(i) = raw_rows.iter().position(|r| r[usubjid].trim().is_empty()) {
        return Err(Error::Domain(format!("{source_name}: null USUBJID at line {}", lines[i])));
    }

    let mut columns = infer_column_types(&names, &raw_rows);
    if let Some(meta) = meta {
        for m in meta {
            let name = m.name.trim().to_ascii_uppercase();
            let slot = columns
                .iter_mut()
                .find(|c| c.name == name)
                .ok_or_else(|| Error::Argument(format!("metadata names column {name} absent from {source_name}")))?;
            *slot = ColumnMeta { name, ..m.clone() };
        }
    }

    let mut rows = Vec::with_capacity(raw_rows.len());
    for (raw, line) in raw_rows.into_iter().zip(lines) {
        let mut row = Vec::with_capacity(raw.len());
        for (text, col) in raw.into_iter().zip(&columns) {
            row.push(type_cell(text, col).map_err(|message| Error::Parse { line, message })?);
        }
        rows.push(row);
    }

    let mut dataset =
        AnalysisDataset { domain, columns, rows, source_name: source_name.to_string(), checksum: String::new() };
    dataset.checksum = checksum_dataset(&dataset);
    Ok(dataset)
}

fn type_cell(text: String, col: &ColumnMeta) -> std::result::Result<Cell, String> {
    if text.is_empty() {
        return Ok(Cell::Null);
    }
    match col.kind {
        ColumnKind::Continuous => parse_decimal(&text)
            .map(Cell::Number)
            .ok_or_else(|| format!("column {}: {text:?} is not a finite number", col.name)),
        ColumnKind::Flag => parse_flag(&text)
            .map(Cell::Number)
            .ok_or_else(|| format!("column {}: {text:?} is not a flag value", col.name)),
        ColumnKind::Date => {
            let t = text.trim();
            if is_iso_date(t) {
                Ok(Cell::Date(t.to_string()))
            } else {
                Err(format!("column {}: {text:?} is not an ISO-8601 date", col.name))
            }
        }
        ColumnKind::Identifier | ColumnKind::Categorical => Ok(Cell::Text(text)),
    }
}

/// Finite decimal number, optional sign, fraction and exponent.
pub fn parse_decimal(text: &str) -> Option<f64> {
    let t = text.trim();
    if !t.bytes().any(|b| b.is_ascii_digit())
        || !t.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
    {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_flag(text: &str) -> Option<f64> {
    match text.trim() {
        "0" | "N" => Some(0.0),
        "1" | "Y" => Some(1.0),
        _ => None,
    }
}

/// `YYYY-MM-DD` syntax with month 01-12 and day 01-31.
pub fn is_iso_date(text: &str) -> bool {
    let b = text.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    if !(digits(0..4) && digits(5..7) && digits(8..10)) {
        return false;
    }
    let month = (b[5] - b'0') * 10 + (b[6] - b'0');
    let day = (b[8] - b'0') * 10 + (b[9] - b'0');
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

/// Infer a kind for each column from its raw text cells (empty = null).
///
/// Precedence is identifier > flag > continuous > date > categorical; a
/// column with no non-null cells is categorical.
pub fn infer_column_types(header: &[String], rows: &[Vec<String>]) -> Vec<ColumnMeta> {
    header
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let name = name.trim().to_ascii_uppercase();
            let mut cells = rows.iter().map(|r| r[i].as_str()).filter(|c| !c.is_empty()).peekable();
            let kind = if name.ends_with("ID") {
                ColumnKind::Identifier
            } else if cells.peek().is_none() {
                ColumnKind::Categorical
            } else {
                let cells: Vec<&str> = cells.collect();
                if cells.iter().all(|c| matches!(c.trim(), "0" | "1" | "Y" | "N")) {
                    ColumnKind::Flag
                } else if cells.iter().all(|c| parse_decimal(c).is_some()) {
                    ColumnKind::Continuous
                } else if cells.iter().all(|c| is_iso_date(c.trim())) {
                    ColumnKind::Date
                } else {
                    ColumnKind::Categorical
                }
            };
            ColumnMeta::new(name, kind)
        })
        .collect()
}

/// Bytes hashed by [`checksum_dataset`]: the header line, then every row in
/// file order; fields joined by 0x1F, lines by `\n`, nulls empty.
pub fn canonical_bytes(dataset: &AnalysisDataset) -> Vec<u8> {
    let sep = UNIT_SEPARATOR.to_string();
    let mut out = dataset.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(&sep);
    for row in &dataset.rows {
        out.push('\n');
        out.push_str(&row.iter().map(Cell::canonical_text).collect::<Vec<_>>().join(&sep));
    }
    out.into_bytes()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn checksum_dataset(dataset: &AnalysisDataset) -> String {
    sha256_hex(&canonical_bytes(dataset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(src: &str) -> Result<AnalysisDataset> {
        parse_dataset("t.csv", src.as_bytes(), Domain::Adsl, None)
    }

    #[test]
    fn parses_typed_cells() {
        let ds = parse("USUBJID,AGE\nS1,63\n").unwrap();
        assert_eq!(ds.n_rows(), 1);
        assert_eq!(ds.columns[1].kind, ColumnKind::Continuous);
        assert_eq!(ds.rows[0][1], Cell::Number(63.0));
        assert_eq!(ds.columns[0].kind, ColumnKind::Identifier);
    }

    #[test]
    fn empty_cell_is_null() {
        let ds = parse("USUBJID,AGE\nS1,\nS2,70\n").unwrap();
        assert_eq!(ds.rows[0][1], Cell::Null);
        assert_eq!(ds.columns[1].kind, ColumnKind::Continuous);
    }

    #[test]
    fn ragged_row_names_line() {
        match parse("USUBJID,AGE\nS1,63,9\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_usubjid_is_domain_error() {
        assert!(matches!(parse("SUBJ,AGE\nS1,63\n"), Err(Error::Domain(_))));
        assert!(matches!(parse("USUBJID,AGE\n,63\n"), Err(Error::Domain(_))));
    }

    #[test]
    fn names_uppercased_and_unique() {
        let ds = parse("usubjid,Age\nS1,1.5\n").unwrap();
        assert_eq!(ds.columns[1].name, "AGE");
        assert!(matches!(parse("USUBJID,age,AGE\nS1,1,2\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn inference_rules() {
        let header: Vec<String> = ["AGE", "CNSR", "SEX", "ADT", "SITEID", "EMPTY"].map(String::from).to_vec();
        let rows = vec![
            ["63", "0", "M", "2014-01-02", "701", ""].map(String::from).to_vec(),
            ["71", "1", "F", "2014-02-03", "702", ""].map(String::from).to_vec(),
        ];
        let kinds: Vec<_> = infer_column_types(&header, &rows).into_iter().map(|c| c.kind).collect();
        assert_eq!(
            kinds,
            vec![
                ColumnKind::Continuous,
                ColumnKind::Flag,
                ColumnKind::Categorical,
                ColumnKind::Date,
                ColumnKind::Identifier,
                ColumnKind::Categorical,
            ]
        );
    }

    #[test]
    fn yn_flags_become_numbers() {
        let ds = parse("USUBJID,SAFFL\nS1,Y\nS2,N\nS3,\n").unwrap();
        assert_eq!(ds.columns[1].kind, ColumnKind::Flag);
        let vals: Vec<_> = ds.rows.iter().map(|r| r[1].clone()).collect();
        assert_eq!(vals, vec![Cell::Number(1.0), Cell::Number(0.0), Cell::Null]);
    }

    #[test]
    fn meta_overrides_inference() {
        let meta = vec![ColumnMeta {
            name: "age".into(),
            kind: ColumnKind::Categorical,
            unit: Some("years".into()),
            label: Some("Age".into()),
        }];
        let ds = parse_dataset("t.csv", b"USUBJID,AGE\nS1,63\n", Domain::Adsl, Some(&meta)).unwrap();
        assert_eq!(ds.columns[1].kind, ColumnKind::Categorical);
        assert_eq!(ds.columns[1].unit.as_deref(), Some("years"));
        assert_eq!(ds.rows[0][1], Cell::Text("63".into()));

        let bad = vec![ColumnMeta::new("SEX", ColumnKind::Continuous)];
        let err = parse_dataset("t.csv", b"USUBJID,SEX\nS1,M\n", Domain::Adsl, Some(&bad)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));

        let unknown = vec![ColumnMeta::new("NOPE", ColumnKind::Continuous)];
        assert!(parse_dataset("t.csv", b"USUBJID\nS1\n", Domain::Adsl, Some(&unknown)).is_err());
    }

    #[test]
    fn meta_json_sidecar() {
        let meta = parse_meta_json(br#"[{"name":"age","kind":"continuous","unit":"years"}]"#).unwrap();
        assert_eq!(meta[0].name, "AGE");
        assert_eq!(meta[0].unit.as_deref(), Some("years"));
        assert_eq!(meta[0].label, None);
    }

    #[test]
    fn empty_stream_digest() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn checksum_matches_canonical_stream() {
        let ds = parse("USUBJID,AGE,SEX\nS1,63,M\nS2,,F\n").unwrap();
        let expected: &[u8] = b"USUBJID\x1fAGE\x1fSEX\nS1\x1f63\x1fM\nS2\x1f\x1fF";
        assert_eq!(canonical_bytes(&ds), expected);
        // sha256 of the stream above, computed with coreutils sha256sum
        assert_eq!(ds.checksum, "000b3ae370c015f8ddaac18a791223962c31efcad96d0f9a6e5ca2c59e02cb11");
    }

    #[test]
    fn checksum_stable_and_sensitive() {
        let a = parse("USUBJID,AGE\nS1,63\nS2,71\n").unwrap();
        let b = parse("USUBJID,AGE\nS1,63\nS2,71\n").unwrap();
        let c = parse("USUBJID,AGE\nS1,63\nS2,72\n").unwrap();
        assert_eq!(a.checksum, b.checksum);
        assert_ne!(a.checksum, c.checksum);
    }

    #[test]
    fn iso_dates() {
        assert!(is_iso_date("2014-01-31"));
        assert!(!is_iso_date("2014-13-01"));
        assert!(!is_iso_date("2014-1-01"));
        assert!(!is_iso_date("01/02/2014"));
    }

    #[test]
    fn decimals() {
        assert_eq!(parse_decimal("-1.5e2"), Some(-150.0));
        assert_eq!(parse_decimal(" 7 "), Some(7.0));
        assert_eq!(parse_decimal("inf"), None);
        assert_eq!(parse_decimal("NaN"), None);
        assert_eq!(parse_decimal("1e400"), None);
        assert_eq!(parse_decimal("."), None);
    }

    fn cell_text() -> impl Strategy<Value = String> {
        prop_oneof![
            Just(String::new()),
            (-1000i32..1000).prop_map(|v| v.to_string()),
            (-1.0e6f64..1.0e6).prop_map(|v| format!("{v:.3}")),
            prop::sample::select(vec!["Y", "N", "0", "1"]).prop_map(String::from),
            "[A-Za-z ,\"]{1,8}",
            "20[0-2][0-9]-0[1-9]-[12][0-9]",
        ]
    }

    proptest! {
        #[test]
        fn parse_serialize_parse_round_trip(
            rows in prop::collection::vec(prop::collection::vec(cell_text(), 3), 1..12)
        ) {
            let mut src = String::from("USUBJID,A,B,C\n");
            for (i, r) in rows.iter().enumerate() {
                let mut line = format!("S{i}");
                for f in r {
                    line.push(',');
                    reader::write_field(&mut line, f);
                }
                src.push_str(&line);
                src.push('\n');
            }
            let first = parse(&src).unwrap();
            let second = parse_dataset("t.csv", &first.to_csv(), Domain::Adsl, None).unwrap();
            prop_assert_eq!(&first, &second);
        }

        #[test]
        fn continuous_never_assigned_to_non_numeric(
            cells in prop::collection::vec("[0-9a-z.]{0,4}", 1..10)
        ) {
            let rows: Vec<Vec<String>> = cells.iter().map(|c| vec![c.clone()]).collect();
            let kind = infer_column_types(&["X".to_string()], &rows)[0].kind;
            if kind == ColumnKind::Continuous {
                prop_assert!(cells.iter().filter(|c| !c.is_empty()).all(|c| parse_decimal(c).is_some()));
            }
        }
    }
}
