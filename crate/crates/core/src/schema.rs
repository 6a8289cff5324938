//! ARDM table layout (metadata, intermediate and results groups), dataset
//! registration and subject-level aggregation.

use std::collections::{BTreeMap, BTreeSet};

use rusqlite::{params, OptionalExtension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, AnalysisDataset, ColumnKind, ColumnMeta, Domain, DomainRules};
use crate::store::{now_utc, Store};

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableGroup {
    Metadata,
    Intermediate,
    Results,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Integer,
    Real,
    Text,
    Blob,
}

impl ValueKind {
    fn sql(self) -> &'static str {
        match self {
            ValueKind::Integer => "INTEGER",
            ValueKind::Real => "REAL",
            ValueKind::Text => "TEXT",
            ValueKind::Blob => "BLOB",
        }
    }

    fn from_sql(s: &str) -> Result<Self> {
        match s {
            "INTEGER" => Ok(ValueKind::Integer),
            "REAL" => Ok(ValueKind::Real),
            "TEXT" => Ok(ValueKind::Text),
            "BLOB" => Ok(ValueKind::Blob),
            other => Err(Error::Domain(format!("unexpected column type {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ValueKind,
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub group: TableGroup,
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub version: i64,
    pub tables: Vec<TableDef>,
}

impl SchemaDescriptor {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }
}

struct TableSpec {
    group: TableGroup,
    name: &'static str,
    // (name, kind, nullable, extra column clause)
    columns: &'static [(&'static str, ValueKind, bool, &'static str)],
    constraints: &'static [&'static str],
}

use ValueKind::{Blob, Integer, Real, Text};

const RESULT_COLUMNS: [(&str, ValueKind, bool, &str); 8] = [
    ("result_id", Integer, false, "PRIMARY KEY"),
    ("run_id", Integer, false, "REFERENCES runs(run_id)"),
    ("group_key", Text, false, ""),
    ("variable", Text, false, ""),
    ("statistic_name", Text, false, ""),
    ("value", Real, true, ""),
    ("value_text", Text, true, ""),
    ("unit", Text, true, ""),
];

const RESULT_KM_COLUMNS: [(&str, ValueKind, bool, &str); 9] = [
    RESULT_COLUMNS[0],
    RESULT_COLUMNS[1],
    RESULT_COLUMNS[2],
    RESULT_COLUMNS[3],
    RESULT_COLUMNS[4],
    RESULT_COLUMNS[5],
    RESULT_COLUMNS[6],
    RESULT_COLUMNS[7],
    ("time", Real, false, ""),
];

const TABLES: &[TableSpec] = &[
    TableSpec {
        group: TableGroup::Metadata,
        name: "dataset_meta",
        columns: &[
            ("dataset_id", Integer, false, "PRIMARY KEY"),
            ("domain", Text, false, ""),
            ("source_name", Text, false, ""),
            ("checksum", Text, false, "UNIQUE"),
            ("n_rows", Integer, false, ""),
            ("ingest_time", Text, false, ""),
            ("content", Blob, true, ""),
        ],
        constraints: &[],
    },
    TableSpec {
        group: TableGroup::Metadata,
        name: "column_meta",
        columns: &[
            ("dataset_id", Integer, false, "REFERENCES dataset_meta(dataset_id)"),
            ("position", Integer, false, ""),
            ("name", Text, false, ""),
            ("kind", Text, false, ""),
            ("unit", Text, true, ""),
            ("label", Text, true, ""),
        ],
        constraints: &["PRIMARY KEY (dataset_id, position)", "UNIQUE (dataset_id, name)"],
    },
    TableSpec {
        group: TableGroup::Metadata,
        name: "standards_registry",
        columns: &[
            ("name", Text, false, ""),
            ("version", Text, false, ""),
            ("definition", Text, false, ""),
            ("digest", Text, false, ""),
            ("registered_at", Text, false, ""),
        ],
        constraints: &["PRIMARY KEY (name, version)"],
    },
    TableSpec {
        group: TableGroup::Metadata,
        name: "runs",
        columns: &[
            ("run_id", Integer, false, "PRIMARY KEY"),
            ("standard_name", Text, false, ""),
            ("standard_version", Text, false, ""),
            ("canonical_params", Text, false, ""),
            ("identity", Text, false, ""),
            ("dataset_ids", Text, false, ""),
            ("started", Text, false, ""),
            ("finished", Text, true, ""),
            ("status", Text, false, "CHECK (status IN ('completed', 'failed'))"),
            ("message", Text, true, ""),
        ],
        constraints: &[],
    },
    TableSpec {
        group: TableGroup::Intermediate,
        name: "subject_level",
        columns: &[
            ("dataset_id", Integer, false, "REFERENCES dataset_meta(dataset_id)"),
            ("adae_id", Integer, true, "REFERENCES dataset_meta(dataset_id)"),
            ("usubjid", Text, false, ""),
            ("group_label", Text, true, ""),
            ("derived_flags", Text, false, ""),
            ("derived_values", Text, false, ""),
        ],
        constraints: &["UNIQUE (dataset_id, usubjid)"],
    },
    TableSpec {
        group: TableGroup::Results,
        name: "results_numeric",
        columns: &RESULT_COLUMNS,
        constraints: &[
            "CHECK (value IS NOT NULL OR value_text IS NOT NULL)",
            "UNIQUE (run_id, group_key, variable, statistic_name)",
        ],
    },
    TableSpec {
        group: TableGroup::Results,
        name: "results_km",
        columns: &RESULT_KM_COLUMNS,
        constraints: &[
            "CHECK (value IS NOT NULL OR value_text IS NOT NULL)",
            "UNIQUE (run_id, group_key, variable, statistic_name, time)",
        ],
    },
];

const EXTRA_DDL: &[&str] = &[
    "CREATE UNIQUE INDEX IF NOT EXISTS runs_completed_identity ON runs(identity) WHERE status = 'completed'",
    "CREATE INDEX IF NOT EXISTS results_numeric_stat ON results_numeric(statistic_name)",
    "CREATE INDEX IF NOT EXISTS results_km_stat ON results_km(statistic_name)",
    "CREATE TRIGGER IF NOT EXISTS results_numeric_append_only_u BEFORE UPDATE ON results_numeric
       BEGIN SELECT RAISE(ABORT, 'results are append-only'); END",
    "CREATE TRIGGER IF NOT EXISTS results_numeric_append_only_d BEFORE DELETE ON results_numeric
       BEGIN SELECT RAISE(ABORT, 'results are append-only'); END",
    "CREATE TRIGGER IF NOT EXISTS results_km_append_only_u BEFORE UPDATE ON results_km
       BEGIN SELECT RAISE(ABORT, 'results are append-only'); END",
    "CREATE TRIGGER IF NOT EXISTS results_km_append_only_d BEFORE DELETE ON results_km
       BEGIN SELECT RAISE(ABORT, 'results are append-only'); END",
];

fn create_sql(spec: &TableSpec) -> String {
    let mut parts: Vec<String> = spec
        .columns
        .iter()
        .map(|(name, kind, nullable, extra)| {
            let mut col = format!("{name} {}", kind.sql());
            if !nullable && !extra.contains("PRIMARY KEY") {
                col.push_str(" NOT NULL");
            }
            if !extra.is_empty() {
                col.push(' ');
                col.push_str(extra);
            }
            col
        })
        .collect();
    parts.extend(spec.constraints.iter().map(|c| c.to_string()));
    format!("CREATE TABLE IF NOT EXISTS {} ({})", spec.name, parts.join(", "))
}

/// Create the ARDM tables if absent and return the layout found in the store.
pub fn init_schema(store: &mut Store) -> Result<SchemaDescriptor> {
    let found = store.schema_version()?;
    if found > SCHEMA_VERSION {
        return Err(Error::Version { found, supported: SCHEMA_VERSION });
    }
    if found < SCHEMA_VERSION {
        let tx = store.write_txn()?;
        for spec in TABLES {
            tx.execute(&create_sql(spec), [])?;
        }
        for ddl in EXTRA_DDL {
            tx.execute(ddl, [])?;
        }
        tx.pragma_update(None, "user_version", SCHEMA_VERSION)?;
        tx.commit()?;
    }
    describe_schema(store)
}

/// Read the table layout back from the store.
pub fn describe_schema(store: &Store) -> Result<SchemaDescriptor> {
    let version = store.schema_version()?;
    let mut tables = Vec::new();
    for spec in TABLES {
        let mut stmt =
            store.conn().prepare("SELECT name, type, \"notnull\", pk FROM pragma_table_info(?1) ORDER BY cid")?;
        let columns = stmt
            .query_map([spec.name], |r| {
                Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, bool>(2)?, r.get::<_, i64>(3)?))
            })?
            .map(|row| {
                let (name, ty, notnull, pk) = row?;
                Ok(ColumnDef { name, kind: ValueKind::from_sql(&ty)?, nullable: !notnull && pk == 0 })
            })
            .collect::<Result<Vec<_>>>()?;
        if !columns.is_empty() {
            tables.push(TableDef { group: spec.group, name: spec.name.to_string(), columns });
        }
    }
    Ok(SchemaDescriptor { version, tables })
}

pub fn require_schema(store: &Store) -> Result<()> {
    match store.schema_version()? {
        SCHEMA_VERSION => Ok(()),
        0 => Err(Error::Argument(format!("{} is not initialized; run init first", store.path().display()))),
        found => Err(Error::Version { found, supported: SCHEMA_VERSION }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRegistration {
    pub dataset_id: i64,
    pub domain: Domain,
    pub source_name: String,
    pub checksum: String,
    pub n_rows: usize,
    pub ingest_time: String,
}

pub fn register_dataset(store: &mut Store, dataset: &AnalysisDataset) -> Result<DatasetRegistration> {
    register_dataset_with(store, dataset, &DomainRules::default())
}

/// Validate and register a dataset. A checksum that is already registered
/// returns the existing registration without writing anything.
pub fn register_dataset_with(
    store: &mut Store,
    dataset: &AnalysisDataset,
    rules: &DomainRules,
) -> Result<DatasetRegistration> {
    require_schema(store)?;
    let report = ingest::validate_domain_with(dataset, rules);
    if !report.passed {
        return Err(Error::Validation(report));
    }
    if let Some(existing) = find_registration(store, &dataset.checksum)? {
        return Ok(existing);
    }
    let ingest_time = now_utc();
    let tx = store.write_txn()?;
    tx.execute(
        "INSERT INTO dataset_meta (domain, source_name, checksum, n_rows, ingest_time, content)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
        params![
            dataset.domain.as_str(),
            dataset.source_name,
            dataset.checksum,
            dataset.n_rows() as i64,
            ingest_time,
            dataset.to_csv(),
        ],
    )?;
    let dataset_id = tx.last_insert_rowid();
    {
        let mut stmt = tx.prepare(
            "INSERT INTO column_meta (dataset_id, position, name, kind, unit, label) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
        )?;
        for (i, c) in dataset.columns.iter().enumerate() {
            stmt.execute(params![dataset_id, i as i64, c.name, c.kind.as_str(), c.unit, c.label])?;
        }
    }
    tx.commit()?;
    Ok(DatasetRegistration {
        dataset_id,
        domain: dataset.domain,
        source_name: dataset.source_name.clone(),
        checksum: dataset.checksum.clone(),
        n_rows: dataset.n_rows(),
        ingest_time,
    })
}

fn registration_from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<(i64, String, String, String, i64, String)> {
    Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?))
}

fn to_registration(row: (i64, String, String, String, i64, String)) -> Result<DatasetRegistration> {
    let (dataset_id, domain, source_name, checksum, n_rows, ingest_time) = row;
    Ok(DatasetRegistration {
        dataset_id,
        domain: domain.parse()?,
        source_name,
        checksum,
        n_rows: n_rows as usize,
        ingest_time,
    })
}

fn find_registration(store: &Store, checksum: &str) -> Result<Option<DatasetRegistration>> {
    store
        .conn()
        .query_row(
            "SELECT dataset_id, domain, source_name, checksum, n_rows, ingest_time FROM dataset_meta WHERE checksum = ?1",
            [checksum],
            registration_from_row,
        )
        .optional()?
        .map(to_registration)
        .transpose()
}

pub fn get_registration(store: &Store, dataset_id: i64) -> Result<DatasetRegistration> {
    store
        .conn()
        .query_row(
            "SELECT dataset_id, domain, source_name, checksum, n_rows, ingest_time FROM dataset_meta WHERE dataset_id = ?1",
            [dataset_id],
            registration_from_row,
        )
        .optional()?
        .map(to_registration)
        .transpose()?
        .ok_or_else(|| Error::NotFound(format!("dataset {dataset_id}")))
}

pub fn list_datasets(store: &Store) -> Result<Vec<DatasetRegistration>> {
    let mut stmt = store.conn().prepare(
        "SELECT dataset_id, domain, source_name, checksum, n_rows, ingest_time FROM dataset_meta ORDER BY dataset_id",
    )?;
    let rows = stmt.query_map([], registration_from_row)?;
    rows.map(|r| to_registration(r?)).collect()
}

pub fn column_metadata(store: &Store, dataset_id: i64) -> Result<Vec<ColumnMeta>> {
    let mut stmt = store
        .conn()
        .prepare("SELECT name, kind, unit, label FROM column_meta WHERE dataset_id = ?1 ORDER BY position")?;
    let rows = stmt.query_map([dataset_id], |r| {
        Ok((
            r.get::<_, String>(0)?,
            r.get::<_, String>(1)?,
            r.get::<_, Option<String>>(2)?,
            r.get::<_, Option<String>>(3)?,
        ))
    })?;
    rows.map(|row| {
        let (name, kind, unit, label) = row?;
        Ok(ColumnMeta { name, kind: kind.parse::<ColumnKind>()?, unit, label })
    })
    .collect()
}

/// The registered dataset content as CSV.
pub fn export_dataset(store: &Store, dataset_id: i64) -> Result<Vec<u8>> {
    let content: Option<Option<Vec<u8>>> = store
        .conn()
        .query_row("SELECT content FROM dataset_meta WHERE dataset_id = ?1", [dataset_id], |r| r.get(0))
        .optional()?;
    match content {
        None => Err(Error::NotFound(format!("dataset {dataset_id}"))),
        Some(None) => Err(Error::NotFound(format!("content of dataset {dataset_id}"))),
        Some(Some(bytes)) => Ok(bytes),
    }
}

/// Re-materialize a registered dataset, checking it against its stored checksum.
pub fn load_dataset(store: &Store, dataset_id: i64) -> Result<AnalysisDataset> {
    let reg = get_registration(store, dataset_id)?;
    let bytes = export_dataset(store, dataset_id)?;
    let meta = column_metadata(store, dataset_id)?;
    let dataset = ingest::parse_dataset(&reg.source_name, &bytes, reg.domain, Some(&meta))?;
    if dataset.checksum != reg.checksum {
        return Err(Error::Domain(format!("dataset {dataset_id} content does not match its registered checksum")));
    }
    Ok(dataset)
}

/// Drop the stored rows of a dataset, keeping its registration and column
/// metadata. Analyses can no longer run against it; stored results remain.
pub fn purge_dataset_content(store: &mut Store, dataset_id: i64) -> Result<()> {
    get_registration(store, dataset_id)?;
    let tx = store.write_txn()?;
    tx.execute("UPDATE dataset_meta SET content = NULL WHERE dataset_id = ?1", [dataset_id])?;
    tx.commit()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLevelRow {
    pub dataset_id: i64,
    pub usubjid: String,
    pub group: Option<String>,
    pub derived_flags: BTreeMap<String, u8>,
    pub derived_values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubjectLevelBuild {
    pub rows_written: usize,
    pub warnings: Vec<String>,
}

/// Group column used when none is given.
pub const DEFAULT_GROUP_COLUMN: &str = "TRT01P";

pub fn build_subject_level(store: &mut Store, adsl_id: i64, adae_id: Option<i64>) -> Result<SubjectLevelBuild> {
    build_subject_level_by(store, adsl_id, adae_id, DEFAULT_GROUP_COLUMN)
}

/// Derive one row per ADSL subject (group label, `ANY_AE` flag, `AE_COUNT`)
/// and replace any rows previously built for that ADSL dataset.
pub fn build_subject_level_by(
    store: &mut Store,
    adsl_id: i64,
    adae_id: Option<i64>,
    group_column: &str,
) -> Result<SubjectLevelBuild> {
    require_schema(store)?;
    let adsl = load_dataset(store, adsl_id)?;
    if adsl.domain != Domain::Adsl {
        return Err(Error::Argument(format!("dataset {adsl_id} is {}, not ADSL", adsl.domain)));
    }
    let adae = adae_id.map(|id| load_dataset(store, id)).transpose()?;
    if let (Some(ds), Some(id)) = (&adae, adae_id) {
        if ds.domain != Domain::Adae {
            return Err(Error::Argument(format!("dataset {id} is {}, not ADAE", ds.domain)));
        }
    }
    let (rows, warnings) = derive_subject_level(adsl_id, &adsl, adae.as_ref(), group_column)?;

    let tx = store.write_txn()?;
    tx.execute("DELETE FROM subject_level WHERE dataset_id = ?1", [adsl_id])?;
    {
        let mut stmt = tx.prepare(
            "INSERT INTO subject_level (dataset_id, adae_id, usubjid, group_label, derived_flags, derived_values)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
        )?;
        for row in &rows {
            stmt.execute(params![
                adsl_id,
                adae_id,
                row.usubjid,
                row.group,
                serde_json::to_string(&row.derived_flags)?,
                serde_json::to_string(&row.derived_values)?,
            ])?;
        }
    }
    tx.commit()?;
    Ok(SubjectLevelBuild { rows_written: rows.len(), warnings })
}

pub(crate) fn derive_subject_level(
    adsl_id: i64,
    adsl: &AnalysisDataset,
    adae: Option<&AnalysisDataset>,
    group_column: &str,
) -> Result<(Vec<SubjectLevelRow>, Vec<String>)> {
    let subj = adsl.column_index("USUBJID").expect("parsed datasets carry USUBJID");
    let grp = adsl
        .column_index(group_column)
        .ok_or_else(|| Error::Analysis(format!("ADSL has no group column {group_column}")))?;

    let mut ae_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut warnings = Vec::new();
    if let Some(adae) = adae {
        let ae_subj = adae.column_index("USUBJID").expect("parsed datasets carry USUBJID");
        for row in &adae.rows {
            *ae_counts.entry(row[ae_subj].canonical_text()).or_default() += 1;
        }
        let known: BTreeSet<String> = adsl.rows.iter().map(|r| r[subj].canonical_text()).collect();
        for id in ae_counts.keys().filter(|id| !known.contains(*id)) {
            warnings.push(format!("ADAE subject {id} is absent from ADSL; skipped"));
        }
    }

    let mut rows: Vec<SubjectLevelRow> = adsl
        .rows
        .iter()
        .map(|r| {
            let usubjid = r[subj].canonical_text();
            let count = ae_counts.get(&usubjid).copied().unwrap_or(0);
            SubjectLevelRow {
                dataset_id: adsl_id,
                group: r[grp].label(),
                derived_flags: [("ANY_AE".to_string(), u8::from(count > 0))].into(),
                derived_values: [("AE_COUNT".to_string(), count as f64)].into(),
                usubjid,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.usubjid.cmp(&b.usubjid));
    Ok((rows, warnings))
}

pub fn subject_level_rows(store: &Store, adsl_id: i64) -> Result<Vec<SubjectLevelRow>> {
    let mut stmt = store.conn().prepare(
        "SELECT usubjid, group_label, derived_flags, derived_values FROM subject_level WHERE dataset_id = ?1 ORDER BY usubjid",
    )?;
    let rows = stmt.query_map([adsl_id], |r| {
        Ok((r.get::<_, String>(0)?, r.get::<_, Option<String>>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?))
    })?;
    rows.map(|row| {
        let (usubjid, group, flags, values) = row?;
        Ok(SubjectLevelRow {
            dataset_id: adsl_id,
            usubjid,
            group,
            derived_flags: serde_json::from_str(&flags)?,
            derived_values: serde_json::from_str(&values)?,
        })
    })
    .collect()
}
