//! Single-file store holding the ARDM tables, and the query surface over
//! stored results.
//!
//! A writable [`Store`] holds an exclusive lock on `<db>.lock` for its whole
//! lifetime, so at most one writer exists per store file. Read-only handles
//! take no writer lock and open SQLite read-only.

use std::collections::BTreeSet;
use std::fs::{File, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use rusqlite::types::Value as SqlValue;
use rusqlite::{params, params_from_iter, Connection, OpenFlags, OptionalExtension, TransactionBehavior};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered (name, value) grouping pairs, e.g. `[("TRTP", "Placebo")]`.
pub type GroupKeys = Vec<(String, String)>;

/// Canonical text of a group key list; this is the stored uniqueness key.
pub fn group_key_text(keys: &GroupKeys) -> String {
    serde_json::to_string(keys).expect("string pairs always serialize")
}

fn parse_group_key(text: &str) -> Result<GroupKeys> {
    Ok(serde_json::from_str(text)?)
}

/// Human-readable `K=V;K=V` rendering used in CSV exports.
pub fn group_key_display(keys: &GroupKeys) -> String {
    keys.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

pub(crate) fn now_utc() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
    /// Returned for a run whose identity already completed; never persisted.
    SkippedDuplicate,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Failed => "failed",
            RunStatus::SkippedDuplicate => "skipped_duplicate",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "completed" => Ok(RunStatus::Completed),
            "failed" => Ok(RunStatus::Failed),
            other => Err(Error::Domain(format!("unknown run status {other:?} in store"))),
        }
    }
}

/// One execution of an analysis standard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRun {
    /// Surrogate key; 0 until the run row is stored.
    pub run_id: i64,
    pub standard_name: String,
    pub standard_version: String,
    pub canonical_params: String,
    /// SHA-256 over standard name, version, canonical params and input checksums.
    pub identity: String,
    pub dataset_ids: Vec<i64>,
    pub started: String,
    pub finished: Option<String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub result_id: Option<i64>,
    pub run_id: i64,
    pub group_keys: GroupKeys,
    pub variable: String,
    pub statistic_name: String,
    pub value: Option<f64>,
    pub value_text: Option<String>,
    pub unit: Option<String>,
    pub time: Option<f64>,
}

impl ResultRecord {
    pub fn numeric(
        group_keys: GroupKeys,
        variable: impl Into<String>,
        statistic: impl Into<String>,
        value: Option<f64>,
    ) -> Self {
        let value_text = value.is_none().then(|| "NA".to_string());
        ResultRecord {
            result_id: None,
            run_id: 0,
            group_keys,
            variable: variable.into(),
            statistic_name: statistic.into(),
            value,
            value_text,
            unit: None,
            time: None,
        }
    }

    pub fn at_time(mut self, time: f64) -> Self {
        self.time = Some(time);
        self
    }

    pub fn with_unit(mut self, unit: Option<String>) -> Self {
        self.unit = unit;
        self
    }

    fn key_text(&self) -> String {
        let mut key = format!(
            "run={}, group={}, variable={}, statistic={}",
            self.run_id,
            group_key_display(&self.group_keys),
            self.variable,
            self.statistic_name
        );
        if let Some(t) = self.time {
            key.push_str(&format!(", time={t}"));
        }
        key
    }
}

/// Conjunction of optional predicates; the default filter selects everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultFilter {
    pub standard_name: Option<String>,
    pub run_id: Option<i64>,
    pub dataset_id: Option<i64>,
    /// Every pair must be present in a record's group keys.
    pub groups: Vec<(String, String)>,
    pub variable: Option<String>,
    /// Empty means any statistic.
    pub statistic_names: BTreeSet<String>,
    /// Inclusive time range; records without a time never match.
    pub time_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub record: ResultRecord,
    pub standard_name: String,
    pub standard_version: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryOutput {
    pub rows: Vec<AnnotatedRecord>,
    pub warnings: Vec<String>,
}

impl QueryOutput {
    pub fn records(&self) -> impl Iterator<Item = &ResultRecord> {
        self.rows.iter().map(|r| &r.record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: i64,
    pub standard_name: String,
    pub standard_version: String,
    pub status: RunStatus,
    pub identity: String,
    pub n_records: usize,
    pub started: String,
    pub finished: Option<String>,
}

pub struct Store {
    conn: Connection,
    path: PathBuf,
    read_only: bool,
    _writer_lock: Option<File>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.path).field("read_only", &self.read_only).finish()
    }
}

fn lock_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".lock");
    PathBuf::from(os)
}

/// Open (or create) a store for writing.
pub fn open_store(path: impl AsRef<Path>, create: bool) -> Result<Store> {
    Store::open(path, create)
}

impl Store {
    pub fn open(path: impl AsRef<Path>, create: bool) -> Result<Store> {
        let path = path.as_ref().to_path_buf();
        if !create && !path.exists() {
            return Err(Error::Open(format!("{} does not exist", path.display())));
        }
        let lock = File::options().create(true).truncate(false).write(true).open(lock_path(&path))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => {
                return Err(Error::Locked(format!(
                    "another process is writing to {}; retry once it finishes",
                    path.display()
                )))
            }
            Err(TryLockError::Error(e)) => return Err(e.into()),
        }
        let mut flags = OpenFlags::SQLITE_OPEN_READ_WRITE | OpenFlags::SQLITE_OPEN_NO_MUTEX;
        if create {
            flags |= OpenFlags::SQLITE_OPEN_CREATE;
        }
        let conn =
            Connection::open_with_flags(&path, flags).map_err(|e| Error::Open(format!("{}: {e}", path.display())))?;
        conn.pragma_update(None, "journal_mode", "DELETE")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        Ok(Store { conn, path, read_only: false, _writer_lock: Some(lock) })
    }

    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Store> {
        let path = path.as_ref().to_path_buf();
        if !path.exists() {
            return Err(Error::Open(format!("{} does not exist", path.display())));
        }
        let conn =
            Connection::open_with_flags(&path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
                .map_err(|e| Error::Open(format!("{}: {e}", path.display())))?;
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        Ok(Store { conn, path, read_only: true, _writer_lock: None })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    /// Version recorded in the file header; 0 for a store awaiting `init_schema`.
    pub fn schema_version(&self) -> Result<i64> {
        Ok(self.conn.query_row("PRAGMA user_version", [], |r| r.get(0))?)
    }

    pub(crate) fn conn(&self) -> &Connection {
        &self.conn
    }

    pub(crate) fn write_txn(&mut self) -> Result<rusqlite::Transaction<'_>> {
        if self.read_only {
            return Err(Error::Argument(format!("{} was opened read-only", self.path.display())));
        }
        Ok(self.conn.transaction_with_behavior(TransactionBehavior::Immediate)?)
    }

    pub fn completed_run_by_identity(&self, identity: &str) -> Result<Option<AnalysisRun>> {
        let id: Option<i64> = self
            .conn
            .query_row("SELECT run_id FROM runs WHERE identity = ?1 AND status = 'completed'", [identity], |r| r.get(0))
            .optional()?;
        id.map(|id| self.get_run(id)).transpose()
    }

    /// Store a completed run and all of its records in one transaction.
    ///
    /// On success `run.run_id` is set and the record count returned. Any
    /// failure rolls back both the run row and every record.
    pub fn insert_results(&mut self, run: &mut AnalysisRun, records: &[ResultRecord]) -> Result<usize> {
        self.insert_results_failing_after(run, records, None)
    }

    /// Like [`Store::insert_results`], but aborts with an injected error after
    /// `fail_after` records have been written inside the transaction.
    pub fn insert_results_failing_after(
        &mut self,
        run: &mut AnalysisRun,
        records: &[ResultRecord],
        fail_after: Option<usize>,
    ) -> Result<usize> {
        if records.is_empty() {
            return Err(Error::Argument("a completed run needs at least one result record".into()));
        }
        if let Some(bad) = records.iter().find(|r| r.value.is_none() && r.value_text.is_none()) {
            return Err(Error::Argument(format!("record {} has neither value nor value_text", bad.key_text())));
        }
        let tx = self.write_txn()?;
        let exists: bool = tx.query_row(
            "SELECT EXISTS(SELECT 1 FROM runs WHERE identity = ?1 AND status = 'completed')",
            [&run.identity],
            |r| r.get(0),
        )?;
        if exists {
            return Err(Error::Duplicate(format!("completed run identity {}", run.identity)));
        }
        let finished = run.finished.clone().unwrap_or_else(now_utc);
        tx.execute(
            "INSERT INTO runs (standard_name, standard_version, canonical_params, identity, dataset_ids, started, finished, status, message)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, 'completed', NULL)",
            params![
                run.standard_name,
                run.standard_version,
                run.canonical_params,
                run.identity,
                serde_json::to_string(&run.dataset_ids)?,
                run.started,
                finished,
            ],
        )?;
        let run_id = tx.last_insert_rowid();
        let mut next_id: i64 = tx.query_row(
            "SELECT MAX(COALESCE((SELECT MAX(result_id) FROM results_numeric), 0),
                        COALESCE((SELECT MAX(result_id) FROM results_km), 0)) + 1",
            [],
            |r| r.get(0),
        )?;
        {
            let mut numeric = tx.prepare(
                "INSERT INTO results_numeric (result_id, run_id, group_key, variable, statistic_name, value, value_text, unit)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            )?;
            let mut km = tx.prepare(
                "INSERT INTO results_km (result_id, run_id, group_key, variable, statistic_name, value, value_text, unit, time)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
            )?;
            for (i, rec) in records.iter().enumerate() {
                if fail_after == Some(i) {
                    return Err(Error::Analysis(format!("injected failure after {i} record(s)")));
                }
                let key = group_key_text(&rec.group_keys);
                let outcome = match rec.time {
                    None => numeric.execute(params![
                        next_id,
                        run_id,
                        key,
                        rec.variable,
                        rec.statistic_name,
                        rec.value,
                        rec.value_text,
                        rec.unit
                    ]),
                    Some(t) => km.execute(params![
                        next_id,
                        run_id,
                        key,
                        rec.variable,
                        rec.statistic_name,
                        rec.value,
                        rec.value_text,
                        rec.unit,
                        t
                    ]),
                };
                if let Err(e) = outcome {
                    if let rusqlite::Error::SqliteFailure(f, _) = &e {
                        if f.code == rusqlite::ErrorCode::ConstraintViolation {
                            let rec = ResultRecord { run_id, ..rec.clone() };
                            return Err(Error::Duplicate(rec.key_text()));
                        }
                    }
                    return Err(e.into());
                }
                next_id += 1;
            }
        }
        tx.commit()?;
        run.run_id = run_id;
        run.finished = Some(finished);
        run.status = RunStatus::Completed;
        Ok(records.len())
    }

    /// Persist a failed run row (no records).
    pub fn record_failed_run(&mut self, run: &mut AnalysisRun) -> Result<()> {
        let finished = run.finished.clone().unwrap_or_else(now_utc);
        let tx = self.write_txn()?;
        tx.execute(
            "INSERT INTO runs (standard_name, standard_version, canonical_params, identity, dataset_ids, started, finished, status, message)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, 'failed', ?8)",
            params![
                run.standard_name,
                run.standard_version,
                run.canonical_params,
                run.identity,
                serde_json::to_string(&run.dataset_ids)?,
                run.started,
                finished,
                run.message,
            ],
        )?;
        run.run_id = tx.last_insert_rowid();
        tx.commit()?;
        run.finished = Some(finished);
        run.status = RunStatus::Failed;
        Ok(())
    }

    pub fn get_run(&self, run_id: i64) -> Result<AnalysisRun> {
        self.conn
            .query_row(
                "SELECT run_id, standard_name, standard_version, canonical_params, identity, dataset_ids, started, finished, status, message
                 FROM runs WHERE run_id = ?1",
                [run_id],
                |r| {
                    Ok((
                        r.get::<_, i64>(0)?,
                        r.get::<_, String>(1)?,
                        r.get::<_, String>(2)?,
                        r.get::<_, String>(3)?,
                        r.get::<_, String>(4)?,
                        r.get::<_, String>(5)?,
                        r.get::<_, String>(6)?,
                        r.get::<_, Option<String>>(7)?,
                        r.get::<_, String>(8)?,
                        r.get::<_, Option<String>>(9)?,
                    ))
                },
            )
            .optional()?
            .ok_or_else(|| Error::NotFound(format!("run {run_id}")))
            .and_then(|(run_id, name, version, canonical, identity, ids, started, finished, status, message)| {
                Ok(AnalysisRun {
                    run_id,
                    standard_name: name,
                    standard_version: version,
                    canonical_params: canonical,
                    identity,
                    dataset_ids: serde_json::from_str(&ids)?,
                    started,
                    finished,
                    status: RunStatus::parse(&status)?,
                    message,
                })
            })
    }

    pub fn list_runs(&self) -> Result<Vec<RunSummary>> {
        let mut stmt = self.conn.prepare(
            "SELECT u.run_id, u.standard_name, u.standard_version, u.status, u.identity, u.started, u.finished,
                    (SELECT COUNT(*) FROM results_numeric n WHERE n.run_id = u.run_id)
                  + (SELECT COUNT(*) FROM results_km k WHERE k.run_id = u.run_id)
             FROM runs u ORDER BY u.run_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, String>(5)?,
                r.get::<_, Option<String>>(6)?,
                r.get::<_, i64>(7)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (run_id, standard_name, standard_version, status, identity, started, finished, n) = row?;
            out.push(RunSummary {
                run_id,
                standard_name,
                standard_version,
                status: RunStatus::parse(&status)?,
                identity,
                n_records: n as usize,
                started,
                finished,
            });
        }
        Ok(out)
    }

    /// Matching records ordered by (run_id, group keys, variable, time, statistic_name).
    pub fn query_results(&self, filter: &ResultFilter) -> Result<QueryOutput> {
        let mut sql = String::from(
            "SELECT r.result_id, r.run_id, r.group_key, r.variable, r.statistic_name, r.value, r.value_text, r.unit, r.time,
                    u.standard_name, u.standard_version
             FROM (SELECT result_id, run_id, group_key, variable, statistic_name, value, value_text, unit, NULL AS time
                     FROM results_numeric
                   UNION ALL
                   SELECT result_id, run_id, group_key, variable, statistic_name, value, value_text, unit, time
                     FROM results_km) r
             JOIN runs u ON u.run_id = r.run_id
             WHERE 1 = 1",
        );
        let mut args: Vec<SqlValue> = Vec::new();
        if let Some(name) = &filter.standard_name {
            sql.push_str(" AND u.standard_name = ?");
            args.push(name.clone().into());
        }
        if let Some(id) = filter.run_id {
            sql.push_str(" AND r.run_id = ?");
            args.push(id.into());
        }
        if let Some(id) = filter.dataset_id {
            sql.push_str(" AND EXISTS (SELECT 1 FROM json_each(u.dataset_ids) d WHERE d.value = ?)");
            args.push(id.into());
        }
        for (k, v) in &filter.groups {
            sql.push_str(
                " AND EXISTS (SELECT 1 FROM json_each(r.group_key) g
                   WHERE json_extract(g.value, '$[0]') = ? AND json_extract(g.value, '$[1]') = ?)",
            );
            args.push(k.clone().into());
            args.push(v.clone().into());
        }
        if let Some(var) = &filter.variable {
            sql.push_str(" AND r.variable = ?");
            args.push(var.clone().into());
        }
        if !filter.statistic_names.is_empty() {
            let marks = vec!["?"; filter.statistic_names.len()].join(", ");
            sql.push_str(&format!(" AND r.statistic_name IN ({marks})"));
            args.extend(filter.statistic_names.iter().map(|s| SqlValue::from(s.clone())));
        }
        if let Some((lo, hi)) = filter.time_range {
            sql.push_str(" AND r.time IS NOT NULL AND r.time >= ? AND r.time <= ?");
            args.push(lo.into());
            args.push(hi.into());
        }
        sql.push_str(" ORDER BY r.run_id, r.group_key, r.variable, r.time, r.statistic_name");

        let mut stmt = self.conn.prepare(&sql)?;
        let raw = stmt.query_map(params_from_iter(args), |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, i64>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, Option<f64>>(5)?,
                r.get::<_, Option<String>>(6)?,
                r.get::<_, Option<String>>(7)?,
                r.get::<_, Option<f64>>(8)?,
                r.get::<_, String>(9)?,
                r.get::<_, String>(10)?,
            ))
        })?;
        let mut out = QueryOutput::default();
        for row in raw {
            let (result_id, run_id, key, variable, statistic_name, value, value_text, unit, time, sname, sversion) =
                row?;
            out.rows.push(AnnotatedRecord {
                record: ResultRecord {
                    result_id: Some(result_id),
                    run_id,
                    group_keys: parse_group_key(&key)?,
                    variable,
                    statistic_name,
                    value,
                    value_text,
                    unit,
                    time,
                },
                standard_name: sname,
                standard_version: sversion,
            });
        }

        for stat in &filter.statistic_names {
            let known: bool = self.conn.query_row(
                "SELECT EXISTS(SELECT 1 FROM results_numeric WHERE statistic_name = ?1)
                     OR EXISTS(SELECT 1 FROM results_km WHERE statistic_name = ?1)",
                [stat],
                |r| r.get(0),
            )?;
            if !known {
                out.warnings.push(format!("unknown statistic {stat:?}: no stored result uses it"));
            }
        }
        Ok(out)
    }
}

/// Column order of exported result records.
pub const RECORD_FIELDS: [&str; 9] =
    ["result_id", "run_id", "group_keys", "variable", "statistic_name", "value", "value_text", "unit", "time"];

pub(crate) fn push_csv_field(out: &mut String, field: &str) {
    if field.contains([',', '"', '\n', '\r']) {
        out.push('"');
        out.push_str(&field.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(field);
    }
}

pub fn write_records_csv<'a>(mut w: impl Write, records: impl IntoIterator<Item = &'a ResultRecord>) -> Result<()> {
    let mut out = RECORD_FIELDS.join(",");
    out.push('\n');
    let opt_num = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in records {
        let fields = [
            r.result_id.map(|i| i.to_string()).unwrap_or_default(),
            r.run_id.to_string(),
            group_key_display(&r.group_keys),
            r.variable.clone(),
            r.statistic_name.clone(),
            opt_num(r.value),
            r.value_text.clone().unwrap_or_default(),
            r.unit.clone().unwrap_or_default(),
            opt_num(r.time),
        ];
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_csv_field(&mut out, f);
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn records_to_json<'a>(records: impl IntoIterator<Item = &'a ResultRecord>) -> Result<String> {
    let list: Vec<&ResultRecord> = records.into_iter().collect();
    Ok(serde_json::to_string_pretty(&list)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::init_schema;

    fn fresh() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path().join("ardm.db"), true).unwrap();
        init_schema(&mut store).unwrap();
        (dir, store)
    }

    fn run(identity: &str) -> AnalysisRun {
        AnalysisRun {
            run_id: 0,
            standard_name: "descriptive".into(),
            standard_version: "1.0.0".into(),
            canonical_params: "{}".into(),
            identity: identity.into(),
            dataset_ids: vec![1],
            started: now_utc(),
            finished: None,
            status: RunStatus::Completed,
            message: None,
        }
    }

    fn rec(group: &str, stat: &str, v: f64) -> ResultRecord {
        ResultRecord::numeric(vec![("TRT".into(), group.into())], "AGE", stat, Some(v))
    }

    #[test]
    fn open_modes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("new.db");
        assert!(matches!(open_store(&path, false), Err(Error::Open(_))));
        let store = open_store(&path, true).unwrap();
        assert_eq!(store.schema_version().unwrap(), 0);
        drop(store);
        let mut store = open_store(&path, false).unwrap();
        init_schema(&mut store).unwrap();
        drop(store);
        assert_eq!(open_store(&path, false).unwrap().schema_version().unwrap(), 1);
        assert!(matches!(Store::open_read_only(dir.path().join("missing.db")), Err(Error::Open(_))));
    }

    #[test]
    fn second_writer_is_locked_out() {
        let (dir, _store) = fresh();
        let err = open_store(dir.path().join("ardm.db"), false).unwrap_err();
        assert!(matches!(err, Error::Locked(_)), "{err:?}");
        assert!(Store::open_read_only(dir.path().join("ardm.db")).is_ok());
    }

    #[test]
    fn insert_and_query_round_trip() {
        let (_dir, mut store) = fresh();
        let mut r = run("a");
        let recs = vec![rec("B", "mean", 2.0), rec("A", "mean", 1.0), rec("A", "n", 3.0)];
        assert_eq!(store.insert_results(&mut r, &recs).unwrap(), 3);
        assert_eq!(r.run_id, 1);
        let out = store.query_results(&ResultFilter::default()).unwrap();
        let got: Vec<_> = out.records().map(|r| (r.group_keys[0].1.as_str(), r.statistic_name.as_str())).collect();
        assert_eq!(got, vec![("A", "mean"), ("A", "n"), ("B", "mean")]);
        assert!(out.rows.iter().all(|r| r.standard_name == "descriptive"));
    }

    #[test]
    fn duplicate_in_batch_rolls_back() {
        let (_dir, mut store) = fresh();
        let mut r = run("a");
        let err = store.insert_results(&mut r, &[rec("A", "mean", 1.0), rec("A", "mean", 1.5)]).unwrap_err();
        match err {
            Error::Duplicate(key) => assert!(key.contains("statistic=mean")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(store.query_results(&ResultFilter::default()).unwrap().rows.is_empty());
        assert!(store.list_runs().unwrap().is_empty());
    }

    #[test]
    fn empty_batch_rejected() {
        let (_dir, mut store) = fresh();
        assert!(store.insert_results(&mut run("a"), &[]).is_err());
        assert!(store.list_runs().unwrap().is_empty());
    }

    #[test]
    fn completed_identity_is_unique() {
        let (_dir, mut store) = fresh();
        store.insert_results(&mut run("a"), &[rec("A", "n", 1.0)]).unwrap();
        assert!(matches!(store.insert_results(&mut run("a"), &[rec("A", "n", 1.0)]), Err(Error::Duplicate(_))));
        assert_eq!(store.list_runs().unwrap().len(), 1);
    }

    #[test]
    fn injected_failure_leaves_nothing() {
        let (_dir, mut store) = fresh();
        let recs: Vec<_> = (0..30).map(|i| rec("A", &format!("s{i}"), i as f64)).collect();
        assert!(store.insert_results_failing_after(&mut run("a"), &recs, Some(17)).is_err());
        assert!(store.query_results(&ResultFilter::default()).unwrap().rows.is_empty());
    }

    #[test]
    fn run_lookup() {
        let (_dir, mut store) = fresh();
        assert!(matches!(store.get_run(999), Err(Error::NotFound(_))));
        let mut r = run("a");
        store.insert_results(&mut r, &[rec("A", "n", 1.0)]).unwrap();
        let runs = store.list_runs().unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].status, RunStatus::Completed);
        assert_eq!(runs[0].n_records, 1);
        assert_eq!(store.get_run(r.run_id).unwrap().identity, "a");
    }

    #[test]
    fn failed_run_row() {
        let (_dir, mut store) = fresh();
        let mut r = run("a");
        r.message = Some("empty analysis set".into());
        store.record_failed_run(&mut r).unwrap();
        let got = store.get_run(r.run_id).unwrap();
        assert_eq!(got.status, RunStatus::Failed);
        assert_eq!(got.message.as_deref(), Some("empty analysis set"));
        // a failed run does not block a later completed one
        store.insert_results(&mut run("a"), &[rec("A", "n", 1.0)]).unwrap();
    }

    #[test]
    fn filters_and_warnings() {
        let (_dir, mut store) = fresh();
        let mut recs = vec![rec("A", "n", 1.0), rec("B", "n", 2.0)];
        recs.push(ResultRecord::numeric(vec![("TRT".into(), "A".into())], "TTDE", "surv", Some(0.9)).at_time(3.0));
        recs.push(ResultRecord::numeric(vec![("TRT".into(), "A".into())], "TTDE", "surv", Some(0.8)).at_time(7.0));
        store.insert_results(&mut run("a"), &recs).unwrap();

        let f = ResultFilter { groups: vec![("TRT".into(), "A".into())], ..Default::default() };
        assert_eq!(store.query_results(&f).unwrap().rows.len(), 3);
        let f = ResultFilter { time_range: Some((0.0, 5.0)), ..Default::default() };
        assert_eq!(store.query_results(&f).unwrap().rows.len(), 1);
        let f = ResultFilter { dataset_id: Some(1), ..Default::default() };
        assert_eq!(store.query_results(&f).unwrap().rows.len(), 4);
        let f = ResultFilter { dataset_id: Some(2), ..Default::default() };
        assert!(store.query_results(&f).unwrap().rows.is_empty());

        let f = ResultFilter { statistic_names: ["p_value".to_string()].into(), ..Default::default() };
        let out = store.query_results(&f).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn empty_store_empty_result() {
        let (_dir, store) = fresh();
        assert!(store.query_results(&ResultFilter::default()).unwrap().rows.is_empty());
    }

    #[test]
    fn csv_export_field_order() {
        let mut r = rec("A, B", "mean", 1.5);
        r.result_id = Some(4);
        r.run_id = 2;
        let mut buf = Vec::new();
        write_records_csv(&mut buf, [&r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "result_id,run_id,group_keys,variable,statistic_name,value,value_text,unit,time\n4,2,\"TRT=A, B\",AGE,mean,1.5,,,\n"
        );
        let json = records_to_json([&r]).unwrap();
        let keys: Vec<_> = RECORD_FIELDS.iter().map(|k| json.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }
}
