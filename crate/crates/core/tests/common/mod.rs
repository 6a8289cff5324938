#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ardm::ingest::{parse_dataset, AnalysisDataset, Domain};
use ardm::schema::{init_schema, register_dataset};
use ardm::standards::register_builtin_standards;
use ardm::store::{open_store, Store};
use tempfile::TempDir;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pilot")
}

pub fn pilot(name: &str, domain: Domain) -> AnalysisDataset {
    let path = fixture_dir().join(name);
    let bytes = std::fs::read(&path).unwrap();
    parse_dataset(name, &bytes, domain, None).unwrap()
}

pub fn fresh_store() -> (TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let mut store = open_store(dir.path().join("ardm.db"), true).unwrap();
    init_schema(&mut store).unwrap();
    register_builtin_standards(&mut store).unwrap();
    (dir, store)
}

pub struct PilotIds {
    pub adsl: i64,
    pub adtte: i64,
    pub adae: i64,
}

pub fn load_pilot(store: &mut Store) -> PilotIds {
    let adsl = register_dataset(store, &pilot("adsl.csv", Domain::Adsl)).unwrap().dataset_id;
    let adtte = register_dataset(store, &pilot("adtte.csv", Domain::Adtte)).unwrap().dataset_id;
    let adae = register_dataset(store, &pilot("adae.csv", Domain::Adae)).unwrap().dataset_id;
    PilotIds { adsl, adtte, adae }
}

pub fn params(pairs: &[(&str, &str)]) -> BTreeMap<String, serde_json::Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string()))).collect()
}

/// Raw rows of both results tables ordered by result_id.
pub fn results_dump(store_path: &Path) -> Vec<String> {
    let conn = rusqlite::Connection::open_with_flags(store_path, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY).unwrap();
    let mut out = Vec::new();
    for table in ["results_numeric", "results_km"] {
        let mut stmt = conn.prepare(&format!("SELECT * FROM {table} ORDER BY result_id")).unwrap();
        let n = stmt.column_count();
        let rows = stmt
            .query_map([], |r| {
                let mut cells = Vec::with_capacity(n);
                for i in 0..n {
                    let v: rusqlite::types::Value = r.get(i)?;
                    cells.push(format!("{v:?}"));
                }
                Ok(format!("{table}|{}", cells.join("|")))
            })
            .unwrap();
        out.extend(rows.map(Result::unwrap));
    }
    out
}

/// Survival and Greenwood variance at `t` from explicit risk sets.
pub struct OraclePoint {
    pub n_risk: usize,
    pub surv: f64,
    pub std_err: f64,
}

pub fn km_oracle(times: &[f64], events: &[u8], t: f64) -> OraclePoint {
    let mut event_times: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e == 1).map(|(&x, _)| x).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut surv = 1.0;
    let mut greenwood = 0.0;
    for &u in event_times.iter().filter(|&&u| u <= t) {
        let n = times.iter().filter(|&&x| x >= u).count() as f64;
        let d = times.iter().zip(events).filter(|(&x, &e)| x == u && e == 1).count() as f64;
        surv *= 1.0 - d / n;
        if n > d {
            greenwood += d / (n * (n - d));
        }
    }
    OraclePoint { n_risk: times.iter().filter(|&&x| x >= t).count(), surv, std_err: (surv * surv * greenwood).sqrt() }
}
