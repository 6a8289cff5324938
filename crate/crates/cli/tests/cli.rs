mod common;

use std::process::Stdio;
use std::time::Duration;

use common::{ardm, ardm_cmd, dataset_id, file_sha256, fixture, ok, run_id, transcript};

#[test]
fn ingest_run_query_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    ok(&db, &["init"]);
    let adsl = dataset_id(&ok(&db, &["ingest", "--file", fixture("adsl.csv").to_str().unwrap(), "--domain", "ADSL"]));
    ok(&db, &["run", "--standard", "descriptive", "--dataset", &adsl]);
    let csv = ok(&db, &["query", "--statistic", "mean"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "result_id,run_id,group_keys,variable,statistic_name,value,value_text,unit,time");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.contains(",AGE,mean,")));

    let json = ok(&db, &["query", "--statistic", "mean", "--group", "TRT01P=Placebo", "--format", "json"]);
    let rows: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
}

#[test]
fn validation_failure_exits_two_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    ok(&db, &["init"]);
    let src = std::fs::read_to_string(fixture("adtte.csv")).unwrap();
    let cnsr = src.lines().next().unwrap().split(',').position(|c| c == "CNSR").unwrap();
    let stripped: String = src
        .lines()
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells.remove(cnsr);
            cells.join(",") + "\n"
        })
        .collect();
    let file = dir.path().join("adtte_nocnsr.csv");
    std::fs::write(&file, stripped).unwrap();
    let out = ardm(&db, &["ingest", "--file", file.to_str().unwrap(), "--domain", "ADTTE"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing required column CNSR"), "{stderr}");
    assert!(out.stdout.is_empty());
    assert_eq!(ok(&db, &["datasets", "list"]).trim(), "[]");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    let out = ardm(&db, &["query", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out =
        std::process::Command::new(env!("CARGO_BIN_EXE_ardm")).env_remove("ARDM_DB").arg("init").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = ardm(&db, &["query"]);
    assert_eq!(out.status.code(), Some(1), "querying a missing store is a user error");

    assert_eq!(ardm(&db, &["--help"]).status.code(), Some(0));
}

#[test]
fn store_path_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("env.db");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_ardm")).env("ARDM_DB", &db).arg("init").output().unwrap();
    assert!(out.status.success());
    assert!(db.exists());
}

#[test]
fn duplicate_run_exits_zero_with_notice() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    transcript(&db);
    let before = file_sha256(&db);
    let out = ardm(&db, &["run", "--standard", "safety", "--dataset", "1", "--dataset", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped duplicate"));
    let run: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(run["status"], "skipped_duplicate");
    assert_eq!(file_sha256(&db), before);
}

#[test]
fn render_km_drops_one_stratum() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    let run = transcript(&db);
    let full: serde_json::Value = serde_json::from_str(&ok(&db, &["render", "km", "--run", &run])).unwrap();
    let svg = dir.path().join("km.svg");
    let part: serde_json::Value = serde_json::from_str(&ok(
        &db,
        &["render", "km", "--run", &run, "--exclude-stratum", "Placebo", "--svg", svg.to_str().unwrap()],
    ))
    .unwrap();
    let full_strata = full["strata"].as_array().unwrap();
    let part_strata = part["strata"].as_array().unwrap();
    assert_eq!(full_strata.len(), 3);
    assert_eq!(part_strata.len(), 2);
    let kept: Vec<&serde_json::Value> = full_strata.iter().filter(|s| s["label"] != "Placebo").collect();
    assert_eq!(part_strata.iter().collect::<Vec<_>>(), kept);
    assert_eq!(std::fs::read_to_string(svg).unwrap().matches("<polyline").count(), 2);
}

#[test]
fn render_table_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    transcript(&db);
    let out = dir.path().join("t.csv");
    ok(&db, &["render", "table", "--run", "1", "--orientation", "wide", "--out", out.to_str().unwrap()]);
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("group,variable,n,n_missing,mean,sd,median,q1,q3,min,max"));
    let code = ardm(&db, &["render", "table", "--run", "1", "--orientation", "diagonal"]).status.code();
    assert_eq!(code, Some(1));
    assert_eq!(ardm(&db, &["render", "table", "--run", "42", "--orientation", "long"]).status.code(), Some(1));
}

#[test]
fn reads_leave_store_bytes_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    let run = transcript(&db);
    let before = file_sha256(&db);
    ok(&db, &["query", "--format", "json"]);
    ok(&db, &["query", "--standard", "survival", "--statistic", "surv"]);
    ok(&db, &["render", "km", "--run", &run, "--format", "csv"]);
    ok(&db, &["render", "table", "--run", &run, "--orientation", "long"]);
    ok(&db, &["render", "table", "--run", "1", "--orientation", "wide"]);
    ok(&db, &["standards", "list"]);
    ok(&db, &["runs", "list"]);
    ok(&db, &["datasets", "list"]);
    assert_eq!(file_sha256(&db), before);
}

#[test]
fn transcript_replay_is_query_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (da, db) = (a.path().join("s.db"), b.path().join("s.db"));
    transcript(&da);
    transcript(&db);
    for args in [&["query"][..], &["query", "--format", "json"][..]] {
        assert_eq!(ok(&da, args), ok(&db, args));
    }
}

#[test]
fn second_writer_gets_lock_error() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    ok(&db, &["init"]);
    let holder = ardm::store::Store::open(&db, false).unwrap();
    let out = ardm(&db, &["ingest", "--file", fixture("adsl.csv").to_str().unwrap(), "--domain", "ADSL"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    ok(&db, &["datasets", "list"]);
    drop(holder);
    ok(&db, &["ingest", "--file", fixture("adsl.csv").to_str().unwrap(), "--domain", "ADSL"]);
}

#[test]
fn killed_writer_leaves_consistent_store() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    ok(&db, &["init"]);
    let adsl = dataset_id(&ok(&db, &["ingest", "--file", fixture("adsl.csv").to_str().unwrap(), "--domain", "ADSL"]));
    let adtte =
        dataset_id(&ok(&db, &["ingest", "--file", fixture("adtte.csv").to_str().unwrap(), "--domain", "ADTTE"]));
    for (i, delay) in [0u64, 2, 5, 10, 20, 40].into_iter().enumerate() {
        let conf = format!("conf_level=0.9{i}");
        let mut child = ardm_cmd(&db)
            .args(["run", "--standard", "survival", "--param", "param=TTDE", "--param", &conf])
            .args(["--dataset", &adtte, "--dataset", &adsl])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        std::thread::sleep(Duration::from_millis(delay));
        let _ = child.kill();
        let _ = child.wait();
    }
    let conn = rusqlite::Connection::open(&db).unwrap();
    let check: String = conn.query_row("PRAGMA integrity_check", [], |r| r.get(0)).unwrap();
    assert_eq!(check, "ok");
    let orphans: i64 = conn
        .query_row(
            "SELECT COUNT(*) FROM (SELECT run_id FROM results_km UNION ALL SELECT run_id FROM results_numeric)
             WHERE run_id NOT IN (SELECT run_id FROM runs WHERE status = 'completed')",
            [],
            |r| r.get(0),
        )
        .unwrap();
    assert_eq!(orphans, 0);
    drop(conn);
    let run = run_id(&ok(
        &db,
        &["run", "--standard", "survival", "--param", "param=TTDE", "--dataset", &adtte, "--dataset", &adsl],
    ));
    assert!(!ok(&db, &["query", "--run", &run]).is_empty());
}
