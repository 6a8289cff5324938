#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/pilot").join(name)
}

pub fn ardm_cmd(db: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ardm"));
    cmd.env_remove("ARDM_DB").arg("--db").arg(db);
    cmd
}

pub fn ardm(db: &Path, args: &[&str]) -> Output {
    ardm_cmd(db).args(args).output().expect("spawn ardm")
}

pub fn ok(db: &Path, args: &[&str]) -> String {
    let out = ardm(db, args);
    assert!(
        out.status.success(),
        "ardm {args:?} exited {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn dataset_id(stdout: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(stdout).unwrap();
    v["dataset_id"].as_i64().unwrap().to_string()
}

pub fn run_id(stdout: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(stdout).unwrap();
    v["run_id"].as_i64().unwrap().to_string()
}

/// A full session: init, three ingests, three runs. Returns the survival run id.
pub fn transcript(db: &Path) -> String {
    ok(db, &["init"]);
    let adsl = dataset_id(&ok(db, &["ingest", "--file", fixture("adsl.csv").to_str().unwrap(), "--domain", "ADSL"]));
    let adtte = dataset_id(&ok(db, &["ingest", "--file", fixture("adtte.csv").to_str().unwrap(), "--domain", "ADTTE"]));
    let adae = dataset_id(&ok(db, &["ingest", "--file", fixture("adae.csv").to_str().unwrap(), "--domain", "ADAE"]));
    ok(db, &["run", "--standard", "descriptive", "--param", "variables=AGE,WEIGHTBL,SEX", "--dataset", &adsl]);
    ok(db, &["run", "--standard", "safety", "--dataset", &adsl, "--dataset", &adae]);
    run_id(&ok(
        db,
        &[
            "run",
            "--standard",
            "survival",
            "--param",
            "param=TTDE",
            "--param",
            "strata=TRTP",
            "--dataset",
            &adtte,
            "--dataset",
            &adsl,
        ],
    ))
}

pub fn file_sha256(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}
