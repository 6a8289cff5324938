//! Analysis standards: declarative, versioned sequences of grammar steps
//! (select, transform, apply formula, store) executed against registered
//! datasets.

mod builtin;
mod engine;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rusqlite::{params, OptionalExtension};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ingest::{sha256_hex, Domain};
use crate::schema::get_registration;
use crate::store::{now_utc, Store};

pub use crate::store::{AnalysisRun, RunStatus};
pub use builtin::{
    builtin_standards, descriptive_standard, register_builtin_standards, safety_standard, survival_standard,
};
pub use engine::{formula_ids, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Select,
    Transform,
    ApplyFormula,
    Store,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Select => "select",
            StepKind::Transform => "transform",
            StepKind::ApplyFormula => "apply_formula",
            StepKind::Store => "store",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub kind: StepKind,
    pub formula: String,
    /// Literal arguments; a value of the form `$name` binds parameter `name`.
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

impl Step {
    pub fn new(kind: StepKind, formula: &str, args: &[(&str, &str)]) -> Self {
        Step {
            kind,
            formula: formula.to_string(),
            args: args.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Text,
    Number,
    /// Comma-separated on the command line, a JSON array of strings otherwise.
    TextList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    /// Allowed values for text parameters; empty means unrestricted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamKind) -> Self {
        ParamSpec { name: name.into(), kind, required: true, default: None, choices: Vec::new() }
    }

    pub fn optional(name: &str, kind: ParamKind, default: Value) -> Self {
        ParamSpec { name: name.into(), kind, required: false, default: Some(default), choices: Vec::new() }
    }

    pub fn with_choices(mut self, choices: &[&str]) -> Self {
        self.choices = choices.iter().map(|c| c.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisStandard {
    pub name: String,
    pub version: String,
    pub param_schema: Vec<ParamSpec>,
    pub steps: Vec<Step>,
}

impl AnalysisStandard {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let standard: AnalysisStandard = serde_json::from_str(text)?;
        standard.validate()?;
        Ok(standard)
    }

    /// Check grammar order, formula identifiers and parameter bindings.
    pub fn validate(&self) -> Result<()> {
        let def = |msg: String| Err(Error::Definition(format!("{}@{}: {msg}", self.name, self.version)));
        if self.name.trim().is_empty() || self.version.trim().is_empty() {
            return def("name and version must be non-empty".into());
        }
        if let Some(w) = self.steps.windows(2).find(|w| w[1].kind < w[0].kind) {
            return def(format!("step {} cannot follow {}", w[1].kind, w[0].kind));
        }
        if self.steps.iter().filter(|s| s.kind == StepKind::Store).count() != 1
            || self.steps.last().map(|s| s.kind) != Some(StepKind::Store)
        {
            return def("a standard ends with exactly one store step".into());
        }
        if !self.steps.iter().any(|s| s.kind == StepKind::ApplyFormula) {
            return def("no apply_formula step".into());
        }
        if !self.steps.iter().any(|s| s.kind == StepKind::Select) {
            return def("no select step".into());
        }
        let mut names = BTreeSet::new();
        for p in &self.param_schema {
            if !names.insert(p.name.as_str()) {
                return def(format!("parameter {} declared twice", p.name));
            }
            if let Some(d) = &p.default {
                if let Err(e) = coerce(p, d) {
                    return def(format!("default of {}: {e}", p.name));
                }
            }
        }
        for step in &self.steps {
            if !formula_ids(step.kind).contains(&step.formula.as_str()) {
                return def(format!("unknown {} formula {:?}", step.kind, step.formula));
            }
            for value in step.args.values() {
                if let Some(param) = value.strip_prefix('$') {
                    if !names.contains(param) {
                        return def(format!("step {} binds undeclared parameter {param}", step.formula));
                    }
                }
            }
        }
        Ok(())
    }

    /// Domains loaded by `dataset` select steps, with their optional flag.
    pub fn input_domains(&self) -> Result<Vec<(Domain, bool)>> {
        self.steps
            .iter()
            .filter(|s| s.kind == StepKind::Select && s.formula == "dataset")
            .map(|s| {
                let domain = s
                    .args
                    .get("domain")
                    .ok_or_else(|| Error::Definition("dataset step without domain".into()))?
                    .parse::<Domain>()?;
                Ok((domain, s.args.get("optional").is_some_and(|v| v == "true")))
            })
            .collect()
    }

    fn digest(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

fn coerce(spec: &ParamSpec, value: &Value) -> std::result::Result<Value, String> {
    let coerced = match (spec.kind, value) {
        (ParamKind::Text, Value::String(s)) => Value::String(s.trim().to_string()),
        (ParamKind::Number, Value::Number(_)) => value.clone(),
        (ParamKind::Number, Value::String(s)) => {
            let v = crate::ingest::parse_decimal(s).ok_or_else(|| format!("{s:?} is not a number"))?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or("number out of range")?
        }
        (ParamKind::TextList, Value::String(s)) => Value::Array(
            s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(|x| Value::String(x.to_string())).collect(),
        ),
        (ParamKind::TextList, Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::String(s) => out.push(Value::String(s.trim().to_string())),
                    other => return Err(format!("list item {other} is not text")),
                }
            }
            Value::Array(out)
        }
        (kind, other) => return Err(format!("{other} does not fit a {kind:?} parameter")),
    };
    if matches!(&coerced, Value::String(s) if s.is_empty()) || matches!(&coerced, Value::Array(a) if a.is_empty()) {
        return Err("empty value".into());
    }
    if !spec.choices.is_empty() {
        if let Value::String(s) = &coerced {
            if !spec.choices.contains(s) {
                return Err(format!("{s:?} is not one of {}", spec.choices.join(", ")));
            }
        }
    }
    Ok(coerced)
}

/// Apply defaults, coerce values by kind, and serialize with sorted keys and
/// no whitespace. Returns the canonical text and its SHA-256.
pub fn canonicalize_params(schema: &[ParamSpec], params: &BTreeMap<String, Value>) -> Result<(String, String)> {
    let canonical = resolve_params(schema, params)?;
    let text = serde_json::to_string(&canonical)?;
    let digest = sha256_hex(text.as_bytes());
    Ok((text, digest))
}

pub(crate) fn resolve_params(
    schema: &[ParamSpec],
    params: &BTreeMap<String, Value>,
) -> Result<BTreeMap<String, Value>> {
    if let Some(unknown) = params.keys().find(|k| !schema.iter().any(|p| &p.name == *k)) {
        return Err(Error::Params(format!("unknown parameter {unknown:?}")));
    }
    let mut out = BTreeMap::new();
    for spec in schema {
        let value = match (params.get(&spec.name), &spec.default) {
            (Some(v), _) => v,
            (None, Some(d)) => d,
            (None, None) if spec.required => {
                return Err(Error::Params(format!("missing required parameter {:?}", spec.name)))
            }
            (None, None) => continue,
        };
        let v = coerce(spec, value).map_err(|e| Error::Params(format!("parameter {:?}: {e}", spec.name)))?;
        out.insert(spec.name.clone(), v);
    }
    Ok(out)
}

/// Parse `KEY=VALUE` assignments into a text-valued parameter map.
pub fn parse_param_assignments<S: AsRef<str>>(assignments: &[S]) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for a in assignments {
        let (k, v) = a
            .as_ref()
            .split_once('=')
            .ok_or_else(|| Error::Params(format!("expected KEY=VALUE, got {:?}", a.as_ref())))?;
        if out.insert(k.trim().to_string(), Value::String(v.to_string())).is_some() {
            return Err(Error::Params(format!("parameter {k:?} given twice")));
        }
    }
    Ok(out)
}

/// Persist a standard. Re-registering identical content is a no-op; other
/// content under an existing (name, version) is rejected.
pub fn register_standard(store: &mut Store, standard: &AnalysisStandard) -> Result<()> {
    standard.validate()?;
    let digest = standard.digest()?;
    let existing: Option<String> = store
        .conn()
        .query_row(
            "SELECT digest FROM standards_registry WHERE name = ?1 AND version = ?2",
            params![standard.name, standard.version],
            |r| r.get(0),
        )
        .optional()?;
    match existing {
        Some(d) if d == digest => Ok(()),
        Some(_) => Err(Error::Definition(format!(
            "{}@{} is already registered with different content",
            standard.name, standard.version
        ))),
        None => {
            let tx = store.write_txn()?;
            tx.execute(
                "INSERT INTO standards_registry (name, version, definition, digest, registered_at) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![standard.name, standard.version, serde_json::to_string(standard)?, digest, now_utc()],
            )?;
            tx.commit()?;
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardSummary {
    pub name: String,
    pub version: String,
    pub param_schema: Vec<ParamSpec>,
}

fn version_key(v: &str) -> (Vec<u64>, String) {
    let core = v.split(['-', '+']).next().unwrap_or(v);
    let nums = core.split('.').map(|p| p.parse::<u64>().unwrap_or(u64::MAX)).collect();
    (nums, v.to_string())
}

fn all_standards(store: &Store) -> Result<Vec<AnalysisStandard>> {
    let mut stmt = store.conn().prepare("SELECT definition FROM standards_registry")?;
    let defs = stmt.query_map([], |r| r.get::<_, String>(0))?;
    let mut out = Vec::new();
    for d in defs {
        out.push(serde_json::from_str::<AnalysisStandard>(&d?)?);
    }
    out.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| version_key(&a.version).cmp(&version_key(&b.version))));
    Ok(out)
}

/// Registry contents sorted by (name, version).
pub fn list_standards(store: &Store) -> Result<Vec<StandardSummary>> {
    Ok(all_standards(store)?
        .into_iter()
        .map(|s| StandardSummary { name: s.name, version: s.version, param_schema: s.param_schema })
        .collect())
}

/// Look up a standard; without a version the highest registered one wins.
pub fn load_standard(store: &Store, name: &str, version: Option<&str>) -> Result<AnalysisStandard> {
    all_standards(store)?.into_iter().rfind(|s| s.name == name && version.is_none_or(|v| v == s.version)).ok_or_else(
        || match version {
            Some(v) => Error::NotFound(format!("standard {name}@{v}")),
            None => Error::NotFound(format!("standard {name}")),
        },
    )
}

/// Options for [`run_standard_with`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Abort the store step after this many records have been written
    /// (inside the transaction). Used to exercise rollback.
    pub fail_store_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub run: AnalysisRun,
    /// Executed steps in order; empty for a skipped duplicate.
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    pub n_records: usize,
}

/// Provenance identity of a run.
pub fn run_identity(standard: &AnalysisStandard, canonical_params: &str, checksums: &[String]) -> String {
    let mut sorted = checksums.to_vec();
    sorted.sort();
    let doc = serde_json::json!({
        "datasets": sorted,
        "params": canonical_params,
        "standard": standard.name,
        "version": standard.version,
    });
    sha256_hex(doc.to_string().as_bytes())
}

pub fn run_standard(
    store: &mut Store,
    name: &str,
    params: &BTreeMap<String, Value>,
    dataset_ids: &[i64],
) -> Result<AnalysisRun> {
    run_standard_with(store, name, params, dataset_ids, &RunOptions::default()).map(|r| r.run)
}

/// Execute a registered standard (`name` or `name@version`).
///
/// A completed run with the same identity is returned with status
/// `skipped_duplicate` and nothing is written. A failing run stores a run
/// row with status `failed` and no records, then returns the error.
pub fn run_standard_with(
    store: &mut Store,
    name: &str,
    params: &BTreeMap<String, Value>,
    dataset_ids: &[i64],
    options: &RunOptions,
) -> Result<RunReport> {
    let (name, version) = match name.split_once('@') {
        Some((n, v)) => (n, Some(v)),
        None => (name, None),
    };
    let standard = load_standard(store, name, version)?;
    let resolved = resolve_params(&standard.param_schema, params)?;
    let canonical = serde_json::to_string(&resolved)?;

    let mut ids: Vec<i64> = dataset_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut inputs = BTreeMap::new();
    let mut checksums = Vec::new();
    for &id in &ids {
        let reg = get_registration(store, id)?;
        if inputs.insert(reg.domain, id).is_some() {
            return Err(Error::Params(format!("two {} datasets supplied", reg.domain)));
        }
        checksums.push(reg.checksum);
    }
    let wanted = standard.input_domains()?;
    for (domain, optional) in &wanted {
        if !optional && !inputs.contains_key(domain) {
            return Err(Error::Params(format!("standard {} needs an {domain} dataset", standard.name)));
        }
    }
    if let Some((domain, id)) = inputs.iter().find(|(d, _)| !wanted.iter().any(|(w, _)| w == *d)) {
        return Err(Error::Params(format!("dataset {id} ({domain}) is not an input of standard {}", standard.name)));
    }

    let identity = run_identity(&standard, &canonical, &checksums);
    if let Some(mut existing) = store.completed_run_by_identity(&identity)? {
        existing.status = RunStatus::SkippedDuplicate;
        return Ok(RunReport {
            run: existing,
            trace: Vec::new(),
            warnings: vec!["skipped duplicate: identical run already completed".into()],
            n_records: 0,
        });
    }

    let mut run = AnalysisRun {
        run_id: 0,
        standard_name: standard.name.clone(),
        standard_version: standard.version.clone(),
        canonical_params: canonical,
        identity,
        dataset_ids: ids,
        started: now_utc(),
        finished: None,
        status: RunStatus::Completed,
        message: None,
    };

    let mut exec = engine::Executor::new(&standard, resolved, inputs, options.fail_store_after);
    match exec.execute(store, &mut run) {
        Ok(n_records) => Ok(RunReport { run, trace: exec.trace, warnings: exec.warnings, n_records }),
        Err(e) => {
            run.message = Some(e.to_string());
            run.finished = None;
            store.record_failed_run(&mut run)?;
            Err(Error::Analysis(format!("run {} failed: {e}", run.run_id)))
        }
    }
}
