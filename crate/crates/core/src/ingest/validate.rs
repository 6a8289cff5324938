use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{AnalysisDataset, Cell, ColumnKind, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    /// Column name, or `"dataset"` for dataset-wide findings.
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dataset_ref: String,
    pub issues: Vec<Issue>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn new(dataset_ref: impl Into<String>, issues: Vec<Issue>) -> Self {
        let passed = issues.iter().all(|i| i.severity != Severity::Error);
        ValidationReport { dataset_ref: dataset_ref.into(), issues, passed }
    }

    pub fn error_count(&self) -> usize {
        self.issues.iter().filter(|i| i.severity == Severity::Error).count()
    }
}

/// Required columns per domain. `USUBJID` is enforced at parse time for all
/// domains and need not be listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainRules {
    pub required: BTreeMap<Domain, Vec<String>>,
}

impl Default for DomainRules {
    fn default() -> Self {
        let cols = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut required = BTreeMap::new();
        required.insert(Domain::Adsl, cols(&["USUBJID", "TRT01P"]));
        required.insert(Domain::Adtte, cols(&["USUBJID", "PARAMCD", "AVAL", "CNSR", "TRTP"]));
        required.insert(Domain::Adae, cols(&["USUBJID", "AEDECOD", "AEBODSYS", "TRTA"]));
        DomainRules { required }
    }
}

pub fn validate_domain(dataset: &AnalysisDataset) -> ValidationReport {
    validate_domain_with(dataset, &DomainRules::default())
}

pub fn validate_domain_with(dataset: &AnalysisDataset, rules: &DomainRules) -> ValidationReport {
    let mut issues = Vec::new();
    let mut error = |location: &str, message: String| {
        issues.push(Issue { severity: Severity::Error, location: location.to_string(), message })
    };

    if let Some(required) = rules.required.get(&dataset.domain) {
        for col in required {
            if !dataset.has_column(col) {
                error(col, format!("missing required column {col}"));
            }
        }
    }

    let col = |name: &str| dataset.column_index(name);

    match dataset.domain {
        Domain::Adtte => {
            if let Some(i) = col("AVAL") {
                if dataset.columns[i].kind != ColumnKind::Continuous {
                    error("AVAL", "analysis value column is not numeric".into());
                } else {
                    let negative = dataset.rows.iter().filter(|r| matches!(r[i], Cell::Number(v) if v < 0.0)).count();
                    if negative > 0 {
                        error("AVAL", format!("negative analysis value in {negative} row(s)"));
                    }
                    let missing = dataset.rows.iter().filter(|r| r[i].is_null()).count();
                    if missing > 0 {
                        error("AVAL", format!("missing analysis value in {missing} row(s)"));
                    }
                }
            }
            if let Some(i) = col("CNSR") {
                let bad =
                    dataset.rows.iter().filter(|r| !matches!(r[i], Cell::Number(v) if v == 0.0 || v == 1.0)).count();
                if bad > 0 {
                    error("CNSR", format!("censoring flag outside {{0,1}} in {bad} row(s)"));
                }
            }
            if let (Some(s), Some(p)) = (col("USUBJID"), col("PARAMCD")) {
                let mut seen = HashSet::new();
                let dups: Vec<String> = dataset
                    .rows
                    .iter()
                    .filter(|r| !seen.insert((r[s].canonical_text(), r[p].canonical_text())))
                    .map(|r| format!("{}/{}", r[s].canonical_text(), r[p].canonical_text()))
                    .collect();
                if !dups.is_empty() {
                    error("dataset", format!("duplicate (USUBJID, PARAMCD): {}", dups.join(", ")));
                }
            }
        }
        Domain::Adsl => {
            if let Some(s) = col("USUBJID") {
                let mut seen = HashSet::new();
                let dups: Vec<String> =
                    dataset.rows.iter().map(|r| r[s].canonical_text()).filter(|id| !seen.insert(id.clone())).collect();
                if !dups.is_empty() {
                    error("USUBJID", format!("duplicate subject identifier: {}", dups.join(", ")));
                }
            }
        }
        Domain::Adae | Domain::Other => {}
    }

    for (i, c) in dataset.columns.iter().enumerate() {
        if !dataset.rows.is_empty() && dataset.rows.iter().all(|r| r[i].is_null()) {
            issues.push(Issue {
                severity: Severity::Warning,
                location: c.name.clone(),
                message: "column has no non-null values".into(),
            });
        }
    }

    ValidationReport::new(dataset.source_name.clone(), issues)
}
