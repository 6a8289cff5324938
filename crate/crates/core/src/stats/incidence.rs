use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Synthetic term counting subjects with at least one event of any term.
pub const ANY_EVENT: &str = "ANY EVENT";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AeRow {
    pub usubjid: String,
    pub group: String,
    pub term: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceRow {
    pub group: String,
    pub term: String,
    pub n_subjects: usize,
    pub denom: usize,
    pub percent: f64,
}

/// Distinct-subject incidence per (group, term).
///
/// Rows are ordered by group, then descending percent, then term. Terms
/// with no subjects produce no row.
pub fn ae_incidence(ae_rows: &[AeRow], denominators: &BTreeMap<String, usize>) -> Result<Vec<IncidenceRow>> {
    super::record_call();
    let mut subjects: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
    for row in ae_rows {
        if !denominators.contains_key(&row.group) {
            return Err(Error::Domain(format!("no denominator for group {:?}", row.group)));
        }
        subjects.entry((&row.group, &row.term)).or_default().insert(&row.usubjid);
        subjects.entry((&row.group, ANY_EVENT)).or_default().insert(&row.usubjid);
    }

    let mut rows = Vec::with_capacity(subjects.len());
    for ((group, term), ids) in subjects {
        let denom = denominators[group];
        let n_subjects = ids.len();
        if n_subjects > denom {
            return Err(Error::Domain(format!(
                "group {group:?}: {n_subjects} subjects with {term:?} exceed population {denom}"
            )));
        }
        rows.push(IncidenceRow {
            group: group.to_string(),
            term: term.to_string(),
            n_subjects,
            denom,
            percent: 100.0 * n_subjects as f64 / denom as f64,
        });
    }
    rows.sort_by(|a, b| a.group.cmp(&b.group).then(b.percent.total_cmp(&a.percent)).then_with(|| a.term.cmp(&b.term)));
    Ok(rows)
}
