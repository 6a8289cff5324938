use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{group_key_display, ResultFilter, ResultRecord, RunStatus, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Long,
    Wide,
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "long" => Ok(Orientation::Long),
            "wide" => Ok(Orientation::Wide),
            other => Err(Error::Argument(format!("orientation must be long or wide, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDocument {
    pub orientation: Orientation,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub caption: String,
}

impl TableDocument {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        super::csv_line(&mut out, &self.header);
        for row in &self.rows {
            super::csv_line(&mut out, row);
        }
        out
    }
}

/// Up to six significant digits, plain decimal notation.
pub fn format_sig6(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.5e}").parse().unwrap_or(v);
    format!("{rounded}")
}

fn cell(r: &ResultRecord) -> String {
    match r.value {
        Some(v) => format_sig6(v),
        None => r.value_text.clone().unwrap_or_default(),
    }
}

const STAT_ORDER: [&str; 23] = [
    "n",
    "n_missing",
    "mean",
    "sd",
    "median",
    "q1",
    "q3",
    "min",
    "max",
    "count",
    "percent",
    "n_subjects",
    "denom",
    "n_risk",
    "n_event",
    "n_censor",
    "surv",
    "std_err",
    "ci_lower",
    "ci_upper",
    "n_events",
    "median_survival",
    "conf_level",
];

fn stat_rank(name: &str) -> (usize, &str) {
    (STAT_ORDER.iter().position(|s| *s == name).unwrap_or(STAT_ORDER.len()), name)
}

fn time_text(t: Option<f64>) -> String {
    t.map(format_sig6).unwrap_or_default()
}

/// Orders (group, variable, time) blocks by descending percent within each
/// group; blocks without a percent keep their query order.
fn presentation_order(records: &mut [&ResultRecord]) {
    let mut percent: BTreeMap<(String, String, Option<u64>), f64> = BTreeMap::new();
    for r in records.iter() {
        if r.statistic_name == "percent" {
            if let Some(v) = r.value {
                percent.insert((group_key_display(&r.group_keys), r.variable.clone(), r.time.map(f64::to_bits)), v);
            }
        }
    }
    if percent.is_empty() {
        return;
    }
    let keyed: Vec<(usize, Option<f64>)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (i, percent.get(&(group_key_display(&r.group_keys), r.variable.clone(), r.time.map(f64::to_bits))).copied())
        })
        .collect();
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, pa) = keyed[a];
        let (ib, pb) = keyed[b];
        records[a]
            .group_keys
            .cmp(&records[b].group_keys)
            .then_with(|| match (pa, pb) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            })
            .then(ia.cmp(&ib))
    });
    let sorted: Vec<&ResultRecord> = order.iter().map(|&i| records[i]).collect();
    records.copy_from_slice(&sorted);
}

/// Pivots records to one row per (group, variable, time) with one column per
/// statistic.
pub fn pivot_wide(records: &[&ResultRecord]) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let has_time = records.iter().any(|r| r.time.is_some());
    let mut stats: Vec<&str> = Vec::new();
    let mut row_order: Vec<(String, String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String, String), BTreeMap<&str, String>> = BTreeMap::new();
    for r in records {
        let key = (group_key_display(&r.group_keys), r.variable.clone(), time_text(r.time));
        let row = cells.entry(key.clone()).or_insert_with(|| {
            row_order.push(key.clone());
            BTreeMap::new()
        });
        if row.insert(r.statistic_name.as_str(), cell(r)).is_some() {
            return Err(Error::Pivot(format!(
                "two values for statistic {} at group={}, variable={}, time={}",
                r.statistic_name, key.0, key.1, key.2
            )));
        }
        if !stats.contains(&r.statistic_name.as_str()) {
            stats.push(&r.statistic_name);
        }
    }
    stats.sort_by_key(|s| stat_rank(s));

    let mut header = vec!["group".to_string(), "variable".to_string()];
    if has_time {
        header.push("time".into());
    }
    header.extend(stats.iter().map(|s| s.to_string()));
    let rows = row_order
        .into_iter()
        .map(|key| {
            let row = &cells[&key];
            let mut out = vec![key.0.clone(), key.1.clone()];
            if has_time {
                out.push(key.2.clone());
            }
            out.extend(stats.iter().map(|s| row.get(s).cloned().unwrap_or_default()));
            out
        })
        .collect();
    Ok((header, rows))
}

pub fn render_table(store: &Store, run_id: i64, orientation: Orientation) -> Result<TableDocument> {
    let run = store.get_run(run_id)?;
    if run.status != RunStatus::Completed {
        return Err(Error::Render(format!("run {run_id} did not complete")));
    }
    let out = store.query_results(&ResultFilter { run_id: Some(run_id), ..Default::default() })?;
    let mut records: Vec<&ResultRecord> = out.records().collect();
    presentation_order(&mut records);
    let caption = format!(
        "Run {} of {} {} with parameters {} (identity {})",
        run.run_id, run.standard_name, run.standard_version, run.canonical_params, run.identity
    );

    let (header, rows) = match orientation {
        Orientation::Long => {
            let has_time = records.iter().any(|r| r.time.is_some());
            let mut header: Vec<String> = ["group", "variable"].map(String::from).to_vec();
            if has_time {
                header.push("time".into());
            }
            header.extend(["statistic", "value", "unit"].map(String::from));
            let rows = records
                .iter()
                .map(|r| {
                    let mut row = vec![group_key_display(&r.group_keys), r.variable.clone()];
                    if has_time {
                        row.push(time_text(r.time));
                    }
                    row.extend([r.statistic_name.clone(), cell(r), r.unit.clone().unwrap_or_default()]);
                    row
                })
                .collect();
            (header, rows)
        }
        Orientation::Wide => pivot_wide(&records)?,
    };
    Ok(TableDocument { orientation, header, rows, caption })
}
