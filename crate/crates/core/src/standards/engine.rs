//! Step executor. Formula identifiers bind to a fixed kernel set per step kind.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AnalysisStandard, Step, StepKind};
use crate::error::{Error, Result};
use crate::ingest::{AnalysisDataset, Cell, ColumnKind, ColumnMeta, Domain};
use crate::schema;
use crate::stats;
use crate::store::{AnalysisRun, GroupKeys, ResultRecord, Store};

pub fn formula_ids(kind: StepKind) -> &'static [&'static str] {
    match kind {
        StepKind::Select => &["dataset", "filter_equals", "drop_missing"],
        StepKind::Transform => &["event_from_censor", "attach_column", "subject_level", "drop_missing"],
        StepKind::ApplyFormula => &["describe", "ae_incidence", "km_estimate"],
        StepKind::Store => &["results"],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub kind: StepKind,
    pub formula: String,
}

struct Frame {
    dataset_id: Option<i64>,
    data: AnalysisDataset,
}

pub(super) struct Executor<'s> {
    standard: &'s AnalysisStandard,
    params: BTreeMap<String, Value>,
    inputs: BTreeMap<Domain, i64>,
    fail_store_after: Option<usize>,
    frames: BTreeMap<String, Frame>,
    records: Vec<ResultRecord>,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

fn empty_set() -> Error {
    Error::Analysis("empty analysis set".into())
}

impl<'s> Executor<'s> {
    pub fn new(
        standard: &'s AnalysisStandard,
        params: BTreeMap<String, Value>,
        inputs: BTreeMap<Domain, i64>,
        fail_store_after: Option<usize>,
    ) -> Self {
        Executor {
            standard,
            params,
            inputs,
            fail_store_after,
            frames: BTreeMap::new(),
            records: Vec::new(),
            trace: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Run every step in order; returns the number of stored records.
    pub fn execute(&mut self, store: &mut Store, run: &mut AnalysisRun) -> Result<usize> {
        let mut stored = 0;
        for step in &self.standard.steps {
            match (step.kind, step.formula.as_str()) {
                (StepKind::Select, "dataset") => self.select_dataset(store, step)?,
                (StepKind::Select, "filter_equals") => self.filter_equals(step)?,
                (StepKind::Select | StepKind::Transform, "drop_missing") => self.drop_missing(step)?,
                (StepKind::Transform, "event_from_censor") => self.event_from_censor(step)?,
                (StepKind::Transform, "attach_column") => self.attach_column(step)?,
                (StepKind::Transform, "subject_level") => self.subject_level(store, step)?,
                (StepKind::ApplyFormula, "describe") => self.describe(step)?,
                (StepKind::ApplyFormula, "ae_incidence") => self.incidence(step)?,
                (StepKind::ApplyFormula, "km_estimate") => self.survival(step)?,
                (StepKind::Store, "results") => {
                    if self.records.is_empty() {
                        return Err(Error::Analysis("analysis produced no results".into()));
                    }
                    stored = store.insert_results_failing_after(run, &self.records, self.fail_store_after)?;
                }
                (kind, formula) => {
                    return Err(Error::Definition(format!("no {kind} kernel named {formula:?}")));
                }
            }
            self.trace.push(TraceEntry { kind: step.kind, formula: step.formula.clone() });
        }
        Ok(stored)
    }

    fn arg(&self, step: &Step, key: &str) -> Result<Value> {
        let raw = step
            .args
            .get(key)
            .ok_or_else(|| Error::Definition(format!("step {} lacks argument {key}", step.formula)))?;
        match raw.strip_prefix('$') {
            Some(name) => {
                self.params.get(name).cloned().ok_or_else(|| Error::Params(format!("parameter {name} has no value")))
            }
            None => Ok(Value::String(raw.clone())),
        }
    }

    fn text(&self, step: &Step, key: &str) -> Result<String> {
        match self.arg(step, key)? {
            Value::String(s) => Ok(s),
            Value::Number(n) => Ok(n.to_string()),
            other => Err(Error::Params(format!("argument {key} expects text, got {other}"))),
        }
    }

    fn list(&self, step: &Step, key: &str) -> Result<Vec<String>> {
        match self.arg(step, key)? {
            Value::Array(items) => Ok(items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect()),
            Value::String(s) => Ok(vec![s]),
            other => Err(Error::Params(format!("argument {key} expects a list, got {other}"))),
        }
    }

    fn number(&self, step: &Step, key: &str) -> Result<f64> {
        match self.arg(step, key)? {
            Value::Number(n) => n.as_f64().ok_or_else(|| Error::Params(format!("argument {key} out of range"))),
            Value::String(s) => crate::ingest::parse_decimal(&s)
                .ok_or_else(|| Error::Params(format!("argument {key}: {s:?} is not a number"))),
            other => Err(Error::Params(format!("argument {key} expects a number, got {other}"))),
        }
    }

    fn frame(&self, name: &str) -> Result<&Frame> {
        self.frames.get(name).ok_or_else(|| Error::Analysis(format!("no frame named {name}")))
    }

    fn frame_mut(&mut self, name: &str) -> Result<&mut Frame> {
        self.frames.get_mut(name).ok_or_else(|| Error::Analysis(format!("no frame named {name}")))
    }

    fn select_dataset(&mut self, store: &Store, step: &Step) -> Result<()> {
        let domain: Domain = self.text(step, "domain")?.parse()?;
        let name = self.text(step, "as")?;
        let optional = step.args.get("optional").is_some_and(|v| v == "true");
        match self.inputs.get(&domain) {
            Some(&id) => {
                let data = schema::load_dataset(store, id)?;
                self.frames.insert(name, Frame { dataset_id: Some(id), data });
            }
            None if optional => {}
            None => return Err(Error::Params(format!("no {domain} input dataset"))),
        }
        Ok(())
    }

    fn filter_equals(&mut self, step: &Step) -> Result<()> {
        let column = self.text(step, "column")?;
        let value = self.text(step, "value")?;
        let frame = self.frame_mut(&self.text(step, "frame")?)?;
        let idx = column_of(&frame.data, &column)?;
        frame.data.rows.retain(|r| r[idx].label().as_deref() == Some(value.as_str()));
        if frame.data.rows.is_empty() {
            return Err(empty_set());
        }
        Ok(())
    }

    fn drop_missing(&mut self, step: &Step) -> Result<()> {
        let column = self.text(step, "column")?;
        let frame_name = self.text(step, "frame")?;
        let frame = self.frame_mut(&frame_name)?;
        let idx = column_of(&frame.data, &column)?;
        let before = frame.data.rows.len();
        frame.data.rows.retain(|r| !r[idx].is_null());
        let dropped = before - frame.data.rows.len();
        if dropped > 0 {
            self.warnings.push(format!("{dropped} row(s) of {frame_name} dropped for missing {column}"));
        }
        Ok(())
    }

    fn event_from_censor(&mut self, step: &Step) -> Result<()> {
        let censor = self.text(step, "censor")?;
        let name = self.text(step, "as")?;
        let frame = self.frame_mut(&self.text(step, "frame")?)?;
        let idx = column_of(&frame.data, &censor)?;
        let mut events = Vec::with_capacity(frame.data.rows.len());
        for row in &frame.data.rows {
            match row[idx] {
                Cell::Number(c) if c == 0.0 || c == 1.0 => events.push(Cell::Number(1.0 - c)),
                ref other => {
                    return Err(Error::Analysis(format!("censoring flag {other:?} is not 0 or 1")));
                }
            }
        }
        push_column(&mut frame.data, ColumnMeta::new(name, ColumnKind::Flag), events);
        Ok(())
    }

    fn attach_column(&mut self, step: &Step) -> Result<()> {
        let column = self.text(step, "column")?;
        let key = self.text(step, "key")?;
        let target = self.text(step, "frame")?;
        if self.frame(&target)?.data.has_column(&column) {
            return Ok(());
        }
        let source_name = self.text(step, "from")?;
        let source = self.frames.get(&source_name).ok_or_else(|| {
            Error::Analysis(format!("{target} has no column {column} and no {source_name} dataset was supplied"))
        })?;
        let skey = column_of(&source.data, &key)?;
        let scol = column_of(&source.data, &column)?;
        let meta = source.data.columns[scol].clone();
        let lookup: HashMap<String, Cell> =
            source.data.rows.iter().map(|r| (r[skey].canonical_text(), r[scol].clone())).collect();

        let frame = self.frame_mut(&target)?;
        let tkey = column_of(&frame.data, &key)?;
        let mut unmatched = 0;
        let cells: Vec<Cell> = frame
            .data
            .rows
            .iter()
            .map(|r| {
                lookup.get(&r[tkey].canonical_text()).cloned().unwrap_or_else(|| {
                    unmatched += 1;
                    Cell::Null
                })
            })
            .collect();
        push_column(&mut frame.data, meta, cells);
        if unmatched > 0 {
            self.warnings.push(format!("{unmatched} row(s) of {target} have no {key} match in {source_name}"));
        }
        Ok(())
    }

    fn subject_level(&mut self, store: &mut Store, step: &Step) -> Result<()> {
        let group = self.text(step, "group")?;
        let name = self.text(step, "as")?;
        let population = self.frame(&self.text(step, "population")?)?;
        let adsl_id = population
            .dataset_id
            .ok_or_else(|| Error::Analysis("subject-level population must be a registered dataset".into()))?;
        let adae_id = self.frames.get(&self.text(step, "events")?).and_then(|f| f.dataset_id);

        let built = schema::build_subject_level_by(store, adsl_id, adae_id, &group)?;
        self.warnings.extend(built.warnings);
        let rows = schema::subject_level_rows(store, adsl_id)?;

        let mut data = AnalysisDataset {
            domain: Domain::Other,
            columns: vec![
                ColumnMeta::new("USUBJID", ColumnKind::Identifier),
                ColumnMeta::new(group.to_ascii_uppercase(), ColumnKind::Categorical),
                ColumnMeta::new("ANY_AE", ColumnKind::Flag),
            ],
            rows: Vec::with_capacity(rows.len()),
            source_name: "subject_level".into(),
            checksum: String::new(),
        };
        for r in rows {
            let any = r.derived_flags.get("ANY_AE").copied().unwrap_or(0);
            data.rows.push(vec![
                Cell::Text(r.usubjid),
                r.group.map(Cell::Text).unwrap_or(Cell::Null),
                Cell::Number(f64::from(any)),
            ]);
        }
        self.frames.insert(name, Frame { dataset_id: None, data });
        Ok(())
    }

    fn describe(&mut self, step: &Step) -> Result<()> {
        let variables = self.list(step, "variables")?;
        let group_by = self.text(step, "group_by")?;
        let frame = self.frame(&self.text(step, "frame")?)?;
        let data = &frame.data;
        if data.rows.is_empty() {
            return Err(empty_set());
        }
        let gidx = column_of(data, &group_by)?;
        let group_name = data.columns[gidx].name.clone();

        let mut groups: BTreeMap<String, Vec<&Vec<Cell>>> = BTreeMap::new();
        for row in &data.rows {
            if let Some(label) = row[gidx].label() {
                groups.entry(label).or_default().push(row);
            }
        }

        let mut out = Vec::new();
        for variable in &variables {
            let vidx = column_of(data, variable)?;
            let meta = &data.columns[vidx];
            for (label, rows) in &groups {
                let keys: GroupKeys = vec![(group_name.clone(), label.clone())];
                match meta.kind {
                    ColumnKind::Continuous => {
                        let values: Vec<Option<f64>> = rows.iter().map(|r| r[vidx].as_number()).collect();
                        let summary = stats::describe_continuous(&values);
                        for (stat, value) in summary.statistics() {
                            let unit = if matches!(stat, "n" | "n_missing") { None } else { meta.unit.clone() };
                            out.push(ResultRecord::numeric(keys.clone(), &meta.name, stat, value).with_unit(unit));
                        }
                    }
                    ColumnKind::Categorical | ColumnKind::Flag => {
                        let values: Vec<Option<String>> = rows.iter().map(|r| r[vidx].label()).collect();
                        let summary = stats::describe_categorical(&values);
                        let n: usize = summary.levels.iter().map(|l| l.count).sum();
                        out.push(ResultRecord::numeric(keys.clone(), &meta.name, "n", Some(n as f64)));
                        out.push(ResultRecord::numeric(
                            keys.clone(),
                            &meta.name,
                            "n_missing",
                            Some(summary.n_missing as f64),
                        ));
                        for level in summary.levels {
                            let mut lk = keys.clone();
                            lk.push((meta.name.clone(), level.level));
                            out.push(ResultRecord::numeric(lk.clone(), &meta.name, "count", Some(level.count as f64)));
                            out.push(
                                ResultRecord::numeric(lk, &meta.name, "percent", Some(level.percent))
                                    .with_unit(Some("%".into())),
                            );
                        }
                    }
                    kind => {
                        return Err(Error::Analysis(format!(
                            "variable {} is a {} column and cannot be summarized",
                            meta.name,
                            kind.as_str()
                        )))
                    }
                }
            }
        }
        self.records.extend(out);
        Ok(())
    }

    fn incidence(&mut self, step: &Step) -> Result<()> {
        let group = self.text(step, "group")?;
        let term_column = match self.text(step, "level")?.as_str() {
            "preferred_term" => "AEDECOD",
            "body_system" => "AEBODSYS",
            other => return Err(Error::Params(format!("unknown incidence level {other:?}"))),
        };
        let events = &self.frame(&self.text(step, "events")?)?.data;
        let population = &self.frame(&self.text(step, "population")?)?.data;
        if events.rows.is_empty() {
            return Err(empty_set());
        }

        let pg = column_of(population, &group)?;
        let mut denominators: BTreeMap<String, usize> = BTreeMap::new();
        for row in &population.rows {
            if let Some(label) = row[pg].label() {
                *denominators.entry(label).or_default() += 1;
            }
        }

        let es = column_of(events, "USUBJID")?;
        let eg = column_of(events, &group)?;
        let et = column_of(events, term_column)?;
        let mut rows = Vec::with_capacity(events.rows.len());
        let mut uncoded = 0;
        for row in &events.rows {
            let (Some(g), Some(term)) = (row[eg].label(), row[et].label()) else {
                uncoded += 1;
                continue;
            };
            rows.push(stats::AeRow { usubjid: row[es].canonical_text(), group: g, term });
        }
        let group_name = population.columns[pg].name.clone();
        if uncoded > 0 {
            self.warnings.push(format!("{uncoded} adverse event row(s) without {term_column} or group skipped"));
        }
        let incidence = stats::ae_incidence(&rows, &denominators)?;
        for r in incidence {
            let keys: GroupKeys = vec![(group_name.clone(), r.group.clone())];
            self.records.push(ResultRecord::numeric(keys.clone(), &r.term, "n_subjects", Some(r.n_subjects as f64)));
            self.records.push(ResultRecord::numeric(keys.clone(), &r.term, "denom", Some(r.denom as f64)));
            self.records
                .push(ResultRecord::numeric(keys, &r.term, "percent", Some(r.percent)).with_unit(Some("%".into())));
        }
        Ok(())
    }

    fn survival(&mut self, step: &Step) -> Result<()> {
        let strata = self.text(step, "strata")?;
        let time = self.text(step, "time")?;
        let event = self.text(step, "event")?;
        let variable = self.text(step, "variable")?;
        let conf_level = self.number(step, "conf_level")?;
        let data = &self.frame(&self.text(step, "frame")?)?.data;
        if data.rows.is_empty() {
            return Err(empty_set());
        }
        let sidx = column_of(data, &strata)?;
        let tidx = column_of(data, &time)?;
        let eidx = column_of(data, &event)?;
        let strata_name = data.columns[sidx].name.clone();
        let time_unit = data.columns[tidx].unit.clone();

        let mut by_stratum: BTreeMap<String, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
        for row in &data.rows {
            let Some(label) = row[sidx].label() else { continue };
            let t = row[tidx]
                .as_number()
                .ok_or_else(|| Error::Analysis(format!("{time} value {:?} is not a number", row[tidx])))?;
            let e = match row[eidx].as_number() {
                Some(v) if v == 0.0 || v == 1.0 => v as u8,
                _ => return Err(Error::Analysis(format!("event indicator {:?} is not 0 or 1", row[eidx]))),
            };
            let entry = by_stratum.entry(label).or_default();
            entry.0.push(t);
            entry.1.push(e);
        }
        if by_stratum.is_empty() {
            return Err(empty_set());
        }

        for (label, (times, flags)) in by_stratum {
            let curve = stats::km_estimate(&times, &flags, conf_level)?.with_stratum(label.clone());
            let keys: GroupKeys = vec![(strata_name.clone(), label)];
            let rec = |stat: &str, v: Option<f64>| ResultRecord::numeric(keys.clone(), &variable, stat, v);
            for p in &curve.points {
                self.records.push(rec("n_risk", Some(p.n_risk as f64)).at_time(p.time));
                self.records.push(rec("n_event", Some(p.n_event as f64)).at_time(p.time));
                self.records.push(rec("n_censor", Some(p.n_censor as f64)).at_time(p.time));
                self.records.push(rec("surv", Some(p.surv)).at_time(p.time));
                self.records.push(rec("std_err", Some(p.std_err)).at_time(p.time));
                if let Some(lo) = p.ci_lower {
                    self.records.push(rec("ci_lower", Some(lo)).at_time(p.time));
                }
                if let Some(hi) = p.ci_upper {
                    self.records.push(rec("ci_upper", Some(hi)).at_time(p.time));
                }
            }
            self.records.push(rec("n_subjects", Some(curve.n_subjects as f64)));
            self.records.push(rec("n_events", Some(curve.n_events as f64)));
            self.records.push(rec("median_survival", curve.median_survival).with_unit(time_unit.clone()));
            self.records.push(rec("conf_level", Some(curve.conf_level)));
        }
        Ok(())
    }
}

fn column_of(data: &AnalysisDataset, name: &str) -> Result<usize> {
    data.column_index(name).ok_or_else(|| Error::Analysis(format!("{} has no column {name}", data.source_name)))
}

fn push_column(data: &mut AnalysisDataset, meta: ColumnMeta, cells: Vec<Cell>) {
    if let Some(idx) = data.column_index(&meta.name) {
        data.columns[idx] = meta;
        for (row, cell) in data.rows.iter_mut().zip(cells) {
            row[idx] = cell;
        }
    } else {
        data.columns.push(meta);
        for (row, cell) in data.rows.iter_mut().zip(cells) {
            row.push(cell);
        }
    }
}
