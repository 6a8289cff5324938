use serde_json::json;

use super::{register_standard, AnalysisStandard, ParamKind, ParamSpec, Step, StepKind};
use crate::error::Result;
use crate::store::Store;

use StepKind::{ApplyFormula, Select, Store as StoreStep, Transform};

/// Summary statistics of ADSL variables by treatment group.
pub fn descriptive_standard() -> AnalysisStandard {
    AnalysisStandard {
        name: "descriptive".into(),
        version: "1.0.0".into(),
        param_schema: vec![
            ParamSpec::optional("variables", ParamKind::TextList, json!(["AGE"])),
            ParamSpec::optional("group_by", ParamKind::Text, json!("TRT01P")),
        ],
        steps: vec![
            Step::new(Select, "dataset", &[("domain", "ADSL"), ("as", "subjects")]),
            Step::new(Transform, "drop_missing", &[("frame", "subjects"), ("column", "$group_by")]),
            Step::new(
                ApplyFormula,
                "describe",
                &[("frame", "subjects"), ("variables", "$variables"), ("group_by", "$group_by")],
            ),
            Step::new(StoreStep, "results", &[]),
        ],
    }
}

/// Adverse-event incidence by treatment group, per preferred term or body system.
pub fn safety_standard() -> AnalysisStandard {
    AnalysisStandard {
        name: "safety".into(),
        version: "1.0.0".into(),
        param_schema: vec![
            ParamSpec::optional("group_by", ParamKind::Text, json!("TRT01P")),
            ParamSpec::optional("level", ParamKind::Text, json!("preferred_term"))
                .with_choices(&["preferred_term", "body_system"]),
        ],
        steps: vec![
            Step::new(Select, "dataset", &[("domain", "ADSL"), ("as", "subjects")]),
            Step::new(Select, "dataset", &[("domain", "ADAE"), ("as", "events")]),
            Step::new(
                Transform,
                "subject_level",
                &[("population", "subjects"), ("events", "events"), ("group", "$group_by"), ("as", "population")],
            ),
            Step::new(
                Transform,
                "attach_column",
                &[("frame", "events"), ("from", "subjects"), ("key", "USUBJID"), ("column", "$group_by")],
            ),
            Step::new(Transform, "drop_missing", &[("frame", "events"), ("column", "$group_by")]),
            Step::new(
                ApplyFormula,
                "ae_incidence",
                &[("events", "events"), ("population", "population"), ("group", "$group_by"), ("level", "$level")],
            ),
            Step::new(StoreStep, "results", &[]),
        ],
    }
}

/// Kaplan-Meier estimate per stratum for one time-to-event parameter.
pub fn survival_standard() -> AnalysisStandard {
    AnalysisStandard {
        name: "survival".into(),
        version: "1.0.0".into(),
        param_schema: vec![
            ParamSpec::required("param", ParamKind::Text),
            ParamSpec::optional("strata", ParamKind::Text, json!("TRTP")),
            ParamSpec::optional("conf_level", ParamKind::Number, json!(0.95)),
        ],
        steps: vec![
            Step::new(Select, "dataset", &[("domain", "ADTTE"), ("as", "tte")]),
            Step::new(Select, "filter_equals", &[("frame", "tte"), ("column", "PARAMCD"), ("value", "$param")]),
            Step::new(Select, "dataset", &[("domain", "ADSL"), ("as", "subjects"), ("optional", "true")]),
            Step::new(Transform, "event_from_censor", &[("frame", "tte"), ("censor", "CNSR"), ("as", "EVENT")]),
            Step::new(
                Transform,
                "attach_column",
                &[("frame", "tte"), ("from", "subjects"), ("key", "USUBJID"), ("column", "$strata")],
            ),
            Step::new(Transform, "drop_missing", &[("frame", "tte"), ("column", "$strata")]),
            Step::new(
                ApplyFormula,
                "km_estimate",
                &[
                    ("frame", "tte"),
                    ("time", "AVAL"),
                    ("event", "EVENT"),
                    ("strata", "$strata"),
                    ("conf_level", "$conf_level"),
                    ("variable", "$param"),
                ],
            ),
            Step::new(StoreStep, "results", &[]),
        ],
    }
}

pub fn builtin_standards() -> Vec<AnalysisStandard> {
    vec![descriptive_standard(), safety_standard(), survival_standard()]
}

pub fn register_builtin_standards(store: &mut Store) -> Result<()> {
    for s in builtin_standards() {
        register_standard(store, &s)?;
    }
    Ok(())
}
