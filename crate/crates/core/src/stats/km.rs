//! Kaplan-Meier product-limit estimator with Greenwood variance and
//! log-log confidence limits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on the `S(t) <= 0.5` median test; absorbs rounding in the running product.
const MEDIAN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMPoint {
    pub time: f64,
    /// Subjects at risk just before `time`.
    pub n_risk: usize,
    pub n_event: usize,
    pub n_censor: usize,
    pub surv: f64,
    pub std_err: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMCurve {
    pub stratum: String,
    pub points: Vec<KMPoint>,
    pub n_subjects: usize,
    pub n_events: usize,
    pub median_survival: Option<f64>,
    pub conf_level: f64,
}

impl KMCurve {
    pub fn with_stratum(mut self, stratum: impl Into<String>) -> Self {
        self.stratum = stratum.into();
        self
    }
}

/// Product-limit estimate for a single stratum.
///
/// `event_flags` holds 1 for an observed event and 0 for a censoring. At a
/// tied time, events are applied before censorings leave the risk set. One
/// point is emitted per distinct time, censor-only times included.
pub fn km_estimate(times: &[f64], event_flags: &[u8], conf_level: f64) -> Result<KMCurve> {
    if times.len() != event_flags.len() {
        return Err(Error::Domain(format!("{} times but {} event flags", times.len(), event_flags.len())));
    }
    if times.is_empty() {
        return Err(Error::Domain("survival estimate needs at least one subject".into()));
    }
    if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::Domain(format!("invalid survival time {t}")));
    }
    if let Some(f) = event_flags.iter().find(|f| **f > 1) {
        return Err(Error::Domain(format!("event flag {f} outside {{0,1}}")));
    }
    if !(conf_level > 0.0 && conf_level < 1.0) {
        return Err(Error::Domain(format!("confidence level {conf_level} outside (0, 1)")));
    }
    let z = super::normal_quantile(1.0 - (1.0 - conf_level) / 2.0)?;
    super::record_call();

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(event_flags[b].cmp(&event_flags[a])));

    let mut points = Vec::new();
    let mut at_risk = times.len();
    let mut surv = 1.0f64;
    let mut greenwood = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d = 0;
        let mut c = 0;
        while i < order.len() && times[order[i]] == t {
            if event_flags[order[i]] == 1 {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        let n = at_risk;
        if d > 0 {
            surv *= 1.0 - d as f64 / n as f64;
            if n > d {
                greenwood += d as f64 / (n as f64 * (n - d) as f64);
            }
        }
        let std_err = (surv * surv * greenwood).sqrt();
        let (ci_lower, ci_upper) = log_log_limits(surv, greenwood, z);
        points.push(KMPoint { time: t, n_risk: n, n_event: d, n_censor: c, surv, std_err, ci_lower, ci_upper });
        at_risk -= d + c;
    }

    let mut curve = KMCurve {
        stratum: String::new(),
        n_subjects: times.len(),
        n_events: points.iter().map(|p| p.n_event).sum(),
        points,
        median_survival: None,
        conf_level,
    };
    curve.median_survival = median_of(&curve);
    Ok(curve)
}

fn log_log_limits(surv: f64, greenwood: f64, z: f64) -> (Option<f64>, Option<f64>) {
    if surv <= 0.0 || surv >= 1.0 {
        return (None, None);
    }
    let se = greenwood.sqrt() / surv.ln().abs();
    (Some(surv.powf((z * se).exp())), Some(surv.powf((-z * se).exp())))
}

fn median_of(curve: &KMCurve) -> Option<f64> {
    curve.points.iter().find(|p| p.n_event > 0 && p.surv <= 0.5 + MEDIAN_EPS).map(|p| p.time)
}

/// Smallest event time with `S(t) <= 0.5`.
pub fn km_median(curve: &KMCurve) -> Option<f64> {
    super::record_call();
    median_of(curve)
}
