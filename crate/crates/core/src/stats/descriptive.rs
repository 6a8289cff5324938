use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveSummary {
    pub n: usize,
    pub n_missing: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (divisor n - 1); `None` when n < 2.
    pub sd: Option<f64>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl DescriptiveSummary {
    /// Statistics in presentation order, as stored in the results tables.
    pub fn statistics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("n", Some(self.n as f64)),
            ("n_missing", Some(self.n_missing as f64)),
            ("mean", self.mean),
            ("sd", self.sd),
            ("median", self.median),
            ("q1", self.q1),
            ("q3", self.q3),
            ("min", self.min),
            ("max", self.max),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSummary {
    pub levels: Vec<LevelCount>,
    pub n_missing: usize,
}

/// Type 7 sample quantile of already sorted values:
/// `h = (n - 1) p + 1`, interpolating between the order statistics around `h`.
pub fn quantile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Domain("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("quantile probability {p} outside [0, 1]")));
    }
    super::record_call();
    Ok(quantile_sorted(sorted, p))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn describe_continuous(values: &[Option<f64>]) -> DescriptiveSummary {
    super::record_call();
    let mut xs: Vec<f64> = values.iter().flatten().copied().collect();
    let n = xs.len();
    let n_missing = values.len() - n;
    if n == 0 {
        return DescriptiveSummary {
            n,
            n_missing,
            mean: None,
            sd: None,
            median: None,
            q1: None,
            q3: None,
            min: None,
            max: None,
        };
    }
    xs.sort_by(f64::total_cmp);

    let mean = neumaier_sum(xs.iter().copied()) / n as f64;
    let sd = (n >= 2).then(|| {
        let ss = neumaier_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
        (ss / (n - 1) as f64).sqrt()
    });
    DescriptiveSummary {
        n,
        n_missing,
        mean: Some(mean),
        sd,
        median: Some(quantile_sorted(&xs, 0.5)),
        q1: Some(quantile_sorted(&xs, 0.25)),
        q3: Some(quantile_sorted(&xs, 0.75)),
        min: xs.first().copied(),
        max: xs.last().copied(),
    }
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Level counts sorted by label; percents use the non-missing denominator.
pub fn describe_categorical<S: AsRef<str>>(values: &[Option<S>]) -> CategoricalSummary {
    super::record_call();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut n_missing = 0;
    for v in values {
        match v {
            Some(s) => *counts.entry(s.as_ref()).or_default() += 1,
            None => n_missing += 1,
        }
    }
    let total: usize = counts.values().sum();
    let levels = counts
        .into_iter()
        .map(|(level, count)| LevelCount {
            level: level.to_string(),
            count,
            percent: 100.0 * count as f64 / total as f64,
        })
        .collect();
    CategoricalSummary { levels, n_missing }
}
