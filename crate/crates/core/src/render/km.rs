use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{group_key_display, ResultFilter, RunStatus, Store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumPlot {
    pub label: String,
    /// (time, surv), starting at the (0, 1) origin.
    pub steps: Vec<(f64, f64)>,
    pub censor_marks: Vec<(f64, f64)>,
    /// (time, lower, upper); only where both bounds were stored.
    pub ci_band: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMPlotData {
    pub strata: Vec<StratumPlot>,
    pub conf_level: Option<f64>,
    pub source_run: i64,
}

#[derive(Default)]
struct Point {
    n_event: f64,
    n_censor: f64,
    surv: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
}

fn stratum_label(keys: &[(String, String)]) -> String {
    match keys {
        [(_, v)] => v.clone(),
        _ => group_key_display(&keys.to_vec()),
    }
}

pub fn render_km_plot_data(store: &Store, run_id: i64, exclude: &[String]) -> Result<(KMPlotData, Vec<String>)> {
    let run = store.get_run(run_id)?;
    if run.status != RunStatus::Completed {
        return Err(Error::Render(format!("run {run_id} did not complete")));
    }
    let out = store.query_results(&ResultFilter { run_id: Some(run_id), ..Default::default() })?;

    let mut points: BTreeMap<String, BTreeMap<u64, (f64, Point)>> = BTreeMap::new();
    let mut conf_level = None;
    for r in out.records() {
        let label = stratum_label(&r.group_keys);
        let Some(t) = r.time else {
            if r.statistic_name == "conf_level" {
                conf_level = conf_level.or(r.value);
            }
            continue;
        };
        let entry = points.entry(label).or_default().entry(t.to_bits()).or_insert_with(|| (t, Point::default()));
        let p = &mut entry.1;
        match r.statistic_name.as_str() {
            "n_event" => p.n_event = r.value.unwrap_or(0.0),
            "n_censor" => p.n_censor = r.value.unwrap_or(0.0),
            "surv" => p.surv = r.value,
            "ci_lower" => p.lower = r.value,
            "ci_upper" => p.upper = r.value,
            _ => {}
        }
    }
    if points.is_empty() {
        return Err(Error::Render(format!("run {run_id} has no Kaplan-Meier statistics")));
    }

    let mut warnings = Vec::new();
    let excluded: BTreeSet<&str> = exclude.iter().map(String::as_str).collect();
    for label in &excluded {
        if !points.contains_key(*label) {
            warnings.push(format!("no stratum labelled {label:?} in run {run_id}"));
        }
    }

    let mut strata = Vec::new();
    for (label, by_time) in points {
        if excluded.contains(label.as_str()) {
            continue;
        }
        let mut pts: Vec<(f64, Point)> = by_time.into_values().collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut plot = StratumPlot { label, steps: vec![(0.0, 1.0)], censor_marks: Vec::new(), ci_band: Vec::new() };
        let mut last = 1.0;
        for (t, p) in &pts {
            let Some(s) = p.surv else {
                return Err(Error::Render(format!("stratum {} lacks survival at time {t}", plot.label)));
            };
            if p.n_event > 0.0 {
                plot.steps.push((*t, s));
            }
            if p.n_censor > 0.0 {
                plot.censor_marks.push((*t, s));
            }
            if let (Some(lo), Some(hi)) = (p.lower, p.upper) {
                plot.ci_band.push((*t, lo, hi));
            }
            last = s;
        }
        if let Some((t_end, _)) = pts.last() {
            let t_step = plot.steps.last().map_or(0.0, |s| s.0);
            if *t_end > t_step {
                plot.steps.push((*t_end, last));
            }
        }
        strata.push(plot);
    }
    if strata.is_empty() {
        return Err(Error::Render("every stratum was excluded; nothing to render".into()));
    }
    Ok((KMPlotData { strata, conf_level, source_run: run_id }, warnings))
}

/// Long-format CSV: one line per plotted coordinate.
pub fn km_plot_csv(plot: &KMPlotData) -> String {
    let mut out = String::from("stratum,series,time,surv,lower,upper\n");
    for s in &plot.strata {
        for (t, v) in &s.steps {
            super::csv_line(
                &mut out,
                &[s.label.clone(), "step".into(), t.to_string(), v.to_string(), String::new(), String::new()],
            );
        }
        for (t, v) in &s.censor_marks {
            super::csv_line(
                &mut out,
                &[s.label.clone(), "censor".into(), t.to_string(), v.to_string(), String::new(), String::new()],
            );
        }
        for (t, lo, hi) in &s.ci_band {
            super::csv_line(
                &mut out,
                &[s.label.clone(), "ci".into(), t.to_string(), String::new(), lo.to_string(), hi.to_string()],
            );
        }
    }
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const MARGIN: f64 = 48.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Right-continuous step path through `(time, value)` points.
fn stepped(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(points.len() * 2);
    for (i, &(t, v)) in points.iter().enumerate() {
        if i > 0 {
            out.push((t, points[i - 1].1));
        }
        out.push((t, v));
    }
    out
}

pub fn render_km_svg(plot: &KMPlotData, width: u32, height: u32) -> Result<String> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!("plot size must be positive, got {width}x{height}")));
    }
    if plot.strata.is_empty() {
        return Err(Error::Argument("no strata to draw".into()));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    let max_time = plot
        .strata
        .iter()
        .flat_map(|s| s.steps.iter().map(|p| p.0).chain(s.censor_marks.iter().map(|p| p.0)))
        .fold(0.0_f64, f64::max);
    let span = if max_time > 0.0 { max_time } else { 1.0 };
    let pw = (w - 2.0 * MARGIN).max(1.0);
    let ph = (h - 2.0 * MARGIN).max(1.0);
    let x = |t: f64| MARGIN + t / span * pw;
    let y = |s: f64| MARGIN + (1.0 - s) * ph;
    let coords =
        |pts: &[(f64, f64)]| pts.iter().map(|&(t, s)| format!("{:.2},{:.2}", x(t), y(s))).collect::<Vec<_>>().join(" ");

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/></g>"#,
        x0 = x(0.0),
        x1 = x(span),
        y0 = y(0.0),
        y1 = y(1.0)
    );
    let _ = writeln!(svg, r#"<g font-family="sans-serif" font-size="10" fill="black">"#);
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x(0.0) - 4.0, y(f) + 3.0, f);
        let t = span * f;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x(t),
            y(0.0) + 14.0,
            super::format_sig6(t)
        );
    }
    let _ = writeln!(svg, "</g>");

    for (i, s) in plot.strata.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(svg, r#"<g data-stratum="{}">"#, escape(&s.label));
        if !s.ci_band.is_empty() {
            let upper: Vec<(f64, f64)> = s.ci_band.iter().map(|&(t, _, hi)| (t, hi)).collect();
            let lower: Vec<(f64, f64)> = s.ci_band.iter().map(|&(t, lo, _)| (t, lo)).collect();
            let mut ring = stepped(&upper);
            ring.extend(stepped(&lower).into_iter().rev());
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                coords(&ring)
            );
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords(&stepped(&s.steps))
        );
        for &(t, v) in &s.censor_marks {
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}"/>"#,
                x(t),
                y(v) - 4.0,
                x(t),
                y(v) + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" fill="{color}">{}</text>"#,
            w - MARGIN - 140.0,
            MARGIN + 12.0 * (i as f64 + 1.0),
            escape(&s.label)
        );
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
