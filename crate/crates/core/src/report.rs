//! Hazard-ratio tables and SVG figures.
//!
//! Numbers are printed with three decimals using Rust's float formatting,
//! which rounds the exact binary value half-to-even and always uses `.` as
//! the decimal separator.

use std::fmt::Write as _;

use thiserror::Error;

use crate::discrepancy::OlsFit;
use crate::predictor::PredictionTable;
use crate::survival::CoxFitResult;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ReportError {
    #[error("{labels} labels for {coefficients} coefficients")]
    LabelMismatch { labels: usize, coefficients: usize },
    #[error("no rows to plot")]
    EmptyRows,
    #[error("row {label:?} has a non-positive hazard ratio or interval")]
    NonPositiveHR { label: String },
    #[error("prediction table is empty")]
    EmptyTable,
}

pub fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        fmt3(p)
    }
}

/// One formatted table line.
#[derive(Debug, Clone, PartialEq)]
pub struct HrRow {
    pub label: String,
    pub hr: String,
    pub ci: String,
    pub p: String,
    pub significant: bool,
}

impl HrRow {
    pub fn new(label: &str, hr: f64, ci_low: f64, ci_high: f64, p: f64) -> Self {
        HrRow {
            label: label.to_string(),
            hr: fmt3(hr),
            ci: format!("({} - {})", fmt3(ci_low), fmt3(ci_high)),
            p: format_p(p),
            significant: p < 0.05,
        }
    }

    /// `hr & (lo - hi) & p`, the cell layout of a typeset results table.
    pub fn cells(&self) -> String {
        format!("{} & {} & {}", self.hr, self.ci, self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrTable {
    pub rows: Vec<HrRow>,
}

impl HrTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,hazard_ratio,ci_95,p_value,significant\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&r.label),
                r.hr,
                r.ci,
                r.p,
                if r.significant { "*" } else { "" }
            );
        }
        out
    }

    /// Fixed-width text table; significant rows are starred.
    pub fn to_text(&self) -> String {
        let header = ["Variable", "Hazard Ratio", "95% CI", "p-value", ""];
        let mut widths = header.map(str::len);
        for r in &self.rows {
            widths[0] = widths[0].max(r.label.len());
            widths[1] = widths[1].max(r.hr.len());
            widths[2] = widths[2].max(r.ci.len());
            widths[3] = widths[3].max(r.p.len());
        }
        let line = |cells: [&str; 5]| {
            let mut s = format!(
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
            if !cells[4].is_empty() {
                s.push_str("  ");
                s.push_str(cells[4]);
            }
            s.push('\n');
            s
        };
        let mut out = line(header);
        for r in &self.rows {
            out.push_str(&line([
                &r.label,
                &r.hr,
                &r.ci,
                &r.p,
                if r.significant { "*" } else { "" },
            ]));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_hr_table(result: &CoxFitResult, labels: &[&str]) -> Result<HrTable, ReportError> {
    if labels.len() != result.p() {
        return Err(ReportError::LabelMismatch {
            labels: labels.len(),
            coefficients: result.p(),
        });
    }
    let rows = labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            HrRow::new(
                label,
                result.hr[j],
                result.ci_low[j],
                result.ci_high[j],
                result.p_value[j],
            )
        })
        .collect();
    Ok(HrTable { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestRow {
    pub label: String,
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub significant: bool,
}

impl ForestRow {
    pub fn new(label: &str, hr: f64, ci_low: f64, ci_high: f64, p_value: f64) -> Self {
        ForestRow {
            label: label.to_string(),
            hr,
            ci_low,
            ci_high,
            p_value,
            significant: p_value < 0.05,
        }
    }
}

pub fn forest_rows(result: &CoxFitResult, labels: &[&str]) -> Result<Vec<ForestRow>, ReportError> {
    if labels.len() != result.p() {
        return Err(ReportError::LabelMismatch {
            labels: labels.len(),
            coefficients: result.p(),
        });
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(j, l)| ForestRow::new(l, result.hr[j], result.ci_low[j], result.ci_high[j], result.p_value[j]))
        .collect())
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Coordinates are written with two decimals; `-0.00` is normalized.
fn c(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

const FOREST_WIDTH: f64 = 800.0;
const FOREST_ROW_HEIGHT: f64 = 40.0;
const FOREST_MARGIN: f64 = 80.0;
const FOREST_PLOT_LEFT: f64 = 300.0;
const FOREST_PLOT_RIGHT: f64 = 770.0;

/// Forest plot on the log(HR) axis: one marker and whisker per row and a
/// vertical reference line at log(HR) = 0.
pub fn render_forest_plot(rows: &[ForestRow], title: &str) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyRows);
    }
    for r in rows {
        let ok = [r.hr, r.ci_low, r.ci_high]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(ReportError::NonPositiveHR {
                label: r.label.clone(),
            });
        }
    }
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for r in rows {
        lo = lo.min(r.ci_low.ln()).min(r.hr.ln());
        hi = hi.max(r.ci_high.ln()).max(r.hr.ln());
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |v: f64| FOREST_PLOT_LEFT + (v - lo) / (hi - lo) * (FOREST_PLOT_RIGHT - FOREST_PLOT_LEFT);

    let height = FOREST_ROW_HEIGHT * rows.len() as f64 + FOREST_MARGIN;
    let top = 40.0;
    let bottom = top + FOREST_ROW_HEIGHT * rows.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = FOREST_WIDTH,
        h = height
    );
    s.push_str("<style>text{font-family:sans-serif;font-size:13px}.sig{font-weight:bold}.marker{fill:#1f4e9c}.whisker{stroke:#1f4e9c;stroke-width:2}.reference{stroke:#888;stroke-dasharray:4 3}.axis{stroke:#000;fill:none}</style>\n");
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle">{}</text>"#,
        c(FOREST_WIDTH / 2.0),
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line class="reference" x1="{x0}" y1="{t}" x2="{x0}" y2="{b}"/>"#,
        x0 = c(x(0.0)),
        t = c(top),
        b = c(bottom)
    );
    for (i, r) in rows.iter().enumerate() {
        let y = top + FOREST_ROW_HEIGHT * (i as f64 + 0.5);
        let class = if r.significant { r#" class="sig""# } else { "" };
        let _ = writeln!(
            s,
            r#"<text x="10" y="{}"{class}>{}</text>"#,
            c(y + 4.0),
            xml_escape(&r.label)
        );
        let _ = writeln!(
            s,
            r#"<line class="whisker" x1="{}" y1="{y}" x2="{}" y2="{y}"/>"#,
            c(x(r.ci_low.ln())),
            c(x(r.ci_high.ln())),
            y = c(y)
        );
        let _ = writeln!(
            s,
            r#"<rect class="marker" x="{}" y="{}" width="8" height="8"><title>HR {} ({} - {})</title></rect>"#,
            c(x(r.hr.ln()) - 4.0),
            c(y - 4.0),
            fmt3(r.hr),
            fmt3(r.ci_low),
            fmt3(r.ci_high)
        );
    }
    // Axis with ticks at round log(HR) values.
    let _ = writeln!(
        s,
        r#"<path class="axis" d="M{} {b} H{}"/>"#,
        c(FOREST_PLOT_LEFT),
        c(FOREST_PLOT_RIGHT),
        b = c(bottom)
    );
    for tick in ticks(lo, hi) {
        let _ = writeln!(
            s,
            r#"<path class="axis" d="M{tx} {b} V{e}"/><text x="{tx}" y="{ty}" text-anchor="middle">{}</text>"#,
            tick_label(tick),
            tx = c(x(tick)),
            b = c(bottom),
            e = c(bottom + 5.0),
            ty = c(bottom + 20.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">log(HR)</text>"#,
        c((FOREST_PLOT_LEFT + FOREST_PLOT_RIGHT) / 2.0),
        c(bottom + 36.0)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Round tick positions covering [lo, hi].
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

const SCATTER_SIZE: f64 = 600.0;
const SCATTER_PAD: f64 = 60.0;

/// Predicted vs chronological age with the fitted line and `y = x`.
///
/// The only `<line>` elements are the two reference lines; each patient is
/// one `<circle class="point">`.
pub fn render_scatter(table: &PredictionTable, fit: &OlsFit) -> Result<String, ReportError> {
    if table.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let values = table
        .rows
        .iter()
        .flat_map(|r| [r.chronological_age, r.predicted_age]);
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
        (l.min(v), h.max(v))
    });
    if hi - lo < 1.0 {
        lo -= 1.0;
        hi += 1.0;
    }
    let span = hi - lo;
    lo = (lo - 0.05 * span).floor();
    hi = (hi + 0.05 * span).ceil();

    let plot = SCATTER_SIZE - 2.0 * SCATTER_PAD;
    let px = |v: f64| SCATTER_PAD + (v - lo) / (hi - lo) * plot;
    let py = |v: f64| SCATTER_SIZE - SCATTER_PAD - (v - lo) / (hi - lo) * plot;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}">"#,
        w = SCATTER_SIZE
    );
    s.push_str("<style>text{font-family:sans-serif;font-size:13px}.point{fill:#1f77b4;fill-opacity:0.7}.ols{stroke:#d62728;stroke-width:2}.identity{stroke:#999;stroke-width:1.5}.axis{stroke:#000;fill:none}</style>\n");
    let _ = writeln!(
        s,
        r#"<path class="axis" d="M{l} {t} V{b} H{r}"/>"#,
        l = c(SCATTER_PAD),
        t = c(SCATTER_PAD),
        b = c(SCATTER_SIZE - SCATTER_PAD),
        r = c(SCATTER_SIZE - SCATTER_PAD)
    );
    for tick in ticks(lo, hi) {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text><text x="{}" y="{}" text-anchor="end">{}</text>"#,
            c(px(tick)),
            c(SCATTER_SIZE - SCATTER_PAD + 18.0),
            tick_label(tick),
            c(SCATTER_PAD - 6.0),
            c(py(tick) + 4.0),
            tick_label(tick)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Chronological age (years)</text>"#,
        c(SCATTER_SIZE / 2.0),
        c(SCATTER_SIZE - 15.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">Predicted age (years)</text>"#,
        y = c(SCATTER_SIZE / 2.0)
    );
    let _ = writeln!(
        s,
        r#"<line class="identity" x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
        c(px(lo)),
        c(py(lo)),
        c(px(hi)),
        c(py(hi))
    );
    let _ = writeln!(
        s,
        r#"<line class="ols" x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
        c(px(lo)),
        c(py(fit.predict(lo))),
        c(px(hi)),
        c(py(fit.predict(hi)))
    );
    for r in &table.rows {
        let _ = writeln!(
            s,
            r#"<circle class="point" cx="{}" cy="{}" r="3"><title>{}</title></circle>"#,
            c(px(r.chronological_age)),
            c(py(r.predicted_age)),
            xml_escape(&r.patient_id)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
