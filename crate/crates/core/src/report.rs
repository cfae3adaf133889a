//! CSV tables and dependency-free SVG plots for the analysis figures.
//!
//! Every SVG is rendered from the CSV text, never from in-memory results, so a
//! plot always matches the table next to it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::labelgen::{label_frequencies, LabeledExample};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    /// Concreteness histogram: `bin_low,bin_high,count`.
    Concreteness,
    /// Dataset-scale curve: `fraction,...,p_at_1,...`.
    Scale,
    /// Label frequency by rank, log-log: `rank,label,frequency`.
    LabelDistribution,
    /// Few-shot curves: `backbone,count,p_at_1,seed`.
    Fewshot,
}

impl std::str::FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concreteness" => Ok(ReportKind::Concreteness),
            "scale" => Ok(ReportKind::Scale),
            "label-distribution" => Ok(ReportKind::LabelDistribution),
            "fewshot" => Ok(ReportKind::Fewshot),
            other => Err(Error::invalid(format!(
                "unknown report kind {other:?} (concreteness | scale | label-distribution | fewshot)"
            ))),
        }
    }
}

/// `rank,label,frequency`, most frequent first; ties by ascending label id.
pub fn label_distribution_csv(examples: &[LabeledExample]) -> Result<String> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("labeled examples".into()));
    }
    let mut freq: Vec<(u32, usize)> = label_frequencies(examples).into_iter().collect();
    freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut s = String::from("rank,label,frequency\n");
    for (r, (label, f)) in freq.iter().enumerate() {
        let _ = writeln!(s, "{},{label},{f}", r + 1);
    }
    Ok(s)
}

/// Header and rows of a plain comma-separated table (no quoting).
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("csv".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let row: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
        if row.len() != header.len() {
            return Err(Error::shape(format!(
                "csv row {} has {} fields, header has {}",
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::invalid(format!("csv has no {name:?} column")))
}

fn number(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::invalid(format!("{s:?} is not a finite number")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    /// Bars `(low, high, height)` instead of lines.
    pub bars: Vec<(f64, f64, f64)>,
    pub series: Vec<Series>,
    /// Tick labels for categorical x positions `0, 1, ...`.
    pub x_categories: Option<Vec<String>>,
}

impl Figure {
    fn empty(title: &str, x: &str, y: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x.into(),
            y_label: y.into(),
            log_x: false,
            log_y: false,
            bars: Vec::new(),
            series: Vec::new(),
            x_categories: None,
        }
    }
}

pub fn figure_from_csv(kind: ReportKind, csv: &str) -> Result<Figure> {
    let (header, rows) = parse_csv(csv)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("csv has no data rows".into()));
    }
    match kind {
        ReportKind::Concreteness => {
            let (lo, hi, c) = (
                column(&header, "bin_low")?,
                column(&header, "bin_high")?,
                column(&header, "count")?,
            );
            let mut f = Figure::empty(
                "Visual concreteness of terms",
                "concreteness score",
                "terms",
            );
            for r in &rows {
                f.bars
                    .push((number(&r[lo])?, number(&r[hi])?, number(&r[c])?));
            }
            Ok(f)
        }
        ReportKind::Scale => {
            let (x, y) = (column(&header, "fraction")?, column(&header, "p_at_1")?);
            let mut f = Figure::empty(
                "Retrieval P@1 vs pretraining data",
                "fraction of labeled data",
                "P@1",
            );
            f.log_x = true;
            let points = rows
                .iter()
                .map(|r| Ok((number(&r[x])?, number(&r[y])?)))
                .collect::<Result<_>>()?;
            f.series.push(Series {
                name: "p_at_1".into(),
                points,
            });
            Ok(f)
        }
        ReportKind::LabelDistribution => {
            let (x, y) = (column(&header, "rank")?, column(&header, "frequency")?);
            let mut f = Figure::empty("Label frequency by rank", "rank", "frequency");
            f.log_x = true;
            f.log_y = true;
            let points = rows
                .iter()
                .map(|r| Ok((number(&r[x])?, number(&r[y])?)))
                .collect::<Result<_>>()?;
            f.series.push(Series {
                name: "frequency".into(),
                points,
            });
            Ok(f)
        }
        ReportKind::Fewshot => {
            let (b, c, y) = (
                column(&header, "backbone")?,
                column(&header, "count")?,
                column(&header, "p_at_1")?,
            );
            // Counts sorted numerically with "all" last, shared by every backbone.
            let mut cats: Vec<String> = rows.iter().map(|r| r[c].clone()).collect();
            cats.sort_by_key(|s| (s == "all", s.parse::<u64>().unwrap_or(u64::MAX)));
            cats.dedup();
            let pos: BTreeMap<&str, usize> = cats
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            let mut by: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
            for r in &rows {
                by.entry(&r[b])
                    .or_default()
                    .push((pos[r[c].as_str()] as f64, number(&r[y])?));
            }
            let mut f = Figure::empty("Few-shot fine-tuning", "examples per class", "P@1");
            f.series = by
                .into_iter()
                .map(|(name, mut points)| {
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    Series {
                        name: name.into(),
                        points,
                    }
                })
                .collect();
            f.x_categories = Some(cats);
            Ok(f)
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            if log && v <= 0.0 {
                return Err(Error::invalid(format!(
                    "value {v} cannot be shown on a log axis"
                )));
            }
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Err(Error::EmptyInput("figure has no points".into()));
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Ok(Self { lo, hi, log })
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        (0..=4)
            .map(|i| {
                let t = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                let v = if self.log { 10f64.powf(t) } else { t };
                (i as f64 / 4.0, format!("{}", (v * 1000.0).round() / 1000.0))
            })
            .collect()
    }
}

/// Renders a figure as a standalone SVG document.
pub fn render_svg(fig: &Figure) -> Result<String> {
    let xs = fig
        .bars
        .iter()
        .flat_map(|b| [b.0, b.1])
        .chain(fig.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let ys = fig
        .bars
        .iter()
        .flat_map(|b| [0.0, b.2])
        .chain(fig.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let ax = Axis::new(xs.collect::<Vec<_>>().into_iter(), fig.log_x)?;
    let ay = Axis::new(ys.collect::<Vec<_>>().into_iter(), fig.log_y)?;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let px = |v: f64| LEFT + ax.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ay.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(&fig.title)
    );
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#,
        TOP + ph
    );
    let x_ticks: Vec<(f64, String)> = match &fig.x_categories {
        Some(c) => c
            .iter()
            .enumerate()
            .map(|(i, l)| (ax.frac(i as f64), l.clone()))
            .collect(),
        None => ax.ticks(),
    };
    for (f, label) in x_ticks {
        let x = LEFT + f * pw;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            escape(&label)
        );
    }
    for (f, label) in ay.ticks() {
        let y = TOP + (1.0 - f) * ph;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            escape(&label)
        );
    }
    let scale_note = |log: bool| if log { " (log)" } else { "" };
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{:.1}" y="{:.1}" text-anchor="middle">{}{}</text>"#,
        LEFT + pw / 2.0,
        H - 16.0,
        escape(&fig.x_label),
        scale_note(fig.log_x)
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&fig.y_label),
        scale_note(fig.log_y)
    );
    for &(lo, hi, h) in &fig.bars {
        let (x0, x1) = (px(lo), px(hi));
        let (y0, y1) = (py(h), py(0.0));
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="#1f77b4" stroke="white"/>"##,
            (x1 - x0).max(0.0),
            (y1 - y0).max(0.0)
        );
    }
    for (i, series) in fig.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-name="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(&series.name),
            pts.join(" ")
        );
        if fig.series.len() > 1 {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
                LEFT + 10.0,
                TOP + 14.0 + 16.0 * i as f64,
                escape(&series.name)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Parses the CSV for `kind` and renders it.
pub fn emit_report(kind: ReportKind, csv: &str) -> Result<String> {
    render_svg(&figure_from_csv(kind, csv)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_distribution_is_sorted() {
        let ex = vec![
            LabeledExample::new("a", [2]),
            LabeledExample::new("b", [2, 0]),
            LabeledExample::new("c", [1, 2]),
            LabeledExample::new("d", [1]),
        ];
        assert_eq!(
            label_distribution_csv(&ex).unwrap(),
            "rank,label,frequency\n1,2,3\n2,1,2\n3,0,1\n"
        );
    }

    #[test]
    fn polyline_has_one_point_per_row() {
        let csv = "fraction,epochs,steps,examples,p_at_1,seed\n0.01,100,10,1,0.2,0\n0.1,91,9,1,0.5,0\n1,2,2,1,0.6,0\n";
        let svg = emit_report(ReportKind::Scale, csv).unwrap();
        let pts = svg
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert_eq!(pts.split(' ').count(), 3);
        assert!(svg.contains("(log)"));
    }

    #[test]
    fn empty_and_bad_input() {
        assert!(emit_report(ReportKind::Scale, "fraction,p_at_1\n").is_err());
        assert!(emit_report(ReportKind::Scale, "").is_err());
        assert!(emit_report(ReportKind::LabelDistribution, "rank,frequency\n1,0\n").is_err());
    }

    #[test]
    fn fewshot_categories() {
        let csv = "backbone,count,p_at_1,seed\nr,all,0.9,0\nr,5,0.4,0\np,5,0.7,0\np,all,0.95,0\n";
        let f = figure_from_csv(ReportKind::Fewshot, csv).unwrap();
        assert_eq!(
            f.x_categories.as_deref(),
            Some(&["5".to_string(), "all".to_string()][..])
        );
        assert_eq!(f.series.len(), 2);
        assert_eq!(f.series[0].name, "p");
    }
}
