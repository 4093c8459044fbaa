//! Dependency-free SVG plots of PR curves and learning curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use prior3d_eval::PR_CSV_HEADER;
use prior3d_train::CURVE_CSV_HEADER;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN: f64 = 50.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Fixed ranges; `None` fits the data.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvKind {
    Pr,
    Curve,
}

/// Parsed rows with their 1-based line numbers.
struct Csv {
    kind: CsvKind,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_csv(path: &Path) -> Result<Csv> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.trim()).unwrap_or_default();
    let kind = if header == PR_CSV_HEADER {
        CsvKind::Pr
    } else if header == CURVE_CSV_HEADER {
        CsvKind::Curve
    } else {
        bail!("{}:1: unrecognised header `{header}`", path.display());
    };
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if cells.len() != width {
            bail!("{}:{}: expected {width} fields, found {}", path.display(), i + 1, cells.len());
        }
        rows.push((i + 1, cells));
    }
    Ok(Csv { kind, rows })
}

fn number(path: &Path, line: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| anyhow::anyhow!("{}:{line}: `{cell}` is not a number", path.display()))?;
    if !v.is_finite() {
        bail!("{}:{line}: non-finite value `{cell}`", path.display());
    }
    Ok(v)
}

fn run_label(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

/// Builds the panels for a set of CSV files of one kind.
pub fn panels_from_csv(paths: &[impl AsRef<Path>]) -> Result<Vec<Panel>> {
    if paths.is_empty() {
        bail!("no input files");
    }
    let parsed: Vec<(&Path, Csv)> =
        paths.iter().map(|p| read_csv(p.as_ref()).map(|c| (p.as_ref(), c))).collect::<Result<_>>()?;
    let kind = parsed[0].1.kind;
    if parsed.iter().any(|(_, c)| c.kind != kind) {
        bail!("cannot mix PR-curve and learning-curve files in one plot");
    }
    match kind {
        CsvKind::Pr => {
            // (class, matcher) → model → points
            let mut groups: BTreeMap<(String, String), BTreeMap<String, Vec<(f64, f64)>>> = BTreeMap::new();
            for (path, csv) in &parsed {
                for (line, c) in &csv.rows {
                    let r = number(path, *line, &c[3])?;
                    let p = number(path, *line, &c[4])?;
                    groups.entry((c[1].clone(), c[2].clone())).or_default().entry(c[0].clone()).or_default().push((r, p));
                }
            }
            if groups.is_empty() {
                groups.insert(("all".into(), "pr".into()), BTreeMap::new());
            }
            Ok(groups
                .into_iter()
                .map(|((class, matcher), models)| Panel {
                    title: format!("{class} {matcher}"),
                    x_label: "recall".into(),
                    y_label: "precision".into(),
                    x_range: Some((0.0, 1.0)),
                    y_range: Some((0.0, 1.0)),
                    series: models.into_iter().map(|(label, points)| Series { label, points }).collect(),
                })
                .collect())
        }
        CsvKind::Curve => {
            let mut series = Vec::new();
            for (path, csv) in &parsed {
                let mut points = Vec::new();
                for (line, c) in &csv.rows {
                    points.push((number(path, *line, &c[0])?, number(path, *line, &c[1])?));
                }
                series.push(Series { label: run_label(path), points });
            }
            Ok(vec![Panel {
                title: "training loss".into(),
                x_label: "epoch".into(),
                y_label: "loss".into(),
                x_range: None,
                y_range: None,
                series,
            }])
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fit(range: Option<(f64, f64)>, values: impl Iterator<Item = f64>, from_zero: bool) -> (f64, f64) {
    if let Some(r) = range {
        return r;
    }
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if from_zero {
        lo = lo.min(0.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    (lo, hi)
}

/// Renders the panels side by side into one SVG document.
pub fn render_svg(panels: &[Panel]) -> String {
    let w = MARGIN + panels.len().max(1) as f64 * (PANEL_W + MARGIN);
    let h = PANEL_H + 2.0 * MARGIN + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        let (xl, xh) = fit(panel.x_range, panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), false);
        let (yl, yh) = fit(panel.y_range, panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), true);
        let px = |x: f64| x0 + (x - xl) / (xh - xl) * PANEL_W;
        let py = |y: f64| y0 + PANEL_H - (y - yl) / (yh - yl) * PANEL_H;
        let _ = writeln!(s, r#"<g class="panel">"#);
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (xl + f * (xh - xl), yl + f * (yh - yl));
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                px(xv),
                y0 + PANEL_H + 14.0,
                trim_num(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                py(yv) + 4.0,
                trim_num(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 10.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 30.0,
            escape(&panel.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            x0 - 34.0,
            y0 + PANEL_H / 2.0,
            x0 - 34.0,
            y0 + PANEL_H / 2.0,
            escape(&panel.y_label)
        );
        for (i, series) in panel.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if !series.points.is_empty() {
                let pts: Vec<String> =
                    series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                    pts.join(" "),
                    escape(&series.label)
                );
            }
            let ly = y0 + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                x0 + PANEL_W - 130.0,
                x0 + PANEL_W - 112.0
            );
            let _ = writeln!(
                s,
                r#"<text class="legend" x="{:.1}" y="{:.1}">{}</text>"#,
                x0 + PANEL_W - 108.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn trim_num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

pub fn cmd_plot(inputs: &[impl AsRef<Path>], out: &Path) -> Result<()> {
    let panels = panels_from_csv(inputs)?;
    std::fs::write(out, render_svg(&panels)).with_context(|| format!("writing {}", out.display()))
}
