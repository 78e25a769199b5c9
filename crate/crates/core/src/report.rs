//! Plain SVG line charts of grid results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{read_run_csv, Manifest};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Render series as an SVG document using only `path`, `line` and `text`
/// elements. The y axis spans [0, 1] when every value lies inside it.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(all().map(|p| p.0));
    let (mut y0, mut y1) = range(all().map(|p| p.1));
    if all().all(|p| (0.0..=1.0).contains(&p.1)) {
        (y0, y1) = (0.0, 1.0);
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    // Axes and ticks.
    let (bx, by) = (MARGIN_LEFT, MARGIN_TOP + plot_h);
    let _ = writeln!(svg, r#"<line x1="{bx}" y1="{by}" x2="{}" y2="{by}" stroke="black"/>"#, bx + plot_w);
    let _ = writeln!(svg, r#"<line x1="{bx}" y1="{MARGIN_TOP}" x2="{bx}" y2="{by}" stroke="black"/>"#);
    for i in 0..=5 {
        let v = y0 + (y1 - y0) * i as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(svg, r##"<line x1="{}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#dddddd"/>"##, bx, bx + plot_w);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, bx - 6.0, y + 4.0, fmt_tick(v));
    }
    for x in x_ticks(x0, x1) {
        let px = sx(x);
        let _ = writeln!(svg, r#"<line x1="{px:.1}" y1="{by}" x2="{px:.1}" y2="{}" stroke="black"/>"#, by + 4.0);
        let _ = writeln!(svg, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, by + 18.0, fmt_tick(x));
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if i >= PALETTE.len() { r#" stroke-dasharray="5,3""# } else { "" };
        let mut d = String::new();
        for (j, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(d, "{}{:.1},{:.1} ", if j == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#, d.trim_end());
        let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 15.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v:.2}")
    }
}

/// Integer ticks when the span is small, else six evenly spaced ones.
fn x_ticks(x0: f64, x1: f64) -> Vec<f64> {
    if x1 - x0 <= 20.0 && x0.fract() == 0.0 {
        (0..=((x1 - x0) as usize)).map(|i| x0 + i as f64).collect()
    } else {
        (0..=5).map(|i| x0 + (x1 - x0) * i as f64 / 5.0).collect()
    }
}

/// Write one accuracy-per-task chart per history size of a grid result
/// directory, averaging runs over seeds. Returns the written files.
pub fn render_grid_report(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = Manifest::load(dir)?;
    let config = &manifest.config;
    let mut written = Vec::new();
    for &history in &config.histories {
        let mut series = Vec::new();
        for &model in &config.models {
            for &variant in &config.restarts {
                let mut per_t: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
                for cell in config.cells() {
                    if (cell.model, cell.history, cell.variant) != (model, history, variant) {
                        continue;
                    }
                    let path = dir.join("runs").join(format!("{}.csv", cell.file_stem()));
                    if !path.exists() {
                        continue;
                    }
                    for row in read_run_csv(&path)? {
                        let e = per_t.entry(row.t).or_insert((0.0, 0));
                        e.0 += row.acc_t;
                        e.1 += 1;
                    }
                }
                if !per_t.is_empty() {
                    series.push(Series {
                        label: format!("{model} {variant}"),
                        points: per_t.into_iter().map(|(t, (s, n))| (t as f64, s / n as f64)).collect(),
                    });
                }
            }
        }
        if series.is_empty() {
            continue;
        }
        let resolved = manifest
            .resolved_histories
            .get(&history.to_string())
            .map(|h| h.to_string())
            .unwrap_or_default();
        let title = if resolved.is_empty() || resolved == history.to_string() {
            format!("Accuracy per task, history {history}")
        } else {
            format!("Accuracy per task, history {history} ({resolved})")
        };
        let svg = line_chart_svg(&title, "task time", "accuracy", &series);
        let path = dir.join(format!("accuracy_h{history}.svg"));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_uses_only_plain_elements() {
        let s = vec![
            Series {
                label: "a <b>".into(),
                points: vec![(1.0, 0.5), (2.0, 0.75), (3.0, 0.25)],
            },
            Series {
                label: "c".into(),
                points: vec![(1.0, 0.1), (3.0, 0.9)],
            },
        ];
        let svg = line_chart_svg("t & u", "x", "y", &s);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains("a &lt;b&gt;"));
        assert!(svg.contains("t &amp; u"));
        for tag in svg.split('<').skip(1) {
            let name: String = tag.chars().take_while(|c| c.is_ascii_alphabetic() || *c == '/').collect();
            assert!(
                ["svg", "/svg", "rect", "text", "/text", "line", "path"].contains(&name.as_str()),
                "unexpected element {name}"
            );
        }
    }

    #[test]
    fn points_map_into_plot_area() {
        let s = vec![Series {
            label: "a".into(),
            points: vec![(0.0, 0.0), (10.0, 1.0)],
        }];
        let svg = line_chart_svg("", "", "", &s);
        let bottom = MARGIN_TOP + HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        assert!(svg.contains(&format!("M{:.1},{:.1} L{:.1},{:.1}", MARGIN_LEFT, bottom, WIDTH - MARGIN_RIGHT, MARGIN_TOP)));
    }

    #[test]
    fn empty_and_constant_series_do_not_divide_by_zero() {
        let svg = line_chart_svg("", "", "", &[]);
        assert!(!svg.contains("NaN"));
        let s = vec![Series {
            label: "a".into(),
            points: vec![(2.0, 3.0)],
        }];
        assert!(!line_chart_svg("", "", "", &s).contains("NaN"));
    }
}
