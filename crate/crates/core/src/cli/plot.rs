//! Line charts of history CSVs as standalone SVG.

use std::fmt::Write as _;
use std::io::Read;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const TICKS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

/// Read two columns of a CSV (`#` lines are comments). `x` defaults to the
/// first column and `y` to `mean_reward` when present, else the second.
/// Rows with a non-finite value in either column are skipped.
pub fn read_series<R: Read>(input: R, x: Option<&str>, y: Option<&str>) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers().context("reading CSV header")?.clone();
    if headers.len() < 2 {
        bail!("CSV needs at least two columns, found {}", headers.len());
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("no column `{name}`"))
    };
    let xi = match x {
        Some(n) => find(n)?,
        None => 0,
    };
    let yi = match y {
        Some(n) => find(n)?,
        None => headers.iter().position(|h| h == "mean_reward").unwrap_or(1),
    };
    let mut points = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row.with_context(|| format!("CSV row {}", n + 1))?;
        let get = |i: usize| -> Result<f64> {
            let s = row.get(i).with_context(|| format!("row {}: missing column {i}", n + 1))?;
            s.trim().parse::<f64>().with_context(|| format!("row {}: `{s}` is not a number", n + 1))
        };
        let (a, b) = (get(xi)?, get(yi)?);
        if a.is_finite() && b.is_finite() {
            points.push((a, b));
        }
    }
    Ok(Series { x_label: headers[xi].to_string(), y_label: headers[yi].to_string(), points })
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Render the series. Output depends only on the inputs.
pub fn render_svg(series: &Series, title: &str, comments: &[String]) -> String {
    let (x0, x1) = range(series.points.iter().map(|p| p.0));
    let (y0, y1) = range(series.points.iter().map(|p| p.1));
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 2.0, HEIGHT - MARGIN);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let py = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    for c in comments {
        let _ = writeln!(s, "<!-- {} -->", c.replace("--", "- -"));
    }
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        top - 10.0,
        escape(title)
    );
    let _ = writeln!(s, r#"<g class="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{bottom:.2}" x2="{right:.2}" y2="{bottom:.2}"/>"#);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{bottom:.2}" x2="{left:.2}" y2="{top:.2}"/>"#);
    for k in 0..TICKS {
        let f = k as f64 / (TICKS - 1) as f64;
        let (tx, ty) = (left + f * (right - left), bottom - f * (bottom - top));
        let _ = writeln!(s, r#"<line x1="{tx:.2}" y1="{bottom:.2}" x2="{tx:.2}" y2="{:.2}"/>"#, bottom + 5.0);
        let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}"/>"#, left - 5.0);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="labels" font-size="11" font-family="sans-serif">"#);
    for k in 0..TICKS {
        let f = k as f64 / (TICKS - 1) as f64;
        let (tx, ty) = (left + f * (right - left), bottom - f * (bottom - top));
        let _ = writeln!(s, r#"<text x="{tx:.2}" y="{:.2}" text-anchor="middle">{:.4}</text>"#, bottom + 18.0, x0 + f * (x1 - x0));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.4}</text>"#, left - 8.0, ty + 4.0, y0 + f * (y1 - y0));
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        HEIGHT - 15.0,
        escape(&series.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(&series.y_label)
    );
    let _ = writeln!(s, "</g>");
    match series.points.len() {
        0 => {}
        1 => {
            let (x, y) = series.points[0];
            let _ = writeln!(s, r#"<circle class="series" cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, px(x), py(y));
        }
        _ => {
            let mut d = String::new();
            for (i, &(x, y)) in series.points.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, px(x), py(y));
            }
            let _ = writeln!(s, r#"<path class="series" d="{d}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}
