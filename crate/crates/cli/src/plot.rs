use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use chrono::NaiveDate;

use crate::config::usage;

const NEAREST: usize = 5;

/// Row indices of the pages matching `selector`: the exact key if present,
/// otherwise every key containing it (at most `limit`). An empty match is an
/// error naming the closest keys.
pub fn select_pages(pages: &[String], selector: &str, limit: usize) -> Result<Vec<usize>> {
    if let Some(i) = pages.iter().position(|p| p == selector) {
        return Ok(vec![i]);
    }
    let hits: Vec<usize> = pages
        .iter()
        .enumerate()
        .filter(|(_, p)| !selector.is_empty() && p.contains(selector))
        .map(|(i, _)| i)
        .collect();
    if hits.is_empty() {
        let mut scored: Vec<(f64, &str)> = pages
            .iter()
            .map(|p| (strsim::jaro_winkler(selector, p), p.as_str()))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let nearest: Vec<&str> = scored.iter().take(NEAREST).map(|(_, p)| *p).collect();
        return Err(usage(format!(
            "no page matches {selector:?}; nearest keys: {}",
            nearest.join(", ")
        )));
    }
    if hits.len() > limit {
        log::warn!("{} pages match {selector:?}; plotting the first {limit}", hits.len());
    }
    Ok(hits.into_iter().take(limit.max(1)).collect())
}

/// A page key reduced to characters safe in file names.
pub fn file_stem(page: &str) -> String {
    page.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

/// `date,series,value` rows.
pub fn write_long_csv(path: &Path, dates: &[NaiveDate], series: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["date", "series", "value"])?;
    for (name, values) in series {
        for (d, v) in dates.iter().zip(values) {
            w.write_record([&d.to_string(), name, &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 7] = ["#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart of each series over `dates`, with a legend on the right.
pub fn render_svg(title: &str, dates: &[NaiveDate], series: &[(String, Vec<f64>)]) -> String {
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let y_max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1.0)
        * 1.05;
    let n = dates.len().max(2);
    let x_at = |i: usize| LEFT + plot_w * i as f64 / (n - 1) as f64;
    let y_at = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, y_max) / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="24" font-size="14">{}</text>"#, escape(title));
    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_w, TOP, TOP + plot_h);
    let _ = writeln!(s, r#"<polyline points="{x0},{y0} {x0},{y1} {x1},{y1}" fill="none" stroke="dimgray"/>"#);
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y_at(v);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="gainsboro"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, x0 - 6.0, y + 4.0);
    }
    if let (Some(first), Some(last)) = (dates.first(), dates.last()) {
        let _ = writeln!(s, r#"<text x="{x0}" y="{:.2}">{first}</text>"#, y1 + 20.0);
        let _ = writeln!(s, r#"<text x="{x1}" y="{:.2}" text-anchor="end">{last}</text>"#, y1 + 20.0);
    }
    for (k, (name, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x_at(i), y_at(*v)))
            .collect();
        let width = if name == "truth" { 2.0 } else { 1.5 };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(name)
        );
        let ly = TOP + 18.0 * k as f64;
        let lx = x1 + 16.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
