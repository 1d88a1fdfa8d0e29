//! Minimal standalone SVG charts.

use std::fmt::Write as _;

use ndarray::Array2;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Line chart; with `log_y` the vertical axis is `log10` and nonpositive
/// points are dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>], log_y: bool) -> String {
    let transformed: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|&(x, y)| (x, if log_y { y.log10() } else { y }))
                .collect()
        })
        .collect();
    let all = transformed.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    let _ = write!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let ytext = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.0}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{ytext}</text>"#,
            px(xv),
            HEIGHT - MARGIN + 16.0,
            MARGIN - 4.0,
            py(yv) + 4.0,
        );
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text><text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, (s, pts)) in series.iter().zip(&transformed).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = write!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN + 4.0 - 120.0,
            MARGIN + 16.0 * (i as f64 + 1.0),
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Heat map of a nonnegative matrix; darker cells are larger.
pub fn heatmap(title: &str, row_label: &str, col_label: &str, values: &Array2<f64>) -> String {
    let (rows, cols) = values.dim();
    let cell = 28.0;
    let width = 2.0 * MARGIN + cell * cols as f64;
    let height = 2.0 * MARGIN + cell * rows as f64;
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mut out = String::new();
    header(&mut out, width, height, title);
    for ((r, c), &v) in values.indexed_iter() {
        let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
        let shade = (255.0 * (1.0 - t)).round() as u8;
        let _ = write!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="white"><title>{v}</title></rect>"#,
            MARGIN + cell * c as f64,
            MARGIN + cell * r as f64,
        );
    }
    for r in 0..rows {
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{r}</text>"#,
            MARGIN - 4.0,
            MARGIN + cell * (r as f64 + 0.65)
        );
    }
    for c in 0..cols {
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{c}</text>"#,
            MARGIN + cell * (c as f64 + 0.5),
            MARGIN + cell * rows as f64 + 14.0
        );
    }
    let _ = write!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text><text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        width / 2.0,
        height - 12.0,
        escape(col_label),
        height / 2.0,
        height / 2.0,
        escape(row_label)
    );
    out.push_str("</svg>\n");
    out
}
