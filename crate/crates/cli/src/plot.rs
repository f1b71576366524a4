//! Minimal static SVG charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(title: &str, x_label: &str, y_label: &str, body: &str, x_range: (f64, f64), y_range: (f64, f64)) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{x0}" y="{}" text-anchor="start">{:.3}</text><text x="{x1}" y="{}" text-anchor="end">{:.3}</text>"#,
        y0 + 16.0,
        x_range.0,
        y0 + 16.0,
        x_range.1
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text><text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
        x0 - 4.0,
        y0,
        y_range.0,
        x0 - 4.0,
        y1 + 4.0,
        y_range.1
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    svg.push_str(body);
    svg.push_str("</svg>\n");
    svg
}

/// Histogram of `values` over `bins` equal-width bins.
pub fn histogram(title: &str, x_label: &str, values: &[f64], bins: usize) -> String {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() || hi <= lo {
        hi = lo + 1.0;
    }
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / bins as f64;
    let mut body = String::new();
    for (i, c) in counts.iter().enumerate() {
        let h = *c as f64 / top * plot_h;
        let _ = writeln!(
            body,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0" stroke="white"/>"##,
            MARGIN + i as f64 * bar_w,
            HEIGHT - MARGIN - h,
            bar_w,
            h
        );
    }
    frame(title, x_label, "count", &body, (lo, hi), (0.0, top))
}

/// Polyline of `values` against their index.
pub fn line(title: &str, x_label: &str, y_label: &str, values: &[f64]) -> String {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = if lo.is_finite() { lo } else { 0.0 };
    if !hi.is_finite() || hi <= lo {
        hi = lo + 1.0;
    }
    let n = values.len().max(2) - 1;
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            format!(
                "{:.2},{:.2}",
                MARGIN + i as f64 / n as f64 * plot_w,
                HEIGHT - MARGIN - (v - lo) / (hi - lo) * plot_h
            )
        })
        .collect();
    let body = format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#c44e52\" stroke-width=\"1.5\"/>\n",
        points.join(" ")
    );
    frame(title, x_label, y_label, &body, (0.0, n as f64), (lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_has_one_bar_per_bin() {
        let svg = histogram("scores", "score", &[0.0, 0.1, 0.5, 1.0], 5);
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn line_handles_flat_and_empty_series() {
        assert!(line("loss", "epoch", "loss", &[1.0, 1.0]).contains("<polyline"));
        assert!(line("loss", "epoch", "loss", &[]).contains("<polyline"));
    }

    #[test]
    fn titles_are_escaped() {
        assert!(histogram("a<b", "x", &[1.0], 1).contains("a&lt;b"));
    }
}
