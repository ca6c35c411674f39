//! Minimal SVG charts: line plots with optional log axes, and iterate paths
//! in the plane.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Maps data coordinates (after the optional log) into the plot frame.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
    log_y: bool,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>, log_x: bool, log_y: bool) -> Self {
        let tx = |v: f64| if log_x { v.log10() } else { v };
        let ty = |v: f64| if log_y { v.log10() } else { v };
        let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for (a, b) in points {
            let (a, b) = (tx(a), ty(b));
            if a.is_finite() && b.is_finite() {
                x = (x.0.min(a), x.1.max(a));
                y = (y.0.min(b), y.1.max(b));
            }
        }
        let widen = |(lo, hi): (f64, f64)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self {
            x: widen(x),
            y: widen(y),
            log_x,
            log_y,
        }
    }

    fn map(&self, (a, b): (f64, f64)) -> Option<(f64, f64)> {
        let a = if self.log_x { a.log10() } else { a };
        let b = if self.log_y { b.log10() } else { b };
        if !(a.is_finite() && b.is_finite()) {
            return None;
        }
        let px = MARGIN + (a - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN);
        let py = HEIGHT - MARGIN - (b - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN);
        Some((px, py))
    }

    fn axis_label(value: f64, log: bool) -> String {
        if log {
            format!("1e{value:.1}")
        } else {
            format!("{value:.3}")
        }
    }
}

fn header(svg: &mut String, title: &str) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = write!(
        svg,
        r#"<path d="M{left} {top} V{bottom} H{right}" fill="none" stroke="black"/>"#
    );
    let _ = write!(
        svg,
        r#"<text x="{left}" y="{}">{}</text><text x="{right}" y="{}" text-anchor="end">{}</text>"#,
        bottom + 16.0,
        Frame::axis_label(frame.x.0, frame.log_x),
        bottom + 16.0,
        Frame::axis_label(frame.x.1, frame.log_x)
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{bottom}" text-anchor="end">{}</text><text x="{}" y="{}" text-anchor="end">{}</text>"#,
        left - 4.0,
        Frame::axis_label(frame.y.0, frame.log_y),
        left - 4.0,
        top + 4.0,
        Frame::axis_label(frame.y.1, frame.log_y)
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0,
        escape(x_label)
    );
    let _ = write!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn polyline(svg: &mut String, frame: &Frame, points: &[(f64, f64)], color: &str) {
    let coords: Vec<String> = points
        .iter()
        .filter_map(|&p| frame.map(p))
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    if !coords.is_empty() {
        let _ = write!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Labelled series as polylines.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    log_x: bool,
    log_y: bool,
) -> String {
    let frame = Frame::fit(series.iter().flat_map(|(_, pts)| pts.iter().copied()), log_x, log_y);
    let mut svg = String::new();
    header(&mut svg, title);
    axes(&mut svg, &frame, x_label, y_label);
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        polyline(&mut svg, &frame, pts, color);
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN,
            MARGIN + 14.0 * (i + 1) as f64,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// One track per point, with the targets as crosses.
pub fn path_plot(title: &str, tracks: &[Vec<(f64, f64)>], targets: &[(f64, f64)]) -> String {
    let all = tracks.iter().flatten().chain(targets).copied();
    let frame = Frame::fit(all, false, false);
    let mut svg = String::new();
    header(&mut svg, title);
    axes(&mut svg, &frame, "x0", "x1");
    for (k, track) in tracks.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        polyline(&mut svg, &frame, track, color);
        if let Some((x, y)) = track.first().and_then(|&p| frame.map(p)) {
            let _ = write!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
    }
    for &t in targets {
        if let Some((x, y)) = frame.map(t) {
            let _ = write!(
                svg,
                r#"<path d="M{} {} l8 8 m0 -8 l-8 8" stroke="black"/>"#,
                x - 4.0,
                y - 4.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_well_formed_and_skips_non_positive_log_values() {
        let series = vec![("a<b".to_owned(), vec![(1.0, 1.0), (10.0, 0.0), (100.0, 0.01)])];
        let svg = line_plot("t", "x", "y", &series, true, true);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn path_plot_draws_tracks_and_targets() {
        let tracks = vec![vec![(0.0, 0.0), (1.0, 1.0)], vec![(2.0, 0.0)]];
        let svg = path_plot("paths", &tracks, &[(1.0, 1.0)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches("l8 8").count(), 1);
    }
}
