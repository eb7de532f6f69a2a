//! Self-contained SVG line plots of report series (estimate ± SE vs t).

use std::fmt::Write as _;

use super::report::Series;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Renders all series on shared axes; error bars span ± one SE and dashed
/// lines mark targets when present.
pub fn line_plot(title: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in pts {
        if !(p.estimate.is_finite() && p.t.is_finite()) {
            continue;
        }
        x0 = x0.min(p.t);
        x1 = x1.max(p.t);
        let se = if p.std_error.is_finite() {
            p.std_error
        } else {
            0.0
        };
        y0 = y0.min(p.estimate - se);
        y1 = y1.max(p.estimate + se);
        if let Some(t) = p.target.filter(|v| v.is_finite()) {
            y0 = y0.min(t);
            y1 = y1.max(t);
        }
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        let pad = y0.abs().max(1.0) * 0.1;
        y0 -= pad;
        y1 += pad;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ddd"/><text x="{x:.2}" y="{}" text-anchor="middle">{t}</text>"##,
            TOP,
            TOP + ph,
            TOP + ph + 18.0
        );
    }
    for t in nice_ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            format_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#,
        LEFT + pw / 2.0,
        H - 12.0
    );
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let good: Vec<_> = ser
            .points
            .iter()
            .filter(|p| p.estimate.is_finite())
            .collect();
        let path: Vec<String> = good
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.t), sy(p.estimate)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.8"/>"#,
            path.join(" ")
        );
        for p in &good {
            let (x, y) = (sx(p.t), sy(p.estimate));
            if p.std_error > 0.0 && p.std_error.is_finite() {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}"/>"#,
                    sy(p.estimate - p.std_error),
                    sy(p.estimate + p.std_error)
                );
            }
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{c}"/>"#);
        }
        let targets: Vec<String> = good
            .iter()
            .filter_map(|p| {
                p.target
                    .filter(|v| v.is_finite())
                    .map(|t| format!("{:.2},{:.2}", sx(p.t), sy(t)))
            })
            .collect();
        if !targets.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{c}" stroke-dasharray="5,4" stroke-width="1"/>"#,
                targets.join(" ")
            );
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(t: f64) -> String {
    if t != 0.0 && (t.abs() < 1e-3 || t.abs() >= 1e5) {
        format!("{t:.1e}")
    } else {
        let s = format!("{t:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explab::report::SeriesPoint;

    #[test]
    fn plot_is_well_formed() {
        let ser = Series {
            name: "a<b".into(),
            points: vec![
                SeriesPoint {
                    t: 0.0,
                    estimate: 1.0,
                    std_error: 0.1,
                    target: Some(1.0),
                },
                SeriesPoint {
                    t: 2.0,
                    estimate: 1.2,
                    std_error: 0.0,
                    target: Some(1.0),
                },
            ],
        };
        let svg = line_plot("demo", &[ser]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(0.0, 100.0);
        assert_eq!(t.first(), Some(&0.0));
        assert_eq!(t.last(), Some(&100.0));
    }
}
