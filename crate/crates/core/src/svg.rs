//! Minimal SVG grouped bar charts, one group per feature.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 60.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Bars for one feature; `values[k]` belongs to series `k`, `None` draws no
/// bar and prints "n/a".
#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders a grouped bar chart with a zero line, numeric labels on every
/// bar and a legend. Output depends only on the inputs.
pub fn grouped_bar_chart(title: &str, series: &[&str], groups: &[BarGroup]) -> String {
    let finite = groups
        .iter()
        .flat_map(|g| g.values.iter().flatten())
        .copied()
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.1 * (hi - lo);
    hi += pad;
    if lo < 0.0 {
        lo -= pad;
    }
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let y_of = |v: f64| MARGIN_TOP + (hi - v) / (hi - lo) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // legend
    for (k, name) in series.iter().enumerate() {
        let x = MARGIN_LEFT + k as f64 * 170.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="36" width="12" height="12" fill="{}"/><text x="{}" y="46">{}</text>"#,
            PALETTE[k % PALETTE.len()],
            x + 16.0,
            escape(name)
        );
    }

    // axis and zero line
    let _ = writeln!(
        out,
        r##"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{}" stroke="#333"/>"##,
        HEIGHT - MARGIN_BOTTOM
    );
    let zero = y_of(0.0);
    let _ = writeln!(
        out,
        r##"<line x1="{MARGIN_LEFT}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#333"/>"##,
        WIDTH - MARGIN_RIGHT
    );
    for tick in [lo, 0.0, hi] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{tick:.2}</text>"#,
            MARGIN_LEFT - 6.0,
            y_of(tick) + 4.0
        );
    }

    let n_groups = groups.len().max(1) as f64;
    let group_w = plot_w / n_groups;
    let n_series = series.len().max(1) as f64;
    let bar_w = 0.8 * group_w / n_series;
    for (g, group) in groups.iter().enumerate() {
        let gx = MARGIN_LEFT + g as f64 * group_w + 0.1 * group_w;
        for (k, value) in group.values.iter().enumerate() {
            let x = gx + k as f64 * bar_w;
            let cx = x + bar_w / 2.0;
            match value {
                Some(v) if v.is_finite() => {
                    let (top, bottom) = if *v >= 0.0 { (y_of(*v), zero) } else { (zero, y_of(*v)) };
                    let _ = writeln!(
                        out,
                        r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                        bar_w * 0.95,
                        bottom - top,
                        PALETTE[k % PALETTE.len()]
                    );
                    let ly = if *v >= 0.0 { top - 4.0 } else { bottom + 14.0 };
                    let _ = writeln!(
                        out,
                        r#"<text x="{cx:.2}" y="{ly:.2}" text-anchor="middle">{v:.2}</text>"#
                    );
                }
                _ => {
                    let _ = writeln!(
                        out,
                        r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">n/a</text>"#,
                        zero - 4.0
                    );
                }
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + (g as f64 + 0.5) * group_w,
            HEIGHT - MARGIN_BOTTOM + 20.0,
            escape(&group.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
