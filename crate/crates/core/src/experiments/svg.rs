//! Minimal line charts: log-scale error against observable count.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
/// Errors are clamped here before taking logarithms.
const FLOOR: f64 = 1e-16;

const PALETTE: [&str; 7] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(n_observables, abs_error)`, ascending in the first coordinate.
    pub points: Vec<(f64, f64)>,
}

/// Plot frame shared by the axes, series and target rule.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x_max: f64,
    log_lo: f64,
    log_hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        LEFT + v / self.x_max * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v.max(FLOOR).log10() - self.log_lo) / (self.log_hi - self.log_lo);
        HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM)
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Render `series` with a horizontal rule at `target`.
pub fn render_chart(title: &str, series: &[Series], target: f64) -> String {
    let values = series.iter().flat_map(|s| s.points.iter());
    let x_max = values.clone().map(|p| p.0).fold(1.0, f64::max);
    let (lo, hi) = values
        .map(|p| p.1)
        .chain(std::iter::once(target))
        .filter(|v| v.is_finite())
        .map(|v| v.max(FLOOR).log10())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let mut frame = Frame {
        x_max,
        log_lo: lo.floor(),
        log_hi: hi.ceil(),
    };
    if frame.log_hi <= frame.log_lo {
        frame.log_hi = frame.log_lo + 1.0;
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" class="convergence-chart">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<g class="axis x-axis" data-scale="linear" font-size="11" text-anchor="middle">"#
    );
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let step = nice_step(x_max);
    let mut tick = 0.0;
    while tick <= x_max + 1e-9 * x_max {
        let x = frame.x(tick);
        let _ = writeln!(
            out,
            r#"<g class="tick" data-value="{tick}"><line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}">{tick}</text></g>"#,
            y0 + 5.0,
            y0 + 18.0
        );
        tick += step;
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}">observables</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(out, "</g>");

    let _ = writeln!(
        out,
        r#"<g class="axis y-axis" data-scale="log10" font-size="11" text-anchor="end">"#
    );
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for decade in frame.log_lo as i32..=frame.log_hi as i32 {
        let value = 10f64.powi(decade);
        let y = frame.y(value);
        let _ = writeln!(
            out,
            r#"<g class="tick" data-value="1e{decade}"><line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}">1e{decade}</text></g>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="20" y="{}" transform="rotate(-90 20 {})" text-anchor="middle">absolute error</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(out, "</g>");

    let ty = frame.y(target);
    let _ = writeln!(
        out,
        r#"<line class="target" data-value="{target}" x1="{x0}" y1="{ty:.2}" x2="{x1}" y2="{ty:.2}" stroke="gray" stroke-dasharray="6 4"/>"#
    );

    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, e)| format!("{:.2},{:.2}", frame.x(x), frame.y(e)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-method="{}" fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            escape(&s.name),
            points.join(" ")
        );
        let ly = TOP + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<g class="legend"><line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{}</text></g>"#,
            x1 + 10.0,
            x1 + 30.0,
            x1 + 35.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}
