//! Minimal SVG line and scatter plots.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Polyline if true, markers otherwise.
    pub line: bool,
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn fit(series: &[Series]) -> Axes {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for (px, py) in series.iter().flat_map(|s| s.points.iter()) {
            if px.is_finite() && py.is_finite() {
                x = (x.0.min(*px), x.1.max(*px));
                y = (y.0.min(*py), y.1.max(*py));
            }
        }
        let pad = |r: (f64, f64)| {
            if !r.0.is_finite() {
                return (0.0, 1.0);
            }
            let w = (r.1 - r.0).max(1e-12 * r.0.abs().max(1.0));
            (r.0 - 0.05 * w, r.1 + 0.05 * w)
        };
        Axes { x: pad(x), y: pad(y) }
    }

    fn map(&self, p: (f64, f64)) -> (f64, f64) {
        let u = (p.0 - self.x.0) / (self.x.1 - self.x.0);
        let v = (p.1 - self.y.0) / (self.y.1 - self.y.0);
        (MARGIN + u * (W - 2.0 * MARGIN), H - MARGIN - v * (H - 2.0 * MARGIN))
    }
}

fn render(title: &str, xlabel: &str, ylabel: &str, series: &[Series], ticks: &dyn Fn(f64) -> String) -> String {
    let axes = Axes::fit(series);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0) = (MARGIN, H - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {} L{x0} {y0} L{} {y0}" stroke="black" fill="none"/>"#,
        MARGIN,
        W - MARGIN
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = axes.x.0 + f * (axes.x.1 - axes.x.0);
        let yv = axes.y.0 + f * (axes.y.1 - axes.y.0);
        let (px, _) = axes.map((xv, axes.y.0));
        let (_, py) = axes.map((axes.x.0, yv));
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y0 + 16.0, ticks(xv));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, ticks(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| axes.map(*p))
            .collect();
        if ser.line {
            let mut d = String::new();
            for (k, (px, py)) in pts.iter().enumerate() {
                let _ = write!(d, "{}{px:.2} {py:.2} ", if k == 0 { "M" } else { "L" });
            }
            let _ = writeln!(s, r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, d.trim_end());
        } else {
            for (px, py) in &pts {
                let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3.5" fill="{color}"/>"#);
            }
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}" text-anchor="end">{}</text>"#,
            W - MARGIN,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log-log plot; nonpositive values are dropped.
pub fn loglog_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let logged: Vec<Series> = series
        .iter()
        .map(|s| Series {
            points: s
                .points
                .iter()
                .filter(|p| p.0 > 0.0 && p.1 > 0.0)
                .map(|p| (p.0.log10(), p.1.log10()))
                .collect(),
            ..s.clone()
        })
        .collect();
    render(title, xlabel, ylabel, &logged, &|v| format!("{:.1e}", 10f64.powf(v)))
}

/// Linear-axis plot, used for spatial projections of tracks.
pub fn track_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    render(title, xlabel, ylabel, series, &|v| format!("{v:.3}"))
}
