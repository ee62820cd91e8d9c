//! Minimal deterministic SVG 1.1 charts. Coordinates are printed with fixed
//! precision so identical inputs always give identical bytes.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const M: f64 = 48.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    ox: f64,
    width: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        self.ox + M + (x - self.x0) / span * (self.width - 1.5 * M)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        H - M - (y - self.y0) / span * (H - 1.5 * M)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (l, r, b, t) = (self.ox + M, self.ox + self.width - M / 2.0, H - M, M / 2.0);
        let _ = write!(
            out,
            r#"<g><line x1="{l:.1}" y1="{b:.1}" x2="{r:.1}" y2="{b:.1}" stroke="black"/><line x1="{l:.1}" y1="{b:.1}" x2="{l:.1}" y2="{t:.1}" stroke="black"/>"#
        );
        for (v, anchor) in [(self.x0, "start"), (self.x1, "end")] {
            let _ = write!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="{anchor}">{v:.2}</text>"#,
                self.px(v),
                b + 14.0
            );
        }
        for v in [self.y0, self.y1] {
            let _ = write!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.2}</text>"#,
                l - 4.0,
                self.py(v) + 3.0
            );
        }
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text></g>"#,
            (l + r) / 2.0,
            t - 8.0,
            escape(title),
            (l + r) / 2.0,
            H - 10.0,
            escape(x_label),
            self.ox + 14.0,
            H / 2.0,
            escape(y_label),
            self.ox + 14.0,
            H / 2.0
        );
    }
}

fn bounds(series: &[&Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    (x0, x1, y0.min(0.0), y1.max(1.0))
}

fn header(width: f64) -> String {
    format!(
        r#"<?xml version="1.0" encoding="UTF-8"?><svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{H:.0}" viewBox="0 0 {width:.0} {H:.0}"><rect width="100%" height="100%" fill="white"/>"#
    )
}

fn legend(out: &mut String, names: &[&str], x: f64) {
    for (i, name) in names.iter().enumerate() {
        let y = M / 2.0 + 12.0 * i as f64 + 4.0;
        let _ = write!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="8" height="8" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="9">{}</text>"#,
            x,
            y,
            COLORS[i % COLORS.len()],
            x + 11.0,
            y + 8.0,
            escape(name)
        );
    }
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let refs: Vec<&Series> = series.iter().collect();
    let (x0, x1, y0, y1) = bounds(&refs);
    let f = Frame { x0, x1, y0, y1, ox: 0.0, width: W };
    let mut out = header(W);
    f.axes(&mut out, title, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
        let _ = write!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            pts.join(" ")
        );
    }
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    legend(&mut out, &names, W - 130.0);
    out.push_str("</svg>");
    out
}

/// Side-by-side scatter panels sharing axes; each series is one marker colour.
pub fn scatter_panels(title: &str, x_label: &str, y_label: &str, panels: &[(String, Vec<Series>)]) -> String {
    let all: Vec<&Series> = panels.iter().flat_map(|(_, s)| s.iter()).collect();
    let (x0, x1, y0, y1) = bounds(&all);
    let n = panels.len().max(1);
    let total = W * n as f64;
    let mut out = header(total);
    if panels.is_empty() {
        Frame { x0, x1, y0, y1, ox: 0.0, width: W }.axes(&mut out, title, x_label, y_label);
    }
    for (p, (name, series)) in panels.iter().enumerate() {
        let f = Frame { x0, x1, y0, y1, ox: W * p as f64, width: W };
        f.axes(&mut out, &format!("{title} ({name})"), x_label, y_label);
        for (i, s) in series.iter().enumerate() {
            for &(x, y) in &s.points {
                let _ = write!(
                    out,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{}"/>"#,
                    f.px(x),
                    f.py(y),
                    COLORS[i % COLORS.len()]
                );
            }
        }
    }
    let names: Vec<&str> = panels.first().map(|(_, s)| s.iter().map(|s| s.name.as_str()).collect()).unwrap_or_default();
    legend(&mut out, &names, total - 130.0);
    out.push_str("</svg>");
    out
}

pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let y1 = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-9);
    let y0 = bars.iter().map(|b| b.1).fold(0.0f64, f64::min);
    let f = Frame { x0: 0.0, x1: bars.len().max(1) as f64, y0, y1, ox: 0.0, width: W };
    let mut out = header(W);
    f.axes(&mut out, title, "", y_label);
    for (i, (name, v)) in bars.iter().enumerate() {
        let (xl, xr) = (f.px(i as f64 + 0.15), f.px(i as f64 + 0.85));
        let (top, base) = (f.py(v.max(0.0)), f.py(v.min(0.0)));
        let _ = write!(
            out,
            r#"<rect x="{xl:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="8" text-anchor="end" transform="rotate(-45 {:.1} {:.1})">{}</text>"#,
            xr - xl,
            base - top,
            COLORS[0],
            (xl + xr) / 2.0,
            base + 10.0,
            (xl + xr) / 2.0,
            base + 10.0,
            escape(name)
        );
    }
    out.push_str("</svg>");
    out
}
