//! A small static SVG writer for grouped bar charts and line charts.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 110.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
    /// Symmetric error bars, drawn when present.
    pub errors: Option<Vec<f64>>,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
            errors: None,
        }
    }

    pub fn with_errors(mut self, errors: Vec<f64>) -> Self {
        self.errors = Some(errors);
        self
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    lo: f64,
    hi: f64,
}

impl Frame {
    fn new(series: &[Series], include_zero: bool) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in series {
            for (i, &v) in s.values.iter().enumerate() {
                let e = s.errors.as_ref().and_then(|e| e.get(i)).copied().unwrap_or(0.0);
                if v.is_finite() {
                    lo = lo.min(v - e);
                    hi = hi.max(v + e);
                }
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if include_zero {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            lo: if include_zero && lo == 0.0 { 0.0 } else { lo - pad },
            hi: hi + pad,
        }
    }

    fn y(&self, v: f64) -> f64 {
        let plot = HEIGHT - TOP - BOTTOM;
        TOP + plot * (1.0 - (v - self.lo) / (self.hi - self.lo))
    }
}

fn header(out: &mut String, title: &str, y_label: &str, frame: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
        escape(y_label)
    );
    let bottom = HEIGHT - BOTTOM;
    let _ = writeln!(
        out,
        r##"<path d="M{LEFT} {TOP}V{bottom}H{}" stroke="#333" fill="none"/>"##,
        WIDTH - RIGHT
    );
    for k in 0..=4 {
        let v = frame.lo + (frame.hi - frame.lo) * k as f64 / 4.0;
        let y = frame.y(v);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="#333"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0,
            format_tick(v)
        );
    }
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn x_labels(out: &mut String, categories: &[String], centre: impl Fn(usize) -> f64) {
    let y = HEIGHT - BOTTOM + 14.0;
    for (i, c) in categories.iter().enumerate() {
        let x = centre(i);
        let _ = writeln!(
            out,
            r#"<text transform="translate({x:.1} {y:.1}) rotate(-40)" text-anchor="end">{}</text>"#,
            escape(c)
        );
    }
}

fn legend(out: &mut String, series: &[Series]) {
    for (k, s) in series.iter().enumerate() {
        let x = LEFT + 10.0 + 130.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            TOP - 12.0,
            PALETTE[k % PALETTE.len()],
            x + 14.0,
            TOP - 3.0,
            escape(&s.name)
        );
    }
}

fn error_bar(out: &mut String, x: f64, v: f64, e: f64, frame: &Frame) {
    let (y0, y1) = (frame.y(v - e), frame.y(v + e));
    let _ = writeln!(
        out,
        r##"<path d="M{x:.1} {y0:.1}V{y1:.1}M{:.1} {y0:.1}H{:.1}M{:.1} {y1:.1}H{:.1}" stroke="#000"/>"##,
        x - 3.0,
        x + 3.0,
        x - 3.0,
        x + 3.0
    );
}

/// Vertical bars, one group per category and one bar per series.
pub fn bar_chart(title: &str, y_label: &str, categories: &[String], series: &[Series]) -> String {
    let frame = Frame::new(series, true);
    let mut out = String::new();
    header(&mut out, title, y_label, &frame);
    let slot = (WIDTH - LEFT - RIGHT) / categories.len().max(1) as f64;
    let bar = 0.8 * slot / series.len().max(1) as f64;
    let zero = frame.y(0.0);
    for (k, s) in series.iter().enumerate() {
        for (i, &v) in s.values.iter().enumerate().take(categories.len()) {
            let x = LEFT + slot * i as f64 + 0.1 * slot + bar * k as f64;
            let y = frame.y(v);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{:.1}" width="{bar:.1}" height="{:.1}" fill="{}"/>"#,
                y.min(zero),
                (y - zero).abs(),
                PALETTE[k % PALETTE.len()]
            );
            if let Some(e) = s.errors.as_ref().and_then(|e| e.get(i)) {
                error_bar(&mut out, x + bar / 2.0, v, *e, &frame);
            }
        }
    }
    x_labels(&mut out, categories, |i| LEFT + slot * (i as f64 + 0.5));
    if series.len() > 1 {
        legend(&mut out, series);
    }
    out.push_str("</svg>\n");
    out
}

/// Poly-lines over equally spaced categories, with optional error bars.
pub fn line_chart(title: &str, y_label: &str, categories: &[String], series: &[Series]) -> String {
    let frame = Frame::new(series, false);
    let mut out = String::new();
    header(&mut out, title, y_label, &frame);
    let n = categories.len().max(1);
    let step = (WIDTH - LEFT - RIGHT) / n as f64;
    let x = |i: usize| LEFT + step * (i as f64 + 0.5);
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (i, &v) in s.values.iter().enumerate().take(n) {
            if !v.is_finite() {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.1} {:.1}", if pen_down { "L" } else { "M" }, x(i), frame.y(v));
            pen_down = true;
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{colour}"/>"#,
                x(i),
                frame.y(v)
            );
            if let Some(e) = s.errors.as_ref().and_then(|e| e.get(i)) {
                error_bar(&mut out, x(i), v, *e, &frame);
            }
        }
        let _ = writeln!(out, r#"<path d="{d}" stroke="{colour}" fill="none"/>"#);
    }
    x_labels(&mut out, categories, x);
    if series.len() > 1 {
        legend(&mut out, series);
    }
    out.push_str("</svg>\n");
    out
}
