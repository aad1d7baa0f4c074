//! Minimal SVG plots: an impedance trace with detected contacts, and
//! per-frame error curves.

use std::fmt::Write;

use crate::signal::{BioimpedanceTrace, Interval};

const W: f64 = 900.0;
const H: f64 = 360.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        let pad = 0.05 * (y1 - y0);
        Frame { x0, x1, y0: y0 - pad, y1: y1 + pad }
    }

    fn x(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn y(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, r - l, b - t);
    for k in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * k as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, f.x(fx), b + 16.0, tick(fx));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, l - 6.0, f.y(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, H - 8.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a >= 100.0 {
        format!("{:.0}", v)
    } else if a >= 1.0 {
        format!("{:.1}", v)
    } else {
        format!("{:.3}", v)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(out: &mut String, pts: &[(f64, f64)], stroke: &str, width: f64) {
    if pts.is_empty() {
        return;
    }
    let mut d = String::new();
    for (i, (x, y)) in pts.iter().enumerate() {
        let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "" } else { " " }, x, y);
    }
    let _ = writeln!(out, r#"<polyline points="{d}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#);
}

/// Keeps the minimum and maximum of each of `buckets` consecutive runs so
/// narrow dips survive downsampling.
fn decimate(points: &[(f64, f64)], buckets: usize) -> Vec<(f64, f64)> {
    if points.len() <= 2 * buckets {
        return points.to_vec();
    }
    let per = points.len().div_ceil(buckets);
    let mut out = Vec::with_capacity(2 * buckets);
    for chunk in points.chunks(per) {
        let lo = chunk.iter().min_by(|a, b| a.1.total_cmp(&b.1)).copied();
        let hi = chunk.iter().max_by(|a, b| a.1.total_cmp(&b.1)).copied();
        let (Some(lo), Some(hi)) = (lo, hi) else { continue };
        if lo.0 <= hi.0 {
            out.extend([lo, hi]);
        } else {
            out.extend([hi, lo]);
        }
    }
    out
}

/// Impedance magnitude over time with each contact interval drawn as a thick
/// red segment over the trace and dashed onset/offset markers.
pub fn signal_svg(trace: &BioimpedanceTrace, intervals: &[Interval], title: &str) -> String {
    let pts: Vec<(f64, f64)> = trace.samples().iter().map(|s| (s.time, s.magnitude)).collect();
    let (t0, t1) = (pts.first().map_or(0.0, |p| p.0), pts.last().map_or(1.0, |p| p.0));
    let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let f = if pts.is_empty() { Frame::new(0.0, 1.0, 0.0, 1.0) } else { Frame::new(t0, t1, lo, hi) };

    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, "time (s)", "impedance (ohm)");
    let map = |p: &(f64, f64)| (f.x(p.0), f.y(p.1));
    let line: Vec<(f64, f64)> = decimate(&pts, 1500).iter().map(map).collect();
    polyline(&mut out, &line, "#333333", 1.0);
    for iv in intervals {
        let seg: Vec<(f64, f64)> = pts.iter().filter(|p| p.0 >= iv.onset && p.0 <= iv.offset).copied().collect();
        let seg: Vec<(f64, f64)> = decimate(&seg, 300).iter().map(map).collect();
        polyline(&mut out, &seg, "#d62728", 4.0);
        for (t, color) in [(iv.onset, "#d62728"), (iv.offset, "#ff7f0e")] {
            if t < f.x0 || t > f.x1 {
                continue;
            }
            let x = f.x(t);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/>"#,
                H - BOTTOM
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Per-frame curves sharing one axis; frames flagged in `highlight` get a
/// shaded background.
pub fn error_curve_svg(series: &[(&str, &[f64])], highlight: &[bool], title: &str, y_label: &str) -> String {
    let n = series.iter().map(|s| s.1.len()).max().unwrap_or(0);
    let finite = series.iter().flat_map(|s| s.1.iter()).copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo <= hi { (lo.min(0.0), hi) } else { (0.0, 1.0) };
    let f = Frame::new(0.0, n.saturating_sub(1) as f64, lo, hi);

    let mut out = String::new();
    open(&mut out, title);
    let half = if n > 1 { 0.5 * (f.x(1.0) - f.x(0.0)) } else { 5.0 };
    for (k, _) in highlight.iter().enumerate().filter(|(_, h)| **h) {
        let x = f.x(k as f64) - half;
        let _ = writeln!(
            out,
            r##"<rect x="{x:.2}" y="{TOP}" width="{:.2}" height="{:.2}" fill="#fde0dd"/>"##,
            2.0 * half,
            H - TOP - BOTTOM
        );
    }
    axes(&mut out, &f, "frame", y_label);
    for (i, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(k, v)| (f.x(k as f64), f.y(*v)))
            .collect();
        polyline(&mut out, &pts, color, 1.5);
        let y = TOP + 16.0 + 16.0 * i as f64;
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#, W - 180.0, W - 160.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, W - 154.0, y + 4.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}
