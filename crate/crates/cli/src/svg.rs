//! Minimal standalone SVG charts: step curves and colored scatters.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        Frame { x: padded(span(xs)), y: padded(span(ys)) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn padded((lo, hi): (f64, f64)) -> (f64, f64) {
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.04;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = write!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = write!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = write!(out, r#"<line x1="{px:.1}" y1="{y0}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 4.0);
        let _ = write!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 18.0, tick(xv));
        let _ = write!(out, r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/>"#, x0 - 4.0);
        let _ = write!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 7.0, py + 4.0, tick(yv));
    }
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 14.0, escape(x_label));
    let _ = write!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// A named series of (x, y) points drawn as a step curve.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Step curves with an optional horizontal reference line.
pub fn step_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], reference: Option<f64>) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(reference);
    let frame = Frame::new(xs.clone(), ys.clone());
    let mut out = String::new();
    header(&mut out, title, &frame, x_label, y_label);
    if let Some(r) = reference {
        let y = frame.py(r);
        let _ = write!(
            out,
            r##"<line x1="{MARGIN}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
            WIDTH - MARGIN
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut prev: Option<f64> = None;
        for &(x, y) in &s.points {
            let (px, py) = (frame.px(x), frame.py(y));
            match prev {
                None => {
                    let _ = write!(d, "M{px:.2} {py:.2}");
                }
                Some(last) => {
                    let _ = write!(d, " L{px:.2} {last:.2} L{px:.2} {py:.2}");
                }
            }
            prev = Some(py);
        }
        let _ = write!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.6"/>"#);
        let ly = MARGIN + 8.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN - 130.0;
        let _ = write!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = write!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(s.name));
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of (x, y) colored from blue (low) to red (high) by `color`,
/// with an optional shaded horizontal band.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64, f64)], band: Option<(f64, f64)>) -> String {
    let xs = points.iter().map(|p| p.0);
    let ys = points.iter().map(|p| p.1).chain(band.into_iter().flat_map(|b| [b.0, b.1]));
    let frame = Frame::new(xs, ys);
    let (clo, chi) = span(points.iter().map(|p| p.2));
    let mut out = String::new();
    header(&mut out, title, &frame, x_label, y_label);
    if let Some((lo, hi)) = band {
        let (top, bottom) = (frame.py(hi), frame.py(lo));
        let _ = write!(
            out,
            r##"<rect x="{MARGIN}" y="{top:.2}" width="{}" height="{:.2}" fill="#bbbbbb" fill-opacity="0.3"/>"##,
            WIDTH - 2.0 * MARGIN,
            (bottom - top).max(0.0)
        );
    }
    for &(x, y, c) in points {
        let t = if chi > clo { ((c - clo) / (chi - clo)).clamp(0.0, 1.0) } else { 0.5 };
        let (r, b) = ((40.0 + 200.0 * t) as u8, (240.0 - 200.0 * t) as u8);
        let _ = write!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="rgb({r},60,{b})" fill-opacity="0.7"/>"#,
            frame.px(x),
            frame.py(y)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_chart_is_well_formed() {
        let s = Series { name: "a<b", points: vec![(0.0, 0.0), (0.5, 0.2), (1.0, 1.0)] };
        let svg = step_chart("t", "x", "y", &[s], Some(0.0));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<path").count(), 2);
    }

    #[test]
    fn scatter_handles_constant_inputs() {
        let svg = scatter("t", "x", "y", &[(1.0, 1.0, 0.0), (1.0, 1.0, 0.0)], None);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(!svg.contains("NaN"));
    }
}
