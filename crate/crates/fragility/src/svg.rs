//! Minimal self-contained SVG renderings of the figure CSVs.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        Self {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }

    fn axes(&self, s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = write!(
            s,
            r##"<rect width="{W}" height="{H}" fill="white"/><text x="{}" y="24" text-anchor="middle" font-size="15">{}</text><line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/><text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text><text x="16" y="{}" font-size="12" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"##,
            W / 2.0,
            escape(title),
            W / 2.0,
            H - 12.0,
            escape(xlabel),
            H / 2.0,
            H / 2.0,
            escape(ylabel),
            b = H - PAD,
            r = W - PAD,
        );
        for k in 0..=4 {
            let f = f64::from(k) / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let _ = write!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
                self.px(xv),
                H - PAD + 14.0,
                tick(xv),
                PAD - 4.0,
                self.py(yv) + 3.0,
                tick(yv)
            );
        }
        if self.y.0 < 0.0 && self.y.1 > 0.0 {
            let _ = write!(
                s,
                r##"<line x1="{PAD}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#999" stroke-dasharray="4"/>"##,
                W - PAD,
                y = self.py(0.0)
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open() -> String {
    format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">"#)
}

/// Interval band `[lo, hi]` against `x`, with the midpoint drawn as a line.
/// Points with a missing interval are skipped.
pub fn band_plot(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, f64)]) -> String {
    let frame = Frame::new(
        points.iter().map(|p| p.0),
        points.iter().flat_map(|p| [p.1, p.2]),
    );
    let mut s = open();
    frame.axes(&mut s, title, xlabel, ylabel);
    if !points.is_empty() {
        let upper: Vec<String> = points.iter().map(|p| format!("{:.1},{:.1}", frame.px(p.0), frame.py(p.2))).collect();
        let lower: Vec<String> = points.iter().rev().map(|p| format!("{:.1},{:.1}", frame.px(p.0), frame.py(p.1))).collect();
        let _ = write!(
            s,
            r##"<polygon points="{} {}" fill="#4a7ab8" fill-opacity="0.3" stroke="#4a7ab8"/>"##,
            upper.join(" "),
            lower.join(" ")
        );
        let mid: Vec<String> = points
            .iter()
            .map(|p| format!("{:.1},{:.1}", frame.px(p.0), frame.py(0.5 * (p.1 + p.2))))
            .collect();
        let _ = write!(s, r##"<polyline points="{}" fill="none" stroke="#1d3f6e"/>"##, mid.join(" "));
    }
    s.push_str("</svg>\n");
    s
}

/// Two overlaid histograms sharing `edges`.
pub fn histogram(title: &str, edges: &[f64], series: &[(&str, &[usize], &str)]) -> String {
    let top = series
        .iter()
        .flat_map(|(_, c, _)| c.iter())
        .copied()
        .max()
        .unwrap_or(0) as f64;
    let frame = Frame::new(edges.iter().copied(), [0.0, top].into_iter());
    let mut s = open();
    frame.axes(&mut s, title, "propensity score", "units");
    for (k, (label, counts, colour)) in series.iter().enumerate() {
        for (i, c) in counts.iter().enumerate() {
            let x0 = frame.px(edges[i]);
            let x1 = frame.px(edges[i + 1]);
            let y = frame.py(*c as f64);
            let _ = write!(
                s,
                r#"<rect x="{x0:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{colour}" fill-opacity="0.45"/>"#,
                (x1 - x0).max(0.5),
                (frame.py(0.0) - y).max(0.0)
            );
        }
        let _ = write!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{colour}"/><text x="{}" y="{}" font-size="11">{}</text>"#,
            W - PAD - 90.0,
            PAD + 16.0 * k as f64,
            W - PAD - 75.0,
            PAD + 9.0 + 16.0 * k as f64,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
