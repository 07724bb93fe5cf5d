//! Hand-written SVG figures: MCB rank plot and forecast band plot.
//!
//! Output is plain text with fixed number formatting so identical inputs
//! give byte-identical files.

use std::fmt::Write;

use crate::eval::McbResult;

const WIDTH: f64 = 720.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Axis { lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

/// Mean rank per model with its interval; the best model's interval is
/// shaded across the plot as the reference band.
pub fn rank_plot_svg(result: &McbResult) -> String {
    let rows = result.mean_ranks.len();
    let height = MARGIN * 2.0 + 30.0 * rows as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &r in result.mean_ranks.values() {
        lo = lo.min(r - result.half_width);
        hi = hi.max(r + result.half_width);
    }
    let x = Axis::new(lo.min(1.0) - 0.1, hi.max(rows as f64) + 0.1, MARGIN + 100.0, WIDTH - MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let (ref_lo, ref_hi) = result.reference_interval;
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" fill-opacity="0.35"/>"##,
        x.map(ref_lo),
        MARGIN - 10.0,
        x.map(ref_hi) - x.map(ref_lo),
        height - 2.0 * MARGIN + 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">Mean rank (alpha = {}, {} cells, half-width {:.3})</text>"#,
        MARGIN,
        MARGIN / 2.0,
        result.alpha,
        result.cells,
        result.half_width
    );
    for (i, (name, &rank)) in result.mean_ranks.iter().enumerate() {
        let y = MARGIN + 15.0 + 30.0 * i as f64;
        let worse = result.significantly_worse.contains(name);
        let colour = if name == &result.best {
            "#08519c"
        } else if worse {
            "#cb181d"
        } else {
            "#404040"
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN + 90.0,
            y + 4.0,
            escape(name)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{colour}" stroke-width="2"/>"#,
            x.map(rank - result.half_width),
            x.map(rank + result.half_width)
        );
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{y:.2}" r="4" fill="{colour}"/>"#,
            x.map(rank)
        );
    }
    let axis_y = height - MARGIN + 15.0;
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
        x.from, x.to
    );
    for tick in 1..=rows {
        let tx = x.map(tick as f64);
        let _ = writeln!(
            s,
            r#"<text x="{tx:.2}" y="{:.2}" text-anchor="middle">{tick}</text>"#,
            axis_y + 15.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// History tail, optional actuals, point forecast and interval band.
/// Unbounded band edges are drawn at the plot border.
pub fn forecast_band_svg(
    title: &str,
    history: &[f64],
    actual: Option<&[f64]>,
    point: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> String {
    let height = 360.0;
    let h0 = history.len();
    let total = h0 + point.len();
    let finite = history
        .iter()
        .chain(point)
        .chain(lower)
        .chain(upper.iter().filter(|v| v.is_finite()))
        .chain(actual.unwrap_or(&[]));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in finite {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = 0.05 * (hi - lo).max(1e-9);
    let x = Axis::new(0.0, total.saturating_sub(1).max(1) as f64, MARGIN, WIDTH - MARGIN);
    let y = Axis::new(lo - pad, hi + pad, height - MARGIN, MARGIN);
    let clamp = |v: f64| if v.is_finite() { y.map(v) } else { y.to };
    let polyline = |values: &[f64], offset: usize| {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x.map((offset + i) as f64), clamp(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN:.2}" y="{:.2}">{}</text>"#, MARGIN / 2.0, escape(title));
    if !point.is_empty() {
        let mut band: Vec<String> = upper
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x.map((h0 + i) as f64), clamp(v)))
            .collect();
        band.extend(
            lower
                .iter()
                .enumerate()
                .rev()
                .map(|(i, &v)| format!("{:.2},{:.2}", x.map((h0 + i) as f64), clamp(v))),
        );
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#fdae6b" fill-opacity="0.45" stroke="none"/>"##,
            band.join(" ")
        );
    }
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#404040" stroke-width="1.2"/>"##,
        polyline(history, 0)
    );
    if let Some(a) = actual {
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#2171b5" stroke-width="1.2"/>"##,
            polyline(a, h0)
        );
    }
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#d94801" stroke-width="1.6"/>"##,
        polyline(point, h0)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
        x.map(h0 as f64 - 0.5),
        y.from,
        y.to
    );
    for (frac, label) in [(0.0, lo - pad), (1.0, hi + pad)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label:.2}</text>"#,
            MARGIN - 5.0,
            y.from + frac * (y.to - y.from) + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
