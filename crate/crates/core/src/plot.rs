//! Minimal deterministic SVG renderers for report figures.
//!
//! Output depends only on the data: fixed canvas size, fixed font, coordinates
//! printed with two decimals, no timestamps or ids.

use std::fmt::Write as _;

use crate::metrics::RocCurve;
use crate::pipelines::{mean_roc_curve, ScatterData};
use crate::rsa::Rsm;

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Maps data coordinates into the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if !(lo.is_finite() && hi.is_finite()) {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Frame { x: widen(x), y: widen(y) }
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

struct Svg {
    out: String,
}

impl Svg {
    fn new(title: &str) -> Self {
        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="DejaVu Sans, sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title)).unwrap();
        Svg { out }
    }

    fn axes(&mut self, f: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        writeln!(self.out, r#"<path d="M{x0:.2} {y0:.2} L{x0:.2} {y1:.2} L{x1:.2} {y1:.2}" fill="none" stroke="black"/>"#).unwrap();
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let vy = f.y.0 + t * (f.y.1 - f.y.0);
            let py = f.py(vy);
            writeln!(self.out, r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/>"#, x0 - 4.0).unwrap();
            writeln!(self.out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, tick(vy)).unwrap();
            if x_ticks {
                let vx = f.x.0 + t * (f.x.1 - f.x.0);
                let px = f.px(vx);
                writeln!(self.out, r#"<line x1="{px:.2}" y1="{y1:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, y1 + 4.0).unwrap();
                writeln!(self.out, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y1 + 18.0, tick(vx)).unwrap();
            }
        }
        writeln!(self.out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, esc(x_label)).unwrap();
        writeln!(
            self.out,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(y_label)
        )
        .unwrap();
    }

    fn polyline(&mut self, f: &Frame, pts: &[(f64, f64)], style: &str) {
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { " L" }, f.px(*x), f.py(*y)).unwrap();
        }
        writeln!(self.out, r#"<path d="{d}" fill="none" {style}/>"#).unwrap();
    }

    fn legend(&mut self, entries: &[(String, String)]) {
        for (i, (color, label)) in entries.iter().enumerate() {
            let y = TOP + 10.0 + 16.0 * i as f64;
            let x = W - RIGHT - 170.0;
            writeln!(self.out, r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, y - 9.0).unwrap();
            writeln!(self.out, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 14.0, esc(label)).unwrap();
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Thin per-split ROC curves, a thick vertical-average mean curve and a
/// dashed chance diagonal.
pub fn roc_svg(title: &str, curves: &[RocCurve]) -> String {
    let f = Frame::new((0.0, 1.0), (0.0, 1.0));
    let mut svg = Svg::new(title);
    svg.axes(&f, "false positive rate", "true positive rate", true);
    svg.polyline(&f, &[(0.0, 0.0), (1.0, 1.0)], r##"stroke="#888888" stroke-dasharray="6 4""##);
    for c in curves {
        let pts: Vec<(f64, f64)> = c.fpr.iter().copied().zip(c.tpr.iter().copied()).collect();
        svg.polyline(&f, &pts, r##"stroke="#1f77b4" stroke-opacity="0.35" stroke-width="0.8""##);
    }
    let mut legend = vec![("#1f77b4".to_string(), format!("splits ({})", curves.len()))];
    if !curves.is_empty() {
        svg.polyline(&f, &mean_roc_curve(curves, 101), r##"stroke="#d62728" stroke-width="3""##);
        let mean_auc = curves.iter().map(|c| c.auc).sum::<f64>() / curves.len() as f64;
        legend.push(("#d62728".into(), format!("vertical mean, AUC {mean_auc:.3}")));
    }
    legend.push(("#888888".into(), "chance".into()));
    svg.legend(&legend);
    svg.finish()
}

/// Vertical bars with optional error whiskers (e.g. per-descriptor scores).
pub fn bar_svg(title: &str, y_label: &str, labels: &[String], values: &[f64], errors: &[Option<f64>]) -> String {
    let (mut lo, mut hi) = range(
        values
            .iter()
            .zip(errors.iter().chain(std::iter::repeat(&None)))
            .flat_map(|(v, e)| [v - e.unwrap_or(0.0), v + e.unwrap_or(0.0)]),
    );
    lo = lo.min(0.0);
    hi = hi.max(0.0);
    let f = Frame::new((0.0, labels.len().max(1) as f64), (lo, hi));
    let mut svg = Svg::new(title);
    svg.axes(&f, "", y_label, false);
    let slot = (W - LEFT - RIGHT) / labels.len().max(1) as f64;
    let zero = f.py(0.0);
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.15;
        let cx = LEFT + slot * (i as f64 + 0.5);
        if v.is_finite() {
            let y = f.py(v);
            writeln!(
                svg.out,
                r##"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4"/>"##,
                y.min(zero),
                slot * 0.7,
                (y - zero).abs()
            )
            .unwrap();
            if let Some(Some(e)) = errors.get(i) {
                writeln!(
                    svg.out,
                    r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                    f.py(v - e),
                    f.py(v + e)
                )
                .unwrap();
            }
        }
        let ly = H - BOTTOM + 12.0;
        writeln!(
            svg.out,
            r#"<text x="{cx:.2}" y="{ly:.2}" text-anchor="end" font-size="9" transform="rotate(-45 {cx:.2} {ly:.2})">{}</text>"#,
            esc(label)
        )
        .unwrap();
    }
    svg.finish()
}

/// One line per named series, e.g. RSA r against layer index.
pub fn line_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let all = || series.iter().flat_map(|(_, pts)| pts.iter());
    let f = Frame::new(range(all().map(|p| p.0)), range(all().map(|p| p.1)));
    let mut svg = Svg::new(title);
    svg.axes(&f, x_label, y_label, true);
    let mut legend = Vec::new();
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let finite: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        svg.polyline(&f, &finite, &format!(r#"stroke="{color}" stroke-width="2""#));
        for (x, y) in &finite {
            writeln!(svg.out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, f.px(*x), f.py(*y)).unwrap();
        }
        legend.push((color.to_string(), name.clone()));
    }
    svg.legend(&legend);
    svg.finish()
}

/// PC1/PC2 scatter: broad categories filled, narrow categories outlined.
pub fn scatter_svg(title: &str, data: &ScatterData) -> String {
    let f = Frame::new(range(data.points.iter().map(|p| p.pc1)), range(data.points.iter().map(|p| p.pc2)));
    let mut svg = Svg::new(title);
    svg.axes(
        &f,
        &format!("PC1 ({:.3})", data.explained_variance[0]),
        &format!("PC2 ({:.3})", data.explained_variance[1]),
        true,
    );
    for p in &data.points {
        let fill = match &p.broad {
            Some(b) => PALETTE[data.broad.iter().position(|x| x == b).unwrap_or(0) % PALETTE.len()],
            None => "#cccccc",
        };
        let stroke = match p.narrow.first() {
            Some(n) => {
                let k = data.narrow.iter().position(|x| x == n).unwrap_or(0) + data.broad.len();
                format!(r#" stroke="{}" stroke-width="1.5""#, PALETTE[k % PALETTE.len()])
            }
            None => String::new(),
        };
        writeln!(
            svg.out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{fill}" fill-opacity="0.7"{stroke}/>"#,
            f.px(p.pc1),
            f.py(p.pc2)
        )
        .unwrap();
    }
    let mut legend: Vec<(String, String)> = data
        .broad
        .iter()
        .enumerate()
        .map(|(i, b)| (PALETTE[i % PALETTE.len()].to_string(), b.clone()))
        .collect();
    legend.extend(
        data.narrow
            .iter()
            .enumerate()
            .map(|(i, n)| (PALETTE[(i + data.broad.len()) % PALETTE.len()].to_string(), format!("{n} (outline)"))),
    );
    svg.legend(&legend);
    svg.finish()
}

/// Heatmap on a diverging scale over [-1, 1]; masked cells are light grey.
pub fn heatmap_svg(title: &str, rsm: &Rsm) -> String {
    let n = rsm.odorants.len().max(1);
    let mut svg = Svg::new(title);
    let size = (H - TOP - BOTTOM).min(W - LEFT - RIGHT);
    let cell = size / n as f64;
    for i in 0..rsm.odorants.len() {
        for j in 0..rsm.odorants.len() {
            let color = if rsm.mask[[i, j]] {
                diverging(rsm.matrix[[i, j]])
            } else {
                "#eeeeee".to_string()
            };
            writeln!(
                svg.out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{color}"/>"#,
                LEFT + cell * j as f64,
                TOP + cell * i as f64
            )
            .unwrap();
        }
    }
    if rsm.odorants.len() <= 40 {
        for (i, name) in rsm.odorants.iter().enumerate() {
            writeln!(
                svg.out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="8">{}</text>"#,
                LEFT - 4.0,
                TOP + cell * (i as f64 + 0.5) + 3.0,
                esc(name)
            )
            .unwrap();
        }
    }
    svg.finish()
}

/// Blue (-1) to white (0) to red (+1).
fn diverging(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::roc_curve;

    #[test]
    fn roc_layout() {
        let c = roc_curve(&[0.9, 0.2, 0.6, 0.4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let svg = roc_svg("t", &[c.clone(), c]);
        assert_eq!(svg.matches("stroke-width=\"0.8\"").count(), 2);
        assert_eq!(svg.matches("stroke-width=\"3\"").count(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn escapes_text() {
        let svg = bar_svg("a<b", "y", &["x&y".into()], &[0.5], &[Some(0.1)]);
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
    }

    #[test]
    fn diverging_endpoints() {
        assert_eq!(diverging(1.0), "#ff0000");
        assert_eq!(diverging(0.0), "#ffffff");
        assert_eq!(diverging(-1.0), "#0000ff");
    }
}
