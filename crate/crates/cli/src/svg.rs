//! Hand-rolled SVG figures. Time runs along a red-to-pink color ramp.

use std::fmt::Write;

use ilvm_core::geometry::{OrientedBox, Point};

use crate::provenance::Provenance;

/// Ramp color for `u` in [0, 1]: hue sweeps from red through the spectrum
/// to pink.
pub fn ramp(u: f64) -> String {
    let h = 320.0 * u.clamp(0.0, 1.0);
    let (s, l) = (0.9, 0.5);
    let c = (1.0 - (2.0 * l - 1.0f64).abs()) * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let q = |v: f64| ((v + m) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", q(r), q(g), q(b))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// World-to-pixel mapping for one or more equally sized panels laid out
/// left to right. Pixel y grows downward, world y upward.
pub struct Canvas {
    min: Point,
    scale: f64,
    panel_w: f64,
    panel_h: f64,
    pad: f64,
    panels: usize,
    panel: usize,
    body: String,
}

impl Canvas {
    /// Fits `points` into panels of at most `size` pixels on the long side.
    pub fn fit<'a>(points: impl IntoIterator<Item = &'a Point>, size: f64, panels: usize) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            (lo, hi) = ([-1.0, -1.0], [1.0, 1.0]);
        }
        let margin = 3.0;
        let (w, h) = (
            (hi[0] - lo[0]).max(1.0) + 2.0 * margin,
            (hi[1] - lo[1]).max(1.0) + 2.0 * margin,
        );
        let scale = size / w.max(h);
        Self {
            min: [lo[0] - margin, lo[1] - margin],
            scale,
            panel_w: w * scale,
            panel_h: h * scale,
            pad: 10.0,
            panels: panels.max(1),
            panel: 0,
            body: String::new(),
        }
    }

    pub fn set_panel(&mut self, k: usize) {
        self.panel = k.min(self.panels - 1);
    }

    fn px(&self, p: Point) -> (f64, f64) {
        let ox = self.pad + self.panel as f64 * (self.panel_w + self.pad);
        (
            ox + (p[0] - self.min[0]) * self.scale,
            self.pad + self.panel_h - (p[1] - self.min[1]) * self.scale,
        )
    }

    /// Polyline from `start` through `pts`, each segment colored by time.
    pub fn time_polyline(&mut self, start: Point, pts: &[Point], width: f64, opacity: f64) {
        let n = pts.len().max(2) - 1;
        let mut prev = self.px(start);
        for (t, p) in pts.iter().enumerate() {
            let q = self.px(*p);
            let _ = writeln!(
                self.body,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="{width}" stroke-opacity="{opacity}" stroke-linecap="round"/>"#,
                prev.0,
                prev.1,
                q.0,
                q.1,
                ramp(t as f64 / n as f64)
            );
            prev = q;
        }
    }

    pub fn polyline(
        &mut self,
        pts: &[Point],
        stroke: &str,
        width: f64,
        opacity: f64,
        dashed: bool,
    ) {
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let dash = if dashed {
            r#" stroke-dasharray="4 3""#
        } else {
            ""
        };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}" stroke-opacity="{opacity}"{dash}/>"#,
            coords.join(" ")
        );
    }

    pub fn oriented_box(&mut self, b: &OrientedBox, stroke: &str, fill: &str, fill_opacity: f64) {
        let coords: Vec<String> = b
            .corners()
            .iter()
            .map(|p| {
                let (x, y) = self.px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="{fill}" fill-opacity="{fill_opacity}" stroke="{stroke}" stroke-width="1"/>"#,
            coords.join(" ")
        );
    }

    /// Caption at the top-left corner of the current panel.
    pub fn label(&mut self, text: &str) {
        let ox = self.pad + self.panel as f64 * (self.panel_w + self.pad);
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            ox + 4.0,
            self.pad + 14.0,
            escape(text)
        );
    }

    pub fn finish(self, prov: &Provenance) -> String {
        let w = self.pad + self.panels as f64 * (self.panel_w + self.pad);
        let h = self.panel_h + 2.0 * self.pad;
        let mut frames = String::new();
        for k in 0..self.panels {
            let _ = writeln!(
                frames,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#ffffff" stroke="#bbbbbb"/>"##,
                self.pad + k as f64 * (self.panel_w + self.pad),
                self.pad,
                self.panel_w,
                self.panel_h
            );
        }
        document(w, h, prov, &(frames + &self.body))
    }
}

fn document(w: f64, h: f64, prov: &Provenance, body: &str) -> String {
    let meta = serde_json::to_string(prov).expect("provenance always serializes");
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n<metadata>{}</metadata>\n<rect width=\"100%\" height=\"100%\" fill=\"#f4f4f4\"/>\n{body}</svg>\n",
        escape(&meta)
    )
}

/// Line plot of `(x, y)` points with y in [0, 1].
pub fn rate_curve(
    series: &[(f64, f64)],
    x_label: &str,
    y_label: &str,
    prov: &Provenance,
) -> String {
    let (w, h, m) = (480.0, 320.0, 50.0);
    let x_max = series.iter().map(|p| p.0).fold(0.0f64, f64::max).max(1e-9);
    let sx = |x: f64| m + x / x_max * (w - 2.0 * m);
    let sy = |y: f64| h - m - y.clamp(0.0, 1.0) * (h - 2.0 * m);
    let mut body = String::new();
    let _ = writeln!(
        body,
        r##"<polyline points="{m},{m} {m},{} {},{}" fill="none" stroke="#000000"/>"##,
        h - m,
        w - m,
        h - m
    );
    for k in 0..=4 {
        let y = k as f64 / 4.0;
        let x = x_max * k as f64 / 4.0;
        let _ = writeln!(
            body,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{y:.2}</text>"#,
            m - 4.0,
            sy(y) + 3.0
        );
        let _ = writeln!(
            body,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">{x:.2}</text>"#,
            sx(x),
            h - m + 14.0
        );
    }
    let pts: Vec<String> = series
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
        .collect();
    let _ = writeln!(
        body,
        r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##,
        pts.join(" ")
    );
    let _ = writeln!(
        body,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        body,
        r#"<text x="14" y="{:.2}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    document(w, h, prov, &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use ilvm_core::geometry::Pose2;

    #[test]
    fn ramp_runs_red_to_pink() {
        assert_eq!(ramp(0.0), "#f20d0d");
        assert_eq!(ramp(-1.0), ramp(0.0));
        let end = ramp(1.0);
        let r = u8::from_str_radix(&end[1..3], 16).unwrap();
        let g = u8::from_str_radix(&end[3..5], 16).unwrap();
        let b = u8::from_str_radix(&end[5..7], 16).unwrap();
        assert!(r > 200 && g < 40 && b > 100, "{end}");
    }

    #[test]
    fn documents_carry_provenance_and_escape_text() {
        let prov = Provenance::new("test", &ExperimentConfig::default());
        let mut c = Canvas::fit(&[[0.0, 0.0], [10.0, 5.0]], 200.0, 2);
        c.time_polyline([0.0, 0.0], &[[1.0, 0.0], [2.0, 1.0]], 2.0, 1.0);
        c.set_panel(1);
        c.oriented_box(
            &OrientedBox::new(Pose2::origin(), 4.0, 2.0),
            "#000",
            "#00f",
            0.3,
        );
        c.label("a < b & c");
        let svg = c.finish(&prov);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains(&prov.config_hash));
        assert!(svg.contains("a &lt; b &amp; c"));
        assert_eq!(svg.matches("<line").count(), 2);
        let curve = rate_curve(&[(0.0, 0.0), (1.0, 0.5)], "x", "y", &prov);
        assert!(curve.contains(&prov.config_hash));
    }
}
