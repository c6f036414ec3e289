//! Minimal SVG writer. Coordinates are printed with two decimals so equal
//! inputs always give byte-identical files.

use std::fmt::Write as _;

pub struct Svg {
    body: String,
    width: f64,
    height: f64,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<line class="{class}" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}"/>"#
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect class="{class}" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}"/>"#
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, class: &str) {
        let _ = writeln!(self.body, r#"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}"/>"#);
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], class: &str) {
        let pts: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(self.body, r#"<polyline class="{class}" points="{}"/>"#, pts.join(" "));
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, class: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text class="{class}" x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#,
            esc(s)
        );
    }

    /// Text rotated -90 degrees about its anchor point.
    pub fn vtext(&mut self, x: f64, y: f64, class: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text class="{class}" x="{x:.2}" y="{y:.2}" text-anchor="end" transform="rotate(-90 {x:.2} {y:.2})">{}</text>"#,
            esc(s)
        );
    }

    pub fn finish(self, title: &str) -> String {
        format!(
            concat!(
                r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#,
                "\n<title>{t}</title>\n",
                "<style>\n",
                "line, polyline, rect {{ stroke: #222; stroke-width: 1; fill: none; }}\n",
                "rect.box {{ fill: #cfe0f1; }}\n",
                "circle.outlier {{ fill: none; stroke: #222; }}\n",
                "line.median {{ stroke-width: 2; }}\n",
                "text {{ font-family: sans-serif; font-size: 11px; }}\n",
                "text.leaf {{ font-size: 7px; }}\n",
                "text.title {{ font-size: 13px; }}\n",
                "</style>\n",
                r#"<rect x="0" y="0" width="{w:.0}" height="{h:.0}" style="fill: #fff; stroke: none;"/>"#,
                "\n{body}</svg>\n"
            ),
            w = self.width,
            h = self.height,
            t = esc(title),
            body = self.body
        )
    }
}

/// About five round tick values covering [lo, hi].
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

pub fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}
