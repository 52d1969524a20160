//! Minimal SVG line and bar charts.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

pub(crate) struct Line {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

pub(crate) struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub lines: Vec<Line>,
    /// Labelled horizontal reference lines.
    pub thresholds: Vec<(String, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
        (LEFT + W - RIGHT) / 2.0,
        escape(title),
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(x_label),
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        escape(y_label),
    );
    let _ = writeln!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>",
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

impl LinePlot {
    pub fn render(&self) -> String {
        let xs = self.lines.iter().flat_map(|l| l.points.iter().map(|p| p.0));
        let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (x0, x1) = if x0.is_finite() && x1 > x0 { (x0, x1) } else { (0.0, 1.0) };
        let ys = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter().map(|p| p.1))
            .chain(self.thresholds.iter().map(|t| t.1))
            .filter(|y| y.is_finite() && (!self.log_y || *y > 0.0));
        let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
        if !y0.is_finite() {
            (y0, y1) = if self.log_y { (1e-3, 1.0) } else { (0.0, 1.0) };
        }
        let tf = |y: f64| if self.log_y { y.max(y0).log10() } else { y };
        let (mut t0, mut t1) = (tf(y0), tf(y1));
        if !self.log_y {
            t0 = t0.min(0.0);
        }
        if t1 <= t0 {
            t1 = t0 + 1.0;
        }
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + ph - (tf(y) - t0) / (t1 - t0) * ph;

        let mut out = String::new();
        header(&mut out, &self.title, &self.x_label, &self.y_label);
        for k in 0..=4 {
            let t = t0 + (t1 - t0) * k as f64 / 4.0;
            let v = if self.log_y { 10f64.powf(t) } else { t };
            let y = TOP + ph - ph * k as f64 / 4.0;
            let _ = writeln!(
                out,
                "<line x1=\"{LEFT}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                tick_label(v)
            );
            let x = x0 + (x1 - x0) * k as f64 / 4.0;
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                px(x),
                TOP + ph + 16.0,
                tick_label(x)
            );
        }
        for (label, y) in &self.thresholds {
            let _ = writeln!(
                out,
                "<line x1=\"{LEFT}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"black\" stroke-dasharray=\"2,3\"/><text x=\"{2:.1}\" y=\"{3:.1}\" text-anchor=\"end\" font-size=\"10\">{4}</text>",
                py(*y),
                LEFT + pw,
                LEFT + pw - 4.0,
                py(*y) - 4.0,
                escape(label)
            );
        }
        for (k, line) in self.lines.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> = line
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
                .collect();
            let dash = if line.dashed { " stroke-dasharray=\"6,3\"" } else { "" };
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>",
                pts.join(" ")
            );
            let ly = TOP + 10.0 + 16.0 * k as f64;
            let _ = writeln!(
                out,
                "<line x1=\"{0:.1}\" y1=\"{ly:.1}\" x2=\"{1:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/><text x=\"{2:.1}\" y=\"{3:.1}\">{4}</text>",
                LEFT + pw + 10.0,
                LEFT + pw + 34.0,
                LEFT + pw + 40.0,
                ly + 4.0,
                escape(&line.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

pub(crate) struct BarChart {
    pub title: String,
    pub y_label: String,
    /// Category labels along x.
    pub groups: Vec<String>,
    /// One labelled bar per group for every entry.
    pub bars: Vec<(String, Vec<f64>)>,
}

impl BarChart {
    pub fn render(&self) -> String {
        let ymax = self
            .bars
            .iter()
            .flat_map(|b| b.1.iter().copied())
            .filter(|v| v.is_finite())
            .fold(0.0_f64, f64::max);
        let ymax = if ymax > 0.0 { ymax * 1.1 } else { 1.0 };
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let mut out = String::new();
        header(&mut out, &self.title, "", &self.y_label);
        for k in 0..=4 {
            let v = ymax * k as f64 / 4.0;
            let y = TOP + ph - ph * k as f64 / 4.0;
            let _ = writeln!(
                out,
                "<line x1=\"{LEFT}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                tick_label(v)
            );
        }
        let gw = pw / self.groups.len().max(1) as f64;
        let bw = gw * 0.8 / self.bars.len().max(1) as f64;
        for (g, name) in self.groups.iter().enumerate() {
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                LEFT + gw * (g as f64 + 0.5),
                TOP + ph + 16.0,
                escape(name)
            );
            for (b, (_, values)) in self.bars.iter().enumerate() {
                let v = values.get(g).copied().filter(|v| v.is_finite()).unwrap_or(0.0);
                let h = v / ymax * ph;
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                    LEFT + gw * g as f64 + gw * 0.1 + bw * b as f64,
                    TOP + ph - h,
                    bw,
                    h,
                    PALETTE[b % PALETTE.len()]
                );
            }
        }
        for (b, (label, _)) in self.bars.iter().enumerate() {
            let ly = TOP + 10.0 + 16.0 * b as f64;
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
                LEFT + pw + 10.0,
                ly - 5.0,
                PALETTE[b % PALETTE.len()],
                LEFT + pw + 28.0,
                ly + 4.0,
                escape(label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}
