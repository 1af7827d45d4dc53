//! Minimal self-contained SVG line plots. Output is a pure function of the
//! input — no timestamps, no ids, no randomness — so rerunning a pipeline
//! reproduces figures byte for byte.

use std::fmt::Write;

const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotConfig {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: u32,
    pub height: u32,
    /// log₁₀ y axis; points with y ≤ 0 are dropped
    pub log_y: bool,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            width: 760,
            height: 420,
            log_y: false,
        }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Largest "nice" step (1, 2 or 5 × 10^k) that yields at most `max_ticks`
/// intervals over the span.
fn nice_step(span: f64, max_ticks: usize) -> f64 {
    let raw = span / max_ticks as f64;
    let mag = 10f64.powf(raw.log10().floor());
    for m in [1.0, 2.0, 5.0, 10.0] {
        if mag * m >= raw {
            return mag * m;
        }
    }
    mag * 10.0
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 6);
    let first = (lo / step).ceil();
    let mut t = Vec::new();
    let mut k = first;
    while k * step <= hi + 1e-12 * step {
        t.push(k * step);
        k += 1.0;
    }
    t
}

/// Decade ticks for a log₁₀ axis (limits already in log space).
fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let mut t = Vec::new();
    let mut k = lo.ceil() as i64;
    // thin out to at most ~8 labels on very wide ranges
    let stride = (((hi - lo) / 8.0).ceil() as i64).max(1);
    while (k as f64) <= hi + 1e-12 {
        t.push(k as f64);
        k += stride;
    }
    t
}

fn fmt_tick(v: f64, log: bool) -> String {
    if log {
        return format!("1e{v:.0}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.1e}")
    }
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w
    }
    fn py(&self, y: f64) -> f64 {
        // SVG y grows downward
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h
    }
}

/// Render series as polylines in data order (so hysteresis loops survive).
/// Non-finite points are skipped; on a log axis so are non-positive ones.
pub fn line_plot(cfg: &PlotConfig, series: &[Series]) -> String {
    let map_y = |y: f64| if cfg.log_y { y.log10() } else { y };
    let keep = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!cfg.log_y || y > 0.0);

    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for p in s.points.iter().filter(|p| keep(p)) {
            xmin = xmin.min(p.0);
            xmax = xmax.max(p.0);
            let y = map_y(p.1);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() {
        // nothing plottable: still produce a valid empty axes frame
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if xmax - xmin < 1e-300 {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if ymax - ymin < 1e-300 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    // breathing room on the y axis
    let pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let f = Frame { x0: 64.0, y0: 28.0, w: w - 64.0 - 16.0, h: h - 28.0 - 44.0, xmin, xmax, ymin, ymax };

    let mut out = String::with_capacity(4096);
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n",
        cfg.width, cfg.height
    );
    let _ = write!(
        out,
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"white\" stroke=\"#333\"/>\n",
        f.x0, f.y0, f.w, f.h
    );
    if !cfg.title.is_empty() {
        let _ = write!(
            out,
            "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
            f.x0 + f.w / 2.0,
            esc(&cfg.title)
        );
    }

    for t in linear_ticks(f.xmin, f.xmax) {
        let x = f.px(t);
        let _ = write!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            f.y0,
            f.y0 + f.h
        );
        let _ = write!(
            out,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            f.y0 + f.h + 14.0,
            fmt_tick(t, false)
        );
    }
    let yticks = if cfg.log_y { log_ticks(f.ymin, f.ymax) } else { linear_ticks(f.ymin, f.ymax) };
    for t in yticks {
        let y = f.py(t);
        let _ = write!(
            out,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            f.x0,
            f.x0 + f.w
        );
        let _ = write!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            f.x0 - 6.0,
            y + 4.0,
            fmt_tick(t, cfg.log_y)
        );
    }
    if !cfg.x_label.is_empty() {
        let _ = write!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            f.x0 + f.w / 2.0,
            f.y0 + f.h + 34.0,
            esc(&cfg.x_label)
        );
    }
    if !cfg.y_label.is_empty() {
        let _ = write!(
            out,
            "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
            f.y0 + f.h / 2.0,
            f.y0 + f.h / 2.0,
            esc(&cfg.y_label)
        );
    }

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for p in s.points.iter().filter(|p| keep(p)) {
            let _ = write!(pts, "{:.2},{:.2} ", f.px(p.0), f.py(map_y(p.1)));
        }
        let _ = write!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.3\"/>\n",
            pts.trim_end()
        );
    }

    // legend under the frame, left-aligned swatches
    let mut lx = f.x0;
    let ly = f.y0 + f.h + 34.0;
    for (i, s) in series.iter().enumerate() {
        if s.label.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            out,
            "<line x1=\"{lx:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            ly - 4.0,
            lx + 16.0,
            ly - 4.0
        );
        let _ = write!(out, "<text x=\"{:.1}\" y=\"{ly:.1}\">{}</text>\n", lx + 20.0, esc(&s.label));
        lx += 26.0 + 7.0 * s.label.len() as f64;
    }

    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> (PlotConfig, Vec<Series>) {
        let cfg = PlotConfig {
            title: "demo & <check>".into(),
            x_label: "t (s)".into(),
            y_label: "err".into(),
            ..PlotConfig::default()
        };
        let s = vec![
            Series {
                label: "a<b".into(),
                points: (0..50).map(|i| (i as f64 * 0.1, (i as f64 * 0.3).sin())).collect(),
            },
            Series { label: "flat".into(), points: vec![(0.0, 0.2), (5.0, 0.2)] },
        ];
        (cfg, s)
    }

    #[test]
    fn output_is_deterministic_and_escaped() {
        let (cfg, s) = demo();
        let a = line_plot(&cfg, &s);
        let b = line_plot(&cfg, &s);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("demo &amp; &lt;check&gt;"));
        assert!(a.contains("a&lt;b"));
        assert!(!a.contains("a<b\""));
    }

    #[test]
    fn log_axis_spaces_decades_evenly() {
        let cfg = PlotConfig { log_y: true, ..PlotConfig::default() };
        let s = vec![Series {
            label: String::new(),
            points: vec![(0.0, 1.0), (1.0, 10.0), (2.0, 100.0)],
        }];
        let svg = line_plot(&cfg, &s);
        let pts = svg
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        let ys: Vec<f64> = pts
            .split_whitespace()
            .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(ys.len(), 3);
        let d1 = ys[0] - ys[1];
        let d2 = ys[1] - ys[2];
        assert!((d1 - d2).abs() < 0.05, "unequal decade spacing: {d1} vs {d2}");
        // non-positive values must vanish on a log axis
        let s2 = vec![Series { label: String::new(), points: vec![(0.0, -1.0), (1.0, 1.0), (2.0, 10.0)] }];
        let svg2 = line_plot(&cfg, &s2);
        let pts2 = svg2.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts2.split_whitespace().count(), 2);
    }

    #[test]
    fn degenerate_inputs_still_render() {
        let cfg = PlotConfig::default();
        for s in [
            vec![],
            vec![Series { label: "x".into(), points: vec![] }],
            vec![Series { label: "x".into(), points: vec![(1.0, 2.0)] }],
            vec![Series { label: "x".into(), points: vec![(f64::NAN, 1.0), (1.0, f64::INFINITY)] }],
        ] {
            let svg = line_plot(&cfg, &s);
            assert!(svg.contains("</svg>"));
            assert!(!svg.contains("NaN"));
            assert!(!svg.contains("inf"));
        }
    }
}
