//! Minimal SVG line charts for error-decay plots.
//!
//! The study outputs want one picture: error against term count or
//! parameter, usually on a log scale. A polyline with axes and a legend is
//! not worth a plotting dependency, so this writes the markup directly.
//! Output is deterministic: same data, same bytes.

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] = [
    "#1f6f8b", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#2c3e50",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick labels in scientific form for log axes, plain otherwise.
fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.round() as i64)
    } else if v == v.round() && v.abs() < 1e6 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.3}")
    }
}

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let a = lo.floor() as i64;
        let b = hi.ceil() as i64;
        let step = (((b - a) as usize / 8).max(1)) as i64;
        return (a..=b).step_by(step as usize).map(|k| k as f64).collect();
    }
    let span = hi - lo;
    if span <= 0.0 {
        return vec![lo];
    }
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| span / s <= 6.5)
        .unwrap_or(mag * 10.0);
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = first;
    while t <= hi + 0.5 * step {
        out.push(t);
        t += step;
    }
    out
}

/// Render a line chart. With `log_y`, values at or below zero are dropped
/// from the scaling and their segments from the polylines.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    log_y: bool,
    series: &[Series],
) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            if log_y && y <= 0.0 {
                continue;
            }
            xs.push(x);
            ys.push(if log_y { y.log10() } else { y });
        }
    }
    let (x_lo, x_hi) = span_of(&xs);
    let (y_lo, y_hi) = span_of(&ys);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo).max(1e-300) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo).max(1e-300) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // Axes.
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T + plot_h),
        fmt(MARGIN_L + plot_w),
        fmt(MARGIN_T + plot_h)
    ));
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(MARGIN_L),
        fmt(MARGIN_T + plot_h)
    ));

    for t in ticks(x_lo, x_hi, false) {
        let px = sx(t);
        out.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
            fmt(px),
            fmt(MARGIN_T + plot_h),
            fmt(MARGIN_T + plot_h + 5.0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            fmt(px),
            fmt(MARGIN_T + plot_h + 18.0),
            tick_label(t, false)
        ));
    }
    for t in ticks(y_lo, y_hi, log_y) {
        let py = sy(t);
        if !(MARGIN_T - 1.0..=MARGIN_T + plot_h + 1.0).contains(&py) {
            continue;
        }
        out.push_str(&format!(
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"black\"/>\n",
            fmt(py),
            fmt(MARGIN_L - 5.0),
            fmt(MARGIN_L)
        ));
        out.push_str(&format!(
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#dddddd\"/>\n",
            fmt(py),
            fmt(MARGIN_L),
            fmt(MARGIN_L + plot_w)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            fmt(MARGIN_L - 8.0),
            fmt(py + 4.0),
            tick_label(t, log_y)
        ));
    }

    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        fmt(MARGIN_L + plot_w / 2.0),
        fmt(HEIGHT - 10.0),
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 16 {})\">{}</text>\n",
        fmt(MARGIN_T + plot_h / 2.0),
        fmt(MARGIN_T + plot_h / 2.0),
        escape(y_label)
    ));

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut runs: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for &(x, y) in &s.points {
            let drop = !x.is_finite() || !y.is_finite() || (log_y && y <= 0.0);
            if drop {
                if !runs.last().unwrap().is_empty() {
                    runs.push(Vec::new());
                }
                continue;
            }
            let yy = if log_y { y.log10() } else { y };
            runs.last_mut().unwrap().push((sx(x), sy(yy)));
        }
        for run in runs.iter().filter(|r| !r.is_empty()) {
            let pts: Vec<String> = run.iter().map(|&(x, y)| format!("{},{}", fmt(x), fmt(y))).collect();
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                pts.join(" ")
            ));
        }
        // Legend entry.
        let ly = MARGIN_T + 8.0 + 18.0 * si as f64;
        out.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            fmt(MARGIN_L + plot_w - 150.0),
            fmt(ly),
            fmt(MARGIN_L + plot_w - 126.0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
            fmt(MARGIN_L + plot_w - 120.0),
            fmt(ly + 4.0),
            escape(&s.label)
        ));
    }

    out.push_str("</svg>\n");
    out
}

fn span_of(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (0.0, 1.0);
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Series> {
        vec![
            Series {
                label: "first".into(),
                points: (0..10).map(|k| (k as f64, 10f64.powi(-k))).collect(),
            },
            Series {
                label: "second".into(),
                points: (0..10).map(|k| (k as f64, 5.0 * 10f64.powi(-k))).collect(),
            },
        ]
    }

    #[test]
    fn chart_has_all_series_and_is_deterministic() {
        let s = sample();
        let a = line_chart("decay", "terms", "error", true, &s);
        let b = line_chart("decay", "terms", "error", true, &s);
        assert_eq!(a, b);
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("first"));
        assert!(a.contains("second"));
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn log_axis_drops_nonpositive_points() {
        let s = vec![Series {
            label: "mixed".into(),
            points: vec![(0.0, 1.0), (1.0, 0.0), (2.0, 1e-3)],
        }];
        let svg = line_chart("t", "x", "y", true, &s);
        // The zero splits the line into two single-point runs.
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn labels_are_escaped() {
        let s = vec![Series {
            label: "a<b".into(),
            points: vec![(0.0, 1.0), (1.0, 2.0)],
        }];
        let svg = line_chart("x & y", "in<", ">out", false, &s);
        assert!(svg.contains("x &amp; y"));
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("a<b"));
    }
}
