use std::fmt::Write;

use sinkdem::data::MetricsRecord;

pub const WINDOW: usize = 10;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Trailing moving average; the first entries average what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let s = &values[(i + 1).saturating_sub(w)..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

type Column = (&'static str, fn(&MetricsRecord) -> Option<f64>);

pub const LOSS_COLUMNS: [Column; 6] = [
    ("mse", |r| r.mse),
    ("L_P", |r| r.l_p),
    ("L_str", |r| r.l_str),
    ("L_ADV", |r| r.l_adv),
    ("L_OT", |r| r.l_ot),
    ("L_DA", |r| r.l_da),
];

pub const GRAD_COLUMNS: [Column; 2] = [("g_first", |r| r.g_first), ("g_hidden", |r| r.g_hidden)];

/// Smoothed series of one column; non-finite entries are dropped.
pub fn column_series(label: &str, records: &[MetricsRecord], get: fn(&MetricsRecord) -> Option<f64>) -> Series {
    let raw: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| get(r).filter(|v| v.is_finite()).map(|v| (r.epoch as f64, v)))
        .collect();
    let ys: Vec<f64> = raw.iter().map(|p| p.1).collect();
    let smooth = moving_average(&ys, WINDOW);
    Series {
        label: label.to_string(),
        points: raw.iter().zip(smooth).map(|(p, y)| (p.0, y)).collect(),
    }
}

fn panel(records: &[MetricsRecord], cols: &[Column]) -> Vec<Series> {
    cols.iter()
        .map(|(name, get)| column_series(name, records, *get))
        .filter(|s| !s.points.is_empty())
        .collect()
}

/// The per-run panels: losses and gradient norms against epoch.
pub fn run_panels(records: &[MetricsRecord]) -> Vec<(String, String)> {
    vec![
        ("loss.svg".into(), render("loss vs epoch", "epoch", "loss", &panel(records, &LOSS_COLUMNS))),
        (
            "grad.svg".into(),
            render("gradient spectral norm vs epoch", "epoch", "spectral norm", &panel(records, &GRAD_COLUMNS)),
        ),
    ]
}

/// One overlay per column across several labelled runs.
pub fn overlay_panels(runs: &[(String, Vec<MetricsRecord>)]) -> Vec<(String, String)> {
    [LOSS_COLUMNS[0], GRAD_COLUMNS[0], GRAD_COLUMNS[1]]
        .iter()
        .map(|(name, get)| {
            let series: Vec<Series> = runs
                .iter()
                .map(|(label, recs)| column_series(label, recs, *get))
                .collect();
            (format!("overlay_{name}.svg"), render(&format!("{name} vs epoch"), "epoch", name, &series))
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// A standalone SVG line chart. Output depends only on the arguments.
pub fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{}" y="{ly:.2}">{}</text></g>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            lx + 26.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_is_trailing() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
        assert_eq!(moving_average(&[2.0, 4.0], 10), vec![2.0, 3.0]);
        assert!(moving_average(&[], 10).is_empty());
    }

    #[test]
    fn non_finite_points_are_dropped() {
        let recs = vec![
            MetricsRecord { epoch: 1, mse: Some(0.5), ..Default::default() },
            MetricsRecord { epoch: 2, mse: Some(f64::NAN), ..Default::default() },
        ];
        assert_eq!(column_series("mse", &recs, |r| r.mse).points, vec![(1.0, 0.5)]);
    }

    #[test]
    fn labels_are_escaped() {
        let svg = render("a<b", "x", "y", &[]);
        assert!(svg.contains("a&lt;b"));
    }
}
