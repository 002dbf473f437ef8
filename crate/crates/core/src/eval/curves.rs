use crate::error::{Error, Result};
use crate::training::{TrainLog, TrainRecord};
use std::fmt::Write as _;

/// One named series of (x, y) points.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub series: String,
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    /// `field` of every log record against its step.
    pub fn from_steps(series: impl Into<String>, log: &TrainLog, field: impl Fn(&TrainRecord) -> f64) -> Self {
        Self {
            series: series.into(),
            points: log.records.iter().map(|r| (r.step as f64, field(r))).collect(),
        }
    }

    /// Per-epoch mean of `field`, x = epoch number starting at 1.
    pub fn from_epochs(series: impl Into<String>, log: &TrainLog, field: impl Fn(&TrainRecord) -> f64) -> Self {
        Self {
            series: series.into(),
            points: log
                .epoch_means(field)
                .into_iter()
                .enumerate()
                .map(|(e, v)| ((e + 1) as f64, v))
                .collect(),
        }
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn max(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest |y[i+1] − y[i]| among points in the last quarter of the
    /// curve, as a fraction of the curve's maximum.
    pub fn last_quartile_change(&self) -> f64 {
        let n = self.points.len();
        if n < 2 {
            return 0.0;
        }
        let start = (3 * n / 4).min(n - 2);
        let biggest = self.points[start..]
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).abs())
            .fold(0.0, f64::max);
        biggest / self.max().abs()
    }
}

/// Long-format CSV: `step,series,value`.
pub fn curves_csv(curves: &[Curve]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "series", "value"])?;
    for c in curves {
        for (x, y) in &c.points {
            w.write_record([x.to_string(), c.series.clone(), y.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Static line plot of the curves as an SVG document.
pub fn curves_svg(curves: &[Curve], title: &str, x_label: &str, y_label: &str) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 170.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;
    let finite = curves.iter().flat_map(|c| c.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    y0 = y0.min(0.0);
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.4}</text>"#, sx(xv), TOP + ph + 18.0, fmt_tick(xv));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, sy(yv) + 4.0, fmt_tick(yv));
        let _ = writeln!(s, r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, LEFT + pw, sy(yv), sy(yv));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, W - RIGHT + 12.0, W - RIGHT + 32.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, W - RIGHT + 38.0, ly + 4.0, escape(&c.series));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(values: &[(usize, f64)]) -> TrainLog {
        TrainLog {
            records: values
                .iter()
                .enumerate()
                .map(|(i, &(epoch, l2))| TrainRecord {
                    step: i + 1,
                    epoch,
                    mlm_loss: 1.0,
                    penalty: 0.0,
                    total_loss: 1.0,
                    cross_lingual_l2: l2,
                    lr: 0.1,
                    timestamp: None,
                })
                .collect(),
        }
    }

    #[test]
    fn epoch_curve_and_quartile_change() {
        let l = log(&[(0, 1.0), (0, 3.0), (1, 4.0), (2, 4.0), (3, 4.1)]);
        let c = Curve::from_epochs("x", &l, |r| r.cross_lingual_l2);
        assert_eq!(c.points, vec![(1.0, 2.0), (2.0, 4.0), (3.0, 4.0), (4.0, 4.1)]);
        assert!((c.last_quartile_change() - 0.1 / 4.1).abs() < 1e-12);
        assert_eq!(Curve::from_steps("s", &l, |r| r.cross_lingual_l2).points.len(), 5);
    }

    #[test]
    fn csv_and_svg() {
        let c = Curve {
            series: "a<b".into(),
            points: vec![(1.0, 0.5), (2.0, 0.25)],
        };
        let csv = curves_csv(std::slice::from_ref(&c)).unwrap();
        assert_eq!(csv, "step,series,value\n1,a<b,0.5\n2,a<b,0.25\n");
        let svg = curves_svg(&[c], "t", "step", "l2");
        assert!(svg.starts_with("<svg") && svg.contains("a&lt;b") && svg.contains("<polyline"));
    }
}
