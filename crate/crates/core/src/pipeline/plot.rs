use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::metrics::{RocCurve, VerificationReport};

const WIDTH: u32 = 480;
const HEIGHT: u32 = 320;
const MARGIN: f64 = 36.0;
const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
];

/// One polyline with optional vertical error bars.
#[derive(Debug, Clone, Default)]
pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub errors: Vec<f64>,
}

struct Canvas {
    img: RgbImage,
    x: (f64, f64),
    y: (f64, f64),
}

impl Canvas {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let mut c = Self {
            img: RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255])),
            x,
            y,
        };
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let gx = x.0 + f * (x.1 - x.0);
            let gy = y.0 + f * (y.1 - y.0);
            c.line((gx, y.0), (gx, y.1), [225, 225, 225]);
            c.line((x.0, gy), (x.1, gy), [225, 225, 225]);
        }
        c.line((x.0, y.0), (x.1, y.0), [0, 0, 0]);
        c.line((x.0, y.0), (x.0, y.1), [0, 0, 0]);
        c
    }

    fn to_px(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let w = WIDTH as f64 - 2.0 * MARGIN;
        let h = HEIGHT as f64 - 2.0 * MARGIN;
        let px = MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * w;
        let py = HEIGHT as f64 - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * h;
        (px, py)
    }

    fn put(&mut self, px: i64, py: i64, color: [u8; 3]) {
        if px >= 0 && py >= 0 && (px as u32) < WIDTH && (py as u32) < HEIGHT {
            self.img.put_pixel(px as u32, py as u32, Rgb(color));
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
        let (ax, ay) = self.to_px(a);
        let (bx, by) = self.to_px(b);
        let n = (bx - ax).abs().max((by - ay).abs()).ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            self.put((ax + t * (bx - ax)).round() as i64, (ay + t * (by - ay)).round() as i64, color);
        }
    }

    fn marker(&mut self, p: (f64, f64), color: [u8; 3]) {
        let (px, py) = self.to_px(p);
        for dx in -2..=2 {
            for dy in -2..=2 {
                self.put(px.round() as i64 + dx, py.round() as i64 + dy, color);
            }
        }
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Draws every series on shared axes and writes a PNG.
pub fn line_plot(path: &Path, series: &[Series]) -> Result<()> {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| {
        s.points.iter().enumerate().flat_map(move |(i, p)| {
            let e = s.errors.get(i).copied().unwrap_or(0.0);
            [p.1 - e, p.1 + e]
        })
    });
    let mut canvas = Canvas::new(padded_range(xs), padded_range(ys));
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for w in s.points.windows(2) {
            canvas.line(w[0], w[1], color);
        }
        for (i, &p) in s.points.iter().enumerate() {
            canvas.marker(p, color);
            if let Some(&e) = s.errors.get(i) {
                if e > 0.0 {
                    canvas.line((p.0, p.1 - e), (p.0, p.1 + e), color);
                }
            }
        }
    }
    canvas.img.save(path)?;
    Ok(())
}

fn file_stem(metric: &str) -> String {
    metric
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// One PNG per metric: mean against lead time with seed spread as bars.
pub fn plot_report(report: &VerificationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for metric in report.metric_names() {
        let mut s = Series::default();
        for lead in report.lead_times() {
            if let Some(row) = report.get(&metric, lead) {
                if let Some(mean) = row.mean {
                    s.points.push((lead as f64, mean));
                    s.errors.push(row.std.unwrap_or(0.0));
                }
            }
        }
        if s.points.is_empty() {
            continue;
        }
        let path = dir.join(format!("{}.png", file_stem(&metric)));
        line_plot(&path, &[s])?;
        written.push(path);
    }
    Ok(written)
}

/// ROC points joined through the (0,0) and (1,1) anchors, with the chance
/// diagonal for reference.
pub fn plot_roc(curve: &RocCurve, path: &Path) -> Result<()> {
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.false_alarm_rate, p.hit_rate)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let diagonal = Series {
        points: vec![(0.0, 0.0), (1.0, 1.0)],
        errors: Vec::new(),
    };
    line_plot(path, &[Series { points: pts, errors: Vec::new() }, diagonal])
}
