//! Static raster charts for loss logs and metric reports.
//!
//! No text is rendered; series colours are fixed per loss term (see
//! [`SERIES`]) and documented in the README.

use image::{Rgb, RgbImage};
use vaesr_core::training::{moving_average, LogRecord};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 30;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);

/// Loss terms in drawing order with their colours.
pub const SERIES: [(&str, [u8; 3]); 7] = [
    ("total", [0, 0, 0]),
    ("reconstruction", [31, 119, 180]),
    ("kl", [255, 127, 14]),
    ("cycle_lowfreq", [44, 160, 44]),
    ("cycle_backproj", [214, 39, 40]),
    ("feature", [148, 103, 189]),
    ("adversarial", [140, 86, 75]),
];

fn term(r: &LogRecord, name: &str) -> f64 {
    if name == "total" {
        return r.losses.total;
    }
    r.losses.parts().iter().find(|(n, _)| *n == name).map_or(0.0, |(_, v)| *v)
}

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    let (x0, y1) = (MARGIN as i64, (HEIGHT - MARGIN) as i64);
    line(&mut img, (x0, MARGIN as i64), (x0, y1), AXIS);
    line(&mut img, (x0, y1), ((WIDTH - MARGIN) as i64, y1), AXIS);
    img
}

fn line(img: &mut RgbImage, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        if (0..img.width() as i64).contains(&x0) && (0..img.height() as i64).contains(&y0) {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Moving averages of every positive loss term on a shared log10 axis.
pub fn loss_curves(records: &[LogRecord]) -> RgbImage {
    let mut img = canvas();
    let window = (records.len() / 50).max(1);
    let series: Vec<(Vec<f64>, [u8; 3])> = SERIES
        .iter()
        .filter_map(|&(name, color)| {
            let values: Vec<f64> = records.iter().map(|r| term(r, name)).collect();
            if values.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
                return None;
            }
            Some((moving_average(&values, window).iter().map(|v| v.log10()).collect(), color))
        })
        .collect();
    let all = series.iter().flat_map(|(v, _)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return img;
    }
    let span = (hi - lo).max(1e-12);
    let (plot_w, plot_h) = ((WIDTH - 2 * MARGIN) as f64, (HEIGHT - 2 * MARGIN) as f64);
    for (values, color) in &series {
        let n = values.len().max(2) - 1;
        let point = |i: usize, v: f64| {
            let x = MARGIN as f64 + plot_w * i as f64 / n as f64;
            let y = (HEIGHT - MARGIN) as f64 - plot_h * (v - lo) / span;
            (x.round() as i64, y.round() as i64)
        };
        for i in 1..values.len() {
            line(&mut img, point(i - 1, values[i - 1]), point(i, values[i]), Rgb(*color));
        }
    }
    img
}

/// One bar per value, scaled to the largest value.
pub fn bar_chart(values: &[f64]) -> RgbImage {
    let mut img = canvas();
    let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if values.is_empty() || max <= 0.0 {
        return img;
    }
    let slot = (WIDTH - 2 * MARGIN) as f64 / values.len() as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    for (i, v) in values.iter().enumerate() {
        let height = (plot_h * (v.max(0.0) / max)).round() as u32;
        let x0 = MARGIN + 1 + (i as f64 * slot + slot * 0.15) as u32;
        let x1 = MARGIN + 1 + ((i + 1) as f64 * slot - slot * 0.15) as u32;
        for x in x0..x1.max(x0 + 1).min(WIDTH - MARGIN) {
            for y in (HEIGHT - MARGIN - height)..(HEIGHT - MARGIN) {
                img.put_pixel(x, y, Rgb([31, 119, 180]));
            }
        }
    }
    img
}
