//! PNG output: sweep trend lines and per-cell difference maps.

use std::path::Path;

use fedvis_core::compose::{ChartBody, ChartData};
use image::{Rgb, RgbImage};

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: u32 = 40;

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as u32).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + (x1 - x0) * t).round();
        let y = (y0 + (y1 - y0) * t).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

/// Line plot of `ys` over evenly spaced grid points. The y axis starts at 0.
/// Axes only, no text; the numbers are in the CSV next to it.
pub fn trend_png(path: &Path, ys: &[f64]) -> image::ImageResult<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    let grey = Rgb([220, 220, 220]);
    let (left, right, top, bottom) = (
        MARGIN as f64,
        (W - MARGIN) as f64,
        MARGIN as f64,
        (H - MARGIN) as f64,
    );
    for k in 1..=4 {
        let y = bottom - (bottom - top) * k as f64 / 4.0;
        line(&mut img, (left, y), (right, y), grey);
    }
    line(&mut img, (left, bottom), (right, bottom), black);
    line(&mut img, (left, top), (left, bottom), black);

    let finite: Vec<f64> = ys.iter().copied().filter(|v| v.is_finite()).collect();
    let ymax = finite
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.1;
    let n = ys.len();
    let px = |i: usize| {
        if n <= 1 {
            (left + right) / 2.0
        } else {
            left + (right - left) * i as f64 / (n - 1) as f64
        }
    };
    let py = |v: f64| bottom - (bottom - top) * (v / ymax).clamp(0.0, 1.0);
    let blue = Rgb([31, 90, 200]);
    for i in 0..n {
        let p = (px(i), py(ys[i]));
        line(&mut img, (p.0, bottom - 3.0), (p.0, bottom + 3.0), black);
        if i + 1 < n {
            line(&mut img, p, (px(i + 1), py(ys[i + 1])), blue);
        }
        for d in -2i32..=2 {
            line(
                &mut img,
                (p.0 - 2.0, p.1 + d as f64),
                (p.0 + 2.0, p.1 + d as f64),
                blue,
            );
        }
    }
    img.save(path)
}

/// One pixel per grid cell, north up. White is no error; full red is an
/// amplified difference as large as the largest exact cell.
pub fn diff_png(path: &Path, diff: &ChartData, exact: &ChartData) -> Result<(u32, u32), String> {
    let ChartBody::Grid { values } = &diff.body else {
        return Err(format!("{} charts have no grid layout", diff.kind.name()));
    };
    let rows = values.len() as u32;
    let cols = values.first().map_or(0, Vec::len) as u32;
    if rows == 0 || cols == 0 {
        return Err("empty grid".into());
    }
    let scale = exact.flatten().into_iter().fold(0.0f64, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut img = RgbImage::new(cols, rows);
    for (r, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let t = (v / scale).clamp(0.0, 1.0);
            let fade = (255.0 * (1.0 - t)).round() as u8;
            img.put_pixel(c as u32, rows - 1 - r as u32, Rgb([255, fade, fade]));
        }
    }
    img.save(path).map_err(|e| e.to_string())?;
    Ok((cols, rows))
}
