//! Minimal PNG line plots for per-step metric curves: white canvas, gray
//! grid, one colored polyline per series. Enough to eyeball recall and
//! robustness trends without a plotting dependency.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 48;
const COLORS: [[u8; 3]; 4] = [[205, 60, 50], [50, 100, 200], [40, 150, 70], [150, 90, 180]];

pub struct Series<'a> {
    pub label: &'a str,
    /// y value per step; x is the 1-based step index.
    pub values: &'a [f64],
}

fn draw_line(img: &mut RgbImage, x0: f32, y0: f32, x1: f32, y1: f32, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        let x = (x0 + t * (x1 - x0)).round() as i64;
        let y = (y0 + t * (y1 - y0)).round() as i64;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

/// Writes a PNG line plot of the series to `path`. The y-axis spans the data
/// range padded by 5%; the x-axis spans step 1 to the longest series.
pub fn line_plot(path: &Path, series: &[Series]) -> Result<()> {
    let steps = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    if steps < 2 {
        return Err(Error::Invalid("line plot needs at least two points".into()));
    }
    let all: Vec<f64> = series.iter().flat_map(|s| s.values.iter().copied()).collect();
    let (mut lo, mut hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Numeric("non-finite values in plot data".into()));
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    lo -= pad;
    hi += pad;

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (x0, x1) = (MARGIN as f32, (WIDTH - MARGIN / 2) as f32);
    let (y0, y1) = ((HEIGHT - MARGIN) as f32, (MARGIN / 2) as f32);
    let to_x = |step: usize| x0 + (step - 1) as f32 / (steps - 1) as f32 * (x1 - x0);
    let to_y = |v: f64| y0 + ((v - lo) / (hi - lo)) as f32 * (y1 - y0);

    let grid = Rgb([220, 220, 220]);
    for g in 0..=4 {
        let y = y0 + g as f32 / 4.0 * (y1 - y0);
        draw_line(&mut img, x0, y, x1, y, grid);
    }
    let axis = Rgb([40, 40, 40]);
    draw_line(&mut img, x0, y0, x1, y0, axis);
    draw_line(&mut img, x0, y0, x0, y1, axis);

    for (si, s) in series.iter().enumerate() {
        let color = Rgb(COLORS[si % COLORS.len()]);
        for w in s.values.windows(2).enumerate() {
            let (i, pair) = w;
            draw_line(
                &mut img,
                to_x(i + 1),
                to_y(pair[0]),
                to_x(i + 2),
                to_y(pair[1]),
                color,
            );
        }
        // Legend swatch in the top-left, one row per series.
        let ly = (MARGIN / 2 + 12 * si as u32) as f32;
        draw_line(&mut img, x0 + 8.0, ly, x0 + 28.0, ly, color);
    }

    img.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}
